"""Smoke test of the pymeshfit extension.

Build and install it first:

    pip install --no-build-isolation -e crates/py
    python python/smoke_test.py
"""

import math
import os
import tempfile

import pymeshfit


def cube():
    v = [[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)]
    f = [
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ]
    return v, f


def test_chamfer():
    v, f = cube()
    c, p = pymeshfit.chamfer(v, f, v, f, samples=2000)
    assert c < 1e-12 and p < 1e-12, (c, p)
    shifted = [[x + 0.1, y, z] for x, y, z in v]
    c, _ = pymeshfit.chamfer(v, f, shifted, f, samples=2000)
    assert 0.0 < c < 0.2, c


def test_fit_round_trip(tmp):
    paths = pymeshfit.synth_scene(tmp, resolution=40, cameras=1, poses=2, held_out=1)
    avatar, rows = pymeshfit.fit(paths["train"], stage1_iters=4, stage2_iters=4, seed=1)
    assert len(rows) == 8
    assert [r["stage"] for r in rows] == ["stage1"] * 4 + ["stage2"] * 4
    assert all(math.isfinite(r["total"]) for r in rows)

    ckpt = os.path.join(tmp, "avatar.json")
    avatar.save(ckpt)
    back = pymeshfit.Avatar.load(ckpt, paths["body_model"])
    assert back.stage == "stage2" and back.iteration == 8
    assert back.canonical_mesh() == avatar.canonical_mesh()

    w, h, rgb = back.render(paths["train"], 1)
    assert (w, h) == (40, 40) and len(rgb) == 3 * 40 * 40
    metrics = back.evaluate(paths["heldout"])
    assert len(metrics) == 1 and 0.0 <= metrics[0]["iou"] <= 1.0


def test_errors(tmp):
    try:
        pymeshfit.fit(os.path.join(tmp, "missing.json"))
    except pymeshfit.DataError as e:
        assert "missing.json" in str(e)
    else:
        raise AssertionError("missing scene accepted")
    try:
        pymeshfit.toy_cube(views=3)
    except pymeshfit.ConfigError:
        pass
    else:
        raise AssertionError("three views accepted")


def test_grad_check():
    report = pymeshfit.grad_check(groups=["offsets", "face_colors"])
    assert [g["group"] for g in report] == ["offsets", "face_colors"]
    assert all(g["rel_err"] <= 1e-3 for g in report), report


def main():
    test_chamfer()
    with tempfile.TemporaryDirectory() as tmp:
        test_fit_round_trip(tmp)
        test_errors(tmp)
    test_grad_check()
    print("pymeshfit", pymeshfit.version(), "smoke test passed")


if __name__ == "__main__":
    main()
