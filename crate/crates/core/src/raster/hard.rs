use rayon::prelude::*;

use super::{FragmentBuffer, TileGrid};
use crate::geometry::{Camera, ProjectedMesh};

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Screen-space barycentrics of pixel center `(px, py)`; `None` outside or
/// for degenerate faces.
#[inline]
pub(crate) fn screen_bary(p: [[f64; 2]; 3], px: f64, py: f64) -> Option<[f64; 3]> {
    let [a, b, c] = p;
    let area = edge(b[0] - a[0], b[1] - a[1], c[0] - a[0], c[1] - a[1]);
    if area.abs() < 1e-14 {
        return None;
    }
    let w0 = edge(b[0] - px, b[1] - py, c[0] - px, c[1] - py) / area;
    let w1 = edge(c[0] - px, c[1] - py, a[0] - px, a[1] - py) / area;
    let w2 = edge(a[0] - px, a[1] - py, b[0] - px, b[1] - py) / area;
    (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then_some([w0, w1, w2])
}

/// Exact nearest-surface rasterization. Back faces are kept; depth ties go
/// to the lower face index.
pub fn rasterize_hard(pm: &ProjectedMesh, cam: &Camera) -> FragmentBuffer {
    let (w, h) = (cam.width, cam.height);
    let grid = TileGrid::new(w, h);
    let boxes: Vec<_> = (0..pm.faces.len())
        .map(|f| {
            if !pm.face_is_valid(f) {
                return None;
            }
            let [a, b, c] = pm.faces[f].map(|v| pm.xy[v]);
            let x = TileGrid::pixel_range(a.x.min(b.x).min(c.x), a.x.max(b.x).max(c.x), w)?;
            let y = TileGrid::pixel_range(a.y.min(b.y).min(c.y), a.y.max(b.y).max(c.y), h)?;
            Some((x.0, x.1, y.0, y.1))
        })
        .collect();
    let bins = grid.bin(&boxes);

    let tiles: Vec<_> = (0..grid.len())
        .into_par_iter()
        .map(|t| {
            let r = grid.tile(t);
            let tw = r.x1 - r.x0;
            let n = tw * (r.y1 - r.y0);
            let mut face = vec![None; n];
            let mut bary = vec![[0.0; 3]; n];
            let mut depth = vec![f64::INFINITY; n];
            for &f in &bins[t] {
                let (bx0, bx1, by0, by1) = boxes[f as usize].unwrap();
                let idx = pm.faces[f as usize];
                let p = idx.map(|v| [pm.xy[v].x, pm.xy[v].y]);
                let iz = idx.map(|v| 1.0 / pm.depth[v]);
                for y in by0.max(r.y0)..=by1.min(r.y1 - 1) {
                    for x in bx0.max(r.x0)..=bx1.min(r.x1 - 1) {
                        let Some(s) = screen_bary(p, x as f64 + 0.5, y as f64 + 0.5) else {
                            continue;
                        };
                        let q = [s[0] * iz[0], s[1] * iz[1], s[2] * iz[2]];
                        let sum = q[0] + q[1] + q[2];
                        let z = 1.0 / sum;
                        let i = (y - r.y0) * tw + (x - r.x0);
                        if z < depth[i] {
                            depth[i] = z;
                            face[i] = Some(f);
                            bary[i] = [q[0] / sum, q[1] / sum, q[2] / sum];
                        }
                    }
                }
            }
            (face, bary, depth)
        })
        .collect();

    let mut out = FragmentBuffer {
        width: w,
        height: h,
        face: vec![None; w * h],
        bary: vec![[0.0; 3]; w * h],
        depth: vec![f64::INFINITY; w * h],
    };
    for (t, (face, bary, depth)) in tiles.into_iter().enumerate() {
        let r = grid.tile(t);
        let tw = r.x1 - r.x0;
        for y in r.y0..r.y1 {
            let src = (y - r.y0) * tw;
            let dst = y * w + r.x0;
            out.face[dst..dst + tw].copy_from_slice(&face[src..src + tw]);
            out.bary[dst..dst + tw].copy_from_slice(&bary[src..src + tw]);
            out.depth[dst..dst + tw].copy_from_slice(&depth[src..src + tw]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Mesh};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    pub(crate) fn cam(w: usize, h: usize) -> Camera {
        Camera {
            fx: w as f64,
            fy: h as f64,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            near: 0.1,
            far: 10.0,
        }
    }

    fn mesh(v: Vec<[f64; 3]>, f: Vec<[usize; 3]>) -> Mesh {
        Mesh::new(v.into_iter().map(Vector3::from).collect(), f).unwrap()
    }

    #[test]
    fn large_triangle_covers_frame() {
        let m = mesh(vec![[-10.0, -10.0, 2.0], [30.0, -10.0, 2.0], [-10.0, 30.0, 2.0]], vec![[0, 1, 2]]);
        let c = cam(16, 16);
        let fb = rasterize_hard(&project(&c, &m).unwrap(), &c);
        for (f, b) in fb.face.iter().zip(&fb.bary) {
            assert_eq!(*f, Some(0));
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.iter().all(|w| *w >= 0.0));
        }
        assert!(fb.depth.iter().all(|d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn nearer_triangle_wins() {
        let big = |z: f64| [[-10.0 * z, -10.0 * z, z], [30.0 * z, -10.0 * z, z], [-10.0 * z, 30.0 * z, z]];
        let (a, b) = (big(2.0), big(1.0));
        let m = mesh(vec![a[0], a[1], a[2], b[0], b[1], b[2]], vec![[0, 1, 2], [3, 4, 5]]);
        let c = cam(16, 16);
        let fb = rasterize_hard(&project(&c, &m).unwrap(), &c);
        assert!(fb.face.iter().all(|f| *f == Some(1)));
    }

    #[test]
    fn pixel_at_vertex_has_unit_weight() {
        // vertex 0 projects exactly to pixel center (4.5, 5.5) of a 16x16 image
        let c = cam(16, 16);
        let z = 2.0;
        let px = |u: f64, v: f64| [(u - 8.0) * z / 16.0, (v - 8.0) * z / 16.0, z];
        let m = mesh(vec![px(4.5, 5.5), px(12.0, 5.5), px(4.5, 14.0)], vec![[0, 1, 2]]);
        let fb = rasterize_hard(&project(&c, &m).unwrap(), &c);
        let i = 5 * 16 + 4;
        assert_eq!(fb.face[i], Some(0));
        assert_eq!(fb.bary[i], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn depth_is_perspective_correct() {
        let m = mesh(
            vec![[-1.0, -1.0, 1.0], [3.0, -1.0, 3.0], [-1.0, 1.5, 2.0]],
            vec![[0, 1, 2]],
        );
        let c = cam(32, 32);
        let fb = rasterize_hard(&project(&c, &m).unwrap(), &c);
        let n = fb.face.iter().filter(|f| f.is_some()).count();
        assert!(n > 20);
        for i in 0..fb.face.len() {
            if fb.face[i].is_some() {
                let b = fb.bary[i];
                let z = b[0] * 1.0 + b[1] * 3.0 + b[2] * 2.0;
                assert!((z - fb.depth[i]).abs() < 1e-9);
                // the 3D point lies on the ray through the pixel center
                let p = m.vertices[0] * b[0] + m.vertices[1] * b[1] + m.vertices[2] * b[2];
                let (x, y) = (i % 32, i / 32);
                assert!((c.fx * p.x / p.z + c.cx - (x as f64 + 0.5)).abs() < 1e-9);
                assert!((c.fy * p.y / p.z + c.cy - (y as f64 + 0.5)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_faces_are_skipped() {
        let m = mesh(vec![[-1.0, -1.0, -1.0], [1.0, -1.0, 2.0], [-1.0, 1.0, 2.0]], vec![[0, 1, 2]]);
        let c = cam(16, 16);
        let fb = rasterize_hard(&project(&c, &m).unwrap(), &c);
        assert!(fb.face.iter().all(|f| f.is_none()));
    }

    proptest! {
        #[test]
        fn barycentrics_are_convex(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 1.0f64..4.0), 6)
        ) {
            let v: Vec<[f64; 3]> = pts.iter().map(|(x, y, z)| [x * z, y * z, *z]).collect();
            let m = mesh(v, vec![[0, 1, 2], [3, 4, 5]]);
            let c = cam(24, 24);
            let fb = rasterize_hard(&project(&c, &m).unwrap(), &c);
            for i in 0..fb.face.len() {
                if let Some(f) = fb.face[i] {
                    let b = fb.bary[i];
                    prop_assert!(b.iter().all(|w| *w >= 0.0));
                    prop_assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                    let idx = m.faces[f as usize];
                    let z: f64 = (0..3).map(|k| b[k] * m.vertices[idx[k]].z).sum();
                    prop_assert!((z - fb.depth[i]).abs() <= 1e-9 * z);
                }
            }
        }
    }
}
