//! `bodymodel-v1` JSON documents.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BodyModel, KeypointSource};

pub const BODY_MODEL_FORMAT: &str = "bodymodel-v1";

/// On-disk layout. All arrays are flat and row-major: `vertices` is V x 3,
/// `faces` F x 3, `shape_basis` K x V x 3, `joint_regressor` J x V and
/// `skin_weights` V x J. Root joints have parent -1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyModelFile {
    format: String,
    vertices: Vec<f64>,
    faces: Vec<usize>,
    shape_basis: Vec<f64>,
    joint_regressor: Vec<f64>,
    parents: Vec<i64>,
    skin_weights: Vec<f64>,
    keypoints: BTreeMap<String, KeypointSource>,
}

fn to_file(model: &BodyModel) -> BodyModelFile {
    BodyModelFile {
        format: BODY_MODEL_FORMAT.into(),
        vertices: model.rest_vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
        faces: model.faces.iter().flatten().copied().collect(),
        shape_basis: model
            .shape_basis
            .iter()
            .flatten()
            .flat_map(|v| [v.x, v.y, v.z])
            .collect(),
        joint_regressor: model.dense_regressor(),
        parents: model.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
        skin_weights: model.dense_skin_weights(),
        keypoints: model.keypoints.iter().map(|(n, s)| (n.clone(), *s)).collect(),
    }
}

fn triples(v: &[f64]) -> Vec<Vector3<f64>> {
    v.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

/// Canonical JSON text of a body model. Keypoints are sorted by name.
pub fn body_model_to_json(model: &BodyModel) -> String {
    serde_json::to_string(&to_file(model)).expect("body model serializes")
}

/// Hex SHA-256 of [`body_model_to_json`], used to tie checkpoints to the
/// model they were fitted with.
pub fn body_model_hash(model: &BodyModel) -> String {
    Sha256::digest(body_model_to_json(model).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn body_model_from_json(text: &str, entry: &str) -> Result<BodyModel> {
    let f: BodyModelFile = serde_json::from_str(text).map_err(|e| Error::load(entry, e.to_string()))?;
    if f.format != BODY_MODEL_FORMAT {
        return Err(Error::load(
            entry,
            format!("unsupported format `{}` (expected {BODY_MODEL_FORMAT})", f.format),
        ));
    }
    let bad = |msg: String| Error::load(entry, msg);
    if f.vertices.len() % 3 != 0 || f.faces.len() % 3 != 0 {
        return Err(bad("vertices and faces must be flat lists of triples".into()));
    }
    let v = f.vertices.len() / 3;
    if v == 0 || f.shape_basis.len() % (3 * v) != 0 {
        return Err(bad(format!(
            "shape_basis has {} values, not a multiple of 3 x {v}",
            f.shape_basis.len()
        )));
    }
    let basis = triples(&f.shape_basis).chunks(v).map(|c| c.to_vec()).collect();
    let parents = f
        .parents
        .iter()
        .map(|&p| match p {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            p => Err(bad(format!("invalid parent index {p}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let faces = f.faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    BodyModel::new(
        triples(&f.vertices),
        faces,
        basis,
        &f.joint_regressor,
        parents,
        &f.skin_weights,
        f.keypoints.into_iter().collect(),
    )
    .map_err(|e| bad(e.to_string()))
}

pub fn read_body_model(path: &Path) -> Result<BodyModel> {
    if !path.exists() {
        return Err(Error::load(path.display().to_string(), "file not found"));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    body_model_from_json(&text, &path.display().to_string())
}

pub fn write_body_model(model: &BodyModel, path: &Path) -> Result<()> {
    std::fs::write(path, body_model_to_json(model)).map_err(|e| Error::io(path, e))
}
