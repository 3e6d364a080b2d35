//! `checkpoint-v1` JSON containers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bodymodel::body_model_hash;
use super::manifest::write_json;
use crate::error::{Error, Result};
use crate::fit::{AvatarParams, FitConfig};
use crate::geometry::BodyModel;

pub const CHECKPOINT_FORMAT: &str = "checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    /// SHA-256 of the canonical body-model document.
    pub body_model_sha256: String,
    /// Stage that produced the parameters ("init", "stage1", "stage2" or
    /// "joint").
    pub stage: String,
    /// Global iteration counter at the time of writing.
    pub iteration: usize,
    pub config: FitConfig,
    pub params: AvatarParams,
}

impl Checkpoint {
    pub fn new(model: &BodyModel, stage: &str, iteration: usize, config: &FitConfig, params: &AvatarParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            body_model_sha256: body_model_hash(model),
            stage: stage.into(),
            iteration,
            config: config.clone(),
            params: params.clone(),
        }
    }

    /// Fails unless the checkpoint was written for `model` and its
    /// parameters fit it.
    pub fn check_model(&self, model: &BodyModel) -> Result<()> {
        if self.body_model_sha256 != body_model_hash(model) {
            return Err(Error::load(
                "checkpoint",
                "body model hash differs from the one the checkpoint was fitted with",
            ));
        }
        self.params
            .validate(model)
            .map_err(|e| Error::load("checkpoint", e.to_string()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let entry = path.display().to_string();
    if !path.exists() {
        return Err(Error::load(entry, "file not found"));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::load(&entry, e.to_string()))?;
    if c.format != CHECKPOINT_FORMAT {
        return Err(Error::load(
            entry,
            format!("unsupported format `{}` (expected {CHECKPOINT_FORMAT})", c.format),
        ));
    }
    c.params
        .texture
        .validate()
        .map_err(|e| Error::load(path.display().to_string(), e.to_string()))?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::run_stage1;
    use crate::sceneio::synth::{toy_body_scene, SynthConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let s = toy_body_scene(&SynthConfig {
            resolution: 32,
            cameras: 1,
            poses: 2,
            held_out: 0,
            ..Default::default()
        })
        .unwrap();
        let cfg = FitConfig {
            stage1_iters: Some(3),
            stage2_iters: Some(0),
            ..FitConfig::default()
        };
        let mut p = AvatarParams::init(&s.scene, &cfg).unwrap();
        run_stage1(&s.scene, &mut p, &cfg, &mut ()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = Checkpoint::new(&s.scene.model, "stage1", 3, &cfg, &p);
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        back.check_model(&s.scene.model).unwrap();

        let mut other = s.scene.model.clone();
        other.rest_vertices[3].y += 0.01;
        assert!(back.check_model(&other).is_err());
    }

    #[test]
    fn missing_or_foreign_files_are_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_checkpoint(&dir.path().join("none.json")).unwrap_err();
        assert!(matches!(err, Error::Load { .. }) && err.to_string().contains("none.json"));
        let p = dir.path().join("x.json");
        std::fs::write(&p, "{\"format\": \"checkpoint-v1\"}").unwrap();
        assert!(matches!(load_checkpoint(&p).unwrap_err(), Error::Load { .. }));
    }
}
