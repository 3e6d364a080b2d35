use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::raster::SoftRasterConfig;
use crate::texfield::HashGridConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub beta: f64,
    pub offsets: f64,
    pub pose: f64,
    pub face_colors: f64,
    pub texcoords: f64,
    pub tables: f64,
    pub mlp: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            beta: 1e-3,
            offsets: 1e-3,
            pose: 1e-3,
            face_colors: 1e-2,
            texcoords: 1e-3,
            tables: 1e-3,
            mlp: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// `None` means 150 iterations per frame.
    pub stage1_iters: Option<usize>,
    pub stage2_iters: Option<usize>,
    pub batch_size: usize,
    pub lr: LearningRates,
    pub weights: LossWeights,
    pub soft: SoftRasterConfig,
    pub hash_grid: HashGridConfig,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub seed: u64,
    /// Optimize everything jointly with the texture field from the start.
    pub one_stage: bool,
    /// Divide the normal-consistency and face-area sums by their term counts.
    pub normalize_regularizers: bool,
    /// Refine per-frame poses during stage 2.
    pub refine_pose_stage2: bool,
    /// Which groups stage 1 optimizes.
    pub stage1_shape: bool,
    pub stage1_offsets: bool,
    pub stage1_pose: bool,
    pub stage1_face_colors: bool,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            stage1_iters: None,
            stage2_iters: None,
            batch_size: 1,
            lr: LearningRates::default(),
            weights: LossWeights::default(),
            soft: SoftRasterConfig::default(),
            hash_grid: HashGridConfig::desk(),
            mlp_hidden: 64,
            mlp_layers: 2,
            seed: 0,
            one_stage: false,
            normalize_regularizers: true,
            refine_pose_stage2: true,
            stage1_shape: true,
            stage1_offsets: true,
            stage1_pose: true,
            stage1_face_colors: true,
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.soft.validate()?;
        self.hash_grid.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::config("mlp_hidden must be positive"));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("beta", lr.beta),
            ("offsets", lr.offsets),
            ("pose", lr.pose),
            ("face_colors", lr.face_colors),
            ("texcoords", lr.texcoords),
            ("tables", lr.tables),
            ("mlp", lr.mlp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("learning rate `{name}` must be nonnegative, got {v}")));
            }
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::config("divergence_factor must exceed 1"));
        }
        Ok(())
    }

    pub fn stage1_budget(&self, frames: usize) -> usize {
        self.stage1_iters.unwrap_or(150 * frames)
    }

    pub fn stage2_budget(&self, frames: usize) -> usize {
        self.stage2_iters.unwrap_or(150 * frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = FitConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: FitConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
        let partial: FitConfig = serde_json::from_str(r#"{"seed": 7, "stage1_iters": 3}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.stage1_budget(4), 3);
        assert_eq!(partial.stage2_budget(4), 600);
        assert_eq!(partial.weights.lambda_fa, 2.5);
        assert!(serde_json::from_str::<FitConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(FitConfig::default().validate().is_ok());
        let mut c = FitConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.soft.sigma = 0.0;
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.lr.mlp = -1.0;
        assert!(c.validate().is_err());
    }
}
