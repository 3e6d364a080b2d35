//! Parameter store, Adam, gradient routing between the hard and soft
//! branches, and the two-stage driver.

mod adam;
mod config;
pub mod gradcheck;
pub mod toycube;
mod objective;
mod params;
mod stages;

pub use adam::{ParamGroup, BETA1, BETA2, EPS};
pub use config::{FitConfig, LearningRates};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GroupReport};
pub use objective::{
    Branches, CacheUse, Evaluation, FrameEval, FrameRender, Gradients, Objective, PoseGradient, StopGradCache, Wanted,
};
pub use params::{AvatarParams, ColorMode, FramePose};
pub use stages::{fit, run_stage, run_stage1, run_stage2, Active, LogRow, Monitor, RecordingMonitor, StageSpec};

use crate::geometry::BodyModel;
use crate::losses::FrameObservation;

/// A body model together with its observed frames.
#[derive(Debug, Clone)]
pub struct Scene {
    pub model: BodyModel,
    pub frames: Vec<FrameObservation>,
}

impl Monitor for () {}
