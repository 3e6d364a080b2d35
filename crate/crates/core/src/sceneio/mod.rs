//! Scene loading, file formats and evaluation metrics.

pub mod bodymodel;
pub mod chamfer;
pub mod checkpoint;
pub mod images;
pub mod manifest;
pub mod metrics;
pub mod obj;
pub mod synth;

pub use bodymodel::{body_model_hash, read_body_model, write_body_model};
pub use chamfer::{chamfer_p2s, ChamferReport};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use images::{read_gray, read_rgb, write_gray, write_rgb};
pub use manifest::{load_scene, read_keypoints, read_pose, write_keypoints, write_scene, SceneManifest};
pub use metrics::{iou, psnr, ssim, MetricReport};
pub use obj::{export_obj, read_obj};
