//! Synthetic ground truth and decomposition quality metrics.

mod ablation;
mod lmse;
mod scene;

pub use ablation::{frame_lmse, run_ablation, score_run, AblationColumn, AblationTable, AblationVariant};
pub use lmse::{lmse, lmse_layer, LMSE_STRIDE, LMSE_WINDOW};
pub use scene::{
    box_surfaces, point_polygon_form_factor, render_frame, render_scene, AreaLight, Camera, GroundTruthBundle,
    GroundTruthFrame, Rect, SceneLighting, Surface, SyntheticScene,
};
