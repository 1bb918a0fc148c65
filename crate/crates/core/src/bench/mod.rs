pub mod image;
pub mod model_problem;
pub mod report;
pub mod sdf;
pub mod sweep;

pub use image::{Image, ImageSource, Texture};
pub use report::{ExperimentReport, ReportRow};
pub use sdf::{iou, AnalyticSdf};
pub use sweep::{
    fit_image, fit_sdf_cell, resolution_sweep, rotation_sweep, sdf_fit, two_phase_probe, Image2dModel, ResolutionSweepConfig,
    RotationSweepConfig, SdfFitConfig, TwoPhaseProbeConfig, Variant,
};
