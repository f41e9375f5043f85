//! Procedural dataset synthesis: base shapes, mesh subdivision, surface
//! sampling, defect carving, and manifest generation.

mod carve;
mod dataset;
mod shapes;

pub use carve::{carve, DefectExtra, DefectKind, DefectSpec, GroundTruth, FRACTION_RANGE};
pub use dataset::{
    generate_dataset, ClassRecord, ClassSource, ClassSpec, DatasetManifest, SampleRecord,
    SynthConfig, MANIFEST_VERSION, POINTS_RANGE, TEST_RANGE, TRAIN_PER_CLASS,
};
pub use shapes::{cuboid, cylinder, icosphere, lathe, pose_jitter, sample_surface, subdivide, BaseShape};
