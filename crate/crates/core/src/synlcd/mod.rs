//! Synthetic LCD defect generation.
//!
//! Line defects are screen-spanning strokes, one per vertical strip.
//! Abnormal points ("abpt") are blobs placed at K-means centroids of the
//! pattern's edge pixels, found by sweeping gray thresholds. Defects are
//! blurred, composited with Poisson blending, and both images of a pair
//! receive independent global photometric perturbations. Masks come from
//! the defect geometry, so they are exact by construction.

pub mod dataset;
pub mod defects;
pub mod patterns;
pub mod perturb;
pub mod poisson;
pub mod sample;
pub mod spec;

pub use dataset::{
    build_dataset, mix_seed, read_manifest, synthesize_pairs, BuildOptions, ManifestEntry, Split,
};
pub use defects::{edge_points, kmeans, CLASS_ABPT, CLASS_LINE};
pub use patterns::{builtin_patterns, display_pattern};
pub use perturb::apply_perturbations;
pub use poisson::{poisson_blend, poisson_blend_padded};
pub use sample::{
    generate_abpt_defects, generate_line_defects, sample_spec, synthesize_sample, SynthSample,
};
pub use spec::{DefectColor, DefectType, Perturbation, SynthesisSpec};
