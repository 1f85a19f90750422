//! Multipath component classification for distributed massive MIMO.
//!
//! Each extracted path (MPC) is labeled single- or multi-bounce by
//! comparing where its angle-of-arrival ray first meets a point-cloud map
//! with where a one-bounce path of the measured delay would have to
//! scatter. Virtual scatterers of all panels are then tracked with a
//! Kalman filter so that coinciding ones (specular reflections) can be
//! identified. An image-source synthesizer provides ground truth.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounce;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod pointcloud;
pub mod stats;
pub mod synth;
pub mod tracker;

pub use bounce::{
    classify, classify_link, last_hop_scatterer, solve_single_bounce, BounceCounts, BounceDecision, BounceLabel,
    ClassifierConfig, InfeasiblePolicy, Infeasibility,
};
pub use geometry::{
    aoa_from_points, direction_vector, AoA, ElevationConvention, GeometryError, MpcKey, MpcRecord, PanelGeometry,
    Polarization, UeState, Vec3, SPEED_OF_LIGHT,
};
pub use pipeline::{export_plot_data, run_pipeline, PipelineError, Report, RunConfig};
pub use pointcloud::{first_intersection, Hit, MarchParams, PointCloud, Ray, Region, SpatialIndex};
pub use stats::{compare_models, fit_exponential, fit_linear, FitResult, StatPoint};
pub use synth::{generate_paths, mirror_image, synthesize, GroundTruthMpc, Scenario};
pub use tracker::{associate, compute_vs, kalman_gain, kf_predict, kf_update, track_snapshot, Track, TrackerConfig};
