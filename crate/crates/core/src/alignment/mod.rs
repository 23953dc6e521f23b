//! Domain alignment: hyperbolic batch normalization with per-domain momentum
//! statistics, and the horospherical sliced-Wasserstein loss.

pub mod hbn;
pub mod hhsw;

pub use hbn::{batch_moments, 
    gyroadd_const, gyromul_var, hbn, hbn_rows, hdsmbn, normalize_point, DomainStats, DomainTrack, HbnParams, HdsmbnOutput,
    MomentumSchedule, NormMode, RowStats, HBN_EPS,
};
pub use hhsw::{
    busemann_project, hhsw_between, hhsw_loss, hhsw_points, sample_reference, sample_reference_with, wasserstein_1d,
    HhswConfig, HhswEstimate, ReferenceKind,
};
