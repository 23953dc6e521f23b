//! Neural layers on the autodiff tape.

pub mod euclid;
pub mod lorentz;

pub use euclid::{batch_norm, dropout, BnState};
pub use lorentz::{
    centroid, gather_windows, hcat, hmlr, lfc, lift, lorentz_avg_pool, lorentz_conv, lorentz_elu, proj_x, Activation,
    LfcMode, LfcParams, LfcVars, LorentzFeatureMap, MlrParams,
};
