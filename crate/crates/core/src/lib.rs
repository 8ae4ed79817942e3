//! Density evolution and Monte Carlo decoding for LDPC codes whose
//! belief-propagation messages are saturated at a magnitude `K`.
//!
//! * [`density`]: quantized L-densities, functionals, node convolutions,
//!   saturation operators and the Wasserstein metric on `|D|` distributions.
//! * [`channels`]: BEC, BSC and BIAWGN channel families.
//! * [`de`]: density evolution for plain, saturated and symmetric-saturated
//!   BP, threshold search and the BP/saturated Bhattacharyya distance bound.
//! * [`stability`]: flip probabilities, support propagation, near-stability
//!   recursions and the 2x2 contraction test for saturated DE.
//! * [`mc`]: a flooding SatBP decoder on random regular Tanner graphs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod de;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod llr;
pub mod mc;
pub mod stability;

pub use channels::{ChannelFamily, ChannelKind};
pub use de::{DeMode, DeOptions, DeStatus, DeTrace, SuccessCriterion, ThresholdResult};
pub use density::{Grid, QuantizedDensity, Rail, SaturatedMassDecomposition};
pub use ensemble::EnsembleSpec;
pub use error::{Error, Result};
pub use mc::{DecoderConfig, DecoderRule, TannerGraph};
pub use stability::{SaturationParams, StabilityRegime, StabilityVerdict};
