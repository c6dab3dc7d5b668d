//! Mixing-time certificates for birth–death chains, with the M/M/n queue as
//! the main example.
//!
//! The crate pairs *certified* chi-square decay rates — built from Lyapunov
//! drift certificates and local Poincaré inequalities — with exact numerical
//! oracles (spectral gaps, transient laws) that the certificates are checked
//! against.
//!
//! ```
//! use bdmix::{build_mmn, spectral_gap, theorem1_rate, RegimeSpec};
//!
//! let spec = RegimeSpec::from_alpha(64, 1.0).unwrap();
//! let chain = build_mmn(&spec, 200).unwrap();
//! let gap = spectral_gap(&chain).unwrap().gap;
//! let rate = theorem1_rate(&spec).unwrap().rate;
//! assert!(rate <= gap + 1e-12);
//! ```

// Parameter guards are written `!(x > 0.0)` on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdchain;
pub mod error;
pub mod lyapunov;
pub mod numeric;
pub mod poincare;
pub mod regimes;
pub mod spectral;
pub mod stats;
pub mod transient;

pub use bdchain::{
    build_mminf, build_mmn, choose_truncation, generator_apply, stationary, BirthDeathChain,
    ChainKind, RegimeSpec, StateDistribution,
};
pub use error::{Error, Result};
pub use lyapunov::{
    certify_drift, extract_drift, DriftCertificate, DriftReport, LyapunovFunction, RegimeTag,
};
pub use poincare::{LocalPoincareBound, PoincareCertificate};
pub use regimes::{theorem1_rate, MixingRateBound, Regime};
pub use spectral::{spectral_gap, SpectralResult};
pub use transient::{chi, chi_square, decay_trace, evolve, tv_distance, DecayPoint};
