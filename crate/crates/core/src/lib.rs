//! Numerical laboratory for Patterson–Sullivan theory of discrete subgroups
//! of `SL(d, R)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`cartan`]: Cartan subspace coordinates, Cartan/Jordan projections,
//!   roots, weights and linear functionals.
//! * [`flags`]: partial flag manifolds, the projection `U_θ`, the Iwasawa
//!   cocycle, Gromov products and Hopf coordinates.
//! * [`orbit`]: word enumeration of finitely generated groups, orbital
//!   counting, Poincaré series and critical exponents.
//! * [`shadows`]: shadows, atomic Patterson measures, shadow-lemma and
//!   conformality diagnostics, conical tracking.
//! * [`bms`]: Gromov-product densities and the invariance identity behind
//!   the Bowen–Margulis–Sullivan measure.
//! * [`hilbert`]: Hilbert metrics on balls and polytopes and the
//!   Kaimanovich measures.
//! * [`convexity`]: entropy functionals and convexity experiments.
//! * [`experiment`]: configuration, fixtures and report generation used by
//!   the command line runner.
//!
//! Data-parallel loops go through [`par`], which maps onto rayon when the
//! `parallel` feature is enabled and onto plain iterators otherwise.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bms;
pub mod cartan;
pub mod convexity;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod flags;
pub mod hilbert;
pub mod linalg;
pub mod orbit;
pub mod par;
pub mod shadows;
pub mod tol;

pub use cartan::{CartanVector, Functional, RootSubset};
pub use error::{Error, Result};
pub use flags::{PartialFlag, TransversePair};
pub use orbit::{ExponentEstimate, ExponentMethod, GeneratorSet, OrbitBall, WordPolicy};
