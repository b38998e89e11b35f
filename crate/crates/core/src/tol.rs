//! Tolerances and thresholds used across the crate.
//!
//! Every report embeds [`as_json`] so a result can always be read against the
//! constants that produced it.

use serde_json::{json, Value};

/// Unimodularity check on input matrices.
pub const DET_TOL: f64 = 1e-8;
/// Sum-to-zero check on Cartan vectors.
pub const CARTAN_SUM_TOL: f64 = 1e-9;
/// Identities built from a single factorization.
pub const ONE_FACTORIZATION: f64 = 1e-8;
/// Identities where two factorizations compound.
pub const TWO_FACTORIZATIONS: f64 = 1e-6;
/// Orthonormality of flag frames.
pub const FRAME_ORTHO_TOL: f64 = 1e-9;
/// Projector agreement for flag equality (Frobenius).
pub const FLAG_EQ_TOL: f64 = 1e-7;
/// Transversality determinant floor.
pub const TRANSVERSE_DET: f64 = 1e-10;
/// Default singular-value gap floor for `U_θ`.
pub const GAP_FLOOR: f64 = 1e-6;
/// Matrix distance below which two group elements are identified.
pub const DEDUP_DIST: f64 = 1e-7;
/// Decimal places of the dedup hash key.
pub const DEDUP_DECIMALS: i32 = 6;
/// Fraction of collapsed candidate words that flags a non-discrete input.
pub const DEDUP_COLLAPSE_FRACTION: f64 = 0.01;
/// Regression window as fractions of the truncation radius.
pub const WINDOW_LO: f64 = 0.4;
pub const WINDOW_HI: f64 = 0.9;
/// Minimum distinct values inside the regression window.
pub const MIN_DISTINCT: usize = 8;
/// Number of grid abscissae used by the count regression.
pub const REGRESSION_GRID: usize = 100;
/// Estimator noise used for exponent agreement claims.
pub const ESTIMATOR_NOISE: f64 = 0.05;
/// Estimator noise used for exact scaling laws.
pub const SCALING_NOISE: f64 = 0.02;
/// Conical tracking convergence thresholds.
pub const TRACK_INCREMENT: f64 = 1e-6;
pub const TRACK_MIN_GAP: f64 = 5.0;
/// Supercritical offsets for atomic Patterson measures.
pub const PS_EPSILONS: [f64; 3] = [0.1, 0.05, 0.02];
/// Interior margin for Hilbert-domain points.
pub const INTERIOR_MARGIN: f64 = 1e-9;
/// Quadrature step for `λ_n`.
pub const LAMBDA_STEP: f64 = 0.1;
/// Equality test for middle Cartan entries.
pub const MIDDLE_EQUAL_TOL: f64 = 1e-10;

/// BMS invariance identity residual.
pub const BMS_RESIDUAL: f64 = 1e-6;

/// Norm fixed on the Cartan subspace for every distance-like quantity.
pub const CARTAN_NORM: &str = "sup";

pub fn as_json() -> Value {
    json!({
        "cartan_norm": CARTAN_NORM,
        "det_tol": DET_TOL,
        "cartan_sum_tol": CARTAN_SUM_TOL,
        "one_factorization": ONE_FACTORIZATION,
        "two_factorizations": TWO_FACTORIZATIONS,
        "frame_ortho_tol": FRAME_ORTHO_TOL,
        "flag_eq_tol": FLAG_EQ_TOL,
        "transverse_det": TRANSVERSE_DET,
        "gap_floor": GAP_FLOOR,
        "dedup_dist": DEDUP_DIST,
        "dedup_decimals": DEDUP_DECIMALS,
        "dedup_collapse_fraction": DEDUP_COLLAPSE_FRACTION,
        "window": [WINDOW_LO, WINDOW_HI],
        "min_distinct": MIN_DISTINCT,
        "regression_grid": REGRESSION_GRID,
        "estimator_noise": ESTIMATOR_NOISE,
        "scaling_noise": SCALING_NOISE,
        "track_increment": TRACK_INCREMENT,
        "track_min_gap": TRACK_MIN_GAP,
        "ps_epsilons": PS_EPSILONS,
        "interior_margin": INTERIOR_MARGIN,
        "lambda_step": LAMBDA_STEP,
        "middle_equal_tol": MIDDLE_EQUAL_TOL,
        "bms_residual": BMS_RESIDUAL,
    })
}
