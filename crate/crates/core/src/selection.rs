//! IV strength testing and violation space selection.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimator::ProjectionContext;
use crate::rng;
use crate::stats::{normal_quantile, quantile};

pub const DEFAULT_TAU_MIN: f64 = 40.0;
pub const DEFAULT_THRESHOLD_DRAWS: usize = 200;
pub const THRESHOLD_QUANTILE: f64 = 0.975;
pub const DEFAULT_COMPARISON_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Comparison,
    Conservative,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Comparison => "comparison",
            SelectionMethod::Conservative => "conservative",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "comparison" => Ok(SelectionMethod::Comparison),
            "conservative" => Ok(SelectionMethod::Conservative),
            other => Err(format!(
                "unknown selection method `{other}` (expected comparison or conservative)"
            )),
        }
    }
}

/// How the bootstrap noise quantile enters the strength threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `tau_min + q_0.975(S*)`
    Add,
    /// `q_0.975(S*)`
    Replace,
}

impl FromStr for ThresholdMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "add" => Ok(ThresholdMode::Add),
            "replace" => Ok(ThresholdMode::Replace),
            other => Err(format!(
                "unknown threshold mode `{other}` (expected add or replace)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Valid,
    Invalid,
    NonTestable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthEntry {
    pub q: usize,
    #[serde(with = "crate::stats::extended_f64")]
    pub strength: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthReport {
    pub entries: Vec<StrengthEntry>,
}

impl StrengthReport {
    pub fn passed(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.passed).collect()
    }
}

/// `σ̂_δ² = ‖D - ΩD‖² / |A1|`.
pub fn treatment_noise_variance(d_a1: &DVector<f64>, omega_d: &DVector<f64>) -> f64 {
    (d_a1 - omega_d).norm_squared() / d_a1.len() as f64
}

/// Generalized IV strength `‖P⊥ Ω D‖² / σ̂_δ²`; infinite for a noiseless
/// treatment.
pub fn iv_strength(ctx: &ProjectionContext, sigma_delta_sq: f64) -> f64 {
    if sigma_delta_sq > 0.0 {
        ctx.dmd / sigma_delta_sq
    } else {
        f64::INFINITY
    }
}

/// `Ω δ*` for wild bootstrap draws `δ*_i = U_i δ̃_i`, one column per draw.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    omega_delta: DMatrix<f64>,
}

impl NoiseDraws {
    pub fn generate(omega: &DMatrix<f64>, delta_tilde: &DVector<f64>, draws: usize, seed: u64) -> Self {
        if draws < DEFAULT_THRESHOLD_DRAWS {
            warn!("only {draws} threshold bootstrap draws requested");
        }
        let n = delta_tilde.len();
        let mut r = rng::rng_from(seed, &[rng::STREAM_BOOT_THRESHOLD]);
        let delta_star = DMatrix::from_fn(n, draws, |i, _| {
            let u: f64 = StandardNormal.sample(&mut r);
            u * delta_tilde[i]
        });
        NoiseDraws {
            omega_delta: omega * delta_star,
        }
    }

    /// Strengths `S*(q)` that pure treatment noise produces for one candidate.
    pub fn strengths(&self, ctx: &ProjectionContext, sigma_delta_sq: f64) -> Vec<f64> {
        if sigma_delta_sq <= 0.0 {
            return vec![0.0; self.omega_delta.ncols()];
        }
        let resid = ctx.vhat().residual_matrix(&self.omega_delta);
        resid
            .column_iter()
            .map(|c| c.norm_squared() / sigma_delta_sq)
            .collect()
    }
}

/// Threshold `τ(q)`; without noise draws it is `tau_min`.
pub fn strength_threshold(
    ctx: &ProjectionContext,
    noise: Option<&NoiseDraws>,
    sigma_delta_sq: f64,
    tau_min: f64,
    mode: ThresholdMode,
) -> f64 {
    let Some(noise) = noise else {
        return tau_min;
    };
    let q = quantile(&noise.strengths(ctx, sigma_delta_sq), THRESHOLD_QUANTILE);
    match mode {
        ThresholdMode::Add => tau_min + q,
        ThresholdMode::Replace => q,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QmaxOutcome {
    pub q_max: usize,
    /// Even `V_0` failed the strength test.
    pub weak_without_violation: bool,
}

/// Largest `m` with every candidate `q <= m` passing.
pub fn determine_qmax(passed: &[bool]) -> QmaxOutcome {
    let prefix = passed.iter().take_while(|&&p| p).count();
    if prefix == 0 {
        warn!("instruments are weak even without a violation space");
    }
    QmaxOutcome {
        q_max: prefix.saturating_sub(1),
        weak_without_violation: prefix == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub q_max: usize,
    pub q_comp: usize,
    pub q_cons: usize,
    pub method: SelectionMethod,
    /// Index whose estimate is reported.
    pub selected: usize,
    pub validity: Validity,
    /// Set when `q_comp = q_max`: no larger candidate was available to check
    /// the selected one against.
    pub interpret_carefully: bool,
}

/// Comparison and conservative selection among candidates `0..=q_max`.
///
/// Candidate `q` passes when its estimate is within
/// `z_{1-alpha/2} * sqrt(se_q² + se_q'²)` of every successor up to `q_max`.
/// `num_candidates` is `Q + 1`; with a single candidate nothing can be tested.
pub fn select_candidate(
    estimates: &[f64],
    ses: &[f64],
    q_max: usize,
    num_candidates: usize,
    method: SelectionMethod,
    alpha: f64,
) -> SelectionResult {
    assert!(estimates.len() > q_max && ses.len() > q_max);
    let z = normal_quantile(1.0 - alpha / 2.0);
    let passes = |q: usize| {
        (q + 1..=q_max).all(|r| {
            let diff = (estimates[q] - estimates[r]).abs();
            diff <= z * (ses[q] * ses[q] + ses[r] * ses[r]).sqrt()
        })
    };
    let q_comp = (0..=q_max).find(|&q| passes(q)).unwrap_or(q_max);
    let q_cons = (q_comp + 1).min(q_max);
    let validity = if num_candidates <= 1 || q_max == 0 {
        Validity::NonTestable
    } else if q_comp == 0 {
        Validity::Valid
    } else {
        Validity::Invalid
    };
    SelectionResult {
        q_max,
        q_comp,
        q_cons,
        method,
        selected: match method {
            SelectionMethod::Comparison => q_comp,
            SelectionMethod::Conservative => q_cons,
        },
        validity,
        interpret_carefully: q_comp == q_max,
    }
}
