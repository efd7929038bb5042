//! Bias corrected effect estimate for one hat matrix and one violation
//! candidate, with plug-in and wild bootstrap standard errors.
//!
//! With `M(V) = Ωᵀ P⊥_{ΩV} Ω` the raw estimate is `Yᵀ M D / Dᵀ M D`. The
//! bias term `Σ_i M_ii δ̂_i ε̂_i / Dᵀ M D` removes the contribution of the
//! diagonal of `M`, where treatment and outcome errors of the same unit meet.
//!
//! `M` is never formed densely on the estimation path: only `M D` and the
//! diagonal of `M` are needed, both obtained from an orthonormal basis of
//! `ΩV`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::hstack;
use crate::error::{Result, TsciError};
use crate::learners::HatMatrix;
use crate::linalg::Projector;
use crate::rng;
use crate::stats::sample_sd;
use crate::violation::ViolationCandidate;

pub const DEFAULT_BOOT_DRAWS: usize = 300;
pub const MIN_BOOT_DRAWS: usize = 50;
/// `Dᵀ M D` must exceed this multiple of `‖D‖²`.
pub const DMD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ProjectionContext {
    vhat: Projector,
    combined: Projector,
    omega_d: DVector<f64>,
    md: DVector<f64>,
    m_diag: DVector<f64>,
    pub dmd: f64,
    pub rank_v: usize,
    d_norm_sq: f64,
}

impl ProjectionContext {
    /// Projector onto `V̂ = ΩV`.
    pub fn vhat(&self) -> &Projector {
        &self.vhat
    }

    /// Projector onto `[ΩV | V]`.
    pub fn combined(&self) -> &Projector {
        &self.combined
    }

    pub fn omega_d(&self) -> &DVector<f64> {
        &self.omega_d
    }

    pub fn md(&self) -> &DVector<f64> {
        &self.md
    }

    pub fn m_diag(&self) -> &DVector<f64> {
        &self.m_diag
    }

    /// Dense `P⊥_{V̂}`.
    pub fn p_perp(&self) -> DMatrix<f64> {
        self.vhat.complement_matrix()
    }

    /// Dense `M(V) = Ωᵀ P⊥ Ω`. Cubic in |A1|; meant for checks.
    pub fn m_matrix(&self, omega: &DMatrix<f64>) -> DMatrix<f64> {
        omega.tr_mul(&self.vhat.residual_matrix(omega))
    }

    /// `Dᵀ M D` is large enough to divide by.
    pub fn identifiable(&self) -> bool {
        self.dmd > DMD_REL_TOL * self.d_norm_sq
    }
}

pub fn projection_context(
    hat: &HatMatrix,
    cand: &ViolationCandidate,
    d_a1: &DVector<f64>,
) -> Result<ProjectionContext> {
    let omega = &hat.omega;
    let n = omega.nrows();
    let vhat_cols = omega * &cand.columns;
    let vhat = Projector::onto(&vhat_cols);
    let rank_v = vhat.rank();
    if rank_v == 0 {
        return Err(TsciError::AnnihilatedBasis);
    }
    if n <= rank_v + 1 {
        return Err(TsciError::DegreesOfFreedom { rows: n, rank: rank_v });
    }
    let combined = Projector::onto(&hstack(&[&vhat_cols, &cand.columns]));

    let omega_d = omega * d_a1;
    let resid = vhat.residual(&omega_d);
    let dmd = resid.norm_squared();
    let md = omega.tr_mul(&resid);

    // M_ii = ‖Ω e_i‖² - ‖Qᵀ Ω e_i‖²
    let c = vhat.basis().tr_mul(omega);
    let m_diag = DVector::from_fn(n, |i, _| {
        (omega.column(i).norm_squared() - c.column(i).norm_squared()).max(0.0)
    });

    Ok(ProjectionContext {
        vhat,
        combined,
        omega_d,
        md,
        m_diag,
        dmd,
        rank_v,
        d_norm_sq: d_a1.norm_squared(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    /// `beta_raw - bias_term`.
    pub beta_hat: f64,
    pub beta_raw: f64,
    pub bias_term: f64,
    pub se_plugin: f64,
    pub se_boot: Option<f64>,
    pub sigma_eps_hat: f64,
    pub sigma_delta_hat: f64,
    #[serde(skip)]
    pub residuals_eps: DVector<f64>,
    #[serde(skip)]
    pub residuals_delta: DVector<f64>,
}

impl EffectEstimate {
    /// Bootstrap SE when available, plug-in otherwise.
    pub fn se(&self) -> f64 {
        self.se_boot.unwrap_or(self.se_plugin)
    }
}

pub fn estimate_beta(
    ctx: &ProjectionContext,
    y_a1: &DVector<f64>,
    d_a1: &DVector<f64>,
) -> Result<EffectEstimate> {
    if !ctx.identifiable() {
        return Err(TsciError::FullyAbsorbed);
    }
    let n = d_a1.len();
    let dof = n as isize - ctx.rank_v as isize - 1;
    if dof <= 0 {
        return Err(TsciError::DegreesOfFreedom {
            rows: n,
            rank: ctx.rank_v,
        });
    }
    let beta_raw = y_a1.dot(&ctx.md) / ctx.dmd;
    let residuals_delta = d_a1 - &ctx.omega_d;
    let residuals_eps = ctx.combined.residual(&(y_a1 - d_a1 * beta_raw));
    let cross: f64 = ctx
        .m_diag
        .iter()
        .zip(residuals_delta.iter().zip(residuals_eps.iter()))
        .map(|(m, (dl, ep))| m * dl * ep)
        .sum();
    let bias_term = cross / ctx.dmd;
    let sigma_eps_hat = (residuals_eps.norm_squared() / dof as f64).sqrt();
    let sigma_delta_hat = (residuals_delta.norm_squared() / n as f64).sqrt();
    Ok(EffectEstimate {
        beta_hat: beta_raw - bias_term,
        beta_raw,
        bias_term,
        se_plugin: sigma_eps_hat / ctx.dmd.sqrt(),
        se_boot: None,
        sigma_eps_hat,
        sigma_delta_hat,
        residuals_eps,
        residuals_delta,
    })
}

/// Standard normal multipliers, column `l` holding `U^[l]` for all units.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub multipliers: DMatrix<f64>,
    pub seed: u64,
}

impl BootstrapDraws {
    pub fn generate(draws: usize, n: usize, seed: u64) -> Self {
        if draws < MIN_BOOT_DRAWS {
            warn!("only {draws} bootstrap draws requested; SEs will be noisy");
        }
        let mut r = rng::rng_from(seed, &[rng::STREAM_BOOT_SE]);
        let multipliers = DMatrix::from_fn(n, draws, |_, _| StandardNormal.sample(&mut r));
        BootstrapDraws { multipliers, seed }
    }

    pub fn len(&self) -> usize {
        self.multipliers.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.ncols() == 0
    }
}

pub fn centered(v: &DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.map(|x| x - m)
}

/// Bootstrap statistics `N^(l)` for one candidate.
///
/// `delta_tilde` and `eps_tilde` are the centered treatment residuals and
/// the centered outcome residuals of the largest strong candidate.
pub fn bootstrap_statistics(
    ctx: &ProjectionContext,
    delta_tilde: &DVector<f64>,
    eps_tilde: &DVector<f64>,
    draws: &BootstrapDraws,
) -> Vec<f64> {
    let md_eps: DVector<f64> = ctx.md.component_mul(eps_tilde);
    let diag_cross: DVector<f64> = ctx
        .m_diag
        .component_mul(delta_tilde)
        .component_mul(eps_tilde);
    draws
        .multipliers
        .column_iter()
        .map(|u| {
            let mut linear = 0.0;
            let mut quad = 0.0;
            for i in 0..u.len() {
                linear += md_eps[i] * u[i];
                quad += diag_cross[i] * u[i] * u[i];
            }
            (linear - quad) / ctx.dmd
        })
        .collect()
}

pub fn bootstrap_se(
    ctx: &ProjectionContext,
    delta_tilde: &DVector<f64>,
    eps_tilde: &DVector<f64>,
    draws: &BootstrapDraws,
) -> f64 {
    sample_sd(&bootstrap_statistics(ctx, delta_tilde, eps_tilde, draws))
}
