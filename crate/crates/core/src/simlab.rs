//! Synthetic data with known truth, and oracles computed without the
//! estimation code.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, Dataset, NamedColumn, RawColumns};
use crate::error::{Result, TsciError};
use crate::rng;

pub const MIN_SIM_ROWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FForm {
    Linear,
    Quad,
    Interaction,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HForm {
    None,
    Linear,
    Quad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub beta_true: f64,
    pub f_form: FForm,
    pub h_form: HForm,
    /// Correlation of `(δ, ε)`.
    pub rho: f64,
    pub iv_dim: usize,
    pub covariate_dim: usize,
    /// Bernoulli(1/2) instead of standard normal instruments.
    pub binary_iv: bool,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TsciError::InvalidParameter(m));
        if self.n < MIN_SIM_ROWS {
            return bad(format!("simulated n must be at least {MIN_SIM_ROWS}"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [-1, 1], got {}", self.rho));
        }
        if self.iv_dim == 0 {
            return bad("iv_dim must be at least 1".into());
        }
        if self.f_form == FForm::Interaction && self.covariate_dim == 0 {
            return bad("the interaction treatment model needs a covariate".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Valid instrument.
    A,
    /// Linear violation.
    B,
    /// Quadratic violation.
    C,
}

impl Scenario {
    pub fn spec(self, n: usize, seed: u64) -> DgpSpec {
        let (beta_true, f_form, h_form) = match self {
            Scenario::A => (0.5, FForm::Quad, HForm::None),
            Scenario::B => (1.0, FForm::Quad, HForm::Linear),
            Scenario::C => (1.0, FForm::Interaction, HForm::Quad),
        };
        DgpSpec {
            n,
            beta_true,
            f_form,
            h_form,
            rho: 0.6,
            iv_dim: 1,
            covariate_dim: 2,
            binary_iv: false,
            seed,
        }
    }

    /// Index of the smallest candidate in `{W, +Z, +Z²}` containing `h`.
    pub fn true_q(self) -> usize {
        match self {
            Scenario::A => 0,
            Scenario::B => 1,
            Scenario::C => 2,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            other => Err(format!("unknown scenario `{other}` (expected A, B or C)")),
        }
    }
}

/// Generative components behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: f64,
    pub f: DVector<f64>,
    pub h: DVector<f64>,
    pub phi: DVector<f64>,
    pub delta: DVector<f64>,
    pub eps: DVector<f64>,
}

/// `D = f(Z, X) + δ`, `Y = β D + h(Z) + φ(X) + ε`.
pub fn generate(spec: &DgpSpec) -> Result<(Dataset, Truth)> {
    spec.validate()?;
    let n = spec.n;
    let mut r = rng::rng_from(spec.seed, &[rng::STREAM_DGP]);
    let z = DMatrix::from_fn(n, spec.iv_dim, |_, _| {
        if spec.binary_iv {
            f64::from(u8::from(r.gen_bool(0.5)))
        } else {
            StandardNormal.sample(&mut r)
        }
    });
    let x = DMatrix::from_fn(n, spec.covariate_dim, |_, _| StandardNormal.sample(&mut r));
    let cross = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let mut delta = DVector::zeros(n);
    let mut eps = DVector::zeros(n);
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut r);
        let b: f64 = StandardNormal.sample(&mut r);
        delta[i] = a;
        eps[i] = spec.rho * a + cross * b;
    }

    let xsum = |i: usize| x.row(i).sum();
    let f = DVector::from_fn(n, |i, _| {
        let zr = z.row(i);
        let base = match spec.f_form {
            FForm::Linear => zr.sum(),
            FForm::Quad => zr.iter().map(|v| v + v * v).sum(),
            FForm::Interaction => zr.sum() + z[(i, 0)] * x[(i, 0)],
            FForm::Sine => zr.iter().map(|v| v + (2.0 * v).sin()).sum(),
        };
        base + 0.5 * xsum(i)
    });
    let h = DVector::from_fn(n, |i, _| {
        let zr = z.row(i);
        match spec.h_form {
            HForm::None => 0.0,
            HForm::Linear => zr.sum(),
            HForm::Quad => 0.5 * zr.iter().map(|v| v + v * v).sum::<f64>(),
        }
    });
    let phi = DVector::from_fn(n, |i, _| 0.5 * xsum(i));
    let d = &f + &delta;
    let y = DVector::from_fn(n, |i, _| spec.beta_true * d[i] + h[i] + phi[i] + eps[i]);

    let cols = |m: &DMatrix<f64>, prefix: &str| -> Vec<NamedColumn> {
        (0..m.ncols())
            .map(|j| NamedColumn::new(format!("{prefix}{}", j + 1), m.column(j).iter().copied().collect()))
            .collect()
    };
    let dataset = validate_dataset(RawColumns {
        y: NamedColumn::new("y", y.iter().copied().collect()),
        d: NamedColumn::new("d", d.iter().copied().collect()),
        z: cols(&z, "z"),
        x: cols(&x, "x"),
        w: None,
    })?;
    Ok((
        dataset,
        Truth {
            beta: spec.beta_true,
            f,
            h,
            phi,
            delta,
            eps,
        },
    ))
}

fn with_intercept(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = parts[0].nrows();
    let p: usize = parts.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::from_element(n, p + 1, 1.0);
    let mut j = 1;
    for m in parts {
        out.columns_mut(j, m.ncols()).copy_from(m);
        j += m.ncols();
    }
    out
}

/// `A (AᵀA)⁻¹ Aᵀ v` by normal equations.
fn project_normal(a: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = (a.transpose() * a)
        .cholesky()
        .ok_or_else(|| TsciError::RankDeficient("design matrix is singular".into()))?;
    Ok(a * chol.solve(&(a.transpose() * v)))
}

/// Two stage least squares with instruments `z` and exogenous `x`, both
/// joined by an intercept.
pub fn tsls_oracle(
    y: &DVector<f64>,
    d: &DVector<f64>,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<f64> {
    let first = with_intercept(&[z, x]);
    let exog = with_intercept(&[x]);
    let d_hat = project_normal(&first, d)?;
    let d_hat_perp = &d_hat - project_normal(&exog, &d_hat)?;
    let d_perp = d - project_normal(&exog, d)?;
    let den = d_hat_perp.norm_squared();
    let share = den / d_perp.norm_squared();
    if !(share > 1e-12) {
        return Err(TsciError::RankDeficient(
            "instruments carry no variation in the treatment".into(),
        ));
    }
    if share < 1e-2 {
        warn!("weak instruments: first stage explains {share:.2e} of the treatment variation");
    }
    Ok(d_hat_perp.dot(y) / den)
}

/// Coefficient of `d` in the least squares fit of `y` on `[1, d, x]`.
pub fn ols_effect(y: &DVector<f64>, d: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    let exog = with_intercept(&[x]);
    let d_perp = d - project_normal(&exog, d)?;
    Ok(d_perp.dot(y) / d_perp.norm_squared())
}
