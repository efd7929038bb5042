//! Repeated split-fit-select pipelines and their aggregation.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_split, select_entries, select_rows, Dataset, FoldSplit, DEFAULT_SPLIT_PROP};
use crate::error::{Result, TsciError};
use crate::estimator::{
    bootstrap_se, centered, estimate_beta, projection_context, BootstrapDraws, EffectEstimate,
    DEFAULT_BOOT_DRAWS,
};
use crate::learners::{LearnerSpec, LearnerTag};
use crate::rng::{self, derive_seed};
use crate::selection::{
    determine_qmax, iv_strength, select_candidate, strength_threshold, treatment_noise_variance,
    NoiseDraws, SelectionMethod, SelectionResult, ThresholdMode, Validity,
    DEFAULT_COMPARISON_ALPHA, DEFAULT_TAU_MIN, DEFAULT_THRESHOLD_DRAWS,
};
use crate::stats::{median, normal_quantile, p_value};
use crate::violation::build_candidates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    #[serde(rename = "FWER")]
    Fwer,
    #[serde(rename = "DML")]
    Dml,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Fwer => "FWER",
            Aggregation::Dml => "DML",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FWER" => Ok(Aggregation::Fwer),
            "DML" => Ok(Aggregation::Dml),
            other => Err(format!(
                "unknown aggregation method `{other}` (expected FWER or DML)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsciOptions {
    pub nested: bool,
    pub nsplits: usize,
    pub split_prop: f64,
    pub sel_method: SelectionMethod,
    pub mult_split_method: Aggregation,
    pub sd_boot: bool,
    pub iv_threshold: f64,
    pub threshold_boot: bool,
    pub threshold_mode: ThresholdMode,
    pub alpha: f64,
    /// Level of the pairwise comparison tests.
    pub comparison_alpha: f64,
    pub boot_draws: usize,
    pub threshold_draws: usize,
    pub seed: u64,
}

impl Default for TsciOptions {
    fn default() -> Self {
        TsciOptions {
            nested: true,
            nsplits: 10,
            split_prop: DEFAULT_SPLIT_PROP,
            sel_method: SelectionMethod::Comparison,
            mult_split_method: Aggregation::Fwer,
            sd_boot: true,
            iv_threshold: DEFAULT_TAU_MIN,
            threshold_boot: true,
            threshold_mode: ThresholdMode::Add,
            alpha: 0.05,
            comparison_alpha: DEFAULT_COMPARISON_ALPHA,
            boot_draws: DEFAULT_BOOT_DRAWS,
            threshold_draws: DEFAULT_THRESHOLD_DRAWS,
            seed: 0,
        }
    }
}

impl TsciOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TsciError::InvalidParameter(m));
        if self.nsplits == 0 {
            return bad("nsplits must be at least 1".into());
        }
        if !(self.split_prop > 0.0 && self.split_prop < 1.0) {
            return Err(TsciError::InvalidSplitProportion(self.split_prop));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 0.5), got {}", self.alpha));
        }
        if !(self.comparison_alpha > 0.0 && self.comparison_alpha < 1.0) {
            return bad(format!(
                "comparison alpha must lie in (0, 1), got {}",
                self.comparison_alpha
            ));
        }
        if !(self.iv_threshold.is_finite() && self.iv_threshold >= 0.0) {
            return bad(format!("iv_threshold must be nonnegative, got {}", self.iv_threshold));
        }
        if self.sd_boot && self.boot_draws < 2 {
            return bad("at least 2 bootstrap draws are needed".into());
        }
        if self.threshold_boot && self.threshold_draws < 2 {
            return bad("at least 2 threshold bootstrap draws are needed".into());
        }
        Ok(())
    }

    /// Aggregation actually applied: a single split is always DML.
    pub fn applied_aggregation(&self, nsplits: usize) -> Aggregation {
        if nsplits == 1 {
            Aggregation::Dml
        } else {
            self.mult_split_method
        }
    }
}

/// Per-candidate outcome in one split. Estimates are absent when the
/// candidate absorbs the fitted treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub q: usize,
    pub label: String,
    #[serde(with = "crate::stats::extended_f64")]
    pub strength: f64,
    pub threshold: f64,
    pub passed: bool,
    pub estimate: Option<EffectEstimate>,
}

impl CandidateFit {
    pub fn beta(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.beta_hat)
    }

    pub fn se(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.se())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFit {
    pub split_id: usize,
    /// Absent for learners that use the full sample.
    pub fold: Option<FoldSplit>,
    pub learner: LearnerTag,
    pub n: usize,
    pub n_a1: usize,
    pub candidates: Vec<CandidateFit>,
    pub selection: SelectionResult,
    pub beta: f64,
    pub se: f64,
    /// Two-sided p value for `beta = 0`.
    pub p: f64,
}

impl SplitFit {
    pub fn n_a2(&self) -> Option<usize> {
        self.fold.as_ref().map(|f| f.a2.len())
    }

    /// Normal interval at level `1 - alpha`.
    pub fn ci(&self, alpha: f64) -> (f64, f64) {
        let z = normal_quantile(1.0 - alpha / 2.0);
        (self.beta - z * self.se, self.beta + z * self.se)
    }
}

/// One full pipeline on the split labelled `split_id`.
pub fn fit_split(
    dataset: &Dataset,
    learner: &LearnerSpec,
    vio_space: &[DMatrix<f64>],
    options: &TsciOptions,
    split_id: usize,
) -> Result<SplitFit> {
    let split_seed = derive_seed(options.seed, &[split_id as u64]);
    let fold = if learner.requires_split() {
        Some(make_split(
            dataset.n(),
            options.split_prop,
            split_seed,
            dataset.w.ncols(),
        )?)
    } else {
        None
    };
    let hat = learner
        .reseeded(derive_seed(split_seed, &[rng::STREAM_LEARNER]))
        .hat_matrix(dataset, fold.as_ref())?;
    let rows = &hat.rows;
    let n1 = rows.len();
    let y1 = select_entries(&dataset.y, rows);
    let d1 = select_entries(&dataset.d, rows);
    let w1 = select_rows(&dataset.w, rows);
    let vio1: Vec<DMatrix<f64>> = vio_space.iter().map(|b| select_rows(b, rows)).collect();
    let cands = build_candidates(&w1, &vio1, options.nested)?;

    let ctxs: Vec<_> = cands
        .iter()
        .map(|c| projection_context(&hat, c, &d1))
        .collect();
    if ctxs.iter().all(|c| c.is_err()) {
        return Err(ctxs.into_iter().next().unwrap().unwrap_err());
    }

    let omega_d = hat.fitted(&d1);
    let sigma_delta_sq = treatment_noise_variance(&d1, &omega_d);
    let delta_tilde = centered(&(&d1 - &omega_d));
    let noise = options.threshold_boot.then(|| {
        NoiseDraws::generate(
            &hat.omega,
            &delta_tilde,
            options.threshold_draws,
            derive_seed(split_seed, &[rng::STREAM_BOOT_THRESHOLD]),
        )
    });

    let mut fits = Vec::with_capacity(cands.len());
    for (cand, ctx) in cands.iter().zip(&ctxs) {
        let (strength, threshold, estimate) = match ctx {
            Ok(ctx) => (
                iv_strength(ctx, sigma_delta_sq),
                strength_threshold(
                    ctx,
                    noise.as_ref(),
                    sigma_delta_sq,
                    options.iv_threshold,
                    options.threshold_mode,
                ),
                estimate_beta(ctx, &y1, &d1).ok(),
            ),
            Err(e) => {
                warn!("split {split_id}, candidate q{}: {e}", cand.q);
                (0.0, options.iv_threshold, None)
            }
        };
        fits.push(CandidateFit {
            q: cand.q,
            label: cand.label.clone(),
            strength,
            threshold,
            passed: estimate.is_some() && strength > threshold,
            estimate,
        });
    }

    let passed: Vec<bool> = fits.iter().map(|f| f.passed).collect();
    let q_max = determine_qmax(&passed).q_max;
    if fits[q_max].estimate.is_none() {
        return Err(TsciError::FullyAbsorbed);
    }

    if options.sd_boot {
        let eps_tilde = centered(&fits[q_max].estimate.as_ref().unwrap().residuals_eps);
        let draws = BootstrapDraws::generate(
            options.boot_draws,
            n1,
            derive_seed(split_seed, &[rng::STREAM_BOOT_SE]),
        );
        for (fit, ctx) in fits.iter_mut().zip(&ctxs) {
            if let (Some(est), Ok(ctx)) = (fit.estimate.as_mut(), ctx) {
                est.se_boot = Some(bootstrap_se(ctx, &delta_tilde, &eps_tilde, &draws));
            }
        }
    }
    // residual vectors are only needed above
    for fit in &mut fits {
        if let Some(est) = fit.estimate.as_mut() {
            est.residuals_eps = DVector::zeros(0);
            est.residuals_delta = DVector::zeros(0);
        }
    }

    let est: Vec<f64> = fits.iter().map(|f| f.beta().unwrap_or(f64::NAN)).collect();
    let ses: Vec<f64> = fits.iter().map(|f| f.se().unwrap_or(f64::NAN)).collect();
    let selection = select_candidate(
        &est,
        &ses,
        q_max,
        fits.len(),
        options.sel_method,
        options.comparison_alpha,
    );
    let beta = est[selection.selected];
    let se = ses[selection.selected];
    Ok(SplitFit {
        split_id,
        fold,
        learner: hat.learner,
        n: dataset.n(),
        n_a1: n1,
        candidates: fits,
        selection,
        beta,
        se,
        p: p_value(beta, se),
    })
}

/// `nsplits` independent pipelines, or one for learners without a split.
/// Failed splits are returned as errors for the caller to drop.
pub fn run_splits(
    dataset: &Dataset,
    learner: &LearnerSpec,
    vio_space: &[DMatrix<f64>],
    options: &TsciOptions,
) -> Vec<Result<SplitFit>> {
    let nsplits = if learner.requires_split() {
        options.nsplits
    } else {
        if options.nsplits > 1 {
            info!("{} learner uses the full sample; running a single fit", learner.tag());
        }
        1
    };
    (0..nsplits)
        .into_par_iter()
        .map(|s| fit_split(dataset, learner, vio_space, options, s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidityCounts {
    pub valid: usize,
    pub invalid: usize,
    pub non_testable: usize,
}

/// How often each candidate was `q_comp`, `q_cons` and `Q_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTally {
    pub q: usize,
    pub q_comp: usize,
    pub q_cons: usize,
    pub q_max: usize,
}

/// Per-candidate estimates aggregated like the selected one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub q: usize,
    pub label: String,
    pub beta: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub p: Option<f64>,
    /// Median over splits.
    #[serde(with = "crate::stats::extended_f64")]
    pub strength: f64,
    /// Median over splits.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsciResult {
    pub beta: f64,
    pub se: Option<f64>,
    pub ci: (f64, f64),
    pub p: f64,
    pub alpha: f64,
    pub aggregation: Aggregation,
    pub sel_method: SelectionMethod,
    pub learner: LearnerTag,
    pub n: usize,
    pub n_a1: usize,
    pub n_a2: Option<usize>,
    /// Successful splits entering the aggregate.
    pub nsplits: usize,
    pub failed_splits: usize,
    pub validity: ValidityCounts,
    pub tallies: Vec<CandidateTally>,
    pub candidates: Vec<CandidateSummary>,
    /// Splits where `q_comp = q_max`.
    pub interpret_carefully: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub beta: f64,
    pub se: Option<f64>,
    pub ci: (f64, f64),
    pub p: f64,
}

/// FWER rule: `p = min(1, 2 median p_j)`, CI bounds are medians of the
/// per-split bounds at level `1 - alpha/2`.
pub fn fwer_combine(pairs: &[(f64, f64)], alpha: f64) -> Aggregate {
    let z = normal_quantile(1.0 - alpha / 4.0);
    let betas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ps: Vec<f64> = pairs.iter().map(|&(b, s)| p_value(b, s)).collect();
    let lo: Vec<f64> = pairs.iter().map(|&(b, s)| b - z * s).collect();
    let hi: Vec<f64> = pairs.iter().map(|&(b, s)| b + z * s).collect();
    Aggregate {
        beta: median(&betas),
        se: None,
        ci: (median(&lo), median(&hi)),
        p: (2.0 * median(&ps)).min(1.0),
    }
}

/// DML rule: median estimate, SE inflated by the split dispersion.
pub fn dml_combine(pairs: &[(f64, f64)], alpha: f64) -> Aggregate {
    let betas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let beta = median(&betas);
    let inflated: Vec<f64> = pairs
        .iter()
        .map(|&(b, s)| (s * s + (b - beta) * (b - beta)).sqrt())
        .collect();
    let se = median(&inflated);
    let z = normal_quantile(1.0 - alpha / 2.0);
    Aggregate {
        beta,
        se: Some(se),
        ci: (beta - z * se, beta + z * se),
        p: p_value(beta, se),
    }
}

fn aggregate(splits: &[SplitFit], alpha: f64, method: Aggregation) -> TsciResult {
    assert!(!splits.is_empty(), "aggregation needs at least one split");
    let combine = |pairs: &[(f64, f64)]| match method {
        Aggregation::Fwer => fwer_combine(pairs, alpha),
        Aggregation::Dml => dml_combine(pairs, alpha),
    };
    let first = &splits[0];
    let selected: Vec<(f64, f64)> = splits.iter().map(|s| (s.beta, s.se)).collect();
    let agg = combine(&selected);

    let mut validity = ValidityCounts::default();
    let num_q = first.candidates.len();
    let mut tallies: Vec<CandidateTally> = (0..num_q)
        .map(|q| CandidateTally { q, q_comp: 0, q_cons: 0, q_max: 0 })
        .collect();
    for s in splits {
        match s.selection.validity {
            Validity::Valid => validity.valid += 1,
            Validity::Invalid => validity.invalid += 1,
            Validity::NonTestable => validity.non_testable += 1,
        }
        tallies[s.selection.q_comp].q_comp += 1;
        tallies[s.selection.q_cons].q_cons += 1;
        tallies[s.selection.q_max].q_max += 1;
    }

    let candidates = (0..num_q)
        .map(|q| {
            let pairs: Vec<(f64, f64)> = splits
                .iter()
                .filter_map(|s| {
                    let c = &s.candidates[q];
                    Some((c.beta()?, c.se()?))
                })
                .collect();
            let cagg = (!pairs.is_empty()).then(|| combine(&pairs));
            let strengths: Vec<f64> = splits.iter().map(|s| s.candidates[q].strength).collect();
            let thresholds: Vec<f64> = splits.iter().map(|s| s.candidates[q].threshold).collect();
            CandidateSummary {
                q,
                label: first.candidates[q].label.clone(),
                beta: cagg.map(|a| a.beta),
                se: cagg.and_then(|a| a.se),
                ci: cagg.map(|a| a.ci),
                p: cagg.map(|a| a.p),
                strength: median(&strengths),
                threshold: median(&thresholds),
            }
        })
        .collect();

    TsciResult {
        beta: agg.beta,
        se: agg.se,
        ci: agg.ci,
        p: agg.p,
        alpha,
        aggregation: method,
        sel_method: first.selection.method,
        learner: first.learner,
        n: first.n,
        n_a1: first.n_a1,
        n_a2: first.n_a2(),
        nsplits: splits.len(),
        failed_splits: 0,
        validity,
        tallies,
        candidates,
        interpret_carefully: splits.iter().filter(|s| s.selection.interpret_carefully).count(),
    }
}

pub fn aggregate_fwer(splits: &[SplitFit], alpha: f64) -> TsciResult {
    aggregate(splits, alpha, Aggregation::Fwer)
}

pub fn aggregate_dml(splits: &[SplitFit], alpha: f64) -> TsciResult {
    aggregate(splits, alpha, Aggregation::Dml)
}

/// Full procedure: run the splits, drop failures, aggregate.
pub fn fit_tsci(
    dataset: &Dataset,
    learner: &LearnerSpec,
    vio_space: &[DMatrix<f64>],
    options: &TsciOptions,
) -> Result<TsciResult> {
    options.validate()?;
    let outcomes = run_splits(dataset, learner, vio_space, options);
    let attempted = outcomes.len();
    let mut splits = Vec::with_capacity(attempted);
    let mut last_err = None;
    for (s, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(fit) => splits.push(fit),
            Err(e) => {
                warn!("split {s} failed and is excluded: {e}");
                last_err = Some(e);
            }
        }
    }
    if splits.is_empty() {
        return Err(match (attempted, last_err) {
            (1, Some(e)) => e,
            _ => TsciError::AllSplitsFailed(attempted),
        });
    }
    let method = options.applied_aggregation(splits.len());
    if method != options.mult_split_method {
        info!("a single split is aggregated with the DML rule");
    }
    let mut result = aggregate(&splits, options.alpha, method);
    result.failed_splits = attempted - splits.len();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::Validity;
    use proptest::prelude::*;

    fn split(beta: f64, se: f64, q_comp: usize) -> SplitFit {
        let selection = SelectionResult {
            q_max: 1,
            q_comp,
            q_cons: 1,
            method: SelectionMethod::Comparison,
            selected: q_comp,
            validity: if q_comp == 0 { Validity::Valid } else { Validity::Invalid },
            interpret_carefully: q_comp == 1,
        };
        let cand = |q: usize| CandidateFit {
            q,
            label: format!("q{q}"),
            strength: 100.0,
            threshold: 40.0,
            passed: true,
            estimate: Some(EffectEstimate {
                beta_hat: beta,
                beta_raw: beta,
                bias_term: 0.0,
                se_plugin: se,
                se_boot: None,
                sigma_eps_hat: 1.0,
                sigma_delta_hat: 1.0,
                residuals_eps: DVector::zeros(0),
                residuals_delta: DVector::zeros(0),
            }),
        };
        SplitFit {
            split_id: 0,
            fold: None,
            learner: LearnerTag::User,
            n: 100,
            n_a1: 100,
            candidates: vec![cand(0), cand(1)],
            selection,
            beta,
            se,
            p: p_value(beta, se),
        }
    }

    #[test]
    fn fwer_doubles_the_median_p() {
        let z = normal_quantile(1.0 - 0.01 / 2.0);
        let splits: Vec<_> = (0..5).map(|_| split(z, 1.0, 0)).collect();
        let r = aggregate_fwer(&splits, 0.05);
        assert!((r.p - 0.02).abs() < 1e-12);
        assert!(r.se.is_none());
        let one = aggregate_fwer(&splits[..1], 0.05);
        assert!((one.p - 0.02).abs() < 1e-12);
    }

    #[test]
    fn dml_single_split_is_identity() {
        let s = split(0.7, 0.2, 0);
        let r = aggregate_dml(&[s.clone()], 0.05);
        assert_eq!(r.beta, 0.7);
        assert_eq!(r.se, Some(0.2));
        let (lo, hi) = s.ci(0.05);
        assert!((r.ci.0 - lo).abs() < 1e-15 && (r.ci.1 - hi).abs() < 1e-15);
        assert!((r.p - s.p).abs() < 1e-15);
    }

    #[test]
    fn identical_splits_keep_the_se() {
        let splits: Vec<_> = (0..4).map(|_| split(0.3, 0.1, 0)).collect();
        assert_eq!(aggregate_dml(&splits, 0.05).se, Some(0.1));
    }

    #[test]
    fn tallies_partition_splits() {
        let splits = vec![split(0.1, 0.1, 0), split(0.2, 0.1, 1), split(0.3, 0.1, 1)];
        let r = aggregate_dml(&splits, 0.05);
        assert_eq!(r.validity.valid + r.validity.invalid + r.validity.non_testable, 3);
        for col in [
            r.tallies.iter().map(|t| t.q_comp).sum::<usize>(),
            r.tallies.iter().map(|t| t.q_cons).sum(),
            r.tallies.iter().map(|t| t.q_max).sum(),
        ] {
            assert_eq!(col, 3);
        }
        assert_eq!(r.tallies[1].q_comp, 2);
        assert_eq!(r.interpret_carefully, 2);
    }

    #[test]
    fn single_split_is_labelled_dml() {
        let opts = TsciOptions::default();
        assert_eq!(opts.applied_aggregation(1), Aggregation::Dml);
        assert_eq!(opts.applied_aggregation(2), Aggregation::Fwer);
    }

    #[test]
    fn options_are_validated() {
        let mut o = TsciOptions::default();
        assert!(o.validate().is_ok());
        o.split_prop = 1.5;
        assert!(o.validate().is_err());
        o = TsciOptions { alpha: 0.7, ..TsciOptions::default() };
        assert!(o.validate().is_err());
    }

    proptest! {
        #[test]
        fn dml_invariants(
            pairs in proptest::collection::vec((-3.0f64..3.0, 0.01f64..1.0), 1..12),
            extra in 0.0f64..5.0,
        ) {
            let splits: Vec<_> = pairs.iter().map(|&(b, s)| split(b, s, 0)).collect();
            let r = aggregate_dml(&splits, 0.05);
            let se = r.se.unwrap();
            let ses: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assert!(se >= median(&ses) - 1e-15);
            prop_assert!(r.ci.0 <= r.beta && r.beta <= r.ci.1);

            let mut rev = splits.clone();
            rev.reverse();
            prop_assert_eq!(aggregate_dml(&rev, 0.05).beta, r.beta);

            // moving one split away from the median never shrinks its term
            let mut far = pairs.clone();
            let b0 = far[0].0;
            far[0].0 = if b0 >= r.beta { b0 + extra } else { b0 - extra };
            let term = |b: f64, s: f64, m: f64| (s * s + (b - m) * (b - m)).sqrt();
            prop_assert!(term(far[0].0, far[0].1, r.beta) >= term(b0, far[0].1, r.beta));
        }

        #[test]
        fn fwer_p_is_a_probability(
            pairs in proptest::collection::vec((-3.0f64..3.0, 0.01f64..1.0), 1..12),
        ) {
            let splits: Vec<_> = pairs.iter().map(|&(b, s)| split(b, s, 0)).collect();
            let r = aggregate_fwer(&splits, 0.05);
            prop_assert!((0.0..=1.0).contains(&r.p));
            prop_assert!(r.ci.0 <= r.ci.1);
        }
    }
}
