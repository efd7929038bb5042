use tsci_core::data::{select_entries, select_rows};
use tsci_core::learners::{ForestSpec, PolySpec};
use tsci_core::rng::derive_seed;
use tsci_core::selection::{iv_strength, strength_threshold, treatment_noise_variance, NoiseDraws, ThresholdMode};
use tsci_core::simlab::{generate, Scenario};
use tsci_core::estimator::centered;
use tsci_core::stats::mean;
use tsci_core::{
    build_candidates, create_monomials, fit_tsci, make_split, projection_context, run_splits,
    Aggregation, LearnerSpec, TsciOptions,
};

fn forest(num_trees: usize) -> LearnerSpec {
    LearnerSpec::Forest(ForestSpec { num_trees, ..ForestSpec::default() })
}

/// Strengths of `{W, +Z, +Z²}` in one split, with bootstrap thresholds when
/// requested.
fn strengths(n: usize, seed: u64, thresholds: bool) -> (Vec<f64>, Vec<f64>) {
    let (ds, _) = generate(&Scenario::B.spec(n, seed)).unwrap();
    let split = make_split(n, 2.0 / 3.0, seed, ds.w.ncols()).unwrap();
    let hat = LearnerSpec::Forest(ForestSpec { num_trees: 100, seed, ..ForestSpec::default() })
        .hat_matrix(&ds, Some(&split))
        .unwrap();
    let d1 = select_entries(&ds.d, &hat.rows);
    let vio: Vec<_> = create_monomials(&ds.z, 2)
        .unwrap()
        .iter()
        .map(|b| select_rows(b, &hat.rows))
        .collect();
    let cands = build_candidates(&select_rows(&ds.w, &hat.rows), &vio, true).unwrap();
    let omega_d = hat.fitted(&d1);
    let s2 = treatment_noise_variance(&d1, &omega_d);
    let noise = thresholds
        .then(|| NoiseDraws::generate(&hat.omega, &centered(&(&d1 - &omega_d)), 200, seed));
    let mut s = Vec::new();
    let mut tau = Vec::new();
    for c in &cands {
        let ctx = projection_context(&hat, c, &d1).unwrap();
        s.push(iv_strength(&ctx, s2));
        tau.push(strength_threshold(&ctx, noise.as_ref(), s2, 40.0, ThresholdMode::Add));
    }
    (s, tau)
}

#[test]
fn strength_grows_linearly_with_the_sample() {
    let reps = 50;
    let mut small = vec![0.0; 3];
    let mut large = vec![0.0; 3];
    let mut above_floor = 0;
    for rep in 0..reps {
        let (s1, tau) = strengths(3000, rep, true);
        let (s2, _) = strengths(6000, 1000 + rep, false);
        for q in 0..3 {
            small[q] += s1[q];
            large[q] += s2[q];
        }
        assert!(s1.windows(2).all(|w| w[0] >= w[1]), "{s1:?}");
        if tau.iter().all(|&t| t > 40.0) {
            above_floor += 1;
        }
    }
    for q in 0..2 {
        let ratio = large[q] / small[q];
        assert!((1.6..=2.4).contains(&ratio), "q{q}: ratio {ratio}");
    }
    assert!(above_floor as f64 >= 0.95 * reps as f64);
}

#[test]
fn multi_split_runs_are_reproducible() {
    let (ds, _) = generate(&Scenario::B.spec(600, 2)).unwrap();
    let vio = create_monomials(&ds.z, 2).unwrap();
    let opts = TsciOptions { nsplits: 4, seed: 11, boot_draws: 100, ..TsciOptions::default() };
    let a = fit_tsci(&ds, &forest(40), &vio, &opts).unwrap();
    let b = fit_tsci(&ds, &forest(40), &vio, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.nsplits, 4);
    assert_eq!(a.aggregation, Aggregation::Fwer);
    let c = fit_tsci(&ds, &forest(40), &vio, &TsciOptions { seed: 12, ..opts }).unwrap();
    assert_ne!(a.beta, c.beta);
}

#[test]
fn single_split_passes_through() {
    let (ds, _) = generate(&Scenario::A.spec(600, 3)).unwrap();
    let vio = create_monomials(&ds.z, 2).unwrap();
    let opts = TsciOptions { nsplits: 1, seed: 5, boot_draws: 100, ..TsciOptions::default() };
    let splits = run_splits(&ds, &forest(40), &vio, &opts);
    let fit = splits.into_iter().next().unwrap().unwrap();
    let r = fit_tsci(&ds, &forest(40), &vio, &opts).unwrap();
    assert_eq!(r.aggregation, Aggregation::Dml);
    assert_eq!(r.beta, fit.beta);
    assert_eq!(r.se, Some(fit.se));
    let sel = &fit.candidates[fit.selection.selected];
    assert_eq!(sel.beta(), Some(fit.beta));
}

#[test]
fn full_sample_learners_run_once() {
    let (ds, _) = generate(&Scenario::B.spec(400, 4)).unwrap();
    let vio = create_monomials(&ds.z, 2).unwrap();
    let opts = TsciOptions { nsplits: 10, seed: 1, boot_draws: 100, ..TsciOptions::default() };
    let learner = LearnerSpec::Polynomial(PolySpec { degree: Some(3), seed: 0 });
    let r = fit_tsci(&ds, &learner, &vio, &opts).unwrap();
    assert_eq!(r.nsplits, 1);
    assert_eq!(r.n_a2, None);
    assert_eq!(r.n_a1, 400);
    assert_eq!(r.aggregation, Aggregation::Dml);
}

#[test]
fn splits_draw_independent_seeds() {
    let seeds: Vec<u64> = (0..10).map(|s| derive_seed(7, &[s])).collect();
    let mut uniq = seeds.clone();
    uniq.sort_unstable();
    uniq.dedup();
    assert_eq!(uniq.len(), seeds.len());
}

#[test]
fn polynomial_pipeline_detects_the_linear_violation() {
    let reps = 20;
    let hits: Vec<f64> = (0..reps)
        .map(|s| {
            let (ds, _) = generate(&Scenario::B.spec(1000, 50 + s)).unwrap();
            let vio = create_monomials(&ds.z, 2).unwrap();
            let learner = LearnerSpec::Polynomial(PolySpec { degree: Some(3), seed: 0 });
            let r = fit_tsci(&ds, &learner, &vio, &TsciOptions { seed: s, ..TsciOptions::default() }).unwrap();
            f64::from(u8::from(r.tallies[1].q_comp == 1))
        })
        .collect();
    assert!(mean(&hits) >= 0.8);
}
