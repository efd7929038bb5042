//! Monte Carlo driver behind `tsci-sim`.

use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use log::warn;
use tsci_core::learners::ForestSpec;
use tsci_core::multisplit::Aggregation;
use tsci_core::rng::derive_seed;
use tsci_core::simlab::{generate, Scenario};
use tsci_core::{create_monomials, fit_tsci, LearnerSpec, TsciOptions};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "tsci-sim",
    version,
    about = "Monte Carlo runs on the built-in scenarios"
)]
pub struct SimArgs {
    /// A (valid instrument), B (linear violation) or C (quadratic violation).
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub nsplits: usize,
    #[arg(long, default_value = "DML")]
    pub mult_split_method: Aggregation,
    #[arg(long, default_value_t = 200)]
    pub num_trees: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Per-replication CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub beta: f64,
    pub se: Option<f64>,
    pub ci: (f64, f64),
    /// Most frequent `q_comp` over the splits.
    pub q_comp: usize,
    pub covered: bool,
}

/// Forest learner with candidates `{W, W + Z, W + Z + Z²}`.
pub fn run_rep(args: &SimArgs, rep: usize) -> CliResult<RepRecord> {
    let spec = args
        .scenario
        .spec(args.n, derive_seed(args.seed, &[rep as u64]));
    let (dataset, truth) = generate(&spec).map_err(CliError::from_core)?;
    let vio = create_monomials(&dataset.z, 2).map_err(CliError::from_core)?;
    let learner = LearnerSpec::Forest(ForestSpec {
        num_trees: args.num_trees,
        ..ForestSpec::default()
    });
    let options = TsciOptions {
        nsplits: args.nsplits,
        mult_split_method: args.mult_split_method,
        alpha: args.alpha,
        seed: spec.seed,
        ..TsciOptions::default()
    };
    let r = fit_tsci(&dataset, &learner, &vio, &options).map_err(CliError::from_core)?;
    let q_comp = r
        .tallies
        .iter()
        .max_by_key(|t| (t.q_comp, std::cmp::Reverse(t.q)))
        .map_or(0, |t| t.q);
    Ok(RepRecord {
        rep,
        beta: r.beta,
        se: r.se,
        ci: r.ci,
        q_comp,
        covered: r.ci.0 <= truth.beta && truth.beta <= r.ci.1,
    })
}

pub fn write_records<W: Write>(w: W, records: &[RepRecord]) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Estimation(format!("cannot write results: {e}"));
    wtr.write_record([
        "rep", "beta_hat", "se", "ci_lo", "ci_hi", "q_comp", "covered",
    ])
    .map_err(err)?;
    for r in records {
        wtr.write_record([
            r.rep.to_string(),
            r.beta.to_string(),
            r.se.map_or_else(|| "NA".to_string(), |s| s.to_string()),
            r.ci.0.to_string(),
            r.ci.1.to_string(),
            r.q_comp.to_string(),
            u8::from(r.covered).to_string(),
        ])
        .map_err(err)?;
    }
    wtr.flush()
        .map_err(|e| CliError::Estimation(format!("cannot write results: {e}")))
}

/// Run all replications; failed ones are skipped with a warning.
pub fn run_simulation(args: &SimArgs) -> CliResult<Vec<RepRecord>> {
    let mut records = Vec::with_capacity(args.reps);
    for rep in 0..args.reps {
        match run_rep(args, rep) {
            Ok(r) => records.push(r),
            Err(e) => warn!("replication {rep} failed: {e}"),
        }
    }
    if records.is_empty() && args.reps > 0 {
        return Err(CliError::Estimation("every replication failed".into()));
    }
    Ok(records)
}
