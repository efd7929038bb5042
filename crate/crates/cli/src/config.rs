//! Flags, optional TOML config file, and their resolution into a run.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgAction, Parser, ValueEnum};
use log::{info, warn};
use serde::Deserialize;
use tsci_core::learners::{BoostingSpec, ForestSpec, PolySpec};
use tsci_core::multisplit::Aggregation;
use tsci_core::selection::{SelectionMethod, ThresholdMode};
use tsci_core::TsciOptions;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Forest,
    Boosting,
    Poly,
    User,
}

/// Every setting is optional here so that flags can override a config
/// file key by key. Config file keys are the flag names with `_` for `-`.
#[derive(Debug, Clone, Default, Parser, Deserialize)]
#[command(
    name = "tsci",
    version,
    about = "Treatment effect estimation with possibly invalid instruments"
)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// TOML file with default values for any of the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    pub y: Option<String>,
    /// Treatment column.
    #[arg(long)]
    pub d: Option<String>,
    /// Instrument columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub z: Option<Vec<String>>,
    /// Baseline covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Outcome-model basis columns; defaults to the covariates.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<String>>,
    /// Violation space, e.g. `monomials:2` or `interactions:z1+cols:a,b`.
    #[arg(long)]
    pub vio: Option<String>,
    /// Nest the violation candidates.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub nested: Option<bool>,
    #[arg(long, value_enum)]
    pub learner: Option<LearnerKind>,
    /// Headerless CSV holding an n x n hat matrix or an n x p design.
    #[arg(long)]
    pub weight_matrix: Option<PathBuf>,
    #[arg(long)]
    pub num_trees: Option<usize>,
    #[arg(long)]
    pub min_node_size: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub boost_rounds: Option<usize>,
    #[arg(long)]
    pub shrinkage: Option<f64>,
    /// Polynomial degree; chosen by cross-validation when absent.
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub nsplits: Option<usize>,
    #[arg(long)]
    pub split_prop: Option<f64>,
    /// comparison or conservative.
    #[arg(long)]
    pub sel_method: Option<SelectionMethod>,
    /// FWER or DML.
    #[arg(long)]
    pub mult_split_method: Option<Aggregation>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub sd_boot: Option<bool>,
    #[arg(long)]
    pub boot_draws: Option<usize>,
    #[arg(long)]
    pub iv_threshold: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub threshold_boot: Option<bool>,
    /// add (floor plus bootstrap quantile) or replace.
    #[arg(long)]
    pub threshold_mode: Option<ThresholdMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print per-candidate estimates and IV strengths.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub extended: Option<bool>,
    /// Path of the JSON result file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($flags:ident, $file:ident; $($field:ident),*) => {
        Settings {
            config: $flags.config,
            $($field: $flags.$field.or($file.$field),)*
        }
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> CliResult<Settings> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config file: {e}")))
    }

    /// Flags take precedence over file values.
    pub fn overlay(self, file: Settings) -> Settings {
        let flags = self;
        overlay!(flags, file; input, y, d, z, x, w, vio, nested, learner, weight_matrix,
            num_trees, min_node_size, mtry, max_depth, boost_rounds, shrinkage, degree,
            nsplits, split_prop, sel_method, mult_split_method, sd_boot, boot_draws,
            iv_threshold, threshold_boot, threshold_mode, alpha, seed, extended, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerChoice {
    Forest(ForestSpec),
    Boosting(BoostingSpec),
    Poly(PolySpec),
    User(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub y: String,
    pub d: String,
    pub z: Vec<String>,
    pub x: Vec<String>,
    pub w: Option<Vec<String>>,
    pub vio: Option<String>,
    pub learner: LearnerChoice,
    pub options: TsciOptions,
    pub extended: bool,
    pub out: Option<PathBuf>,
}

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Validation(format!("missing required setting --{flag}")))
}

fn check_roles(y: &str, d: &str, z: &[String], x: &[String]) -> CliResult<()> {
    if y == d {
        return Err(CliError::Validation(format!(
            "column `{y}` cannot be both outcome and treatment"
        )));
    }
    let mut seen: HashSet<&str> = [y, d].into_iter().collect();
    for (role, cols) in [("instrument", z), ("covariate", x)] {
        for c in cols {
            if !seen.insert(c.as_str()) {
                return Err(CliError::Validation(format!(
                    "column `{c}` is used as {role} and in another role"
                )));
            }
        }
    }
    Ok(())
}

/// Apply defaults and check the resolved settings.
pub fn resolve(s: Settings) -> CliResult<RunConfig> {
    let input = required(s.input, "input")?;
    let y = required(s.y, "y")?;
    let d = required(s.d, "d")?;
    let z = required(s.z, "z")?;
    if z.is_empty() {
        return Err(CliError::Validation(
            "at least one instrument is required".into(),
        ));
    }
    let x = s.x.unwrap_or_default();
    check_roles(&y, &d, &z, &x)?;

    let seed = s.seed.unwrap_or(0);
    let kind = match (s.learner, &s.weight_matrix) {
        (Some(k), _) => k,
        (None, Some(_)) => LearnerKind::User,
        (None, None) => LearnerKind::Forest,
    };
    let forest_flags = s.num_trees.is_some() || s.mtry.is_some();
    let boost_flags = s.boost_rounds.is_some() || s.shrinkage.is_some();
    let learner = match kind {
        LearnerKind::Forest => {
            let def = ForestSpec::default();
            LearnerChoice::Forest(ForestSpec {
                num_trees: s.num_trees.unwrap_or(def.num_trees),
                min_node_size: s.min_node_size.unwrap_or(def.min_node_size),
                mtry: s.mtry.or(def.mtry),
                max_depth: s.max_depth.or(def.max_depth),
                seed,
            })
        }
        LearnerKind::Boosting => {
            let def = BoostingSpec::default();
            LearnerChoice::Boosting(BoostingSpec {
                rounds: s.boost_rounds.unwrap_or(def.rounds),
                shrinkage: s.shrinkage.unwrap_or(def.shrinkage),
                max_depth: s.max_depth.unwrap_or(def.max_depth),
                min_node_size: s.min_node_size.unwrap_or(def.min_node_size),
                seed,
            })
        }
        LearnerKind::Poly => LearnerChoice::Poly(PolySpec {
            degree: s.degree,
            seed,
        }),
        LearnerKind::User => {
            LearnerChoice::User(required(s.weight_matrix.clone(), "weight-matrix")?)
        }
    };
    if forest_flags && kind != LearnerKind::Forest {
        warn!("--num-trees and --mtry only apply to the forest learner");
    }
    if boost_flags && kind != LearnerKind::Boosting {
        warn!("--boost-rounds and --shrinkage only apply to the boosting learner");
    }
    if s.degree.is_some() && kind != LearnerKind::Poly {
        warn!("--degree only applies to the polynomial learner");
    }
    if s.weight_matrix.is_some() && kind != LearnerKind::User {
        warn!("--weight-matrix is ignored unless the learner is user");
    }

    let def = TsciOptions::default();
    let options = TsciOptions {
        nested: s.nested.unwrap_or(def.nested),
        nsplits: s.nsplits.unwrap_or(def.nsplits),
        split_prop: s.split_prop.unwrap_or(def.split_prop),
        sel_method: s.sel_method.unwrap_or(def.sel_method),
        mult_split_method: s.mult_split_method.unwrap_or(def.mult_split_method),
        sd_boot: s.sd_boot.unwrap_or(def.sd_boot),
        iv_threshold: s.iv_threshold.unwrap_or(def.iv_threshold),
        threshold_boot: s.threshold_boot.unwrap_or(def.threshold_boot),
        threshold_mode: s.threshold_mode.unwrap_or(def.threshold_mode),
        alpha: s.alpha.unwrap_or(def.alpha),
        boot_draws: s.boot_draws.unwrap_or(def.boot_draws),
        seed,
        ..def
    };
    if !(options.split_prop > 0.0 && options.split_prop < 1.0) {
        return Err(CliError::Validation(format!(
            "--split-prop must lie strictly between 0 and 1, got {}",
            options.split_prop
        )));
    }
    if !(options.alpha > 0.0 && options.alpha < 0.5) {
        return Err(CliError::Validation(format!(
            "--alpha must lie strictly between 0 and 0.5, got {}",
            options.alpha
        )));
    }
    options.validate().map_err(CliError::from_core)?;
    if options.nsplits == 1 && options.mult_split_method == Aggregation::Fwer {
        info!("with a single split the DML aggregation is reported");
    }

    Ok(RunConfig {
        input,
        y,
        d,
        z,
        x,
        w: s.w,
        vio: s.vio,
        learner,
        options,
        extended: s.extended.unwrap_or(false),
        out: s.out,
    })
}

/// Parse flags, merge an optional config file, and resolve.
pub fn parse_config<I, T>(args: I) -> CliResult<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let flags = Settings::try_parse_from(args).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    })?;
    let merged = match &flags.config {
        Some(path) => {
            let file = read_config_file(path)?;
            flags.overlay(file)
        }
        None => flags,
    };
    resolve(merged)
}

fn read_config_file(path: &Path) -> CliResult<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Settings::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(extra: &[&str]) -> CliResult<RunConfig> {
        let mut args = vec![
            "tsci", "--input", "data.csv", "--y", "lwage", "--d", "educ", "--z", "nearc4",
        ];
        args.extend_from_slice(extra);
        parse_config(args)
    }

    #[test]
    fn defaults_follow_the_reference_table() {
        let c = parse(&["--vio", "monomials:1"]).unwrap();
        assert_eq!(c.options.nsplits, 10);
        assert_eq!(c.options.mult_split_method, Aggregation::Fwer);
        assert_eq!(c.options.sel_method, SelectionMethod::Comparison);
        assert!(c.options.sd_boot);
        assert!(c.options.threshold_boot);
        assert_eq!(c.options.iv_threshold, 40.0);
        assert!((c.options.split_prop - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(c.learner, LearnerChoice::Forest(_)));
        assert!(!c.extended);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let e = parse(&["--split-prop", "1.5"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("between 0 and 1"));
        assert!(parse(&["--alpha", "0.6"]).is_err());
        assert!(parse(&["--sel-method", "fancy"]).is_err());
        assert!(parse(&["--bogus"]).is_err());
    }

    #[test]
    fn contradictory_roles_are_rejected() {
        let e = parse_config([
            "tsci", "--input", "a.csv", "--y", "v", "--d", "v", "--z", "z",
        ])
        .unwrap_err();
        assert!(e.to_string().contains("both outcome and treatment"));
        assert!(parse(&["--x", "nearc4"]).is_err());
    }

    #[test]
    fn boolean_flags_accept_values() {
        let c = parse(&["--sd-boot", "false", "--extended", "--nested", "false"]).unwrap();
        assert!(!c.options.sd_boot);
        assert!(c.extended);
        assert!(!c.options.nested);
    }

    #[test]
    fn single_split_fwer_is_accepted() {
        let c = parse(&["--nsplits", "1", "--mult-split-method", "FWER"]).unwrap();
        assert_eq!(c.options.applied_aggregation(1), Aggregation::Dml);
    }

    #[test]
    fn flags_override_the_file() {
        let file = Settings::from_toml(
            "nsplits = 4\nalpha = 0.1\nz = [\"a\", \"b\"]\nsel_method = \"conservative\"",
        )
        .unwrap();
        let flags = Settings::try_parse_from(["tsci", "--nsplits", "7"]).unwrap();
        let s = flags.overlay(file);
        assert_eq!(s.nsplits, Some(7));
        assert_eq!(s.alpha, Some(0.1));
        assert_eq!(s.z, Some(vec!["a".to_string(), "b".to_string()]));
        assert_eq!(s.sel_method, Some(SelectionMethod::Conservative));
        assert!(Settings::from_toml("unknown_key = 1").is_err());
    }

    #[test]
    fn weight_matrix_implies_user_learner() {
        let c = parse(&["--weight-matrix", "omega.csv"]).unwrap();
        assert_eq!(c.learner, LearnerChoice::User(PathBuf::from("omega.csv")));
        assert!(parse(&["--learner", "user"]).is_err());
    }
}
