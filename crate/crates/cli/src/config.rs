//! Run settings from a TOML file merged with command-line flags.
//!
//! The file uses the flag names as keys (`tstar`, `window`, `bootstrap`,
//! ...); any flag given on the command line wins.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use lmflow::bootstrap::{BootstrapConfig, BootstrapMode};
use lmflow::carima::{EvaluationConfig, ForecastOptions, InterventionSpec, Scale};
use lmflow::panel::{ParseOptions, SubgroupFilter};
use lmflow::{QuarterId, QuarterWindow, StateSpace};

use crate::error::CliError;

pub const DEFAULT_HORIZON: usize = 4;
pub const DEFAULT_REPLICATES: usize = 999;

/// Settings shared by `evaluate`, `placebo` and `shift`.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with the same keys as these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Person-quarter panel CSV, optionally gzipped.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Observation window START:END, ending at the intervention boundary.
    #[arg(long)]
    pub window: Option<String>,
    /// Last pre-intervention quarter; defaults to the window end.
    #[arg(long)]
    pub tstar: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Working-age population used to turn share effects into head counts.
    #[arg(long)]
    pub population: Option<f64>,
    /// Bootstrap replicates; 0 disables inference.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Subgroup such as `sex=F`, `age<35`, `edu=low`, `region=south`,
    /// combined with `,`.
    #[arg(long)]
    pub filter: Option<String>,
    /// logit, raw or alr.
    #[arg(long)]
    pub scale: Option<String>,
    /// full or estimation-only.
    #[arg(long)]
    pub mode: Option<String>,
    /// Add quarterly seasonal terms to every cell model.
    #[arg(long)]
    pub seasonal: Option<bool>,
    /// Re-select model orders inside every bootstrap replicate.
    #[arg(long)]
    pub reselect: Option<bool>,
    /// State labels in panel order, comma separated.
    #[arg(long)]
    pub states: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every bootstrap replicate to `replicates_effects.csv`.
    #[arg(long)]
    pub dump_replicates: Option<bool>,
    /// Worker threads, settable from the file; the flag is global.
    #[arg(skip)]
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),+) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )+
    };
}

impl RunArgs {
    /// File values overridden by flags.
    pub fn merged(&self) -> Result<RunArgs, CliError> {
        let mut base = match &self.config {
            Some(path) => load_toml(path)?,
            None => RunArgs::default(),
        };
        overlay!(
            base, self, input, window, tstar, horizon, population, bootstrap, seed, filter, scale, mode, seasonal,
            reselect, states, out, dump_replicates, threads
        );
        Ok(base)
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let input = self.input.clone().ok_or_else(|| CliError::config("missing --input"))?;
        let out = self.out.clone().ok_or_else(|| CliError::config("missing --out"))?;
        let window: QuarterWindow = self
            .window
            .as_deref()
            .ok_or_else(|| CliError::config("missing --window"))?
            .parse()
            .map_err(CliError::config)?;
        let t_star = match &self.tstar {
            Some(t) => parse_quarter(t)?,
            None => window.end,
        };
        if t_star != window.end {
            return Err(CliError::config(format!(
                "--tstar {t_star} must equal the end of --window {window}"
            )));
        }
        let spec = InterventionSpec::new(window, self.horizon.unwrap_or(DEFAULT_HORIZON))?;
        let population = self.population.ok_or_else(|| CliError::config("missing --population"))?;
        let replicates = self.bootstrap.unwrap_or(DEFAULT_REPLICATES);
        let bootstrap = if replicates == 0 {
            None
        } else {
            let mut b = BootstrapConfig::new(replicates, self.seed.unwrap_or(0));
            b.mode = match self.mode.as_deref() {
                None | Some("full") | Some("full_pipeline") => BootstrapMode::FullPipeline,
                Some("estimation-only") | Some("estimation_only") => BootstrapMode::EstimationOnly,
                Some(other) => return Err(CliError::config(format!("unknown bootstrap mode {other:?}"))),
            };
            b.validate()?;
            Some(b)
        };
        let scale: Scale = self.scale.as_deref().unwrap_or("logit").parse()?;
        let filter: SubgroupFilter = self.filter.as_deref().unwrap_or("all").parse()?;
        let space = match &self.states {
            Some(s) => StateSpace::new(&s.split(',').map(str::trim).collect::<Vec<_>>()).map_err(CliError::config)?,
            None => StateSpace::canonical(),
        };
        Ok(Resolved {
            input,
            out,
            spec,
            filter,
            parse: ParseOptions {
                space,
                ..ParseOptions::default()
            },
            dump_replicates: self.dump_replicates.unwrap_or(false),
            evaluation: EvaluationConfig {
                population,
                forecast: ForecastOptions {
                    scale,
                    seasonal: self.seasonal.unwrap_or(false),
                },
                bootstrap,
                reselect_orders: self.reselect.unwrap_or(false),
            },
        })
    }
}

/// A fully checked run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub input: PathBuf,
    pub out: PathBuf,
    pub spec: InterventionSpec,
    pub filter: SubgroupFilter,
    pub parse: ParseOptions,
    pub evaluation: EvaluationConfig,
    pub dump_replicates: bool,
}

pub fn parse_quarter(s: &str) -> Result<QuarterId, CliError> {
    s.parse().map_err(CliError::config)
}

fn load_toml(path: &Path) -> Result<RunArgs, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> RunArgs {
        RunArgs {
            input: Some("panel.csv".into()),
            window: Some("2016Q1:2018Q3".into()),
            population: Some(1.0),
            out: Some("out".into()),
            ..RunArgs::default()
        }
    }

    #[test]
    fn defaults() {
        let r = args().resolve().unwrap();
        assert_eq!(r.spec.horizon, 4);
        assert_eq!(r.spec.t_star().to_string(), "2018Q3");
        assert_eq!(r.evaluation.bootstrap.unwrap().replicates, 999);
        assert_eq!(r.evaluation.forecast.scale, Scale::Logit);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "window = \"2015Q1:2017Q2\"\nhorizon = 3\nseed = 5\n").unwrap();
        let flags = RunArgs {
            config: Some(file),
            window: Some("2016Q1:2018Q3".into()),
            ..RunArgs::default()
        };
        let m = flags.merged().unwrap();
        assert_eq!(m.window.as_deref(), Some("2016Q1:2018Q3"));
        assert_eq!(m.horizon, Some(3));
        assert_eq!(m.seed, Some(5));
    }

    #[test]
    fn tstar_must_close_the_window() {
        let a = RunArgs {
            tstar: Some("2018Q2".into()),
            ..args()
        };
        assert!(a.resolve().is_err());
        let no_pop = RunArgs {
            population: None,
            ..args()
        };
        assert!(no_pop.resolve().is_err());
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(toml::from_str::<RunArgs>("windw = \"2016Q1:2018Q3\"").is_err());
    }
}
