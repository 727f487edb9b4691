//! Flag definitions and their merge with an optional TOML file.
//!
//! Every setting resolves as flag, then config file, then built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wcca::cca::default_grid;
use wcca::simulation::{NoiseScale, TuningSpec};
use wcca::{Method, Tuning};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Fpca,
    Tikhonov,
    /// Both estimators on the same data (simulate only).
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseArg {
    Literal,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    /// `.jsonl` / `.json` are sample lists, anything else a quantile table.
    Auto,
    Table,
    Samples,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with default values for any of the long options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs (created if missing).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quantile levels per distribution.
    #[arg(long)]
    pub grid_m: Option<usize>,
    /// Time points per curve.
    #[arg(long)]
    pub grid_t: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Truncation level for FPCA, shared by X and Y.
    #[arg(long)]
    pub k: Option<usize>,
    /// Ridge parameter for Tikhonov, shared by X and Y.
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    /// Choose the tuning parameter by K-fold cross-validation.
    #[arg(long)]
    pub cv: bool,
    #[arg(long)]
    pub folds: Option<usize>,
}

/// Values accepted in the `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid_m: Option<usize>,
    pub grid_t: Option<usize>,
    pub method: Option<MethodArg>,
    pub k: Option<usize>,
    pub eps: Option<f64>,
    pub cv: Option<bool>,
    pub folds: Option<usize>,
    pub case: Option<u8>,
    pub sigma: Option<f64>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub noise: Option<NoiseArg>,
    pub basis_size: Option<usize>,
    pub pairs: Option<usize>,
    pub support: Option<[f64; 2]>,
    pub time_domain: Option<[f64; 2]>,
    pub format: Option<FormatArg>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))
    }
}

/// Parses `a,b` with `a < b`.
pub fn parse_interval(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(a < b && a.is_finite() && b.is_finite()) {
        return Err(format!("interval `{s}` must satisfy a < b"));
    }
    Ok([a, b])
}

/// Settled common options.
#[derive(Debug, Clone, Serialize)]
pub struct Common {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub grid_m: usize,
    pub grid_t: usize,
}

pub fn resolve_common(args: &CommonArgs, file: &FileConfig) -> Result<Common, Failure> {
    let grid_m = args.grid_m.or(file.grid_m).unwrap_or(64);
    let grid_t = args.grid_t.or(file.grid_t).unwrap_or(50);
    if grid_m < 2 || grid_t < 2 {
        return Err(Failure::Usage("--grid-m and --grid-t must be at least 2".into()));
    }
    Ok(Common {
        out_dir: args.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("wcca-out")),
        seed: args.seed.or(file.seed).unwrap_or(0),
        grid_m,
        grid_t,
    })
}

/// Settled estimator choice.
#[derive(Debug, Clone, Serialize)]
pub struct TuningChoice {
    pub method: MethodArg,
    pub cv: bool,
    pub folds: usize,
    pub k: Option<usize>,
    pub eps: Option<f64>,
}

impl TuningChoice {
    pub fn methods(&self) -> Vec<Method> {
        match self.method {
            MethodArg::Fpca => vec![Method::Fpca],
            MethodArg::Tikhonov => vec![Method::Tikhonov],
            MethodArg::Both => vec![Method::Fpca, Method::Tikhonov],
        }
    }

    /// One spec per method: the default candidate grid under `--cv`,
    /// otherwise the fixed `--k` / `--eps`.
    pub fn specs(&self) -> Result<Vec<TuningSpec>, Failure> {
        self.methods()
            .into_iter()
            .map(|m| {
                if self.cv {
                    return Ok(TuningSpec::CrossValidated { candidates: default_grid(m), folds: self.folds });
                }
                match m {
                    Method::Fpca => self
                        .k
                        .map(|k| TuningSpec::Fixed(Tuning::truncation(k)))
                        .ok_or_else(|| Failure::Usage("fpca needs --k or --cv".into())),
                    Method::Tikhonov => self
                        .eps
                        .map(|e| TuningSpec::Fixed(Tuning::ridge(e)))
                        .ok_or_else(|| Failure::Usage("tikhonov needs --eps or --cv".into())),
                }
            })
            .collect()
    }

    /// The single method of commands that fit one estimator.
    pub fn single(&self) -> Result<Method, Failure> {
        match self.method {
            MethodArg::Fpca => Ok(Method::Fpca),
            MethodArg::Tikhonov => Ok(Method::Tikhonov),
            MethodArg::Both => Err(Failure::Usage("this command fits one method; pick fpca or tikhonov".into())),
        }
    }
}

pub fn resolve_tuning(args: &TuningArgs, file: &FileConfig, default_method: MethodArg) -> Result<TuningChoice, Failure> {
    let choice = TuningChoice {
        method: args.method.or(file.method).unwrap_or(default_method),
        cv: args.cv || file.cv.unwrap_or(false),
        folds: args.folds.or(file.folds).unwrap_or(5),
        k: args.k.or(file.k),
        eps: args.eps.or(file.eps),
    };
    if choice.folds < 2 {
        return Err(Failure::Usage("--folds must be at least 2".into()));
    }
    if choice.k == Some(0) {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    if let Some(e) = choice.eps {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Failure::Usage(format!("--eps must be positive, got {e}")));
        }
    }
    Ok(choice)
}

pub fn noise_scale(arg: NoiseArg) -> NoiseScale {
    match arg {
        NoiseArg::Literal => NoiseScale::Literal,
        NoiseArg::Calibrated => NoiseScale::Calibrated,
    }
}
