//! Flat TOML configuration shared by every subcommand, and the run manifest.
//!
//! Keys are grouped into small structs so each subcommand can flatten the
//! groups it needs into its clap arguments; on disk they are one flat table.
//! A manifest is a configuration file with every resolved value filled in
//! plus a `[run]` table, so `--config manifest.toml` replays a run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A constant dependence strength or a path to a CSV matrix of strengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CSpec {
    Constant(u32),
    Matrix(PathBuf),
}

impl FromStr for CSpec {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<u32>() {
            Ok(c) => CSpec::Constant(c),
            Err(_) => CSpec::Matrix(PathBuf::from(s)),
        })
    }
}

impl fmt::Display for CSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CSpec::Constant(c) => write!(f, "{c}"),
            CSpec::Matrix(p) => write!(f, "{}", p.display()),
        }
    }
}

impl Serialize for CSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CSpec::Constant(c) => s.serialize_u32(*c),
            CSpec::Matrix(p) => s.serialize_str(&p.to_string_lossy()),
        }
    }
}

impl<'de> Deserialize<'de> for CSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Path(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(c) => u32::try_from(c)
                .map(CSpec::Constant)
                .map_err(|_| serde::de::Error::custom(format!("c must be a non-negative integer, got {c}"))),
            Raw::Path(p) => Ok(CSpec::Matrix(PathBuf::from(p))),
        }
    }
}

/// Which L-measure windows to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WindowChoice {
    In,
    Out,
    All,
}

macro_rules! overlay {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            /// Values set in `self` win over those in `base`.
            pub fn or(&self, base: &$ty) -> $ty {
                $ty { $($field: self.$field.clone().or_else(|| base.$field.clone())),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct ShapeArgs {
    /// First shape of the marginal beta
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Second shape of the marginal beta
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}
overlay!(ShapeArgs { a, b });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct DependenceArgs {
    /// Dependence order across ages
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Dependence order across times
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    /// Dependence strength: an integer, or a CSV matrix path (ages x times)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<CSpec>,
}
overlay!(DependenceArgs { p, q, c });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct ChainArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thinning: Option<usize>,
}
overlay!(ChainArgs { iterations, burn_in, thinning });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct SeedArgs {
    /// Master seed; every random stream is derived from it
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of forecast time columns appended to the grid
    #[arg(long = "forecast")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_forecast: Option<usize>,
}
overlay!(SeedArgs { seed, n_forecast });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct GridArgs {
    /// Number of age groups (defaults to the extent of the data)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_age: Option<usize>,
    /// Number of observed time columns; later data columns are held out
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_times: Option<usize>,
}
overlay!(GridArgs { max_age, n_times });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Individual records CSV (age,time,exact)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    /// Life-table deaths matrix CSV (ages x times, no header)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deaths: Option<PathBuf>,
    /// Life-table population matrix CSV (ages x times, no header)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<PathBuf>,
    /// Divisor applied to life-table deaths and populations
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}
overlay!(DataArgs { records, deaths, population, scale });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct SimArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_base: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_slope: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_censor: Option<f64>,
    /// Records per time period
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_per_time: Option<usize>,
}
overlay!(SimArgs { lambda_base, lambda_slope, lambda_censor, n_per_time });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Reference hazards CSV (age,time,hazard), e.g. true_hazard.csv
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Statistics CSV (age,time,deaths,at_risk) whose r/m is the reference
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_stats: Option<PathBuf>,
    /// Weight on the squared-bias term, in [0, 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowChoice>,
}
overlay!(EvalArgs { reference, reference_stats, nu, window });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_values: Option<Vec<u32>>,
    /// Concurrent chains (0 = one per core)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}
overlay!(SweepArgs { p_values, q_values, c_values, jobs });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct TraceArgs {
    /// Hazard draws CSV (draw,age,time,pi) written by `fit`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<PathBuf>,
    /// Omega trace CSV (draw,omega) written by `fit`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<PathBuf>,
}
overlay!(TraceArgs { draws, omega });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct DiagArgs {
    /// Age of the hazard cell to diagnose when reading draws
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age: Option<usize>,
    /// Time of the hazard cell to diagnose when reading draws
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}
overlay!(DiagArgs { age, time, max_lag, bins });

/// Provenance block written at the end of every manifest. Ignored on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    pub created_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
}

impl RunInfo {
    /// `created_unix` honours `SOURCE_DATE_EPOCH` so manifests can be made
    /// byte-reproducible.
    pub fn now(command: &str, config: Option<&Path>) -> Self {
        let created_unix = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        RunInfo {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix,
            config: config.map(Path::to_path_buf),
        }
    }
}

/// Every configurable key. Serializes to one flat table followed by `[run]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    #[serde(flatten)]
    pub shape: ShapeArgs,
    #[serde(flatten)]
    pub dependence: DependenceArgs,
    #[serde(flatten)]
    pub chain: ChainArgs,
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[serde(flatten)]
    pub grid: GridArgs,
    #[serde(flatten)]
    pub data: DataArgs,
    #[serde(flatten)]
    pub sim: SimArgs,
    #[serde(flatten)]
    pub eval: EvalArgs,
    #[serde(flatten)]
    pub sweep: SweepArgs,
    #[serde(flatten)]
    pub trace: TraceArgs,
    #[serde(flatten)]
    pub diag: DiagArgs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

const KNOWN_KEYS: &[&str] = &[
    "a", "b", "p", "q", "c", "iterations", "burn_in", "thinning", "seed", "n_forecast", "max_age",
    "n_times", "records", "deaths", "population", "scale", "lambda_base", "lambda_slope",
    "lambda_censor", "n_per_time", "reference", "reference_stats", "nu", "window", "p_values",
    "q_values", "c_values", "jobs", "draws", "omega", "age", "time", "max_lag", "bins", "run",
];

impl Settings {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::parse(path, e.to_string()))?;
        if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::parse(path, format!("unknown key `{key}`")));
        }
        toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invariant(format!("manifest serialization: {e}")))
    }
}
