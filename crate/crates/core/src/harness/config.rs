//! Experiment configuration: TOML file layout and the resolved spec.
//!
//! A config file holds the scenario keys at the top level (`K`, `L`, `M`,
//! `N`, `C_F`, ...), solver settings under `[afp]` and the Monte Carlo
//! setup under `[experiment]`. Every key is optional.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::afp::AfpConfig;
use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::scenario::SystemParams;

pub const DEFAULT_TRIALS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    /// A-FP started from the given baseline.
    Afp(BaselineKind),
    Baseline(BaselineKind),
}

impl Scheme {
    pub fn is_afp(self) -> bool {
        matches!(self, Scheme::Afp(_))
    }

    /// Parses a scheme name; a bare `afp` takes `default_init`.
    pub fn parse_with_init(s: &str, default_init: BaselineKind) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "afp" => Scheme::afp(default_init),
            _ => match s.strip_prefix("afp-") {
                Some(init) => Scheme::afp(init.parse()?),
                None => Ok(Scheme::Baseline(s.parse()?)),
            },
        }
    }

    fn afp(init: BaselineKind) -> Result<Self> {
        match init {
            BaselineKind::Mf => Err(Error::Config("A-FP init must be evd or random".into())),
            other => Ok(Scheme::Afp(other)),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Afp(init) => write!(f, "afp-{init}"),
            Scheme::Baseline(kind) => write!(f, "{kind}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::parse_with_init(s, BaselineKind::Evd)
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> Self {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Centralized,
    Decentralized,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centralized" => Ok(Mode::Centralized),
            "decentralized" => Ok(Mode::Decentralized),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    #[default]
    Cf,
    M,
    N,
    L,
    K,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVar::Cf => "cf",
            SweepVar::M => "m",
            SweepVar::N => "n",
            SweepVar::L => "l",
            SweepVar::K => "k",
        })
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" | "c_f" => Ok(SweepVar::Cf),
            "m" => Ok(SweepVar::M),
            "n" => Ok(SweepVar::N),
            "l" => Ok(SweepVar::L),
            "k" => Ok(SweepVar::K),
            other => Err(Error::Config(format!("unknown sweep variable '{other}'"))),
        }
    }
}

impl SweepVar {
    /// `base` with this variable set to `value`.
    pub fn apply(self, base: &SystemParams, value: f64) -> Result<SystemParams> {
        let mut p = base.clone();
        if self == SweepVar::Cf {
            p.fronthaul_capacity = value;
        } else {
            if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                return Err(Error::Config(format!(
                    "sweep over {self} needs positive integers, got {value}"
                )));
            }
            let v = value as usize;
            match self {
                SweepVar::M => p.antennas = v,
                SweepVar::N => p.reduced_dim = v,
                SweepVar::L => p.num_aps = v,
                SweepVar::K => p.num_ues = v,
                SweepVar::Cf => unreachable!(),
            }
        }
        p.validate()
            .map_err(|e| Error::Config(format!("{self} = {value}: {e}")))?;
        Ok(p)
    }

    pub fn current(self, p: &SystemParams) -> f64 {
        match self {
            SweepVar::Cf => p.fronthaul_capacity,
            SweepVar::M => p.antennas as f64,
            SweepVar::N => p.reduced_dim as f64,
            SweepVar::L => p.num_aps as f64,
            SweepVar::K => p.num_ues as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

/// The `[experiment]` table as written in a config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    scheme: Option<OneOrMany>,
    init: Option<BaselineKind>,
    trials: Option<usize>,
    seed: Option<u64>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
    sweep_var: Option<SweepVar>,
    sweep_values: Option<Vec<f64>>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub system: SystemParams,
    pub afp: AfpConfig,
    pub schemes: Vec<Scheme>,
    pub trials: usize,
    pub base_seed: u64,
    pub mode: Mode,
    pub sweep_var: SweepVar,
    pub sweep_values: Vec<f64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let system = SystemParams::default();
        Self {
            sweep_values: vec![system.fronthaul_capacity],
            system,
            afp: AfpConfig::default(),
            schemes: vec![Scheme::Afp(BaselineKind::Evd)],
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            mode: Mode::Centralized,
            sweep_var: SweepVar::Cf,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        let afp: AfpConfig = match table.remove("afp") {
            Some(v) => v.try_into()?,
            None => AfpConfig::default(),
        };
        let exp: ExperimentSection = match table.remove("experiment") {
            Some(v) => v.try_into()?,
            None => ExperimentSection::default(),
        };
        let system: SystemParams = toml::Value::Table(table).try_into()?;
        let defaults = ExperimentSpec::default();
        let init = exp.init.unwrap_or(BaselineKind::Evd);
        let schemes = match exp.scheme {
            None => vec![Scheme::Afp(init)],
            Some(OneOrMany::One(s)) => vec![Scheme::parse_with_init(&s, init)?],
            Some(OneOrMany::Many(v)) => v
                .iter()
                .map(|s| Scheme::parse_with_init(s, init))
                .collect::<Result<_>>()?,
        };
        let sweep_var = exp.sweep_var.unwrap_or_default();
        let spec = ExperimentSpec {
            sweep_values: exp.sweep_values.unwrap_or_else(|| vec![sweep_var.current(&system)]),
            system,
            afp,
            schemes,
            trials: exp.trials.unwrap_or(defaults.trials),
            base_seed: exp.seed.unwrap_or(defaults.base_seed),
            mode: exp.mode.unwrap_or_default(),
            sweep_var,
            out_dir: exp.out.unwrap_or(defaults.out_dir),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("no scheme selected".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(Error::Config("sweep value list is empty".into()));
        }
        self.afp.validate()?;
        self.system.validate().map_err(|e| Error::Config(e.to_string()))?;
        for &v in &self.sweep_values {
            let p = self.sweep_var.apply(&self.system, v)?;
            if self.schemes.contains(&Scheme::Baseline(BaselineKind::Mf)) && p.reduced_dim > p.num_ues {
                return Err(Error::Config(format!(
                    "Local MF needs N <= K (N={}, K={})",
                    p.reduced_dim, p.num_ues
                )));
            }
        }
        Ok(())
    }

    pub fn params_for(&self, value: f64) -> Result<SystemParams> {
        self.sweep_var.apply(&self.system, value)
    }
}
