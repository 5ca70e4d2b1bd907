use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Augment, Clock, Lattice, DEFAULT_BUDGET};
use crate::martransport::TransportPayoff;
use crate::measures::DiscreteMeasure;
use crate::payoffs::PayoffSpec;
use crate::solve::SolveSettings;

/// Marginals inline as `[[position, weight], …]` per stop, or from a JSON
/// file of that shape (relative to the config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarginalSource {
    Inline(Vec<Vec<(f64, f64)>>),
    File(MarginalFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalFile {
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub steps: usize,
    pub dt: f64,
    #[serde(default)]
    pub clock: Clock,
    #[serde(default)]
    pub augment: Augment,
    #[serde(default)]
    pub budget: Option<usize>,
}

impl LatticeConfig {
    pub fn build(&self) -> Result<Lattice> {
        Ok(Lattice::new(self.steps, self.dt, self.clock, self.augment)?
            .with_budget(self.budget.unwrap_or(DEFAULT_BUDGET)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Exit-time value for a two-point single marginal.
    pub hitting_time: bool,
    /// Azéma–Yor law of the maximum for a single marginal.
    pub azema_yor: bool,
    pub monte_carlo: Option<MonteCarloConfig>,
    /// Tail level of the Monroe horizon certificate.
    pub monroe_eps: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            hitting_time: true,
            azema_yor: true,
            monte_carlo: None,
            monroe_eps: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub marginals: MarginalSource,
    /// Spread off-grid atoms onto neighbouring lattice values.
    #[serde(default)]
    pub snap: bool,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub payoff: Option<PayoffSpec>,
    #[serde(default)]
    pub transport: Option<TransportPayoff>,
    #[serde(default)]
    pub solve: SolveSettings,
    #[serde(default)]
    pub oracles: OracleConfig,
    /// Defaults to `out/<config stem>` next to the config.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A parsed config with its raw bytes and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub base_dir: PathBuf,
    pub stem: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path)?;
        let config: RunConfig =
            serde_json::from_slice(&raw).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = path
            .file_stem()
            .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
        Ok(Self {
            config,
            raw,
            base_dir,
            stem,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.config.output_dir {
            Some(d) => self.resolve(d),
            None => self.base_dir.join("out").join(&self.stem),
        }
    }

    /// The marginals as given, before any validation.
    pub fn measures(&self) -> Result<Vec<DiscreteMeasure>> {
        let raw = match &self.config.marginals {
            MarginalSource::Inline(v) => v.clone(),
            MarginalSource::File(f) => read_marginal_file(&self.resolve(&f.file))?,
        };
        if raw.is_empty() {
            return Err(Error::ConfigInvalid("no marginals".into()));
        }
        raw.into_iter().map(DiscreteMeasure::new).collect()
    }

    pub fn payoff(&self) -> Result<PayoffSpec> {
        match (&self.config.payoff, &self.config.transport) {
            (Some(p), None) => Ok(p.clone()),
            (None, Some(tp)) => crate::martransport::timechange_payoff(tp),
            _ => Err(Error::ConfigInvalid(
                "give exactly one of `payoff` and `transport`".into(),
            )),
        }
    }
}

pub fn read_marginal_file(path: &Path) -> Result<Vec<Vec<(f64, f64)>>> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}
