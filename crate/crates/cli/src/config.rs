use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adiaprep::evolve::Method;
use adiaprep::lattice::{build_chain, build_grid, Lattice, LatticeData};
use adiaprep::linop::{pauli_string, CMat, LocalOperator, C64};
use adiaprep::model::{random_commuting_spec, ClassicalIsing, ModelSpec};
use adiaprep::parent::{Interpolation, PathSpec};
use adiaprep::schedule::Schedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::CliError;

/// Largest Hilbert-space dimension a config may request.
pub const MAX_DIM: usize = 1 << 13;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub lattice: Option<LatticeConfig>,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub run: RunConfig,
    pub classical: Option<ClassicalConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatticeConfig {
    Chain {
        sites: usize,
        #[serde(default = "two")]
        local_dim: usize,
        #[serde(default = "yes")]
        thermal: bool,
        #[serde(default)]
        onsite: bool,
    },
    Grid {
        rows: usize,
        cols: usize,
        #[serde(default = "two")]
        local_dim: usize,
        #[serde(default = "yes")]
        thermal: bool,
        #[serde(default)]
        onsite: bool,
    },
    Custom {
        data: LatticeData,
    },
}

fn two() -> usize {
    2
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// `Q_λ = exp(−β h_λ/2)` from the given interactions.
    Thermal,
    /// The given terms are the `Q_λ` themselves.
    Peps,
    /// Random commuting diagonal `Q_λ` drawn from the seed.
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: ModelMode,
    #[serde(default)]
    pub beta: f64,
    /// Smallest eigenvalue of the random `Q_λ`.
    #[serde(default = "default_q_min")]
    pub q_min: f64,
    /// One term per support, or a single term applied to every support.
    #[serde(default)]
    pub terms: Vec<TermConfig>,
}

fn default_q_min() -> f64 {
    0.2
}

/// A local operator given as Pauli coefficients or as a row-major matrix of
/// `[re, im]` entries.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    #[serde(default)]
    pub pauli: BTreeMap<String, f64>,
    pub matrix: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindConfig {
    #[default]
    Gevrey,
    Linear,
    Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub kind: ScheduleKindConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// CSV table of `(s, f)` points, relative to the config file.
    pub table: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    1.0
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKindConfig::Gevrey, alpha: 1.0, table: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub taus: Vec<f64>,
    /// Localization radius for sweeps; all pairs when absent.
    pub radius: Option<usize>,
    #[serde(default = "default_spu")]
    pub steps_per_unit: f64,
    #[serde(default)]
    pub method: Method,
    pub interpolation: Option<Interpolation>,
    /// Support order of the path, 0-based; natural order when absent.
    pub ordering: Option<Vec<usize>>,
    /// Truncation sizes for the cluster expansion.
    #[serde(default = "default_r")]
    pub r: Vec<usize>,
    #[serde(default)]
    pub beta_grid: Vec<f64>,
    /// Runtime of the cluster-expansion preparation; skipped when absent.
    pub prepare_tau: Option<f64>,
    #[serde(default)]
    pub allow_uncertified: bool,
}

fn default_spu() -> f64 {
    100.0
}

fn default_r() -> Vec<usize> {
    vec![1, 2]
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            taus: Vec::new(),
            radius: None,
            steps_per_unit: default_spu(),
            method: Method::default(),
            interpolation: None,
            ordering: None,
            r: default_r(),
            beta_grid: Vec::new(),
            prepare_tau: None,
            allow_uncertified: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalConfig {
    pub n_spins: usize,
    #[serde(default)]
    pub couplings: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub fields: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// A parsed config together with the bytes it came from.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub raw: Vec<u8>,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw).map_err(|e| CliError::config(format!("config is not UTF-8: {e}")))?;
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir, raw })
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::config(e.to_string())
}

impl ExperimentConfig {
    pub fn lattice(&self) -> Result<Lattice, CliError> {
        let cfg = self.lattice.as_ref().ok_or_else(|| CliError::config("missing [lattice] table"))?;
        let (lat, onsite) = match cfg {
            LatticeConfig::Chain { sites, local_dim, thermal, onsite } => {
                // every layout has at least `sites − 1` vertices
                guard(*local_dim, sites.saturating_sub(1))?;
                (build_chain(*sites, *local_dim, *thermal).map_err(config_err)?, *onsite)
            }
            LatticeConfig::Grid { rows, cols, local_dim, thermal, onsite } => {
                guard(*local_dim, rows.saturating_mul(*cols).saturating_sub(1))?;
                (build_grid(*rows, *cols, *local_dim, *thermal).map_err(config_err)?, *onsite)
            }
            LatticeConfig::Custom { data } => {
                guard(data.local_dim, data.n_vertices)?;
                (Lattice::new(data.clone()).map_err(config_err)?, false)
            }
        };
        guard(lat.local_dim(), lat.n_vertices())?;
        if onsite {
            lat.with_onsite_supports().map_err(config_err)
        } else {
            Ok(lat)
        }
    }

    fn model_config(&self) -> Result<&ModelConfig, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::config("missing [model] table"))
    }

    /// Interactions aligned with the lattice supports.
    pub fn terms(&self, lat: &Lattice) -> Result<Vec<LocalOperator>, CliError> {
        let cfg = self.model_config()?;
        let supports = lat.supports();
        let terms = &cfg.terms;
        if !(terms.len() == 1 || terms.len() == supports.len()) {
            return Err(CliError::config(format!(
                "{} model terms for {} supports; give one per support or a single shared term",
                terms.len(),
                supports.len()
            )));
        }
        supports
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let t = &terms[if terms.len() == 1 { 0 } else { k }];
                let m = t.to_matrix(lat.local_dim(), s.len()).map_err(|e| CliError::config(format!("term {k}: {e}")))?;
                LocalOperator::new(s.clone(), lat.local_dim(), m).map_err(|e| CliError::config(format!("term {k}: {e}")))
            })
            .collect()
    }

    pub fn beta(&self) -> Result<f64, CliError> {
        let beta = self.model_config()?.beta;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(CliError::config(format!("beta must be finite and non-negative, got {beta}")));
        }
        Ok(beta)
    }

    pub fn is_thermal(&self) -> Result<bool, CliError> {
        Ok(self.model_config()?.mode == ModelMode::Thermal)
    }

    pub fn model(&self, lat: Lattice, seed: u64) -> Result<ModelSpec, CliError> {
        let cfg = self.model_config()?;
        match cfg.mode {
            ModelMode::Thermal => {
                let h = self.terms(&lat)?;
                ModelSpec::thermal(lat, h, self.beta()?).map_err(config_err)
            }
            ModelMode::Peps => {
                let q = self.terms(&lat)?;
                ModelSpec::from_q(lat, q).map_err(config_err)
            }
            ModelMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                random_commuting_spec(&mut rng, lat, cfg.q_min).map_err(config_err)
            }
        }
    }

    pub fn schedule(&self, base_dir: &Path) -> Result<Schedule, CliError> {
        let cfg = &self.schedule;
        match cfg.kind {
            ScheduleKindConfig::Gevrey => Schedule::gevrey(cfg.alpha).map_err(config_err),
            ScheduleKindConfig::Linear => Ok(Schedule::linear()),
            ScheduleKindConfig::Table => {
                let rel = cfg.table.as_ref().ok_or_else(|| CliError::config("table schedule needs a `table` path"))?;
                Schedule::from_csv_path(&base_dir.join(rel)).map_err(config_err)
            }
        }
    }

    pub fn path(&self, model: ModelSpec, schedule: Schedule) -> Result<PathSpec, CliError> {
        let interpolation = self.run.interpolation.unwrap_or(if model.is_thermal() {
            Interpolation::Thermal
        } else {
            Interpolation::Linear
        });
        let path = match &self.run.ordering {
            Some(order) => PathSpec::new(model, order.clone(), schedule, interpolation),
            None => PathSpec::natural(model, schedule, interpolation),
        }
        .map_err(config_err)?;
        Ok(path.with_radius(self.run.radius.unwrap_or(usize::MAX)))
    }

    pub fn classical(&self) -> Result<(ClassicalIsing, &[f64]), CliError> {
        let cfg = self.classical.as_ref().ok_or_else(|| CliError::config("missing [classical] table"))?;
        guard(2, 2 * cfg.n_spins)?;
        if cfg.betas.is_empty() || cfg.betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(CliError::config("classical.betas must be non-empty, finite and non-negative"));
        }
        let fields = if cfg.fields.is_empty() { vec![0.0; cfg.n_spins] } else { cfg.fields.clone() };
        let ising = ClassicalIsing::new(cfg.n_spins, cfg.couplings.clone(), fields).map_err(config_err)?;
        Ok((ising, &cfg.betas))
    }
}

impl TermConfig {
    fn to_matrix(&self, local_dim: usize, arity: usize) -> Result<CMat, String> {
        let dim = local_dim.pow(arity as u32);
        match (&self.matrix, self.pauli.is_empty()) {
            (Some(_), false) => Err("give either `pauli` or `matrix`, not both".into()),
            (None, true) => Err("empty term".into()),
            (Some(rows), true) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(format!("matrix must be {dim}×{dim}"));
                }
                Ok(CMat::from_fn(dim, dim, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
            }
            (None, false) => {
                if local_dim != 2 {
                    return Err("Pauli strings need local dimension 2".into());
                }
                let mut m = CMat::zeros(dim, dim);
                for (label, &c) in &self.pauli {
                    if label.len() != arity {
                        return Err(format!("Pauli string {label:?} does not match support size {arity}"));
                    }
                    m += pauli_string(label).map_err(|e| e.to_string())? * C64::new(c, 0.0);
                }
                Ok(m)
            }
        }
    }
}

fn guard(local_dim: usize, n_vertices: usize) -> Result<(), CliError> {
    let dim = u32::try_from(n_vertices).ok().and_then(|n| (local_dim as u128).checked_pow(n));
    match dim {
        Some(d) if d <= MAX_DIM as u128 => Ok(()),
        _ => Err(CliError::config(format!(
            "Hilbert space {local_dim}^{n_vertices} exceeds the limit {MAX_DIM}"
        ))),
    }
}
