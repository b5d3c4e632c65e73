use std::path::PathBuf;

use adiaprep::cluster::{
    high_temp_prepare, truncated_parent, truncated_terms, verify_noncommuting_gap, write_cluster_csv, ClusterModel,
    NoncommutingGapRow, EXACT_LIMIT,
};
use adiaprep::evolve::{error_vs_runtime_sweep, write_sweep_csv, GevreyEstimate, SweepRow};
use adiaprep::linop::{CMat, C64};
use adiaprep::model::{
    gibbs_state, mc_ground_state, mc_hamiltonian, metropolis_generator, system_hamiltonian, target_state,
    trace_ancillas, ClassicalEnergy, DensityMatrix,
};
use adiaprep::parent::{parent_hamiltonian, spectral_report};
use log::info;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::finite;

/// Largest dimension for which dense spectra are computed.
pub const SPECTRAL_LIMIT: usize = 1024;

/// Tolerance for reporting the reduced state as maximally mixed.
pub const MIXED_TOL: f64 = 1e-10;

pub struct Context {
    pub loaded: LoadedConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub config_hash: String,
}

impl Context {
    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, bytes)?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        finite::check(value).map_err(|e| CliError::numerical(format!("{name}: {e}")))?;
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_csv(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let text = std::str::from_utf8(bytes).map_err(|e| CliError::numerical(e.to_string()))?;
        let bad = text.split(['\n', ',']).find(|f| {
            let f = f.trim_start_matches(['+', '-']).to_ascii_lowercase();
            f == "nan" || f.starts_with("inf")
        });
        if let Some(field) = bad {
            return Err(CliError::numerical(format!("{name}: non-finite value {field}")));
        }
        self.write(name, bytes)
    }
}

fn complex_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

#[derive(Serialize)]
struct ParentSummary {
    ground_energy: f64,
    gap: f64,
    ff_residual: f64,
    degenerate: bool,
}

#[derive(Serialize)]
struct StateReport {
    config_hash: String,
    seed: u64,
    n_vertices: usize,
    dim: usize,
    target_norm: f64,
    q0: f64,
    /// Dense spectral data of the parent Hamiltonian, for small spaces.
    parent: Option<ParentSummary>,
    beta: Option<f64>,
    reduced_density: Option<Vec<Vec<[f64; 2]>>>,
    trace_distance: Option<f64>,
    distance_to_maximally_mixed: Option<f64>,
    maximally_mixed: Option<bool>,
}

pub fn cmd_state(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config;
    let lat = cfg.lattice()?;
    let spec = cfg.model(lat.clone(), ctx.seed)?;
    let phi = target_state(&spec)?;
    let dim = phi.dim();
    let parent = if dim <= SPECTRAL_LIMIT {
        info!("diagonalizing the parent Hamiltonian ({dim} states)");
        let r = spectral_report(&parent_hamiltonian(&spec)?, &phi)?;
        Some(ParentSummary {
            ground_energy: r.ground_energy,
            gap: r.gap,
            ff_residual: r.ff_residual,
            degenerate: r.degenerate,
        })
    } else {
        None
    };
    let mut report = StateReport {
        config_hash: ctx.config_hash.clone(),
        seed: ctx.seed,
        n_vertices: lat.n_vertices(),
        dim,
        target_norm: phi.norm(),
        q0: spec.q0(),
        parent,
        beta: None,
        reduced_density: None,
        trace_distance: None,
        distance_to_maximally_mixed: None,
        maximally_mixed: None,
    };
    if let Some(thermal) = spec.thermal_data() {
        let rho = trace_ancillas(&phi, &lat)?;
        let h = system_hamiltonian(&cfg.terms(&lat)?, &lat)?;
        let exact = gibbs_state(&h, thermal.input_beta)?;
        let n = rho.matrix.nrows();
        let mixed = DensityMatrix { matrix: CMat::identity(n, n) * C64::new(1.0 / n as f64, 0.0) };
        let to_mixed = rho.trace_norm_distance(&mixed);
        report.beta = Some(thermal.input_beta);
        report.trace_distance = Some(rho.trace_norm_distance(&exact));
        report.distance_to_maximally_mixed = Some(to_mixed);
        report.maximally_mixed = Some(to_mixed <= MIXED_TOL);
        report.reduced_density = Some(complex_rows(&rho.matrix));
    }
    ctx.write_json("state.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    config_hash: &'a str,
    seed: u64,
    radius: Option<usize>,
    steps_per_unit: f64,
    rows: &'a [SweepRow],
    /// Rows whose minimum gap was degenerate or not probed.
    uncertified: Vec<usize>,
    constants: &'a [GevreyEstimate],
    decay_slope: Option<f64>,
}

pub fn cmd_sweep(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config;
    let taus = &cfg.run.taus;
    if taus.is_empty() {
        return Err(CliError::config("run.taus must not be empty"));
    }
    if taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) || taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("run.taus must be positive and strictly ascending"));
    }
    if !(cfg.run.steps_per_unit > 0.0 && cfg.run.steps_per_unit.is_finite()) {
        return Err(CliError::config("run.steps_per_unit must be positive"));
    }
    let lat = cfg.lattice()?;
    let spec = cfg.model(lat, ctx.seed)?;
    let path = cfg.path(spec, cfg.schedule(&ctx.loaded.base_dir)?)?;
    let radius = cfg.run.radius.unwrap_or(usize::MAX);
    info!("sweeping {} runtimes over {} segments", taus.len(), path.n_segments());
    let table = error_vs_runtime_sweep(&path, taus, radius, cfg.run.steps_per_unit, cfg.run.method)?;
    let mut csv = Vec::new();
    write_sweep_csv(&table, &mut csv)?;
    ctx.write_csv("sweep.csv", &csv)?;
    let report = SweepReport {
        config_hash: &ctx.config_hash,
        seed: ctx.seed,
        radius: cfg.run.radius,
        steps_per_unit: cfg.run.steps_per_unit,
        rows: &table.rows,
        uncertified: table
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.min_gap.is_some_and(|g| g > adiaprep::parent::DEGENERACY_TOL))
            .map(|(i, _)| i)
            .collect(),
        constants: &table.constants,
        decay_slope: table.decay_slope.filter(|s| s.is_finite()),
    };
    ctx.write_json("sweep.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct AnchorSummary {
    anchor: usize,
    eta: f64,
    y: f64,
    /// `y^r/(1−y)`; absent when `y ≥ 1`.
    bound: Option<f64>,
    measured: Option<f64>,
    within_bound: Option<bool>,
}

#[derive(Serialize)]
struct CertificateSummary {
    r: usize,
    eta: f64,
    y: f64,
    bound: Option<f64>,
    valid: bool,
    n_terms: usize,
    anchors: Vec<AnchorSummary>,
}

#[derive(Serialize)]
struct PrepareSummary {
    tau: f64,
    r: usize,
    steps: usize,
    infidelity: f64,
    adiabatic_error: f64,
    certified: bool,
    forced: bool,
}

#[derive(Serialize)]
struct ClusterReport {
    config_hash: String,
    seed: u64,
    beta: f64,
    effective_beta: f64,
    scale: f64,
    certificates: Vec<CertificateSummary>,
    gap_table: Option<Vec<NoncommutingGapRow>>,
    preparation: Option<PrepareSummary>,
}

fn finite_opt(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn cmd_cluster(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config;
    let lat = cfg.lattice()?;
    if !cfg.is_thermal()? {
        return Err(CliError::config("cluster needs model.mode = \"thermal\""));
    }
    let beta = cfg.beta()?;
    let model = ClusterModel::new(lat.clone(), cfg.terms(&lat)?).map_err(|e| CliError::config(e.to_string()))?;
    if cfg.run.r.is_empty() {
        return Err(CliError::config("run.r must list at least one truncation size"));
    }
    let mut certificates = Vec::new();
    for &r in &cfg.run.r {
        info!("truncating the cluster expansion at r = {r}");
        let terms = truncated_terms(&model, beta, r)?;
        let mut csv = Vec::new();
        write_cluster_csv(&model, &terms, &mut csv)?;
        ctx.write_csv(&format!("cluster_r{r}.csv"), &csv)?;
        let (_, cert) = truncated_parent(&model, beta, r)?;
        if !cert.valid {
            log::warn!("r = {r}: y = {} ≥ 1, the truncation is not certified", cert.y);
        }
        certificates.push(CertificateSummary {
            r,
            eta: cert.eta,
            y: cert.y,
            bound: finite_opt(cert.bound),
            valid: cert.valid,
            n_terms: terms.len(),
            anchors: cert
                .anchors
                .iter()
                .map(|a| AnchorSummary {
                    anchor: a.anchor,
                    eta: a.eta,
                    y: a.y,
                    bound: finite_opt(a.bound),
                    measured: a.measured,
                    within_bound: a.measured.filter(|_| a.bound.is_finite()).map(|m| m <= a.bound + 1e-9),
                })
                .collect(),
        });
    }
    let dim = lat.hilbert_dim().unwrap_or(usize::MAX);
    let gap_table = if dim <= EXACT_LIMIT {
        let grid = if cfg.run.beta_grid.is_empty() {
            (0..=10).map(|i| beta * i as f64 / 10.0).collect()
        } else {
            cfg.run.beta_grid.clone()
        };
        Some(verify_noncommuting_gap(&model, &grid)?)
    } else {
        None
    };
    let preparation = match cfg.run.prepare_tau {
        None => None,
        Some(tau) => {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(CliError::config("run.prepare_tau must be positive"));
            }
            let last = certificates.last().expect("at least one truncation size");
            let r = last.r;
            if !last.valid && !cfg.run.allow_uncertified {
                return Err(CliError::refused(format!(
                    "cluster expansion not certified at r = {r} (y = {}); set run.allow_uncertified to force",
                    last.y
                )));
            }
            let steps = ((tau * cfg.run.steps_per_unit).ceil() as usize).max(16);
            info!("preparing with τ = {tau}, {steps} steps");
            let schedule = cfg.schedule(&ctx.loaded.base_dir)?;
            let res = high_temp_prepare(&model, beta, r, tau, steps, &schedule, cfg.run.method, true)?;
            Some(PrepareSummary {
                tau,
                r,
                steps,
                infidelity: 1.0 - res.overlap.norm_sqr(),
                adiabatic_error: res.adiabatic_error,
                certified: res.certified,
                forced: !last.valid,
            })
        }
    };
    let report = ClusterReport {
        config_hash: ctx.config_hash.clone(),
        seed: ctx.seed,
        beta,
        effective_beta: model.effective_beta(beta),
        scale: model.scale(),
        certificates,
        gap_table,
        preparation,
    };
    ctx.write_json("cluster.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct McmcRun {
    beta: f64,
    spectrum_s: Vec<f64>,
    spectrum_g: Vec<f64>,
    max_imaginary: f64,
    spectral_mismatch: f64,
    ground_fidelity: f64,
    detailed_balance_residual: f64,
}

#[derive(Serialize)]
struct McmcReport {
    config_hash: String,
    seed: u64,
    n_spins: usize,
    runs: Vec<McmcRun>,
}

pub fn cmd_mcmc(ctx: &Context) -> Result<(), CliError> {
    let (ising, betas) = ctx.loaded.config.classical()?;
    let energy = ClassicalEnergy::from_ising(&ising);
    let energies = ising.energies();
    let mut runs = Vec::new();
    for &beta in betas {
        let s = metropolis_generator(&energy, beta);
        let (spectrum_g, vecs) = mc_hamiltonian(&s)?.eig()?;
        let (spectrum_s, max_imaginary) = s.spectrum();
        let spectral_mismatch = spectrum_g.iter().zip(&spectrum_s).map(|(g, s)| (g + s).abs()).fold(0.0, f64::max);
        let ground = mc_ground_state(&energies, beta)?;
        let ground_fidelity = ground.amplitudes().dotc(&vecs.column(0)).norm_sqr();
        runs.push(McmcRun {
            beta,
            spectrum_s,
            spectrum_g,
            max_imaginary,
            spectral_mismatch,
            ground_fidelity,
            detailed_balance_residual: s.detailed_balance_residual(),
        });
    }
    let n_spins = ctx.loaded.config.classical.as_ref().map_or(0, |c| c.n_spins);
    let report = McmcReport { config_hash: ctx.config_hash.clone(), seed: ctx.seed, n_spins, runs };
    ctx.write_json("mcmc.json", &report)?;
    Ok(())
}
