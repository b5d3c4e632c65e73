//! Parent Hamiltonians `G = Σ_μ G_μ` with
//! `G_μ = (∏_{λ∈Λ_μ} Q_λ^{-1}) P_μ (∏_{λ∈Λ_μ} Q_λ^{-1})`, the sequential path
//! family, its localized truncation, spectral reports and the
//! gap-relaxation check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linop::{
    checked_dim, embed_sum, inverse_positive, real, CMat, CVec, GlobalOperator,
    LocalOperator, ONE,
};
use crate::model::{product_state, ModelSpec, StateVector};
use crate::schedule::Schedule;

/// Two lowest eigenvalues closer than this are flagged degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// How a single `Q_λ` is switched on along its segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `(1 − f) I + f Q`.
    Linear,
    /// `exp(−β f h / 2)`; thermal models only.
    Thermal,
}

/// A complete sequential path: model, ordering `λ_1..λ_N` (indices into the
/// lattice supports), schedule, interpolation and localization radius.
#[derive(Debug, Clone)]
pub struct PathSpec {
    model: ModelSpec,
    ordering: Vec<usize>,
    schedule: Schedule,
    interpolation: Interpolation,
    chi: f64,
    radius: usize,
}

impl PathSpec {
    /// The radius defaults to "no localization" (`usize::MAX`), `χ` to 1.
    pub fn new(
        model: ModelSpec,
        ordering: Vec<usize>,
        schedule: Schedule,
        interpolation: Interpolation,
    ) -> Result<Self> {
        let n = model.n_supports();
        let mut seen = vec![false; n];
        if ordering.len() != n {
            return Err(Error::InvalidArgument(format!("ordering has {} entries for {n} supports", ordering.len())));
        }
        for &k in &ordering {
            if k >= n || seen[k] {
                return Err(Error::InvalidArgument(format!("ordering {ordering:?} is not a permutation")));
            }
            seen[k] = true;
        }
        if interpolation == Interpolation::Thermal && !model.is_thermal() {
            return Err(Error::InvalidArgument("thermal interpolation needs a thermal model".into()));
        }
        Ok(Self { model, ordering, schedule, interpolation, chi: 1.0, radius: usize::MAX })
    }

    /// Ordering `λ_n = n`-th support, in lattice order.
    pub fn natural(model: ModelSpec, schedule: Schedule, interpolation: Interpolation) -> Result<Self> {
        let ordering = (0..model.n_supports()).collect();
        Self::new(model, ordering, schedule, interpolation)
    }

    pub fn with_radius(mut self, radius: usize) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_chi(mut self, chi: f64) -> Result<Self> {
        if !(chi > 0.0 && chi.is_finite()) {
            return Err(Error::InvalidArgument(format!("chi must be positive, got {chi}")));
        }
        self.chi = chi;
        Ok(self)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn lattice(&self) -> &Lattice {
        self.model.lattice()
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of segments `N`.
    pub fn n_segments(&self) -> usize {
        self.ordering.len()
    }

    /// Lattice support index of `λ_n` (1-based `n`).
    pub fn lambda(&self, n: usize) -> Result<usize> {
        if n == 0 || n > self.ordering.len() {
            return Err(Error::InvalidArgument(format!("segment {n} outside 1..={}", self.ordering.len())));
        }
        Ok(self.ordering[n - 1])
    }

    /// Segment index (1-based) at which support `k` is switched on.
    fn position(&self, k: usize) -> usize {
        self.ordering.iter().position(|&x| x == k).map_or(usize::MAX, |p| p + 1)
    }
}

/// `⌈χ log^{1+α}(N/ε)⌉`, so that `d < radius` matches `d < χ log^{1+α}(N/ε)`
/// for non-integer right-hand sides.
pub fn radius_from_chi(chi: f64, alpha: f64, n: usize, eps: f64) -> Result<usize> {
    if !(chi > 0.0 && alpha > 0.0 && eps > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("chi, alpha, eps must be positive and N ≥ 1".into()));
    }
    let x = (n as f64 / eps).ln().max(0.0).powf(1.0 + alpha) * chi;
    Ok(x.ceil() as usize)
}

fn interpolate(path: &PathSpec, k: usize, f: f64) -> Result<Option<LocalOperator>> {
    let q = &path.model.q_ops()[k];
    if f == 0.0 {
        return Ok(None);
    }
    if f == 1.0 {
        return Ok(Some(q.clone()));
    }
    let op = match path.interpolation {
        Interpolation::Linear => {
            let dim = q.dim();
            q.map_matrix(|m| Ok(CMat::identity(dim, dim) * real(1.0 - f) + m * real(f)))?
        }
        Interpolation::Thermal => {
            let th = path
                .model
                .thermal_data()
                .ok_or_else(|| Error::InvalidArgument("thermal interpolation needs a thermal model".into()))?;
            th.h_ops[k].herm_exp(real(-th.beta * f / 2.0))?
        }
    };
    Ok(Some(op))
}

/// `A_{n,m}(s)`: `Q_{λ_m}` for `m < n`, `Q_{λ_n}(f(s))` for `m = n`, the
/// identity for `m > n`. `n`, `m` are 1-based.
pub fn path_a(path: &PathSpec, n: usize, m: usize, s: f64) -> Result<LocalOperator> {
    path.lambda(n)?;
    let k = path.lambda(m)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("s = {s} outside [0, 1]")));
    }
    let support = path.lattice().supports()[k].clone();
    let d = path.lattice().local_dim();
    let op = match m.cmp(&n) {
        std::cmp::Ordering::Less => Some(path.model.q_ops()[k].clone()),
        std::cmp::Ordering::Equal => interpolate(path, k, path.schedule.eval(s)?)?,
        std::cmp::Ordering::Greater => None,
    };
    match op {
        Some(op) => Ok(op),
        None => LocalOperator::identity(support, d),
    }
}

/// The active operator per lattice support at `(n, s)`; `None` marks an
/// exact identity.
pub fn active_q(path: &PathSpec, n: usize, s: f64) -> Result<Vec<Option<LocalOperator>>> {
    let lam_n = path.lambda(n)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("s = {s} outside [0, 1]")));
    }
    let f = path.schedule.eval(s)?;
    (0..path.model.n_supports())
        .map(|k| {
            let m = path.position(k);
            if k == lam_n {
                interpolate(path, k, f)
            } else if m < n {
                Ok(Some(path.model.q_ops()[k].clone()))
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Normalized `P_μ = I − |Φ⟩⟨Φ|` with `Φ = Σ_i |ii⟩/√d` on the pair.
pub fn pair_projector(lat: &Lattice, pair: usize) -> Result<LocalOperator> {
    let d = lat.local_dim();
    let [a, b] = lat.pair_vertices(pair);
    let mut phi = CVec::zeros(d * d);
    for i in 0..d {
        phi[i * d + i] = real(1.0 / (d as f64).sqrt());
    }
    let p = CMat::identity(d * d, d * d) - &phi * phi.adjoint();
    LocalOperator::new(vec![a, b], d, p)
}

/// `G_μ` on its effective support: the pair plus the supports in `Λ_μ`
/// whose operator is not the identity.
pub fn parent_term_local(pair: usize, q_active: &[Option<LocalOperator>], lat: &Lattice) -> Result<LocalOperator> {
    let p = pair_projector(lat, pair)?;
    let mut support: Vec<usize> = p.support().to_vec();
    let touching: Vec<&LocalOperator> = lat
        .supports_touching(pair)
        .into_iter()
        .filter_map(|k| q_active.get(k).and_then(|q| q.as_ref()))
        .collect();
    if touching.is_empty() {
        return Ok(p);
    }
    for q in &touching {
        support.extend_from_slice(q.support());
    }
    support.sort_unstable();
    support.dedup();
    let dim = checked_dim(lat.local_dim(), support.len())?;
    let mut inv = CMat::identity(dim, dim);
    for q in &touching {
        let qi = q.map_matrix(inverse_positive)?.extend_to(&support)?;
        inv = inv * qi.matrix();
    }
    let inv = (&inv + inv.adjoint()).scale(0.5);
    let pm = p.extend_to(&support)?;
    let g = &inv * pm.matrix() * &inv;
    let g = (&g + g.adjoint()).scale(0.5);
    LocalOperator::new(support, lat.local_dim(), g)
}

/// `G_μ` embedded in the full space.
pub fn parent_term(pair: usize, q_active: &[Option<LocalOperator>], lat: &Lattice) -> Result<GlobalOperator> {
    let t = parent_term_local(pair, q_active, lat)?;
    Ok(GlobalOperator::new(embed_sum(&[t], lat.n_vertices(), lat.local_dim())?))
}

/// One local term per pair.
pub fn parent_terms(q_active: &[Option<LocalOperator>], lat: &Lattice) -> Result<Vec<LocalOperator>> {
    (0..lat.pairs().len()).map(|mu| parent_term_local(mu, q_active, lat)).collect()
}

fn all_active(spec: &ModelSpec) -> Vec<Option<LocalOperator>> {
    spec.q_ops().iter().cloned().map(Some).collect()
}

/// `Σ_μ G_μ` for the full model.
pub fn parent_hamiltonian(spec: &ModelSpec) -> Result<GlobalOperator> {
    let lat = spec.lattice();
    let terms = parent_terms(&all_active(spec), lat)?;
    Ok(GlobalOperator::new(embed_sum(&terms, lat.n_vertices(), lat.local_dim())?))
}

/// Terms of `G̃_n(s)`.
pub fn sequential_terms(path: &PathSpec, n: usize, s: f64) -> Result<Vec<LocalOperator>> {
    parent_terms(&active_q(path, n, s)?, path.lattice())
}

/// `G̃_n(s)`, dense.
pub fn sequential_hamiltonian(path: &PathSpec, n: usize, s: f64) -> Result<GlobalOperator> {
    let lat = path.lattice();
    Ok(GlobalOperator::new(embed_sum(&sequential_terms(path, n, s)?, lat.n_vertices(), lat.local_dim())?))
}

/// Pairs kept by the localized Hamiltonian of segment `n`: those with
/// `d(μ, λ_n) < radius`. A radius at or beyond the lattice diameter keeps
/// every pair.
pub fn localized_pairs(path: &PathSpec, n: usize, radius: usize) -> Result<Vec<usize>> {
    let lat = path.lattice();
    let lam = &lat.supports()[path.lambda(n)?];
    let unrestricted = lat.diameter().is_some_and(|diam| radius >= diam) || radius == usize::MAX;
    Ok((0..lat.pairs().len())
        .filter(|&mu| {
            unrestricted
                || lat
                    .set_distance(&lat.pair_vertices(mu), lam)
                    .is_some_and(|dist| dist < radius)
        })
        .collect())
}

/// Terms of `G_n(s)` for the given radius.
pub fn localized_terms(path: &PathSpec, n: usize, s: f64, radius: usize) -> Result<Vec<LocalOperator>> {
    let lat = path.lattice();
    let q = active_q(path, n, s)?;
    localized_pairs(path, n, radius)?
        .into_iter()
        .map(|mu| parent_term_local(mu, &q, lat))
        .collect()
}

/// `G_n(s)`, dense.
pub fn localized_hamiltonian(path: &PathSpec, n: usize, s: f64, radius: usize) -> Result<GlobalOperator> {
    let lat = path.lattice();
    Ok(GlobalOperator::new(embed_sum(&localized_terms(path, n, s, radius)?, lat.n_vertices(), lat.local_dim())?))
}

/// Vertices touched by `G_n(s)` for any `s ∈ (0, 1]`: every kept pair plus
/// the supports in its `Λ_μ` that are switched on by segment `n`.
pub fn localized_support(path: &PathSpec, n: usize, radius: usize) -> Result<Vec<usize>> {
    let lat = path.lattice();
    let mut out = Vec::new();
    for mu in localized_pairs(path, n, radius)? {
        out.extend(lat.pair_vertices(mu));
        for k in lat.supports_touching(mu) {
            if path.position(k) <= n {
                out.extend_from_slice(&lat.supports()[k]);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// The model's target state for the operators active at `(n, s)`.
pub fn instantaneous_target(path: &PathSpec, n: usize, s: f64) -> Result<StateVector> {
    let ops: Vec<LocalOperator> = active_q(path, n, s)?.into_iter().flatten().collect();
    product_state(&ops, path.lattice())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub ground_energy: f64,
    pub gap: f64,
    pub ground_state: StateVector,
    /// `‖G · target‖`.
    pub ff_residual: f64,
    pub degenerate: bool,
}

pub fn spectral_report(g: &GlobalOperator, target: &StateVector) -> Result<SpectralReport> {
    if g.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), found: target.dim() });
    }
    let (vals, vecs) = g.eig()?;
    let gap = if vals.len() > 1 { (vals[1] - vals[0]).max(0.0) } else { 0.0 };
    let residual = (&g.matrix * target.amplitudes()).norm();
    let mut ground = vecs.column(0).into_owned();
    // fix the phase so the largest component is real positive
    if let Some(k) = ground.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).map(|(k, _)| k) {
        let phase = ground[k] / real(ground[k].norm());
        ground /= phase;
    }
    Ok(SpectralReport {
        ground_energy: vals[0],
        gap,
        ground_state: StateVector::new(ground)?,
        ff_residual: residual,
        degenerate: gap < DEGENERACY_TOL,
    })
}

/// Spectral gap `λ_1 − λ_0` of a dense Hermitian operator.
pub fn gap_of(g: &CMat) -> Result<f64> {
    let vals = crate::linop::eigvals_hermitian(g)?;
    Ok(if vals.len() > 1 { vals[1] - vals[0] } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub s: f64,
    pub gap: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRelaxationReport {
    pub segment: usize,
    pub delta0: f64,
    pub q0: f64,
    pub bound: f64,
    pub rows: Vec<GapRow>,
    /// Grid points where `gap < q0²·δ − tol`.
    pub violations: Vec<f64>,
    pub passed: bool,
}

/// Tolerance on the gap-relaxation inequality.
pub const GAP_RELAXATION_TOL: f64 = 1e-9;

/// Checks `gap(G̃_n(s)) ≥ q0²·δ` on `s_grid`. `δ` defaults to the measured
/// gap of `G̃_n(0)` and `q0` to the model's; a supplied `δ` larger than the
/// measured gap is rejected. Only the `s = 0` form of the relaxation is
/// implemented.
pub fn verify_gap_relaxation(
    path: &PathSpec,
    n: usize,
    s_grid: &[f64],
    delta0: Option<f64>,
    q0: Option<f64>,
) -> Result<GapRelaxationReport> {
    let g0 = gap_of(&sequential_hamiltonian(path, n, 0.0)?.matrix)?;
    let delta = delta0.unwrap_or(g0);
    if delta > g0 + GAP_RELAXATION_TOL {
        return Err(Error::GapTooSmall { gap: g0, threshold: delta });
    }
    let q0 = q0.unwrap_or(path.model.q0());
    let bound = q0 * q0 * delta;
    let mut rows = Vec::with_capacity(s_grid.len());
    let mut violations = Vec::new();
    for &s in s_grid {
        let gap = gap_of(&sequential_hamiltonian(path, n, s)?.matrix)?;
        let margin = gap - bound;
        if margin < -GAP_RELAXATION_TOL {
            violations.push(s);
        }
        rows.push(GapRow { s, gap, margin });
    }
    Ok(GapRelaxationReport { segment: n, delta0: delta, q0, bound, passed: violations.is_empty(), rows, violations })
}

/// Fidelity of the ground state of `G̃_n(s)` with the instantaneous target.
pub fn ground_fidelity(path: &PathSpec, n: usize, s: f64) -> Result<f64> {
    let g = sequential_hamiltonian(path, n, s)?;
    let target = instantaneous_target(path, n, s)?;
    let report = spectral_report(&g, &target)?;
    Ok(report.ground_state.fidelity(&target))
}

#[allow(dead_code)]
fn identity_like(dim: usize) -> CMat {
    CMat::from_diagonal_element(dim, dim, ONE)
}
