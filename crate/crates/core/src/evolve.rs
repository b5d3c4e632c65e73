//! Time-dependent Schrödinger integration, the sequential and grouped
//! drivers, localized-vs-full comparison, the Gevrey error bound and the
//! adiabatic expansion.

use std::f64::consts::{E, PI};
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::disjoint_grouping;
use crate::linop::{
    checked_dim, eig_hermitian, embed_sum, hermitian_deviation, herm_exp, op_norm, real, reassemble, CMat, CVec,
    LocalOperator, TermSum, C64, HERMITIAN_TOL, I, ONE, ZERO,
};
use crate::model::{target_state, StateVector};
use crate::parent::{
    gap_of, instantaneous_target, localized_support, localized_terms, sequential_hamiltonian, PathSpec,
    DEGENERACY_TOL,
};
use crate::schedule::ScheduleKind;

/// Largest dimension exponentiated by dense eigendecomposition.
pub const DENSE_EXP_LIMIT: usize = 256;
/// Largest dimension for which gaps and derivative norms are probed.
pub const GAP_PROBE_LIMIT: usize = 256;
/// Per-substep Krylov error target.
pub const KRYLOV_TOL: f64 = 1e-13;
/// Maximal Krylov subspace dimension.
pub const KRYLOV_MAX_DIM: usize = 40;
/// Errors below this are indistinguishable from integrator noise.
pub const NOISE_FLOOR: f64 = 1e-9;
/// Allowed norm drift for a certified run.
pub const NORM_DRIFT_TOL: f64 = 1e-9;
/// Expansion refuses grids where the gap drops below this.
pub const EXPANSION_GAP_FLOOR: f64 = 1e-6;

/// A Hamiltonian sample, either dense or as a sum of local terms.
#[derive(Debug, Clone)]
pub enum Generator {
    Dense(CMat),
    Terms { terms: Vec<LocalOperator>, n_vertices: usize, local_dim: usize },
}

impl Generator {
    /// Dense below [`DENSE_EXP_LIMIT`], local terms above.
    pub fn from_terms(terms: Vec<LocalOperator>, n_vertices: usize, local_dim: usize) -> Result<Self> {
        let dim = checked_dim(local_dim, n_vertices)?;
        if dim <= DENSE_EXP_LIMIT {
            Ok(Self::Dense(embed_sum(&terms, n_vertices, local_dim)?))
        } else {
            Ok(Self::Terms { terms, n_vertices, local_dim })
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::Terms { n_vertices, local_dim, .. } => local_dim.pow(*n_vertices as u32),
        }
    }

    pub fn to_dense(&self) -> Result<CMat> {
        match self {
            Self::Dense(m) => Ok(m.clone()),
            Self::Terms { terms, n_vertices, local_dim } => embed_sum(terms, *n_vertices, *local_dim),
        }
    }

    fn check(&self) -> Result<()> {
        let check_one = |m: &CMat| {
            let dev = hermitian_deviation(m);
            let scale = m.iter().fold(1.0f64, |acc, z| acc.max(z.norm()));
            if !dev.is_finite() || dev > HERMITIAN_TOL * scale {
                Err(Error::NotHermitian { deviation: dev })
            } else {
                Ok(())
            }
        };
        match self {
            Self::Dense(m) => check_one(m),
            Self::Terms { terms, .. } => terms.iter().try_for_each(|t| check_one(t.matrix())),
        }
    }

    /// `a·x + b·y`.
    fn combine(a: f64, x: &Self, b: f64, y: &Self) -> Result<Self> {
        match (x, y) {
            (Self::Dense(p), Self::Dense(q)) => Ok(Self::Dense(p * real(a) + q * real(b))),
            (Self::Terms { terms: p, n_vertices, local_dim }, Self::Terms { terms: q, .. }) => {
                let terms = p
                    .iter()
                    .map(|t| t.scale(real(a)))
                    .chain(q.iter().map(|t| t.scale(real(b))))
                    .collect();
                Ok(Self::Terms { terms, n_vertices: *n_vertices, local_dim: *local_dim })
            }
            _ => Ok(Self::Dense(x.to_dense()? * real(a) + y.to_dense()? * real(b))),
        }
    }

    /// `exp(−i dt H) v`.
    pub fn exp_apply(&self, v: &CVec, dt: f64) -> Result<CVec> {
        match self {
            Self::Dense(m) => Ok(herm_exp(m, C64::new(0.0, -dt))? * v),
            Self::Terms { terms, n_vertices, local_dim } => {
                if terms.is_empty() {
                    return Ok(v.clone());
                }
                let op = TermSum::new(terms, *n_vertices, *local_dim)?;
                krylov_exp(&|x| op.apply(x), v, dt)
            }
        }
    }
}

/// `exp(−i dt H) v` by Lanczos with full reorthogonalization, splitting
/// `dt` until the a posteriori error estimate is below [`KRYLOV_TOL`].
pub fn krylov_exp(apply: &dyn Fn(&CVec) -> CVec, v: &CVec, dt: f64) -> Result<CVec> {
    let mut w = v.clone();
    let mut remaining = dt;
    let mut substeps = 0usize;
    while remaining != 0.0 {
        substeps += 1;
        if substeps > 100_000 {
            return Err(Error::Numerical("Krylov exponential did not converge".into()));
        }
        let beta0 = w.norm();
        if beta0 == 0.0 {
            return Ok(w);
        }
        let mut basis = vec![&w / real(beta0)];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut scale = 0.0f64;
        let mut breakdown = false;
        for j in 0..KRYLOV_MAX_DIM {
            let mut z = apply(&basis[j]);
            let a = basis[j].dotc(&z).re;
            alpha.push(a);
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dotc(&z);
                    z.axpy(-c, q, ONE);
                }
            }
            let b = z.norm();
            scale = scale.max(a.abs()).max(b);
            if !b.is_finite() || !a.is_finite() {
                return Err(Error::Numerical("non-finite Lanczos coefficient".into()));
            }
            if b <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                breakdown = true;
                break;
            }
            beta.push(b);
            if j + 1 == KRYLOV_MAX_DIM {
                break;
            }
            basis.push(z / real(b));
        }
        let m = alpha.len();
        let t = DMatrix::<f64>::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c || c + 1 == r {
                beta[r.min(c)]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let residual = if breakdown { 0.0 } else { beta[m - 1] };
        let propagate = |tau: f64| -> Vec<C64> {
            (0..m)
                .map(|k| {
                    (0..m)
                        .map(|l| {
                            let u = eig.eigenvectors[(k, l)] * eig.eigenvectors[(0, l)];
                            C64::from_polar(u, -tau * eig.eigenvalues[l])
                        })
                        .sum()
                })
                .collect()
        };
        let mut tau = remaining;
        let mut y = propagate(tau);
        let mut halvings = 0;
        while beta0 * residual * y[m - 1].norm() > KRYLOV_TOL {
            halvings += 1;
            if halvings > 60 {
                return Err(Error::Numerical("Krylov step size underflow".into()));
            }
            tau *= 0.5;
            y = propagate(tau);
        }
        let mut next = CVec::zeros(w.len());
        for (k, q) in basis.iter().take(m).enumerate() {
            next.axpy(y[k] * beta0, q, ONE);
        }
        w = next;
        remaining = if tau == remaining { 0.0 } else { remaining - tau };
    }
    Ok(w)
}

/// Exponential integrators for `i dψ/dt = H(t) ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Fourth-order commutator-free Magnus scheme, two exponentials per step.
    #[default]
    Cfm4,
    /// Exponential midpoint rule, second order.
    Midpoint,
}

const SQRT3_6: f64 = 0.288_675_134_594_812_9;

/// Propagates `psi0` from `t = 0` to `t_final` with `steps` uniform steps.
pub fn integrate<F>(h_of_t: F, psi0: &CVec, t_final: f64, steps: usize, method: Method) -> Result<CVec>
where
    F: Fn(f64) -> Result<Generator>,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_final = {t_final} must be finite and non-negative")));
    }
    let mut psi = psi0.clone();
    if t_final == 0.0 {
        return Ok(psi);
    }
    let h = t_final / steps as f64;
    let sample = |t: f64| -> Result<Generator> {
        let g = h_of_t(t)?;
        if g.dim() != psi0.len() {
            return Err(Error::DimensionMismatch { expected: psi0.len(), found: g.dim() });
        }
        g.check()?;
        Ok(g)
    };
    for k in 0..steps {
        let t = k as f64 * h;
        match method {
            Method::Cfm4 => {
                let h1 = sample(t + (0.5 - SQRT3_6) * h)?;
                let h2 = sample(t + (0.5 + SQRT3_6) * h)?;
                let (big, small) = (0.25 + SQRT3_6, 0.25 - SQRT3_6);
                psi = Generator::combine(big, &h1, small, &h2)?.exp_apply(&psi, h)?;
                psi = Generator::combine(small, &h1, big, &h2)?.exp_apply(&psi, h)?;
            }
            Method::Midpoint => {
                psi = sample(t + 0.5 * h)?.exp_apply(&psi, h)?;
            }
        }
        if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical(format!("non-finite amplitude after step {k}")));
        }
    }
    Ok(psi)
}

/// `min_θ ‖ψ − e^{iθ} φ‖ = sqrt(2 − 2|⟨φ|ψ⟩|)`.
pub fn adiabatic_error(psi: &StateVector, phi: &StateVector) -> f64 {
    (2.0 - 2.0 * phi.overlap(psi).norm()).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostics {
    /// 1-based segment indices evolved together.
    pub segments: Vec<usize>,
    pub tau: f64,
    pub steps: usize,
    /// Smallest probed gap of the full sequential Hamiltonian; `None` when
    /// the space is too large to probe.
    pub min_gap: Option<f64>,
    pub norm_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionResult {
    pub final_state: StateVector,
    pub adiabatic_error: f64,
    /// `⟨φ|ψ⟩` with `φ` the target state.
    pub overlap: C64,
    pub segments: Vec<SegmentDiagnostics>,
    /// Every gap was probed and non-degenerate and the norm drift stayed
    /// within [`NORM_DRIFT_TOL`].
    pub certified: bool,
}

/// Smallest gap of `G̃_n(s)` over an 11-point grid, if the space is small.
pub fn probe_gap(path: &PathSpec, n: usize) -> Result<Option<f64>> {
    let lat = path.lattice();
    if checked_dim(lat.local_dim(), lat.n_vertices())? > GAP_PROBE_LIMIT {
        return Ok(None);
    }
    let mut min_gap = f64::INFINITY;
    for i in 0..=10 {
        let g = sequential_hamiltonian(path, n, i as f64 / 10.0)?;
        min_gap = min_gap.min(gap_of(&g.matrix)?);
    }
    Ok(Some(min_gap))
}

/// The evolution's start: the normalized product of pair states.
pub fn initial_state(path: &PathSpec) -> Result<StateVector> {
    instantaneous_target(path, 1, 0.0)
}

fn group_generator(path: &PathSpec, group: &[usize], s: f64, radius: usize) -> Result<Generator> {
    let lat = path.lattice();
    let mut terms = Vec::new();
    for &n in group {
        terms.extend(localized_terms(path, n, s, radius)?);
    }
    Generator::from_terms(terms, lat.n_vertices(), lat.local_dim())
}

/// Evolves `psi` through one group of segments sharing `tau`.
pub fn evolve_group(
    path: &PathSpec,
    group: &[usize],
    psi: &CVec,
    tau: f64,
    radius: usize,
    steps: usize,
    method: Method,
) -> Result<CVec> {
    let h = |t: f64| group_generator(path, group, (t / tau).clamp(0.0, 1.0), radius);
    integrate(h, psi, tau, steps, method)
}

fn tau_for(taus: &[f64], n: usize) -> Result<f64> {
    let tau = match taus.len() {
        1 => taus[0],
        _ => *taus
            .get(n - 1)
            .ok_or_else(|| Error::InvalidArgument(format!("no runtime given for segment {n}")))?,
    };
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("runtime {tau} must be finite and non-negative")));
    }
    Ok(tau)
}

fn run_groups(
    path: &PathSpec,
    groups: &[Vec<usize>],
    taus: &[f64],
    radius: usize,
    steps: usize,
    method: Method,
) -> Result<EvolutionResult> {
    let n_seg = path.n_segments();
    if taus.len() != 1 && taus.len() != n_seg {
        return Err(Error::InvalidArgument(format!("{} runtimes for {n_seg} segments", taus.len())));
    }
    let mut psi = initial_state(path)?.into_amplitudes();
    let mut diagnostics = Vec::with_capacity(groups.len());
    let mut certified = true;
    for group in groups {
        let tau = tau_for(taus, group[0])?;
        for &n in group {
            if tau_for(taus, n)? != tau {
                return Err(Error::InvalidArgument(format!("group {group:?} mixes runtimes")));
            }
        }
        let before = psi.norm();
        psi = evolve_group(path, group, &psi, tau, radius, steps, method)?;
        let norm_drift = (psi.norm() - before).abs();
        let mut min_gap: Option<f64> = Some(f64::INFINITY);
        for &n in group {
            min_gap = match (min_gap, probe_gap(path, n)?) {
                (Some(a), Some(b)) => Some(a.min(b)),
                _ => None,
            };
        }
        certified &= min_gap.is_some_and(|g| g >= DEGENERACY_TOL) && norm_drift <= NORM_DRIFT_TOL;
        diagnostics.push(SegmentDiagnostics { segments: group.clone(), tau, steps, min_gap, norm_drift });
    }
    let target = target_state(path.model())?;
    let final_state = StateVector::from_normalized(psi);
    let overlap = target.overlap(&final_state);
    Ok(EvolutionResult {
        adiabatic_error: adiabatic_error(&final_state, &target),
        overlap,
        final_state,
        segments: diagnostics,
        certified,
    })
}

/// Chains all segments, each under its localized Hamiltonian. `taus` holds
/// either one runtime for every segment or one per segment.
pub fn run_sequential(
    path: &PathSpec,
    taus: &[f64],
    radius: usize,
    steps_per_segment: usize,
    method: Method,
) -> Result<EvolutionResult> {
    let groups: Vec<Vec<usize>> = (1..=path.n_segments()).map(|n| vec![n]).collect();
    run_groups(path, &groups, taus, radius, steps_per_segment, method)
}

/// Greedy grouping of consecutive segments whose localized supports are
/// pairwise disjoint (1-based segment indices).
pub fn path_grouping(path: &PathSpec, radius: usize) -> Result<Vec<Vec<usize>>> {
    let supports = (1..=path.n_segments())
        .map(|n| localized_support(path, n, radius))
        .collect::<Result<Vec<_>>>()?;
    Ok(disjoint_grouping(&supports)
        .into_iter()
        .map(|g| g.into_iter().map(|k| k + 1).collect())
        .collect())
}

/// Evolves each group with the sum of its members' localized Hamiltonians.
/// Groups must list `1..=N` in order, and members of a group must have
/// disjoint localized supports.
pub fn run_grouped(
    path: &PathSpec,
    groups: &[Vec<usize>],
    taus: &[f64],
    radius: usize,
    steps: usize,
    method: Method,
) -> Result<EvolutionResult> {
    let flat: Vec<usize> = groups.iter().flatten().copied().collect();
    if flat != (1..=path.n_segments()).collect::<Vec<_>>() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidArgument(format!("groups {groups:?} do not list the segments in order")));
    }
    for group in groups {
        let supports = group
            .iter()
            .map(|&n| localized_support(path, n, radius))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                if supports[i].iter().any(|v| supports[j].contains(v)) {
                    return Err(Error::OverlappingGroup { a: group[i], b: group[j] });
                }
            }
        }
    }
    run_groups(path, groups, taus, radius, steps, method)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub radius: usize,
    /// `‖ψ̃(τ) − ψ(τ)‖`.
    pub distance: f64,
}

/// Evolves segment `n` from the ground state of `G̃_n(0)` under the full
/// `G̃_n` and under `G_n` at each radius, and reports the final distances.
pub fn compare_localization(
    path: &PathSpec,
    n: usize,
    tau: f64,
    radii: &[usize],
    steps: usize,
    method: Method,
) -> Result<Vec<LocalizationRow>> {
    if radii.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("radii must be ascending".into()));
    }
    let psi0 = instantaneous_target(path, n, 0.0)?.into_amplitudes();
    let full = evolve_group(path, &[n], &psi0, tau, usize::MAX, steps, method)?;
    radii
        .par_iter()
        .map(|&radius| {
            let local = evolve_group(path, &[n], &psi0, tau, radius, steps, method)?;
            Ok(LocalizationRow { radius, distance: (&full - local).norm() })
        })
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slope of `ln(distance)` against radius over rows with positive distance.
pub fn localization_decay_slope(rows: &[LocalizationRow]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.distance > 0.0)
        .map(|r| (r.radius as f64, r.distance.ln()))
        .unzip();
    fit_slope(&x, &y)
}

/// Parameters of the Gevrey-class adiabatic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticBound {
    pub k: f64,
    pub c: f64,
    pub alpha: f64,
    pub delta: f64,
    pub tau: f64,
}

impl AdiabaticBound {
    pub fn new(k: f64, c: f64, alpha: f64, delta: f64, tau: f64) -> Result<Self> {
        if [k, c, alpha, delta, tau].iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument("bound parameters must be positive and finite".into()));
        }
        Ok(Self { k, c, alpha, delta, tau })
    }
}

/// `8ce(K/Δ)(4π²/3)³ exp{−(τΔ³/(4ec²K²)·(3/(4π²))⁵)^{1/(1+α)}}`.
pub fn runtime_bound(b: &AdiabaticBound) -> f64 {
    let r = 4.0 * PI * PI / 3.0;
    let prefactor = 8.0 * b.c * E * (b.k / b.delta) * r.powi(3);
    let arg = b.tau * b.delta.powi(3) / (4.0 * E * b.c * b.c * b.k * b.k) * r.recip().powi(5);
    prefactor * (-arg.powf(1.0 / (1.0 + b.alpha))).exp()
}

/// Finite-difference estimates of the Gevrey constants of one segment,
/// `‖G^{(k)}‖ ≤ K c^k (k!)^{1+α}/(k+1)²` for `k = 1..4`, plus the minimal gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GevreyEstimate {
    pub segment: usize,
    pub k: f64,
    pub c: f64,
    pub delta: f64,
    /// `max_s ‖G^{(k)}(s)‖` for `k = 1..4`.
    pub derivative_norms: [f64; 4],
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Estimates `K`, `c`, `Δ` for segment `n` of a small path.
pub fn estimate_gevrey_constants(path: &PathSpec, n: usize, alpha: f64) -> Result<GevreyEstimate> {
    let lat = path.lattice();
    let dim = checked_dim(lat.local_dim(), lat.n_vertices())?;
    if dim > GAP_PROBE_LIMIT {
        return Err(Error::DimensionLimit { dim, limit: GAP_PROBE_LIMIT });
    }
    let h = 0.005;
    let mut norms = [0.0f64; 4];
    for i in 0..=38 {
        let s = 0.025 + 0.95 * i as f64 / 38.0;
        for (k_idx, norm) in norms.iter_mut().enumerate() {
            let k = k_idx + 1;
            let mut acc = CMat::zeros(dim, dim);
            for j in 0..=k {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let point = s + (k as f64 / 2.0 - j as f64) * h;
                acc += sequential_hamiltonian(path, n, point)?.matrix * real(sign * binomial(k, j));
            }
            *norm = norm.max(op_norm(&acc) / h.powi(k as i32));
        }
    }
    let mut delta = f64::INFINITY;
    for i in 0..=40 {
        delta = delta.min(gap_of(&sequential_hamiltonian(path, n, i as f64 / 40.0)?.matrix)?);
    }
    let r: Vec<f64> = norms
        .iter()
        .enumerate()
        .map(|(i, &d)| d * ((i + 2) as f64).powi(2) / factorial(i + 1).powf(1.0 + alpha))
        .collect();
    let floor = 1e-12;
    let (k, c) = if r[0] <= floor {
        (floor, floor)
    } else {
        let c = (1..4)
            .map(|i| (r[i] / r[0]).powf(1.0 / i as f64))
            .fold(floor, f64::max);
        let k = r.iter().enumerate().map(|(i, &x)| x / c.powi(i as i32 + 1)).fold(floor, f64::max);
        (k, c)
    };
    Ok(GevreyEstimate { segment: n, k, c, delta, derivative_norms: norms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub error: f64,
    /// Sum over segments of the bound with estimated constants; `None` for
    /// non-Gevrey schedules or unprobed sizes.
    pub bound_estimate: Option<f64>,
    pub min_gap: Option<f64>,
    pub norm_drift: f64,
    /// Certified run with an error above [`NOISE_FLOOR`].
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Estimated constants per segment (estimates, not certified bounds).
    pub constants: Vec<GevreyEstimate>,
    /// Slope of `ln(error)` against `τ^{1/(1+α)}` over the last half of the
    /// reliable rows.
    pub decay_slope: Option<f64>,
}

/// Steps used for runtime `tau` at the given density.
pub fn steps_for(tau: f64, steps_per_unit: f64) -> usize {
    ((tau * steps_per_unit).ceil() as usize).max(16)
}

/// Full runs over `taus` (run concurrently), with measured errors and the
/// Gevrey bound evaluated at estimated constants.
pub fn error_vs_runtime_sweep(
    path: &PathSpec,
    taus: &[f64],
    radius: usize,
    steps_per_unit: f64,
    method: Method,
) -> Result<SweepTable> {
    if taus.windows(2).any(|w| w[0] >= w[1]) || taus.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("runtimes must be positive and ascending".into()));
    }
    let alpha = path.schedule().alpha();
    let gevrey = path.schedule().kind() == ScheduleKind::Gevrey;
    let lat = path.lattice();
    let small = checked_dim(lat.local_dim(), lat.n_vertices())? <= GAP_PROBE_LIMIT;
    let constants = if gevrey && small {
        (1..=path.n_segments())
            .map(|n| estimate_gevrey_constants(path, n, alpha))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let rows = taus
        .par_iter()
        .map(|&tau| {
            let result = run_sequential(path, &[tau], radius, steps_for(tau, steps_per_unit), method)?;
            let bound_estimate = if constants.is_empty() {
                None
            } else {
                let mut total = 0.0;
                for est in &constants {
                    let b = AdiabaticBound::new(est.k, est.c, alpha, est.delta, tau)?;
                    total += runtime_bound(&b);
                }
                Some(total)
            };
            let min_gap = result
                .segments
                .iter()
                .map(|s| s.min_gap)
                .try_fold(f64::INFINITY, |acc, g| g.map(|g| acc.min(g)));
            let norm_drift = result.segments.iter().map(|s| s.norm_drift).sum();
            Ok(SweepRow {
                tau,
                error: result.adiabatic_error,
                bound_estimate,
                min_gap,
                norm_drift,
                reliable: result.certified && result.adiabatic_error >= NOISE_FLOOR,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reliable: Vec<&SweepRow> = rows.iter().filter(|r| r.reliable).collect();
    let tail = &reliable[reliable.len() / 2..];
    let (x, y): (Vec<f64>, Vec<f64>) = tail.iter().map(|r| (r.tau.powf(1.0 / (1.0 + alpha)), r.error.ln())).unzip();
    Ok(SweepTable { decay_slope: fit_slope(&x, &y), rows, constants })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.16e}"))
}

/// Writes the sweep as CSV with full-precision floats.
pub fn write_sweep_csv<W: Write>(table: &SweepTable, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| Error::Numerical(format!("csv output failed: {e}"));
    w.write_record(["tau", "error", "bound_estimate", "min_gap", "norm_drift", "reliable"]).map_err(io)?;
    for r in &table.rows {
        w.write_record([
            format!("{:.16e}", r.tau),
            format!("{:.16e}", r.error),
            fmt_opt(r.bound_estimate),
            fmt_opt(r.min_gap),
            format!("{:.16e}", r.norm_drift),
            r.reliable.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Numerical(format!("csv output failed: {e}")))?;
    Ok(())
}

/// One order of the adiabatic expansion sampled on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTerm {
    pub j: usize,
    pub phi: Vec<CVec>,
    pub varphi: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticExpansion {
    pub s_grid: Vec<f64>,
    pub terms: Vec<ExpansionTerm>,
}

impl AdiabaticExpansion {
    /// `ψ_M(s_i) = Σ_{j=0}^{M} ε^j φ_j(s_i)`.
    pub fn truncated(&self, eps: f64, m: usize, index: usize) -> CVec {
        let mut out = CVec::zeros(self.terms[0].phi[index].len());
        for term in self.terms.iter().take(m + 1) {
            out += &term.phi[index] * real(eps.powi(term.j as i32));
        }
        out
    }
}

/// Derivative weights at `x` of the quadratic through three nodes.
fn quadratic_weights(x: f64, n: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = n;
    [
        (2.0 * x - b - c) / ((a - b) * (a - c)),
        (2.0 * x - a - c) / ((b - a) * (b - c)),
        (2.0 * x - a - b) / ((c - a) * (c - b)),
    ]
}

fn differentiate(grid: &[f64], values: &[CVec]) -> Vec<CVec> {
    let n = grid.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1).min(n - 3);
            let nodes = [grid[lo], grid[lo + 1], grid[lo + 2]];
            let w = quadratic_weights(grid[i], nodes);
            &values[lo] * real(w[0]) + &values[lo + 1] * real(w[1]) + &values[lo + 2] * real(w[2])
        })
        .collect()
}

/// Orders `j = 0..=m` of `ψ ≈ Σ ε^j φ_j` for `iε ψ' = G(s) ψ`, with
/// `φ_j = φ_j(scalar)·φ + i G⁺ φ̇_{j−1}` and
/// `φ_j(scalar) = i ∫ ⟨φ̇|G⁺|φ̇_{j−1}⟩`. The ground energy is shifted to zero
/// at every grid point.
pub fn adiabatic_expansion<F>(g_path: F, s_grid: &[f64], m: usize, kernel_tol: f64) -> Result<AdiabaticExpansion>
where
    F: Fn(f64) -> Result<CMat>,
{
    if m > 3 {
        return Err(Error::InvalidArgument(format!("expansion order {m} exceeds 3")));
    }
    if s_grid.len() < 3 || s_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("grid needs at least 3 increasing points".into()));
    }
    let mut phi: Vec<CVec> = Vec::with_capacity(s_grid.len());
    let mut pinv: Vec<CMat> = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let (vals, vecs) = eig_hermitian(&g_path(s)?)?;
        if vals.len() < 2 {
            return Err(Error::InvalidArgument("path must act on at least two levels".into()));
        }
        let gap = vals[1] - vals[0];
        if gap < EXPANSION_GAP_FLOOR {
            return Err(Error::GapTooSmall { gap, threshold: EXPANSION_GAP_FLOOR });
        }
        let e0 = vals[0];
        pinv.push(reassemble(&vals, &vecs, |x| {
            let y = x - e0;
            if y.abs() <= kernel_tol {
                ZERO
            } else {
                real(1.0 / y)
            }
        }));
        let mut v = vecs.column(0).into_owned();
        if let Some(prev) = phi.last() {
            let ov = prev.dotc(&v);
            v *= ov.conj() / real(ov.norm());
        }
        phi.push(v);
    }
    // remove the residual Berry phase so that ⟨φ|φ̇⟩ = 0
    let dphi = differentiate(s_grid, &phi);
    let connection: Vec<f64> = phi.iter().zip(&dphi).map(|(p, d)| p.dotc(d).im).collect();
    let mut gamma = 0.0;
    for i in 0..phi.len() {
        if i > 0 {
            gamma += 0.5 * (connection[i] + connection[i - 1]) * (s_grid[i] - s_grid[i - 1]);
        }
        phi[i] *= C64::from_polar(1.0, -gamma);
    }
    let dphi = differentiate(s_grid, &phi);
    let mut terms = vec![ExpansionTerm { j: 0, phi: phi.clone(), varphi: vec![ONE; s_grid.len()] }];
    for j in 1..=m {
        let dprev = differentiate(s_grid, &terms[j - 1].phi);
        let resolved: Vec<CVec> = pinv.iter().zip(&dprev).map(|(p, d)| p * d).collect();
        let integrand: Vec<C64> = dphi.iter().zip(&resolved).map(|(a, r)| a.dotc(r)).collect();
        let mut varphi = vec![ZERO; s_grid.len()];
        for i in 1..s_grid.len() {
            varphi[i] = varphi[i - 1] + I * (integrand[i] + integrand[i - 1]) * real(0.5 * (s_grid[i] - s_grid[i - 1]));
        }
        let phi_j = (0..s_grid.len()).map(|i| &phi[i] * varphi[i] + &resolved[i] * I).collect();
        terms.push(ExpansionTerm { j, phi: phi_j, varphi });
    }
    Ok(AdiabaticExpansion { s_grid: s_grid.to_vec(), terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_chain;
    use crate::linop::{pauli_string, random};
    use crate::model::{random_commuting_spec, ModelSpec};
    use crate::parent::Interpolation;
    use crate::schedule::{gevrey_f, Schedule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn thermal_chain(n_sites: usize, beta: f64) -> ModelSpec {
        let lat = build_chain(n_sites, 2, true).unwrap();
        let h = lat
            .supports()
            .iter()
            .map(|s| {
                let m = pauli_string("ZZ").unwrap() + pauli_string("ZI").unwrap() * real(0.4);
                LocalOperator::new(s.clone(), 2, m).unwrap()
            })
            .collect();
        ModelSpec::thermal(lat, h, beta).unwrap()
    }

    fn random_path(seed: u64, dim: usize) -> impl Fn(f64) -> Result<Generator> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random::hermitian(&mut rng, dim);
        let b = random::hermitian(&mut rng, dim);
        move |t: f64| Ok(Generator::Dense(&a + &b * real((2.0 * t).sin())))
    }

    #[test]
    fn zero_hamiltonian_is_stationary() {
        let psi = CVec::from_vec(vec![real(0.6), C64::new(0.0, 0.8)]);
        let out = integrate(|_| Ok(Generator::Dense(CMat::zeros(2, 2))), &psi, 3.0, 7, Method::Cfm4).unwrap();
        assert_eq!(out, psi);
    }

    #[test]
    fn constant_z_phases() {
        let s = 1.0 / 2f64.sqrt();
        let psi = CVec::from_vec(vec![real(s), real(s)]);
        let z = pauli_string("Z").unwrap();
        for method in [Method::Cfm4, Method::Midpoint] {
            let out = integrate(|_| Ok(Generator::Dense(z.clone())), &psi, PI, 5, method).unwrap();
            let expected = CVec::from_vec(vec![C64::from_polar(s, -PI), C64::from_polar(s, PI)]);
            assert!((out - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn integrator_orders() {
        let path = random_path(11, 4);
        let psi = CVec::from_vec(vec![ONE, ZERO, ZERO, ZERO]);
        let oracle = integrate(&path, &psi, 2.0, 1 << 14, Method::Cfm4).unwrap();
        let err = |steps, m| (integrate(&path, &psi, 2.0, steps, m).unwrap() - &oracle).norm();
        let order4 = (err(32, Method::Cfm4) / err(64, Method::Cfm4)).log2();
        assert!(order4 > 3.7, "order {order4}");
        let order2 = (err(64, Method::Midpoint) / err(128, Method::Midpoint)).log2();
        assert!((order2 - 2.0).abs() < 0.3, "order {order2}");
    }

    #[test]
    fn rejects_bad_samples() {
        let psi = CVec::from_vec(vec![ONE, ZERO]);
        let bad = CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(matches!(
            integrate(|_| Ok(Generator::Dense(bad.clone())), &psi, 1.0, 2, Method::Cfm4),
            Err(Error::NotHermitian { .. })
        ));
        let nan = CMat::from_element(2, 2, real(f64::NAN));
        assert!(integrate(|_| Ok(Generator::Dense(nan.clone())), &psi, 1.0, 2, Method::Cfm4).is_err());
        assert!(integrate(|_| Ok(Generator::Dense(CMat::zeros(2, 2))), &psi, 1.0, 0, Method::Cfm4).is_err());
    }

    #[test]
    fn krylov_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 7;
        let terms: Vec<LocalOperator> = (0..n - 1)
            .map(|i| LocalOperator::new(vec![i, i + 1], 2, random::hermitian(&mut rng, 4)).unwrap())
            .collect();
        let dense = embed_sum(&terms, n, 2).unwrap();
        let v = random::state(&mut rng, 1 << n);
        let v = &v / real(v.norm());
        let op = TermSum::new(&terms, n, 2).unwrap();
        for dt in [0.01, 0.7, 6.0] {
            let exact = herm_exp(&dense, C64::new(0.0, -dt)).unwrap() * &v;
            let approx = krylov_exp(&|x| op.apply(x), &v, dt).unwrap();
            assert!((exact - &approx).norm() < 1e-11, "dt {dt}");
        }
        let g = Generator::Terms { terms: Vec::new(), n_vertices: n, local_dim: 2 };
        assert_eq!(g.exp_apply(&v, 1.0).unwrap(), v);
    }

    #[test]
    fn adiabatic_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = StateVector::new(random::state(&mut rng, 4)).unwrap();
        assert!(adiabatic_error(&phi, &phi) < 1e-7);
        let rotated = StateVector::from_normalized(phi.amplitudes() * C64::from_polar(1.0, 1.3));
        assert!(adiabatic_error(&rotated, &phi) < 1e-7);
        let a = StateVector::new(CVec::from_vec(vec![ONE, ZERO])).unwrap();
        let b = StateVector::new(CVec::from_vec(vec![ZERO, ONE])).unwrap();
        assert!((adiabatic_error(&a, &b) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trivial_path_stays_put() {
        let lat = build_chain(2, 2, true).unwrap();
        let spec = ModelSpec::from_q(lat, vec![LocalOperator::identity(vec![0, 2], 2).unwrap()]).unwrap();
        let path = PathSpec::natural(spec, Schedule::gevrey(1.0).unwrap(), Interpolation::Linear).unwrap();
        let r = run_sequential(&path, &[3.0], usize::MAX, 10, Method::Cfm4).unwrap();
        assert!(r.adiabatic_error < 1e-7);
        assert!((r.adiabatic_error.powi(2) - (2.0 - 2.0 * r.overlap.norm())).abs() < 1e-12);
    }

    #[test]
    fn thermal_two_chain_converges() {
        let spec = thermal_chain(2, 0.6);
        let path = PathSpec::natural(spec, Schedule::gevrey(1.0).unwrap(), Interpolation::Thermal).unwrap();
        let diam = path.lattice().diameter().unwrap();
        let slow = run_sequential(&path, &[30.0], diam, 600, Method::Cfm4).unwrap();
        let fast = run_sequential(&path, &[5.0], diam, 200, Method::Cfm4).unwrap();
        assert!(slow.adiabatic_error <= 1e-3, "{}", slow.adiabatic_error);
        assert!(fast.adiabatic_error > slow.adiabatic_error);
        assert!(slow.certified);
        assert!(slow.segments[0].norm_drift < 1e-12);
        let json = serde_json::to_string(&slow).unwrap();
        let again = run_sequential(&path, &[30.0], diam, 600, Method::Cfm4).unwrap();
        assert_eq!(json, serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn grouping_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random_commuting_spec(&mut rng, build_chain(3, 2, true).unwrap(), 0.4).unwrap();
        let path = PathSpec::natural(spec, Schedule::gevrey(1.0).unwrap(), Interpolation::Linear).unwrap();
        let singles = vec![vec![1], vec![2]];
        let a = run_grouped(&path, &singles, &[2.0], 1, 20, Method::Cfm4).unwrap();
        let b = run_sequential(&path, &[2.0], 1, 20, Method::Cfm4).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            run_grouped(&path, &[vec![1, 2]], &[2.0], 1, 20, Method::Cfm4),
            Err(Error::OverlappingGroup { a: 1, b: 2 })
        ));
        assert!(run_grouped(&path, &[vec![2], vec![1]], &[2.0], 1, 20, Method::Cfm4).is_err());
        assert_eq!(path_grouping(&path, 1).unwrap(), singles);
    }

    #[test]
    fn localization_edge_cases() {
        let spec = thermal_chain(3, 0.7);
        let path = PathSpec::natural(spec, Schedule::gevrey(1.0).unwrap(), Interpolation::Thermal).unwrap();
        let diam = path.lattice().diameter().unwrap();
        let rows = compare_localization(&path, 2, 0.0, &[1, 2], 10, Method::Cfm4).unwrap();
        assert!(rows.iter().all(|r| r.distance == 0.0));
        let rows = compare_localization(&path, 2, 4.0, &[1, diam], 40, Method::Cfm4).unwrap();
        assert!(rows[1].distance <= 1e-12);
        assert!(rows[0].distance > rows[1].distance);
        assert!(compare_localization(&path, 2, 4.0, &[2, 1], 40, Method::Cfm4).is_err());
    }

    #[test]
    fn bound_matches_log_space_evaluation() {
        let b = AdiabaticBound::new(1.0, 1.0, 1.0, 1.0, 1e6).unwrap();
        // ln(8e) + 3 ln(4π²/3) − sqrt(τ / (4e) · (3/(4π²))⁵)
        let ln_r = (4.0 * PI * PI / 3.0).ln();
        let ln_value = 8f64.ln() + 1.0 + 3.0 * ln_r - (1e6f64.ln() - (4.0 * E).ln() - 5.0 * ln_r).exp().sqrt();
        assert!((runtime_bound(&b).ln() - ln_value).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for tau in [1e6, 2e6, 4e6, 1e8, 1e10] {
            let v = runtime_bound(&AdiabaticBound { tau, ..b });
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-10);
        assert!(AdiabaticBound::new(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sweep_flags_noise_floor() {
        let lat = build_chain(2, 2, true).unwrap();
        let spec = ModelSpec::from_q(lat, vec![LocalOperator::identity(vec![0, 2], 2).unwrap()]).unwrap();
        let path = PathSpec::natural(spec, Schedule::gevrey(1.0).unwrap(), Interpolation::Linear).unwrap();
        let table = error_vs_runtime_sweep(&path, &[1.0, 2.0], usize::MAX, 4.0, Method::Cfm4).unwrap();
        assert!(table.rows.iter().all(|r| !r.reliable));
        assert_eq!(table.decay_slope, None);
        let mut buf = Vec::new();
        write_sweep_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau,error,bound_estimate,min_gap,norm_drift,reliable\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(error_vs_runtime_sweep(&path, &[2.0, 1.0], usize::MAX, 4.0, Method::Cfm4).is_err());
    }

    fn rotating_projector(theta_max: f64, gap: f64) -> impl Fn(f64) -> Result<CMat> {
        move |s: f64| {
            let th = theta_max * gevrey_f(1.0, s.clamp(0.0, 1.0))?;
            let u = CVec::from_vec(vec![real(th.cos()), real(th.sin())]);
            Ok((CMat::identity(2, 2) - &u * u.adjoint()) * real(gap))
        }
    }

    #[test]
    fn expansion_of_constant_path_vanishes() {
        let g = pauli_string("Z").unwrap();
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let exp = adiabatic_expansion(|_| Ok(g.clone()), &grid, 3, 1e-10).unwrap();
        for term in &exp.terms[1..] {
            assert!(term.phi.iter().all(|v| v.norm() == 0.0));
        }
        assert!(adiabatic_expansion(|_| Ok(g.clone()), &grid, 4, 1e-10).is_err());
        assert!(adiabatic_expansion(|_| Ok(CMat::zeros(2, 2)), &grid, 1, 1e-10).is_err());
    }

    fn expansion_slope(m: usize) -> f64 {
        let g = rotating_projector(1.0, 1.0);
        let grid: Vec<f64> = (0..=8000).map(|i| i as f64 / 8000.0).collect();
        let exp = adiabatic_expansion(&g, &grid, m, 1e-10).unwrap();
        let last = grid.len() - 1;
        let (x, y): (Vec<f64>, Vec<f64>) = [80.0, 160.0, 320.0, 640.0]
            .into_iter()
            .map(|tau: f64| {
                let psi0 = exp.terms[0].phi[0].clone();
                let h = |t: f64| Ok(Generator::Dense(g(t / tau)?));
                let psi = integrate(h, &psi0, tau, (tau * 100.0) as usize, Method::Cfm4).unwrap();
                let err = (psi - exp.truncated(1.0 / tau, m, last)).norm();
                (-tau.ln(), err.ln())
            })
            .unzip();
        fit_slope(&x, &y).unwrap()
    }

    #[test]
    fn expansion_error_exponents() {
        for m in [1, 2] {
            let slope = expansion_slope(m);
            assert!((slope - (m + 1) as f64).abs() < 0.3, "order {m}: slope {slope}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn norm_is_conserved(seed in any::<u64>(), steps in 1usize..60, t in 0.1f64..10.0) {
                let path = random_path(seed, 6);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
                let psi = random::state(&mut rng, 6);
                let psi = &psi / real(psi.norm());
                let out = integrate(&path, &psi, t, steps, Method::Cfm4).unwrap();
                prop_assert!((out.norm() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn error_is_phase_invariant(seed in any::<u64>(), theta in 0.0f64..6.3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let psi = StateVector::new(random::state(&mut rng, 8)).unwrap();
                let phi = StateVector::new(random::state(&mut rng, 8)).unwrap();
                let rotated = StateVector::from_normalized(psi.amplitudes() * C64::from_polar(1.0, theta));
                prop_assert!((adiabatic_error(&rotated, &phi) - adiabatic_error(&psi, &phi)).abs() <= 1e-14);
            }
        }
    }
}
