//! Cluster expansion of the non-local parent Hamiltonian
//! `G^{nl}_μ = e^{βH/2} P_μ e^{−βH} P_μ e^{βH/2}` of a non-commuting Gibbs
//! state, its truncation to connected anchored polymers, the truncation
//! certificate, gap checks and the high-temperature preparation driver.

use std::io::Write;
use std::ops::{Add, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{
    adiabatic_error, integrate, EvolutionResult, Generator, Method, SegmentDiagnostics, GAP_PROBE_LIMIT,
    NORM_DRIFT_TOL,
};
use crate::lattice::{connected_edge_sets, EdgeSet, Lattice};
use crate::linop::{
    checked_dim, eigvals_hermitian, embed_sum, herm_exp, op_norm, real, CMat, GlobalOperator, LocalOperator,
};
use crate::model::{check_aligned, normalize_interactions, pair_product_vector, StateVector};
use crate::parent::{gap_of, pair_projector, DEGENERACY_TOL};
use crate::schedule::Schedule;

/// Largest dimension for which `G^{nl}` is built densely.
pub const EXACT_LIMIT: usize = 1024;
/// Norm below which a cluster term counts as vanishing.
pub const VANISHING_TOL: f64 = 1e-10;

fn subsets(omega: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0u64..(1u64 << omega.len())).map(move |mask| {
        omega
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &x)| x)
            .collect()
    })
}

fn sorted_set(omega: &[usize]) -> Result<Vec<usize>> {
    let mut set = omega.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() != omega.len() {
        return Err(Error::InvalidArgument(format!("{omega:?} has repeated members")));
    }
    if set.len() > 20 {
        return Err(Error::InvalidArgument(format!("ground set of size {} is too large", set.len())));
    }
    Ok(set)
}

/// `f̂(Ω) = Σ_{Θ⊆Ω} f(Θ)`. Subsets are passed to `f` sorted.
pub fn mobius_hat<T, F>(f: F, omega: &[usize]) -> Result<T>
where
    T: Clone + Add<Output = T>,
    F: Fn(&[usize]) -> Option<T>,
{
    let omega = sorted_set(omega)?;
    let mut acc: Option<T> = None;
    for theta in subsets(&omega) {
        let v = f(&theta).ok_or_else(|| Error::MissingSubset(theta.clone()))?;
        acc = Some(match acc {
            None => v,
            Some(a) => a + v,
        });
    }
    acc.ok_or_else(|| Error::MissingSubset(Vec::new()))
}

/// `f̌(Ω) = Σ_{Θ⊆Ω} (−1)^{|Ω∖Θ|} f(Θ)`.
pub fn mobius_check<T, F>(f: F, omega: &[usize]) -> Result<T>
where
    T: Clone + Add<Output = T> + Sub<Output = T>,
    F: Fn(&[usize]) -> Option<T>,
{
    let omega = sorted_set(omega)?;
    let mut acc = f(&omega).ok_or_else(|| Error::MissingSubset(omega.clone()))?;
    for theta in subsets(&omega) {
        if theta.len() == omega.len() {
            continue;
        }
        let v = f(&theta).ok_or_else(|| Error::MissingSubset(theta.clone()))?;
        acc = if (omega.len() - theta.len()) % 2 == 0 { acc + v } else { acc - v };
    }
    Ok(acc)
}

/// Interactions normalized for the expansion: rescaled (never shifted) so
/// that `max ‖h_λ‖ < 1`; β is divided by the same factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    lattice: Lattice,
    h_ops: Vec<LocalOperator>,
    scale: f64,
}

impl ClusterModel {
    pub fn new(lattice: Lattice, h_ops: Vec<LocalOperator>) -> Result<Self> {
        check_aligned(&lattice, &h_ops, "h")?;
        let (h_ops, _, scale) = normalize_interactions(&h_ops, false)?;
        Ok(Self { lattice, h_ops, scale })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Normalized interactions.
    pub fn h_ops(&self) -> &[LocalOperator] {
        &self.h_ops
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// β acting on the normalized interactions.
    pub fn effective_beta(&self, beta: f64) -> f64 {
        beta / self.scale
    }

    fn dim(&self) -> Result<usize> {
        checked_dim(self.lattice.local_dim(), self.lattice.n_vertices())
    }

    fn dense_guard(&self) -> Result<usize> {
        let dim = self.dim()?;
        if dim > EXACT_LIMIT {
            return Err(Error::DimensionLimit { dim, limit: EXACT_LIMIT });
        }
        Ok(dim)
    }

    /// Full `H = Σ_λ h_λ` (normalized) on every lattice vertex.
    pub fn hamiltonian(&self) -> Result<CMat> {
        embed_sum(&self.h_ops, self.lattice.n_vertices(), self.lattice.local_dim())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be finite and non-negative, got {beta}")));
    }
    Ok(())
}

fn check_polymer(model: &ClusterModel, anchor: usize, omega: &[usize]) -> Result<Vec<usize>> {
    let lat = model.lattice();
    if anchor >= lat.pairs().len() {
        return Err(Error::InvalidArgument(format!("pair {anchor} out of range")));
    }
    let omega = sorted_set(omega)?;
    if let Some(&k) = omega.iter().find(|&&k| k >= lat.supports().len()) {
        return Err(Error::InvalidArgument(format!("support {k} out of range")));
    }
    Ok(omega)
}

fn polymer_support(lat: &Lattice, anchor: usize, omega: &[usize]) -> Vec<usize> {
    let mut support: Vec<usize> = lat.pair_vertices(anchor).to_vec();
    for &k in omega {
        support.extend_from_slice(&lat.supports()[k]);
    }
    support.sort_unstable();
    support.dedup();
    support
}

/// `f_μ(Θ) = e^{β'H_Θ/2} P_μ e^{−β'H_Θ} P_μ e^{β'H_Θ/2}` on `support`, with
/// `β'` the effective inverse temperature.
fn f_on(model: &ClusterModel, anchor: usize, theta: &[usize], eff_beta: f64, support: &[usize]) -> Result<CMat> {
    let lat = model.lattice();
    let p = pair_projector(lat, anchor)?.extend_to(support)?.into_matrix();
    if theta.is_empty() || eff_beta == 0.0 {
        return Ok(p);
    }
    let dim = p.nrows();
    let mut h = CMat::zeros(dim, dim);
    for &k in theta {
        h += model.h_ops[k].extend_to(support)?.matrix();
    }
    let half = herm_exp(&h, real(eff_beta / 2.0))?;
    let inner = herm_exp(&h, real(-eff_beta))?;
    Ok(&half * &p * inner * &p * half)
}

/// `f_μ(Ω)` on the vertices of `Ω ∪ μ`.
pub fn cluster_f_local(model: &ClusterModel, anchor: usize, omega: &[usize], beta: f64) -> Result<LocalOperator> {
    check_beta(beta)?;
    let omega = check_polymer(model, anchor, omega)?;
    let lat = model.lattice();
    let support = polymer_support(lat, anchor, &omega);
    let m = f_on(model, anchor, &omega, model.effective_beta(beta), &support)?;
    LocalOperator::new(support, lat.local_dim(), m)
}

/// `f_μ(Ω)` embedded in the full space.
pub fn cluster_f(model: &ClusterModel, anchor: usize, omega: &[usize], beta: f64) -> Result<GlobalOperator> {
    let lat = model.lattice();
    let local = cluster_f_local(model, anchor, omega, beta)?;
    Ok(GlobalOperator::new(embed_sum(&[local], lat.n_vertices(), lat.local_dim())?))
}

/// `f̌_μ(Ω)` for one anchor and polymer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTerm {
    pub anchor: usize,
    pub omega: EdgeSet,
    /// Supported on the vertices of `Ω ∪ μ`.
    pub operator: LocalOperator,
    /// Input β.
    pub beta: f64,
}

impl ClusterTerm {
    pub fn norm(&self) -> f64 {
        op_norm(self.operator.matrix())
    }
}

/// `(e^{4β'} − 1)^{|Ω|}` with `β'` effective.
pub fn cluster_norm_bound(model: &ClusterModel, beta: f64, size: usize) -> f64 {
    (4.0 * model.effective_beta(beta)).exp_m1().powi(size as i32)
}

/// `f̌_μ(Ω)` by Möbius inversion over `f_μ`.
pub fn cluster_term(model: &ClusterModel, anchor: usize, omega: &[usize], beta: f64) -> Result<ClusterTerm> {
    check_beta(beta)?;
    let omega = check_polymer(model, anchor, omega)?;
    let lat = model.lattice();
    let support = polymer_support(lat, anchor, &omega);
    let eff = model.effective_beta(beta);
    let m = mobius_check(|theta| f_on(model, anchor, theta, eff, &support).ok(), &omega)?;
    Ok(ClusterTerm {
        anchor,
        omega: EdgeSet::new(lat, omega, anchor),
        operator: LocalOperator::new(support, lat.local_dim(), m)?,
        beta,
    })
}

/// All connected anchored polymers with `|Ω| ≤ r` (including `∅`) for every
/// anchor, evaluated in parallel and returned in a fixed order.
pub fn truncated_terms(model: &ClusterModel, beta: f64, r: usize) -> Result<Vec<ClusterTerm>> {
    let lat = model.lattice();
    let mut jobs = Vec::new();
    for anchor in 0..lat.pairs().len() {
        for set in connected_edge_sets(lat, anchor, r, true)? {
            jobs.push((anchor, set.members));
        }
    }
    jobs.par_iter().map(|(anchor, omega)| cluster_term(model, *anchor, omega, beta)).collect()
}

/// `max_M (1/M) ln #{connected anchored Ω : |Ω| = M}` for one anchor.
pub fn growth_constant(lat: &Lattice, anchor: usize) -> Result<f64> {
    let sets = connected_edge_sets(lat, anchor, lat.supports().len(), false)?;
    let mut counts = vec![0usize; lat.supports().len() + 1];
    for s in &sets {
        counts[s.len()] += 1;
    }
    Ok(counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > 0)
        .map(|(m, &c)| (c as f64).ln() / m as f64)
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCertificate {
    pub anchor: usize,
    pub eta: f64,
    pub y: f64,
    /// `y^r/(1−y)`, infinite when `y ≥ 1`.
    pub bound: f64,
    /// `‖G^{nl}_μ − G^r_μ‖`, when the space is small enough to build `G^{nl}`.
    pub measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationCertificate {
    pub beta: f64,
    pub r: usize,
    /// Largest growth constant over anchors.
    pub eta: f64,
    pub y: f64,
    pub bound: f64,
    /// `y < 1`.
    pub valid: bool,
    pub anchors: Vec<AnchorCertificate>,
}

fn y_and_bound(eta: f64, eff_beta: f64, r: usize) -> (f64, f64) {
    let y = eta.exp() * (4.0 * eff_beta).exp_m1();
    let bound = if y < 1.0 { y.powi(r as i32) / (1.0 - y) } else { f64::INFINITY };
    (y, bound)
}

fn certificate(model: &ClusterModel, beta: f64, r: usize, terms: &[ClusterTerm]) -> Result<TruncationCertificate> {
    let lat = model.lattice();
    let eff = model.effective_beta(beta);
    let exact = model.dim()? <= EXACT_LIMIT;
    let mut anchors = Vec::new();
    for anchor in 0..lat.pairs().len() {
        let eta = growth_constant(lat, anchor)?;
        let (y, bound) = y_and_bound(eta, eff, r);
        let measured = if exact {
            let own: Vec<LocalOperator> =
                terms.iter().filter(|t| t.anchor == anchor).map(|t| t.operator.clone()).collect();
            let gr = embed_sum(&own, lat.n_vertices(), lat.local_dim())?;
            Some(op_norm(&(exact_parent_term(model, anchor, beta)? - gr)))
        } else {
            None
        };
        anchors.push(AnchorCertificate { anchor, eta, y, bound, measured });
    }
    let eta = anchors.iter().map(|a| a.eta).fold(0.0, f64::max);
    let (y, bound) = y_and_bound(eta, eff, r);
    Ok(TruncationCertificate { beta, r, eta, y, bound, valid: y < 1.0, anchors })
}

/// `G^r = Σ_μ Σ_{|Ω|≤r} f̌_μ(Ω)` with its truncation certificate. The
/// construction is returned even when the certificate is invalid.
pub fn truncated_parent(model: &ClusterModel, beta: f64, r: usize) -> Result<(GlobalOperator, TruncationCertificate)> {
    let lat = model.lattice();
    let terms = truncated_terms(model, beta, r)?;
    let ops: Vec<LocalOperator> = terms.iter().map(|t| t.operator.clone()).collect();
    let g = GlobalOperator::new(embed_sum(&ops, lat.n_vertices(), lat.local_dim())?);
    let cert = certificate(model, beta, r, &terms)?;
    Ok((g, cert))
}

/// `G^{nl}_μ = e^{βH/2} P_μ e^{−βH} P_μ e^{βH/2}`, dense.
pub fn exact_parent_term(model: &ClusterModel, anchor: usize, beta: f64) -> Result<CMat> {
    check_beta(beta)?;
    model.dense_guard()?;
    let lat = model.lattice();
    let all: Vec<usize> = lat.vertices().collect();
    let p = pair_projector(lat, anchor)?.extend_to(&all)?.into_matrix();
    let h = model.hamiltonian()?;
    let eff = model.effective_beta(beta);
    let half = herm_exp(&h, real(eff / 2.0))?;
    let inner = herm_exp(&h, real(-eff))?;
    Ok(&half * &p * inner * &p * half)
}

/// `G^{nl} = Σ_μ G^{nl}_μ`, dense.
pub fn exact_noncommuting_parent(model: &ClusterModel, beta: f64) -> Result<GlobalOperator> {
    let dim = model.dense_guard()?;
    let mut g = CMat::zeros(dim, dim);
    for anchor in 0..model.lattice().pairs().len() {
        g += exact_parent_term(model, anchor, beta)?;
    }
    let g = (&g + g.adjoint()).scale(0.5);
    Ok(GlobalOperator::new(g))
}

/// Normalized `e^{−βH/2} ⊗_μ |φ+⟩`.
pub fn purified_gibbs(model: &ClusterModel, beta: f64) -> Result<StateVector> {
    check_beta(beta)?;
    let lat = model.lattice();
    let phi = pair_product_vector(lat)?;
    if beta == 0.0 {
        return StateVector::new(phi);
    }
    model.dense_guard()?;
    let e = herm_exp(&model.hamiltonian()?, real(-model.effective_beta(beta) / 2.0))?;
    StateVector::new(e * phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoncommutingGapRow {
    pub beta: f64,
    pub gap: f64,
    pub ground_energy: f64,
    /// Smallest eigenvalue of `G² − Δ G` with `Δ` the reported gap.
    pub square_margin: f64,
    pub passed: bool,
}

/// Gap of `G^{nl}(β)` on a grid, with the check `(G^{nl})² − Δ G^{nl} ⪰ −1e-9`.
pub fn verify_noncommuting_gap(model: &ClusterModel, beta_grid: &[f64]) -> Result<Vec<NoncommutingGapRow>> {
    beta_grid
        .iter()
        .map(|&beta| {
            let g = exact_noncommuting_parent(model, beta)?.matrix;
            let vals = eigvals_hermitian(&g)?;
            let gap = vals[1] - vals[0];
            let sq = &g * &g - &g * real(gap);
            let sq = (&sq + sq.adjoint()).scale(0.5);
            let square_margin = eigvals_hermitian(&sq)?[0];
            Ok(NoncommutingGapRow { beta, gap, ground_energy: vals[0], square_margin, passed: square_margin >= -1e-9 })
        })
        .collect()
}

fn cluster_generator(model: &ClusterModel, beta: f64, r: usize) -> Result<Generator> {
    let lat = model.lattice();
    let ops = truncated_terms(model, beta, r)?.into_iter().map(|t| t.operator).collect();
    Generator::from_terms(ops, lat.n_vertices(), lat.local_dim())
}

/// Adiabatic run along `β' = β f(s)` of `G^r(β')`, starting from the pair
/// product state. The overlap and error refer to the exact purified Gibbs
/// state. Refuses an invalid certificate unless `allow_invalid` is set.
#[allow(clippy::too_many_arguments)]
pub fn high_temp_prepare(
    model: &ClusterModel,
    beta: f64,
    r: usize,
    tau: f64,
    steps: usize,
    schedule: &Schedule,
    method: Method,
    allow_invalid: bool,
) -> Result<EvolutionResult> {
    check_beta(beta)?;
    let lat = model.lattice();
    let eff = model.effective_beta(beta);
    let eta = (0..lat.pairs().len()).map(|a| growth_constant(lat, a)).collect::<Result<Vec<_>>>()?;
    let eta = eta.into_iter().fold(0.0, f64::max);
    let (y, _) = y_and_bound(eta, eff, r);
    if y >= 1.0 && !allow_invalid {
        return Err(Error::InvalidModel(format!("cluster expansion not certified (y = {y})")));
    }
    let psi0 = StateVector::new(pair_product_vector(lat)?)?.into_amplitudes();
    let h = |t: f64| cluster_generator(model, beta * schedule.at((t / tau).clamp(0.0, 1.0)), r);
    let psi = integrate(h, &psi0, tau, steps, method)?;
    let norm_drift = (psi.norm() - 1.0).abs();
    let min_gap = if model.dim()? <= GAP_PROBE_LIMIT {
        let mut m = f64::INFINITY;
        for i in 0..=10 {
            let g = cluster_generator(model, beta * i as f64 / 10.0, r)?.to_dense()?;
            m = m.min(gap_of(&g)?);
        }
        Some(m)
    } else {
        None
    };
    let target = purified_gibbs(model, beta)?;
    let final_state = StateVector::from_normalized(psi);
    let overlap = target.overlap(&final_state);
    Ok(EvolutionResult {
        adiabatic_error: adiabatic_error(&final_state, &target),
        overlap,
        final_state,
        certified: y < 1.0 && min_gap.is_some_and(|g| g >= DEGENERACY_TOL) && norm_drift <= NORM_DRIFT_TOL,
        segments: vec![SegmentDiagnostics { segments: vec![1], tau, steps, min_gap, norm_drift }],
    })
}

/// Writes one CSV row per cluster term: anchor, polymer, size, norm, bound.
pub fn write_cluster_csv<W: Write>(model: &ClusterModel, terms: &[ClusterTerm], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| Error::Numerical(format!("csv output failed: {e}"));
    w.write_record(["anchor", "omega", "size", "norm", "bound"]).map_err(io)?;
    for t in terms {
        let omega = t.omega.members.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
        w.write_record([
            t.anchor.to_string(),
            omega,
            t.omega.len().to_string(),
            format!("{:.16e}", t.norm()),
            format!("{:.16e}", cluster_norm_bound(model, t.beta, t.omega.len())),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Numerical(format!("csv output failed: {e}")))?;
    Ok(())
}
