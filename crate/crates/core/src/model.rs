//! Target states `∏_λ Q_λ ⊗_μ |φ+⟩_μ`, their thermal specialization, ancilla
//! tracing, and the classical Monte-Carlo correspondence.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linop::{
    checked_dim, eig_hermitian, herm_exp, op_norm, real, subset_offsets, trace_norm, CMat, CVec,
    GlobalOperator, LocalOperator, C64, ONE, ZERO,
};

/// Tolerance on the commutation of overlapping `Q_λ`.
pub const COMMUTATION_TOL: f64 = 1e-10;

/// `‖h‖` is rescaled to this value when it reaches 1.
const NORM_CEILING: f64 = 1.0 - 1e-6;

/// A normalized pure state over the full tensor-product space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: CVec,
}

impl StateVector {
    /// Normalizes `amplitudes`; fails on a zero or non-finite vector.
    pub fn new(amplitudes: CVec) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numerical(format!("cannot normalize vector of norm {norm}")));
        }
        Ok(Self { amplitudes: amplitudes / real(norm) })
    }

    /// Wraps a vector that is already normalized (up to integrator drift).
    pub fn from_normalized(amplitudes: CVec) -> Self {
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &CVec {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVec {
        self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &Self) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn fidelity(&self, other: &Self) -> f64 {
        self.overlap(other).norm_sqr()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (&self.amplitudes - &other.amplitudes).norm()
    }
}

impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let data: Vec<f64> = self.amplitudes.iter().flat_map(|z| [z.re, z.im]).collect();
        data.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        if data.len() % 2 != 0 {
            return Err(serde::de::Error::custom("odd number of re/im entries"));
        }
        let v = CVec::from_iterator(data.len() / 2, data.chunks(2).map(|c| C64::new(c[0], c[1])));
        Ok(Self { amplitudes: v })
    }
}

/// A density matrix on some (sub)system.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub matrix: CMat,
}

impl DensityMatrix {
    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `‖ρ − σ‖₁` (sum of singular values of the difference).
    pub fn trace_norm_distance(&self, other: &Self) -> f64 {
        trace_norm(&(&self.matrix - &other.matrix))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eig_hermitian(&self.matrix)?.0.first().copied().unwrap_or(0.0))
    }
}

/// Thermal-mode bookkeeping: `Q_λ = exp(−β h_λ / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalData {
    /// Effective inverse temperature after rescaling.
    pub beta: f64,
    /// Inverse temperature as supplied.
    pub input_beta: f64,
    /// Normalized interactions: shifted to `h ≥ 0`, then scaled to `‖h‖ < 1`.
    pub h_ops: Vec<LocalOperator>,
    /// Per-term constant removed (the smallest eigenvalue of the input).
    pub shifts: Vec<f64>,
    /// Factor applied to the shifted terms; `beta = input_beta / scale`.
    pub scale: f64,
}

/// A validated model: lattice plus one commuting `Q_λ` per support.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    lattice: Lattice,
    q_ops: Vec<LocalOperator>,
    q0: f64,
    thermal: Option<ThermalData>,
}

pub(crate) fn check_aligned(lat: &Lattice, ops: &[LocalOperator], what: &str) -> Result<()> {
    if ops.len() != lat.supports().len() {
        return Err(Error::InvalidModel(format!(
            "{} {what} operators for {} supports",
            ops.len(),
            lat.supports().len()
        )));
    }
    for (k, op) in ops.iter().enumerate() {
        if op.support() != lat.supports()[k].as_slice() {
            return Err(Error::InvalidModel(format!(
                "{what} operator {k} acts on {:?}, support is {:?}",
                op.support(),
                lat.supports()[k]
            )));
        }
        if op.local_dim() != lat.local_dim() {
            return Err(Error::DimensionMismatch { expected: lat.local_dim(), found: op.local_dim() });
        }
    }
    Ok(())
}

fn overlaps(a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|v| b.contains(v))
}

/// Checks `[A_k, A_l] = 0` for every overlapping pair (disjoint ones commute
/// trivially).
pub fn check_commuting(ops: &[LocalOperator], tol: f64) -> Result<()> {
    for (i, a) in ops.iter().enumerate() {
        for b in &ops[i + 1..] {
            if !overlaps(a.support(), b.support()) {
                continue;
            }
            let scale = op_norm(a.matrix()) * op_norm(b.matrix());
            let norm = a.commutator_norm(b)?;
            if norm > tol * scale.max(1.0) {
                return Err(Error::NonCommuting {
                    a: a.support().to_vec(),
                    b: b.support().to_vec(),
                    norm,
                });
            }
        }
    }
    Ok(())
}

/// Shifts each term to `h ≥ 0` (when `shift` is set) and rescales all terms
/// by a common factor so that `max ‖h‖ < 1`. Returns the terms, the shifts
/// and the factor.
pub fn normalize_interactions(
    h_ops: &[LocalOperator],
    shift: bool,
) -> Result<(Vec<LocalOperator>, Vec<f64>, f64)> {
    let mut shifted = Vec::with_capacity(h_ops.len());
    let mut shifts = Vec::with_capacity(h_ops.len());
    for h in h_ops {
        let (vals, _) = eig_hermitian(h.matrix())?;
        let lo = if shift { vals.first().copied().unwrap_or(0.0) } else { 0.0 };
        let dim = h.dim();
        shifted.push(h.map_matrix(|m| Ok(m - CMat::identity(dim, dim) * real(lo)))?);
        shifts.push(lo);
    }
    let max_norm = shifted.iter().map(|h| op_norm(h.matrix())).fold(0.0f64, f64::max);
    let scale = if max_norm >= 1.0 { NORM_CEILING / max_norm } else { 1.0 };
    let scaled = if scale == 1.0 {
        shifted
    } else {
        shifted.iter().map(|h| h.scale(real(scale))).collect()
    };
    Ok((scaled, shifts, scale))
}

impl ModelSpec {
    /// PEPS mode: explicit `Q_λ`, one per lattice support, Hermitian with
    /// spectrum in `(0, 1]` and mutually commuting.
    pub fn from_q(lattice: Lattice, q_ops: Vec<LocalOperator>) -> Result<Self> {
        check_aligned(&lattice, &q_ops, "Q")?;
        let mut q0 = 1.0f64;
        for (k, q) in q_ops.iter().enumerate() {
            let (vals, _) = eig_hermitian(q.matrix())?;
            let lo = vals[0];
            let hi = vals[vals.len() - 1];
            if lo <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "Q_{k} is not strictly positive (smallest eigenvalue {lo:e})"
                )));
            }
            if hi > 1.0 + 1e-12 {
                return Err(Error::InvalidModel(format!("Q_{k} exceeds the identity (largest eigenvalue {hi})")));
            }
            q0 = q0.min(lo);
        }
        check_commuting(&q_ops, COMMUTATION_TOL)?;
        Ok(Self { lattice, q_ops, q0, thermal: None })
    }

    /// Thermal mode: `Q_λ = exp(−β h_λ / 2)` after shifting each `h_λ` to be
    /// positive semidefinite and rescaling to `‖h_λ‖ < 1` (β compensates).
    pub fn thermal(lattice: Lattice, h_ops: Vec<LocalOperator>, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidModel(format!("beta must be finite and nonnegative, got {beta}")));
        }
        check_aligned(&lattice, &h_ops, "h")?;
        let (normalized, shifts, scale) = normalize_interactions(&h_ops, true)?;
        let eff_beta = beta / scale;
        let q_ops = normalized
            .iter()
            .map(|h| h.herm_exp(real(-eff_beta / 2.0)))
            .collect::<Result<Vec<_>>>()?;
        let mut spec = Self::from_q(lattice, q_ops)?;
        spec.thermal = Some(ThermalData { beta: eff_beta, input_beta: beta, h_ops: normalized, shifts, scale });
        Ok(spec)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn q_ops(&self) -> &[LocalOperator] {
        &self.q_ops
    }

    /// Smallest eigenvalue over all `Q_λ`, the tightest `q0` with `Q_λ ≥ q0 I`.
    pub fn q0(&self) -> f64 {
        self.q0
    }

    pub fn thermal_data(&self) -> Option<&ThermalData> {
        self.thermal.as_ref()
    }

    pub fn is_thermal(&self) -> bool {
        self.thermal.is_some()
    }

    pub fn n_supports(&self) -> usize {
        self.q_ops.len()
    }
}

/// Random commuting `Q_λ`: diagonal in a common product basis rotated by
/// one random unitary per vertex, with spectrum in `[q_min, 1]`.
pub fn random_commuting_spec<R: Rng>(rng: &mut R, lattice: Lattice, q_min: f64) -> Result<ModelSpec> {
    let d = lattice.local_dim();
    let rotations: Vec<CMat> =
        lattice.vertices().map(|_| crate::linop::random::unitary(rng, d)).collect();
    let mut q_ops = Vec::new();
    for support in lattice.supports() {
        let mut u = CMat::identity(1, 1);
        for &v in support {
            u = u.kronecker(&rotations[v]);
        }
        let dim = u.nrows();
        let diag = CVec::from_fn(dim, |_, _| real(rng.gen_range(q_min..=1.0)));
        let q = &u * CMat::from_diagonal(&diag) * u.adjoint();
        let q = (&q + q.adjoint()).scale(0.5);
        q_ops.push(LocalOperator::new(support.clone(), d, q)?);
    }
    ModelSpec::from_q(lattice, q_ops)
}

/// Unnormalized `⊗_μ |φ+⟩_μ` on the lattice (amplitude 1 where every pair
/// carries equal digits).
pub fn pair_product_vector(lat: &Lattice) -> Result<CVec> {
    let d = lat.local_dim();
    let n = lat.n_vertices();
    let dim = checked_dim(d, n)?;
    let mut v = CVec::zeros(dim);
    let mut digits = vec![0usize; n];
    for (idx, amp) in v.iter_mut().enumerate() {
        let mut rest = idx;
        for p in (0..n).rev() {
            digits[p] = rest % d;
            rest /= d;
        }
        if lat.pairs().iter().all(|&(a, b)| digits[a] == digits[b]) {
            *amp = ONE;
        }
    }
    Ok(v)
}

/// Normalized `∏ Q ⊗_μ |φ+⟩_μ` for an arbitrary operator list.
pub fn product_state(q_ops: &[LocalOperator], lat: &Lattice) -> Result<StateVector> {
    let mut v = pair_product_vector(lat)?;
    for q in q_ops {
        v = q.apply(&v, lat.n_vertices())?;
    }
    StateVector::new(v)
}

pub fn target_state(spec: &ModelSpec) -> Result<StateVector> {
    product_state(spec.q_ops(), spec.lattice())
}

/// Reduced density matrix on `keep` (sorted), tracing out the rest.
pub fn reduced_density(state: &StateVector, keep: &[usize], n_vertices: usize, d: usize) -> Result<DensityMatrix> {
    let dim = checked_dim(d, n_vertices)?;
    if state.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: state.dim() });
    }
    let all: Vec<usize> = (0..n_vertices).collect();
    let rest: Vec<usize> = all.iter().copied().filter(|v| !keep.contains(v)).collect();
    let inner = subset_offsets(&all, keep, d);
    let outer = subset_offsets(&all, &rest, d);
    let psi = state.amplitudes();
    let k = inner.len();
    let mut rho = CMat::zeros(k, k);
    for &o in &outer {
        for (i, &ii) in inner.iter().enumerate() {
            let a = psi[o + ii];
            if a == ZERO {
                continue;
            }
            for (j, &jj) in inner.iter().enumerate() {
                rho[(i, j)] += a * psi[o + jj].conj();
            }
        }
    }
    Ok(DensityMatrix { matrix: rho })
}

/// Reduced state on the system vertices.
pub fn trace_ancillas(state: &StateVector, lat: &Lattice) -> Result<DensityMatrix> {
    if !lat.has_ancillas() {
        return Err(Error::InvalidArgument("lattice has no ancilla vertices".into()));
    }
    reduced_density(state, &lat.system_vertices(), lat.n_vertices(), lat.local_dim())
}

/// Dense `Σ h_λ` on the system vertices only, relabelled to positions
/// `0..n_sys` in system-vertex order.
pub fn system_hamiltonian(h_ops: &[LocalOperator], lat: &Lattice) -> Result<CMat> {
    let sys = lat.system_vertices();
    let d = lat.local_dim();
    let dim = checked_dim(d, sys.len())?;
    let mut out = CMat::zeros(dim, dim);
    for h in h_ops {
        let local = h.relabel(|v| sys.iter().position(|&s| s == v).unwrap_or(usize::MAX))?;
        out += &local.embed_n(sys.len())?.matrix;
    }
    Ok(out)
}

/// `e^{−βH}/Z` for a dense Hamiltonian.
pub fn gibbs_state(h: &CMat, beta: f64) -> Result<DensityMatrix> {
    let rho = herm_exp(h, real(-beta))?;
    let z = rho.trace();
    Ok(DensityMatrix { matrix: rho / z })
}

/// `|x⟩ ↦ |xx⟩`, with each site's copy placed right after it (the
/// interleaved system/ancilla order of the thermal chain).
pub fn purify_classical(state: &CVec, local_dim: usize) -> Result<StateVector> {
    let d = local_dim;
    let n = (0..).find(|&k| d.pow(k) >= state.len()).unwrap_or(0) as usize;
    if d.pow(n as u32) != state.len() {
        return Err(Error::DimensionMismatch { expected: d.pow(n as u32), found: state.len() });
    }
    let dim = checked_dim(d, 2 * n)?;
    let mut out = CVec::zeros(dim);
    for (x, &amp) in state.iter().enumerate() {
        let mut idx = 0;
        for p in 0..n {
            let digit = (x / d.pow((n - 1 - p) as u32)) % d;
            idx = idx * d * d + digit * d + digit;
        }
        out[idx] = amp;
    }
    StateVector::new(out)
}

/// Classical Ising energy `E(σ) = Σ J_ij σ_i σ_j + Σ h_i σ_i` with
/// `|0⟩ ↦ σ = +1`, `|1⟩ ↦ σ = −1`; spin 0 is the most significant digit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalIsing {
    pub n_spins: usize,
    pub couplings: Vec<(usize, usize, f64)>,
    pub fields: Vec<f64>,
}

impl ClassicalIsing {
    pub fn new(n_spins: usize, couplings: Vec<(usize, usize, f64)>, fields: Vec<f64>) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidArgument("need at least one spin".into()));
        }
        if !fields.is_empty() && fields.len() != n_spins {
            return Err(Error::InvalidArgument(format!("{} fields for {n_spins} spins", fields.len())));
        }
        if let Some(&(i, j, _)) = couplings.iter().find(|&&(i, j, _)| i >= n_spins || j >= n_spins || i == j) {
            return Err(Error::InvalidArgument(format!("bad coupling ({i}, {j})")));
        }
        Ok(Self { n_spins, couplings, fields })
    }

    pub fn spin(&self, config: usize, i: usize) -> f64 {
        if (config >> (self.n_spins - 1 - i)) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn energy(&self, config: usize) -> f64 {
        let pair: f64 = self.couplings.iter().map(|&(i, j, c)| c * self.spin(config, i) * self.spin(config, j)).sum();
        let field: f64 = self.fields.iter().enumerate().map(|(i, h)| h * self.spin(config, i)).sum();
        pair + field
    }

    pub fn energies(&self) -> Vec<f64> {
        (0..1usize << self.n_spins).map(|x| self.energy(x)).collect()
    }
}

/// A classical energy function on `d^n` configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalEnergy {
    pub local_dim: usize,
    pub n_sites: usize,
    pub energies: Vec<f64>,
}

impl ClassicalEnergy {
    pub fn from_table(local_dim: usize, n_sites: usize, energies: Vec<f64>) -> Result<Self> {
        let dim = checked_dim(local_dim, n_sites)?;
        if energies.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: energies.len() });
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("non-finite energy".into()));
        }
        Ok(Self { local_dim, n_sites, energies })
    }

    pub fn from_ising(model: &ClassicalIsing) -> Self {
        Self { local_dim: 2, n_sites: model.n_spins, energies: model.energies() }
    }

    fn neighbours(&self, x: usize) -> Vec<usize> {
        let d = self.local_dim;
        let mut out = Vec::new();
        for p in 0..self.n_sites {
            let stride = d.pow((self.n_sites - 1 - p) as u32);
            let digit = (x / stride) % d;
            for value in 0..d {
                if value != digit {
                    out.push(x - digit * stride + value * stride);
                }
            }
        }
        out
    }
}

/// Continuous-time Markov generator, `dp/dt = S p` (columns sum to zero).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub matrix: DMatrix<f64>,
    pub beta: f64,
    pub energies: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Normalized Gibbs weights `e^{−βE}/Z`.
    pub fn gibbs(&self) -> Vec<f64> {
        let emin = self.energies.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = self.energies.iter().map(|e| (-self.beta * (e - emin)).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    /// `max |S_xy π_y − S_yx π_x|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let pi = self.gibbs();
        let n = self.dim();
        let mut r = 0.0f64;
        for x in 0..n {
            for y in 0..n {
                r = r.max((self.matrix[(x, y)] * pi[y] - self.matrix[(y, x)] * pi[x]).abs());
            }
        }
        r
    }

    pub fn max_column_sum(&self) -> f64 {
        self.matrix.column_iter().map(|c| c.sum().abs()).fold(0.0, f64::max)
    }

    /// Eigenvalues of `S` from a general (non-symmetric) eigensolver, sorted
    /// by real part descending. Imaginary parts are returned separately.
    pub fn spectrum(&self) -> (Vec<f64>, f64) {
        let eig = self.matrix.complex_eigenvalues();
        let mut re: Vec<f64> = eig.iter().map(|z| z.re).collect();
        let im = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        re.sort_by(|a, b| b.total_cmp(a));
        (re, im)
    }

    /// `Δ_stoch`: the second-smallest eigenvalue magnitude of `S`.
    pub fn stochastic_gap(&self) -> f64 {
        let (re, _) = self.spectrum();
        let mut mags: Vec<f64> = re.iter().map(|x| x.abs()).collect();
        mags.sort_by(f64::total_cmp);
        mags.get(1).copied().unwrap_or(0.0)
    }
}

/// Single-site-change Metropolis generator: rate `min(1, e^{−βΔE})` to every
/// configuration differing at one site, diagonal fixed by zero column sums.
pub fn metropolis_generator(energy: &ClassicalEnergy, beta: f64) -> GeneratorMatrix {
    let n = energy.energies.len();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for y in energy.neighbours(x) {
            let de = energy.energies[y] - energy.energies[x];
            let rate = if de <= 0.0 { 1.0 } else { (-beta * de).exp() };
            // transition x → y lands in row y, column x
            s[(y, x)] = rate;
        }
        let out: f64 = (0..n).filter(|&y| y != x).map(|y| s[(y, x)]).sum();
        s[(x, x)] = -out;
    }
    GeneratorMatrix { matrix: s, beta, energies: energy.energies.clone() }
}

/// `G = −e^{βH/2} S e^{−βH/2}`, Hermitian when `S` satisfies detailed
/// balance.
pub fn mc_hamiltonian(s: &GeneratorMatrix) -> Result<GlobalOperator> {
    let scale = s.matrix.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let residual = s.detailed_balance_residual();
    if residual > 1e-12 * scale {
        return Err(Error::DetailedBalance { residual });
    }
    let n = s.dim();
    let e = &s.energies;
    let g = CMat::from_fn(n, n, |x, y| real(-(s.beta * (e[x] - e[y]) / 2.0).exp() * s.matrix[(x, y)]));
    // remove the rounding-level asymmetry
    let g = (&g + g.adjoint()).scale(0.5);
    Ok(GlobalOperator::new(g))
}

/// The normalized `e^{−βH/2}|+⟩^{⊗n}` as a vector over configurations.
pub fn mc_ground_state(energies: &[f64], beta: f64) -> Result<StateVector> {
    let emin = energies.iter().copied().fold(f64::INFINITY, f64::min);
    StateVector::new(CVec::from_iterator(
        energies.len(),
        energies.iter().map(|e| real((-beta * (e - emin) / 2.0).exp())),
    ))
}

/// Outcome of the doubled-space experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoubledReport {
    /// Largest mismatch between the spectrum of `V G V†` on the image of `V`
    /// and `−spec(S)`.
    pub spectral_mismatch: f64,
    /// Fidelity of the lifted ground state with the purified Gibbs state.
    pub purified_fidelity: f64,
}

/// Lifts `G` through the isometry `V: |x⟩ ↦ |xx⟩` and compares with the
/// purified Gibbs state `Σ_x e^{−βE_x/2}|xx⟩`. This is one reading of the
/// symmetric-subspace statement: only the image of `V` is examined.
pub fn doubled_correspondence(s: &GeneratorMatrix, local_dim: usize) -> Result<DoubledReport> {
    let g = mc_hamiltonian(s)?;
    let n = s.dim();
    let columns: Vec<CVec> = (0..n)
        .map(|x| {
            let mut e = CVec::zeros(n);
            e[x] = ONE;
            purify_classical(&e, local_dim).map(StateVector::into_amplitudes)
        })
        .collect::<Result<_>>()?;
    let big = columns[0].len();
    let v = CMat::from_fn(big, n, |r, c| columns[c][r]);
    let lifted = &v * &g.matrix * v.adjoint();
    // restrict back to the image and compare spectra
    let restricted = v.adjoint() * &lifted * &v;
    let (g_vals, g_vecs) = eig_hermitian(&restricted)?;
    let (s_vals, _) = s.spectrum();
    let mut neg: Vec<f64> = s_vals.iter().map(|x| -x).collect();
    neg.sort_by(f64::total_cmp);
    let mismatch = g_vals.iter().zip(&neg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ground = StateVector::new(&v * g_vecs.column(0))?;
    let reference = purify_classical(mc_ground_state(&s.energies, s.beta)?.amplitudes(), local_dim)?;
    Ok(DoubledReport { spectral_mismatch: mismatch, purified_fidelity: ground.fidelity(&reference) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_chain;
    use crate::linop::{kron, max_abs_diff, pauli, pauli_string, I};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zz_chain(n_sites: usize, j: f64) -> (Lattice, Vec<LocalOperator>) {
        let lat = build_chain(n_sites, 2, true).unwrap();
        let h = lat
            .supports()
            .iter()
            .map(|s| LocalOperator::new(s.clone(), 2, pauli_string("ZZ").unwrap() * real(j)).unwrap())
            .collect();
        (lat, h)
    }

    /// Independent dense route: `(e^{−βH/2} ⊗ I_anc) |φ+⟩^{⊗n}`, building the
    /// system operator in system order and permuting to the interleaved layout.
    fn dense_thermal_oracle(h_sys: &CMat, beta: f64, n_sites: usize) -> CVec {
        let q = herm_exp(h_sys, real(-beta / 2.0)).unwrap();
        let dim_sys = 1usize << n_sites;
        let mut out = CVec::zeros(1 << (2 * n_sites));
        for x in 0..dim_sys {
            for y in 0..dim_sys {
                // entry Q_{yx} maps |x⟩_anc-matched input to |y⟩ on the system
                let mut idx = 0;
                for p in 0..n_sites {
                    let sys_bit = (y >> (n_sites - 1 - p)) & 1;
                    let anc_bit = (x >> (n_sites - 1 - p)) & 1;
                    idx = idx * 4 + sys_bit * 2 + anc_bit;
                }
                out[idx] += q[(y, x)];
            }
        }
        let norm = out.norm();
        out / real(norm)
    }

    #[test]
    fn identity_q_gives_pair_product() {
        let lat = build_chain(3, 2, true).unwrap();
        let q: Vec<LocalOperator> =
            lat.supports().iter().map(|s| LocalOperator::identity(s.clone(), 2).unwrap()).collect();
        let spec = ModelSpec::from_q(lat.clone(), q).unwrap();
        let state = target_state(&spec).unwrap();
        let pairs = StateVector::new(pair_product_vector(&lat).unwrap()).unwrap();
        assert!(state.distance(&pairs) < 1e-15);
        let (lat, h) = zz_chain(3, 1.0);
        let zero_beta = ModelSpec::thermal(lat, h, 0.0).unwrap();
        assert!(target_state(&zero_beta).unwrap().distance(&pairs) < 1e-15);
    }

    #[test]
    fn thermal_state_matches_dense_oracle() {
        let (lat, h) = zz_chain(2, 1.0);
        let beta = 1.0;
        let spec = ModelSpec::thermal(lat, h, beta).unwrap();
        let state = target_state(&spec).unwrap();
        let h_sys = pauli_string("ZZ").unwrap();
        let oracle = dense_thermal_oracle(&h_sys, beta, 2);
        assert!((state.amplitudes() - oracle).norm() < 1e-12);
    }

    #[test]
    fn thermal_normalization_is_recorded() {
        let (lat, h) = zz_chain(2, 1.0);
        let spec = ModelSpec::thermal(lat, h, 0.5).unwrap();
        let th = spec.thermal_data().unwrap();
        assert_eq!(th.shifts, vec![-1.0]);
        // shifted ZZ + 1 has norm 2
        assert!((th.scale - NORM_CEILING / 2.0).abs() < 1e-15);
        assert!((th.beta * th.scale - 0.5).abs() < 1e-15);
        assert!(op_norm(th.h_ops[0].matrix()) < 1.0);
        assert!((spec.q0() - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_q() {
        let lat = build_chain(2, 2, true).unwrap();
        let big = LocalOperator::new(vec![0, 2], 2, CMat::identity(4, 4) * real(1.5)).unwrap();
        assert!(ModelSpec::from_q(lat.clone(), vec![big]).is_err());
        let singular = LocalOperator::new(vec![0, 2], 2, pauli_string("ZI").unwrap() * real(0.5) + CMat::identity(4, 4) * real(0.5)).unwrap();
        assert!(ModelSpec::from_q(lat, vec![singular]).is_err());
    }

    #[test]
    fn rejects_non_commuting_q() {
        let lat = build_chain(3, 2, true).unwrap();
        let h = vec![
            LocalOperator::new(vec![0, 2], 2, pauli_string("ZZ").unwrap()).unwrap(),
            LocalOperator::new(vec![2, 4], 2, pauli_string("XX").unwrap()).unwrap(),
        ];
        assert!(matches!(ModelSpec::thermal(lat, h, 1.0), Err(Error::NonCommuting { .. })));
    }

    #[test]
    fn single_spin_gibbs() {
        let lat = build_chain(1, 2, true).unwrap().with_onsite_supports().unwrap();
        let h = vec![LocalOperator::new(vec![0], 2, pauli('Z').unwrap()).unwrap()];
        let spec = ModelSpec::thermal(lat.clone(), h, 1.0).unwrap();
        let rho = trace_ancillas(&target_state(&spec).unwrap(), &lat).unwrap();
        let e = std::f64::consts::E;
        let z = e + 1.0 / e;
        assert!((rho.matrix[(0, 0)].re - 1.0 / e / z).abs() < 1e-14);
        assert!((rho.matrix[(1, 1)].re - e / z).abs() < 1e-14);
        assert!(rho.matrix[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn zero_beta_reduced_state_is_maximally_mixed() {
        let (lat, h) = zz_chain(3, 0.7);
        let spec = ModelSpec::thermal(lat.clone(), h, 0.0).unwrap();
        let rho = trace_ancillas(&target_state(&spec).unwrap(), &lat).unwrap();
        assert!(max_abs_diff(&rho.matrix, &(CMat::identity(8, 8) / real(8.0))) < 1e-15);
    }

    #[test]
    fn ising_gibbs_recovery() {
        let (lat, h) = zz_chain(2, 1.0);
        let spec = ModelSpec::thermal(lat.clone(), h.clone(), 0.7).unwrap();
        let rho = trace_ancillas(&target_state(&spec).unwrap(), &lat).unwrap();
        let gibbs = gibbs_state(&system_hamiltonian(&h, &lat).unwrap(), 0.7).unwrap();
        assert!(rho.trace_norm_distance(&gibbs) <= 1e-10);
        assert!((rho.trace() - ONE).norm() < 1e-14);
        assert!(rho.min_eigenvalue().unwrap() > 0.0);
    }

    #[test]
    fn trace_ancillas_needs_ancillas() {
        let lat = build_chain(2, 2, false).unwrap();
        let state = StateVector::new(pair_product_vector(&lat).unwrap()).unwrap();
        assert!(trace_ancillas(&state, &lat).is_err());
    }

    #[test]
    fn purification_examples() {
        let zero = CVec::from_vec(vec![ONE, ZERO]);
        let p = purify_classical(&zero, 2).unwrap();
        assert_eq!(p.amplitudes()[0], ONE);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = CVec::from_vec(vec![real(s), real(s)]);
        let p = purify_classical(&plus, 2).unwrap();
        assert!((p.amplitudes()[0] - real(s)).norm() < 1e-15);
        assert!((p.amplitudes()[3] - real(s)).norm() < 1e-15);
        assert_eq!(p.amplitudes()[1], ZERO);
    }

    #[test]
    fn purification_reproduces_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = crate::linop::random::state(&mut rng, 4);
        let p = purify_classical(&psi, 2).unwrap();
        // system vertices are 0 and 2 in the interleaved layout
        let rho = reduced_density(&p, &[0, 2], 4, 2).unwrap();
        for x in 0..4 {
            assert!((rho.matrix[(x, x)].re - psi[x].norm_sqr()).abs() < 1e-14);
            for y in 0..4 {
                if x != y {
                    assert!(rho.matrix[(x, y)].norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn metropolis_single_spin_zero_beta() {
        let e = ClassicalEnergy::from_table(2, 1, vec![0.3, -0.4]).unwrap();
        let s = metropolis_generator(&e, 0.0);
        assert_eq!(s.matrix, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let g = mc_hamiltonian(&s).unwrap();
        assert!(max_abs_diff(&g.matrix, &s.matrix.map(|x| real(-x))) < 1e-15);
    }

    #[test]
    fn metropolis_low_temperature_suppresses_uphill() {
        let ising = ClassicalIsing::new(2, vec![(0, 1, -1.0)], vec![]).unwrap();
        let s = metropolis_generator(&ClassicalEnergy::from_ising(&ising), 50.0);
        // from the aligned state 00 (index 0) to 01 raises the energy by 2
        assert!(s.matrix[(1, 0)] < 1e-40);
        assert_eq!(s.matrix[(0, 1)], 1.0);
    }

    #[test]
    fn metropolis_stationary_is_gibbs() {
        let ising = ClassicalIsing::new(3, vec![(0, 1, 1.0), (1, 2, -0.5)], vec![0.2, 0.0, -0.3]).unwrap();
        let s = metropolis_generator(&ClassicalEnergy::from_ising(&ising), 0.5);
        let pi = nalgebra::DVector::from_vec(s.gibbs());
        assert!((&s.matrix * pi).norm() < 1e-14);
        assert!(s.max_column_sum() < 1e-14);
        assert!(s.detailed_balance_residual() < 1e-15);
        assert!(s.matrix.iter().enumerate().all(|(k, &x)| k % 9 == 0 || x >= 0.0));
    }

    #[test]
    fn mc_hamiltonian_single_spin() {
        let ising = ClassicalIsing::new(1, vec![], vec![1.0]).unwrap();
        let s = metropolis_generator(&ClassicalEnergy::from_ising(&ising), 1.0);
        let g = mc_hamiltonian(&s).unwrap();
        // E(0) = 1, E(1) = −1: rate 0→1 is 1, rate 1→0 is e^{−2}
        let e = std::f64::consts::E;
        let expected = CMat::from_row_slice(2, 2, &[real(1.0), real(-1.0 / e), real(-1.0 / e), real(1.0 / (e * e))]);
        assert!(max_abs_diff(&g.matrix, &expected) < 1e-15);
        let (vals, vecs) = g.eig().unwrap();
        assert!(vals[0].abs() < 1e-14);
        let ratio = vecs[(1, 0)] / vecs[(0, 0)];
        assert!((ratio - real(e)).norm() < 1e-12);
    }

    #[test]
    fn mc_hamiltonian_spectrum_matches_generator() {
        let ising = ClassicalIsing::new(2, vec![(0, 1, 0.8)], vec![0.3, -0.1]).unwrap();
        let s = metropolis_generator(&ClassicalEnergy::from_ising(&ising), 0.9);
        let g = mc_hamiltonian(&s).unwrap();
        let (g_vals, _) = g.eig().unwrap();
        let (s_vals, imag) = s.spectrum();
        assert!(imag < 1e-12);
        for (a, b) in g_vals.iter().zip(&s_vals) {
            assert!((a + b).abs() < 1e-9);
        }
        assert!((g_vals[1] - g_vals[0] - s.stochastic_gap()).abs() < 1e-9);
    }

    #[test]
    fn mc_hamiltonian_rejects_unbalanced_generator() {
        let e = ClassicalEnergy::from_table(2, 1, vec![0.0, 1.0]).unwrap();
        let mut s = metropolis_generator(&e, 1.0);
        s.matrix[(1, 0)] = 0.9;
        s.matrix[(0, 0)] = -0.9;
        assert!(matches!(mc_hamiltonian(&s), Err(Error::DetailedBalance { .. })));
    }

    #[test]
    fn doubled_experiment_on_two_spins() {
        let ising = ClassicalIsing::new(2, vec![(0, 1, 1.0)], vec![0.4, 0.0]).unwrap();
        let s = metropolis_generator(&ClassicalEnergy::from_ising(&ising), 0.8);
        let report = doubled_correspondence(&s, 2).unwrap();
        assert!(report.spectral_mismatch < 1e-9);
        assert!(report.purified_fidelity > 1.0 - 1e-10);
    }

    #[test]
    fn diagonal_observables_follow_gibbs_statistics() {
        let ising = ClassicalIsing::new(2, vec![(0, 1, 0.6)], vec![0.2, -0.5]).unwrap();
        let beta = 1.3;
        let ground = mc_ground_state(&ising.energies(), beta).unwrap();
        let s = metropolis_generator(&ClassicalEnergy::from_ising(&ising), beta);
        for (x, p) in s.gibbs().iter().enumerate() {
            assert!((ground.amplitudes()[x].norm_sqr() - p).abs() < 1e-14);
        }
    }

    #[test]
    fn state_serde_round_trip() {
        let v = StateVector::new(CVec::from_vec(vec![real(1.0), I])).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: StateVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn product_order_is_irrelevant(seed in any::<u64>(), n in 2usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lat = build_chain(n, 2, true).unwrap();
                let spec = random_commuting_spec(&mut rng, lat.clone(), 0.2).unwrap();
                let forward = target_state(&spec).unwrap();
                let mut reversed: Vec<LocalOperator> = spec.q_ops().to_vec();
                reversed.reverse();
                let backward = product_state(&reversed, &lat).unwrap();
                prop_assert!(forward.distance(&backward) < 1e-10);
            }

            #[test]
            fn thermal_reduction_is_gibbs(seed in any::<u64>(), n in 1usize..6, beta in 0.0f64..1.5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lat = build_chain(n, 2, true).unwrap().with_onsite_supports().unwrap();
                let h: Vec<LocalOperator> = lat
                    .supports()
                    .iter()
                    .map(|s| {
                        let m = if s.len() == 2 {
                            kron(&pauli('Z').unwrap(), &pauli('Z').unwrap()) * real(rng.gen_range(-1.0..1.0))
                        } else {
                            pauli('Z').unwrap() * real(rng.gen_range(-1.0..1.0))
                        };
                        LocalOperator::new(s.clone(), 2, m).unwrap()
                    })
                    .collect();
                let spec = ModelSpec::thermal(lat.clone(), h.clone(), beta).unwrap();
                let rho = trace_ancillas(&target_state(&spec).unwrap(), &lat).unwrap();
                let gibbs = gibbs_state(&system_hamiltonian(&h, &lat).unwrap(), beta).unwrap();
                prop_assert!(rho.trace_norm_distance(&gibbs) < 1e-10);
            }

            #[test]
            fn mc_gap_equals_stochastic_gap(seed in any::<u64>(), n in 1usize..4, beta in 0.0f64..1.5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let couplings = (0..n.saturating_sub(1)).map(|i| (i, i + 1, rng.gen_range(-1.0..1.0))).collect();
                let fields = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let ising = ClassicalIsing::new(n, couplings, fields).unwrap();
                let s = metropolis_generator(&ClassicalEnergy::from_ising(&ising), beta);
                let (vals, _) = mc_hamiltonian(&s).unwrap().eig().unwrap();
                prop_assert!((vals[1] - vals[0] - s.stochastic_gap()).abs() < 1e-9);
            }
        }
    }
}
