//! Schedules `f: [0,1] → [0,1]` that reparameterize a Hamiltonian path.
//!
//! The Gevrey schedule is the normalized primitive of the bump
//! `f_α(t) = exp(−1/((1−t)t)^{1/α})`, all of whose derivatives vanish at both
//! endpoints.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Gevrey,
    Linear,
    Table,
}

/// Exponents below this underflow to subnormals; the weight is 0 there.
const LOG_MIN_POSITIVE: f64 = -708.396_418_532_264;

/// The unnormalized Gevrey bump `f_α(t)`, exactly 0 outside `(0,1)` and
/// wherever it would underflow.
pub fn gevrey_weight(alpha: f64, t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let x = ((1.0 - t) * t).powf(1.0 / alpha);
    if x == 0.0 {
        return 0.0;
    }
    let exponent = -1.0 / x;
    if exponent < LOG_MIN_POSITIVE {
        0.0
    } else {
        exponent.exp()
    }
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let pair = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive bisection on the Gauss–Kronrod 7/15 pair. Returns the integral
/// and the accumulated error estimate.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> (f64, f64) {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
        let (value, err) = gk15(f, a, b);
        if err <= tol || depth >= 60 || b - a <= f64::EPSILON * a.abs().max(1e-300) {
            return (value, err);
        }
        let m = 0.5 * (a + b);
        let (l, el) = rec(f, a, m, 0.5 * tol, depth + 1);
        let (r, er) = rec(f, m, b, 0.5 * tol, depth + 1);
        (l + r, el + er)
    }
    if b <= a {
        return (0.0, 0.0);
    }
    rec(f, a, b, abs_tol, 0)
}

const CELLS: usize = 1024;
const CELL_TOL: f64 = 1e-19;

/// Cumulative integrals of the bump on a uniform grid over `[0, 1/2]`.
#[derive(Debug)]
struct GevreyTable {
    alpha: f64,
    cumulative: Vec<f64>,
    half: f64,
    error: f64,
}

impl GevreyTable {
    fn build(alpha: f64) -> Self {
        let w = |t| gevrey_weight(alpha, t);
        let width = 0.5 / CELLS as f64;
        let mut cumulative = Vec::with_capacity(CELLS + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        let mut error = 0.0;
        for k in 0..CELLS {
            let (v, e) = integrate(&w, k as f64 * width, (k + 1) as f64 * width, CELL_TOL);
            acc += v;
            error += e;
            cumulative.push(acc);
        }
        Self { alpha, half: acc, cumulative, error }
    }

    /// `∫₀^s f_α` for `s ∈ [0, 1/2]`.
    fn primitive(&self, s: f64) -> f64 {
        let width = 0.5 / CELLS as f64;
        let k = ((s / width) as usize).min(CELLS - 1);
        let start = k as f64 * width;
        let (rest, _) = integrate(&|t| gevrey_weight(self.alpha, t), start, s, CELL_TOL);
        self.cumulative[k] + rest
    }

    fn normalization(&self) -> f64 {
        2.0 * self.half
    }

    /// `f(s)` for `s ≤ 1/2`; `f(1/2) = 1/2` exactly.
    fn lower(&self, s: f64) -> f64 {
        if s >= 0.5 {
            return 0.5;
        }
        self.primitive(s) / self.normalization()
    }
}

fn gevrey_table(alpha: f64) -> Arc<GevreyTable> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<GevreyTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard.entry(alpha.to_bits()).or_insert_with(|| Arc::new(GevreyTable::build(alpha))).clone()
}

#[derive(Debug, Clone)]
enum Inner {
    Gevrey(Arc<GevreyTable>),
    Linear,
    Table(Arc<Vec<(f64, f64)>>),
}

/// An immutable schedule; cheap to clone.
#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ScheduleKind,
    alpha: f64,
    inner: Inner,
}

impl Schedule {
    pub fn gevrey(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("Gevrey alpha must be positive, got {alpha}")));
        }
        let table = gevrey_table(alpha);
        if !(table.half > 0.0) {
            return Err(Error::Numerical(format!("Gevrey normalization vanished for alpha {alpha}")));
        }
        Ok(Self { kind: ScheduleKind::Gevrey, alpha, inner: Inner::Gevrey(table) })
    }

    pub fn linear() -> Self {
        Self { kind: ScheduleKind::Linear, alpha: 0.0, inner: Inner::Linear }
    }

    /// Piecewise-linear interpolation of `(s, f(s))` knots. Knots must start
    /// at `(0,0)`, end at `(1,1)`, have strictly increasing `s` and
    /// nondecreasing `f`.
    pub fn from_table(points: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |msg: String| Err(Error::ScheduleTable(msg));
        if points.len() < 2 {
            return bad("need at least two knots".into());
        }
        if points.iter().any(|(s, f)| !s.is_finite() || !f.is_finite()) {
            return bad("non-finite entry".into());
        }
        if points[0] != (0.0, 0.0) {
            return bad(format!("first knot must be (0, 0), got {:?}", points[0]));
        }
        if points[points.len() - 1] != (1.0, 1.0) {
            return bad(format!("last knot must be (1, 1), got {:?}", points[points.len() - 1]));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!("s not strictly increasing at {}", w[1].0));
            }
            if w[1].1 < w[0].1 {
                return bad(format!("f decreases at s = {}", w[1].0));
            }
        }
        Ok(Self { kind: ScheduleKind::Table, alpha: 0.0, inner: Inner::Table(Arc::new(points)) })
    }

    /// Two-column CSV `s,f`; a single non-numeric header line is allowed.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut points = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::ScheduleTable(e.to_string()))?;
            if record.len() != 2 {
                return Err(Error::ScheduleTable(format!("line {}: expected 2 columns", line + 1)));
            }
            let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
            match parsed {
                (Ok(s), Ok(f)) => points.push((s, f)),
                _ if line == 0 => continue,
                _ => return Err(Error::ScheduleTable(format!("line {}: not numeric", line + 1))),
            }
        }
        Self::from_table(points)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::ScheduleTable(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Gevrey exponent; 0 for the other kinds.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `∫₀¹ f_α` for Gevrey schedules.
    pub fn normalization(&self) -> Option<f64> {
        match &self.inner {
            Inner::Gevrey(t) => Some(t.normalization()),
            _ => None,
        }
    }

    /// Accumulated quadrature error estimate of the cached table, relative
    /// to the normalization.
    pub fn table_error(&self) -> f64 {
        match &self.inner {
            Inner::Gevrey(t) => t.error / t.normalization(),
            _ => 0.0,
        }
    }

    /// `f(s)`, rejecting `s` outside `[0,1]`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!("schedule argument {s} outside [0, 1]")));
        }
        Ok(self.pair(s).0)
    }

    /// `f(s)` with `s` clamped into `[0,1]`.
    pub fn at(&self, s: f64) -> f64 {
        self.pair(s.clamp(0.0, 1.0)).0
    }

    /// `(f(s), 1 − f(s))`, each computed without cancellation where possible.
    fn pair(&self, s: f64) -> (f64, f64) {
        if s <= 0.0 {
            return (0.0, 1.0);
        }
        if s >= 1.0 {
            return (1.0, 0.0);
        }
        match &self.inner {
            Inner::Gevrey(table) => {
                if s <= 0.5 {
                    let v = table.lower(s);
                    (v, 1.0 - v)
                } else {
                    let c = table.lower(1.0 - s);
                    (1.0 - c, c)
                }
            }
            Inner::Linear => (s, 1.0 - s),
            Inner::Table(points) => {
                let k = points.partition_point(|&(x, _)| x <= s).clamp(1, points.len() - 1);
                let (x0, y0) = points[k - 1];
                let (x1, y1) = points[k];
                let v = y0 + (y1 - y0) * (s - x0) / (x1 - x0);
                (v, 1.0 - v)
            }
        }
    }

    /// `f'(s)`; one-sided at table knots.
    pub fn derivative(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match &self.inner {
            Inner::Gevrey(table) => gevrey_weight(self.alpha, s) / table.normalization(),
            Inner::Linear => 1.0,
            Inner::Table(points) => {
                let k = points.partition_point(|&(x, _)| x <= s).clamp(1, points.len() - 1);
                let (x0, y0) = points[k - 1];
                let (x1, y1) = points[k];
                (y1 - y0) / (x1 - x0)
            }
        }
    }
}

/// The Gevrey schedule value `f(s)` for exponent `alpha`.
pub fn gevrey_f(alpha: f64, s: f64) -> Result<f64> {
    Schedule::gevrey(alpha)?.eval(s)
}

/// `f(s)` computed directly, without the cached table, at quadrature
/// tolerance `tol` relative to the normalization. Returns the value and the
/// propagated error estimate.
pub fn gevrey_f_direct(alpha: f64, s: f64, tol: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("schedule argument {s} outside [0, 1]")));
    }
    let w = |t| gevrey_weight(alpha, t);
    let (z, ez) = integrate(&w, 0.0, 1.0, 1e-3 * tol);
    let abs_tol = tol * z;
    let (v, ev) = integrate(&w, 0.0, s, abs_tol);
    let value = v / z;
    Ok((value, ev / z + value * ez / z))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `k`-th central difference quotients of `f` at `s = h` and `s = 1 − h`,
/// with stencil spacing `h / k` so every sample stays inside `(0, 1)`.
/// For `k = 0` the values are `f(h)` and `1 − f(1 − h)`.
pub fn endpoint_flatness(schedule: &Schedule, k: usize, h: f64) -> Result<[f64; 2]> {
    if k > 6 {
        return Err(Error::InvalidArgument(format!("difference order {k} > 6")));
    }
    if !(h > 0.0 && h <= 0.05) {
        return Err(Error::InvalidArgument(format!("step {h} outside (0, 0.05]")));
    }
    if k == 0 {
        return Ok([schedule.pair(h).0, schedule.pair(1.0 - h).1]);
    }
    let delta = h / k as f64;
    let quotient = |centre: f64, upper: bool| {
        let mut acc = 0.0;
        for i in 0..=k {
            let x = centre + (k as f64 / 2.0 - i as f64) * delta;
            let (f, c) = schedule.pair(x);
            // differences of 1 − f equal minus those of f for k ≥ 1
            let v = if upper { -c } else { f };
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binomial(k, i) * v;
        }
        (acc / delta.powi(k as i32)).abs()
    };
    Ok([quotient(h, false), quotient(1.0 - h, true)])
}
