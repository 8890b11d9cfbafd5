//! Transfer matrices and renormalized propagation of generalized eigenvectors.
//!
//! With `xi_n = psi(x_n)` and `u_n = (xi_{n-1}, xi_n)`, the spectral equation
//! on the lattice is the first-order system `u_{n+1} = T_n(k) u_n` where
//!
//! ```text
//! T_n(k) = [ 0                     1                                             ]
//!          [ -s_n / s_{n-1}        sin(k (x_{n+1} - x_{n-1})) / s_{n-1} + alpha_n s_n / k ]
//! ```
//!
//! and `s_n = sin(k (x_{n+1} - x_n))`. Vectors are renormalized at every step
//! and the logarithm of the accumulated norm is carried separately, so growth
//! like `|Phi|^n` never overflows.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectralError};
use crate::lattice::LatticeRealization;

/// `|s_n(k)|` at or below this is treated as a hit on the singular set.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

pub type Vec2 = [Complex64; 2];
pub type Mat2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub fn mat_vec(m: &Mat2, v: &Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[inline]
pub fn vec_norm(v: &Vec2) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

/// Sine of the angle between the lines spanned by `a` and `b`:
/// `|a_0 b_1 - a_1 b_0| / (|a| |b|)`, which equals `sqrt(1 - |<a, b>|^2 / (|a|^2 |b|^2))`
/// without the cancellation.
pub fn direction_distance(a: &Vec2, b: &Vec2) -> f64 {
    (a[0] * b[1] - a[1] * b[0]).norm() / (vec_norm(a) * vec_norm(b))
}

/// `s_n(k) = sin(k (x_{n+1} - x_n))`, `n >= 0`.
#[inline]
pub fn s_n(lat: &LatticeRealization, n: usize, k: f64) -> f64 {
    (k * lat.spacing(n)).sin()
}

/// `c_n(k) = cos(k (x_{n+1} - x_n))`, `n >= 0`.
#[inline]
pub fn c_n(lat: &LatticeRealization, n: usize, k: f64) -> f64 {
    (k * lat.spacing(n)).cos()
}

fn checked_s(lat: &LatticeRealization, n: usize, k: f64) -> Result<f64> {
    let s = s_n(lat, n, k);
    if s.abs() <= SINGULAR_THRESHOLD {
        return Err(SpectralError::SingularSpacing { index: n, k, value: s });
    }
    Ok(s)
}

/// A complex number stored as `mantissa * exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScaled {
    pub mantissa: Complex64,
    pub log_scale: f64,
}

impl LogScaled {
    pub fn new(mantissa: Complex64, log_scale: f64) -> Self {
        LogScaled { mantissa, log_scale }
    }

    /// The plain value; may overflow for large scales.
    pub fn value(&self) -> Complex64 {
        self.mantissa * self.log_scale.exp()
    }

    /// `ln |value|`, finite even when the value itself would overflow.
    pub fn ln_abs(&self) -> f64 {
        self.mantissa.norm().ln() + self.log_scale
    }

    /// `self / other` as a plain number.
    pub fn ratio(&self, other: &LogScaled) -> Complex64 {
        self.mantissa / other.mantissa * (self.log_scale - other.log_scale).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub n: usize,
    pub k: f64,
    pub m: Mat2,
}

impl TransferMatrix {
    pub fn det(&self) -> Complex64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Closed-form inverse; fails if `s_n(k)` vanishes.
    pub fn inverse(&self) -> Result<Mat2> {
        let det = self.det();
        if det.norm() <= SINGULAR_THRESHOLD {
            return Err(SpectralError::SingularSpacing {
                index: self.n,
                k: self.k,
                value: det.norm(),
            });
        }
        let m = &self.m;
        Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
    }
}

#[inline]
fn build(s_prev: f64, s_cur: f64, long_sin: f64, alpha: f64, k: f64) -> Mat2 {
    [
        [ZERO, ONE],
        [
            Complex64::new(-s_cur / s_prev, 0.0),
            Complex64::new(long_sin / s_prev + alpha * s_cur / k, 0.0),
        ],
    ]
}

/// `T_n(k)` for `1 <= n <= n_max - 1`.
pub fn transfer_matrix(n: usize, k: f64, lat: &LatticeRealization) -> Result<TransferMatrix> {
    if n == 0 || n + 1 > lat.n_max() {
        return Err(SpectralError::OutOfRange(format!(
            "transfer matrix index {n} outside 1..={}",
            lat.n_max() - 1
        )));
    }
    let s_prev = checked_s(lat, n - 1, k)?;
    let s_cur = s_n(lat, n, k);
    let long_sin = (k * (lat.x(n + 1) - lat.x(n - 1))).sin();
    Ok(TransferMatrix {
        n,
        k,
        m: build(s_prev, s_cur, long_sin, lat.alpha(n), k),
    })
}

/// Streams `T_1, T_2, ...` reusing `s_{n-1}` from the previous step.
struct MatrixStream<'a> {
    lat: &'a LatticeRealization,
    k: f64,
    n: usize,
    s_prev: f64,
}

impl<'a> MatrixStream<'a> {
    fn starting_at(lat: &'a LatticeRealization, k: f64, n: usize) -> Self {
        MatrixStream {
            lat,
            k,
            n,
            s_prev: s_n(lat, n - 1, k),
        }
    }

    fn next_matrix(&mut self) -> Result<Mat2> {
        let (n, k, lat) = (self.n, self.k, self.lat);
        if self.s_prev.abs() <= SINGULAR_THRESHOLD {
            return Err(SpectralError::SingularSpacing {
                index: n - 1,
                k,
                value: self.s_prev,
            });
        }
        let s_cur = s_n(lat, n, k);
        let long_sin = (k * (lat.x(n + 1) - lat.x(n - 1))).sin();
        let m = build(self.s_prev, s_cur, long_sin, lat.alpha(n), k);
        self.s_prev = s_cur;
        self.n += 1;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Renormalized solution `u_n = unit_n * exp(logmag_n)` for `n = 1..=N`.
#[derive(Debug, Clone)]
pub struct SolutionTrace {
    pub k: f64,
    pub direction: Direction,
    unit: Vec<Vec2>,
    logmag: Vec<f64>,
}

impl SolutionTrace {
    fn with_capacity(k: f64, direction: Direction, n: usize) -> Self {
        SolutionTrace {
            k,
            direction,
            unit: Vec::with_capacity(n),
            logmag: Vec::with_capacity(n),
        }
    }

    /// Builds a trace from stored unit vectors and log-magnitudes
    /// (index 0 is `n = 1`). Vectors are renormalized on the way in.
    pub fn from_parts(k: f64, direction: Direction, vectors: Vec<Vec2>, logmag: Vec<f64>) -> Self {
        assert_eq!(vectors.len(), logmag.len());
        let mut t = SolutionTrace::with_capacity(k, direction, vectors.len());
        for (v, l) in vectors.into_iter().zip(logmag) {
            let r = vec_norm(&v);
            t.unit.push([v[0] / r, v[1] / r]);
            t.logmag.push(l + r.ln());
        }
        t
    }

    /// Number of stored vectors `N`.
    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    /// Unit vector `u_n / |u_n|`, `1 <= n <= N`.
    pub fn unit(&self, n: usize) -> &Vec2 {
        &self.unit[n - 1]
    }

    /// `ln |u_n|`, `1 <= n <= N`.
    pub fn logmag(&self, n: usize) -> f64 {
        self.logmag[n - 1]
    }

    pub fn logmags(&self) -> &[f64] {
        &self.logmag
    }

    pub fn units(&self) -> &[Vec2] {
        &self.unit
    }

    /// `xi_m` for `0 <= m <= N`, log-scaled.
    pub fn xi(&self, m: usize) -> LogScaled {
        if m < self.len() {
            LogScaled::new(self.unit[m][0], self.logmag[m])
        } else {
            let last = self.len() - 1;
            assert_eq!(m, self.len(), "xi index out of range");
            LogScaled::new(self.unit[last][1], self.logmag[last])
        }
    }

    /// Multiplies the whole solution by `factor`.
    pub fn scaled(&self, factor: Complex64) -> SolutionTrace {
        let phase = factor / factor.norm();
        let ln = factor.norm().ln();
        SolutionTrace {
            k: self.k,
            direction: self.direction,
            unit: self.unit.iter().map(|u| [u[0] * phase, u[1] * phase]).collect(),
            logmag: self.logmag.iter().map(|l| l + ln).collect(),
        }
    }

    /// The sub-trace `n = 1..=m`.
    pub fn truncated(&self, m: usize) -> SolutionTrace {
        SolutionTrace {
            k: self.k,
            direction: self.direction,
            unit: self.unit[..m].to_vec(),
            logmag: self.logmag[..m].to_vec(),
        }
    }

    /// Writes `n, u0_re, u0_im, u1_re, u1_im, logmag`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "u0_re", "u0_im", "u1_re", "u1_im", "logmag"])?;
        for (i, (u, l)) in self.unit.iter().zip(&self.logmag).enumerate() {
            wtr.write_record(&[
                (i + 1).to_string(),
                u[0].re.to_string(),
                u[0].im.to_string(),
                u[1].re.to_string(),
                u[1].im.to_string(),
                l.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn normalize(v: Vec2) -> Result<(Vec2, f64)> {
    let r = vec_norm(&v);
    if !(r > 0.0) || !r.is_finite() {
        return Err(SpectralError::ZeroVector);
    }
    Ok(([v[0] / r, v[1] / r], r.ln()))
}

fn check_len(lat: &LatticeRealization, n_steps: usize) -> Result<()> {
    if n_steps == 0 || n_steps + 1 > lat.n_max() {
        return Err(SpectralError::OutOfRange(format!(
            "trace length {n_steps} needs a lattice with n_max >= {} (have {})",
            n_steps + 1,
            lat.n_max()
        )));
    }
    Ok(())
}

/// Propagates `u_1` forward to `u_N`; the trace holds `n = 1..=N`.
pub fn propagate(k: f64, lat: &LatticeRealization, u1: Vec2, n_steps: usize) -> Result<SolutionTrace> {
    check_len(lat, n_steps)?;
    let (mut u, mut lm) = normalize(u1)?;
    let mut trace = SolutionTrace::with_capacity(k, Direction::Forward, n_steps);
    trace.unit.push(u);
    trace.logmag.push(lm);
    let mut stream = MatrixStream::starting_at(lat, k, 1);
    for _ in 1..n_steps {
        let m = stream.next_matrix()?;
        let (v, dl) = normalize(mat_vec(&m, &u))?;
        u = v;
        lm += dl;
        trace.unit.push(u);
        trace.logmag.push(lm);
    }
    Ok(trace)
}

/// Forward propagation from index `from` to `to` without storing the path.
/// Returns the unit vector at `to` and the accumulated `ln` growth.
pub fn advance(k: f64, lat: &LatticeRealization, u: Vec2, from: usize, to: usize) -> Result<(Vec2, f64)> {
    assert!(from >= 1 && to >= from && to <= lat.n_max());
    let (mut u, mut lm) = normalize(u)?;
    let mut stream = MatrixStream::starting_at(lat, k, from);
    for _ in from..to {
        let m = stream.next_matrix()?;
        let (v, dl) = normalize(mat_vec(&m, &u))?;
        u = v;
        lm += dl;
    }
    Ok((u, lm))
}

#[inline]
fn inverse_step(k: f64, lat: &LatticeRealization, n: usize, u_next: &Vec2) -> Result<Vec2> {
    // T_n^{-1} = [[t22, -1], [-t21, 0]] / (-t21), with -t21 = s_n / s_{n-1}
    let s_prev = checked_s(lat, n - 1, k)?;
    let s_cur = checked_s(lat, n, k)?;
    let long_sin = (k * (lat.x(n + 1) - lat.x(n - 1))).sin();
    let t22 = long_sin / s_prev + lat.alpha(n) * s_cur / k;
    let det = s_cur / s_prev;
    Ok([(u_next[0] * t22 - u_next[1]) / det, u_next[0]])
}

/// Applies `T_{N-1}^{-1}, ..., T_1^{-1}` to `u_N`; the trace holds `n = 1..=N`
/// in increasing order.
pub fn propagate_backward(k: f64, lat: &LatticeRealization, u_last: Vec2, n_steps: usize) -> Result<SolutionTrace> {
    check_len(lat, n_steps)?;
    let (mut u, mut lm) = normalize(u_last)?;
    let mut units = vec![[ZERO; 2]; n_steps];
    let mut logs = vec![0.0; n_steps];
    units[n_steps - 1] = u;
    logs[n_steps - 1] = lm;
    for n in (1..n_steps).rev() {
        let (v, dl) = normalize(inverse_step(k, lat, n, &u)?)?;
        u = v;
        lm += dl;
        units[n - 1] = u;
        logs[n - 1] = lm;
    }
    Ok(SolutionTrace {
        k,
        direction: Direction::Backward,
        unit: units,
        logmag: logs,
    })
}

/// Backward propagation from index `from` down to `to` without storing.
pub fn retreat(k: f64, lat: &LatticeRealization, u: Vec2, from: usize, to: usize) -> Result<(Vec2, f64)> {
    assert!(to >= 1 && from >= to && from <= lat.n_max() - 1);
    let (mut u, mut lm) = normalize(u)?;
    for n in (to..from).rev() {
        let (v, dl) = normalize(inverse_step(k, lat, n, &u)?)?;
        u = v;
        lm += dl;
    }
    Ok((u, lm))
}

/// One value of the reconstructed continuum solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiSample {
    pub x: f64,
    pub value: LogScaled,
}

/// Evaluates `psi(x)` on `[x_0, x_N]` from the lattice values:
/// `psi(x) = (xi_n sin(k (x_{n+1} - x)) + xi_{n+1} sin(k (x - x_n))) / s_n`.
pub fn reconstruct_psi(
    trace: &SolutionTrace,
    k: f64,
    lat: &LatticeRealization,
    grid: &[f64],
) -> Result<Vec<PsiSample>> {
    let n_top = trace.len();
    let x_end = lat.x(n_top);
    grid.iter()
        .map(|&x| {
            if !(x >= 0.0 && x <= x_end) {
                return Err(SpectralError::OutOfRange(format!(
                    "x={x} outside the covered range [0, {x_end}]"
                )));
            }
            // interval index: largest n with x_n <= x, capped at N - 1
            let n = lat.centres()[..n_top].partition_point(|&c| c <= x).min(n_top - 1);
            let s = checked_s(lat, n, k)?;
            let u = trace.unit(n + 1);
            let left = (k * (lat.x(n + 1) - x)).sin();
            let right = (k * (x - lat.x(n))).sin();
            Ok(PsiSample {
                x,
                value: LogScaled::new((u[0] * left + u[1] * right) / s, trace.logmag(n + 1)),
            })
        })
        .collect()
}

/// `psi(0)` and `psi'(0) = k (xi_1 - xi_0 c_0) / s_0`, sharing the scale of `u_1`.
pub fn boundary_values(trace: &SolutionTrace, k: f64, lat: &LatticeRealization) -> Result<(Complex64, Complex64)> {
    let s0 = checked_s(lat, 0, k)?;
    let c0 = c_n(lat, 0, k);
    let u = trace.unit(1);
    Ok((u[0], k * (u[1] - u[0] * c0) / s0))
}

/// Discrete Wronskian `(xi_n eta_{n+1} - xi_{n+1} eta_n) / s_n(k)` for
/// `0 <= n <= N - 1`. It does not depend on `n`.
pub fn discrete_wronskian(
    a: &SolutionTrace,
    b: &SolutionTrace,
    k: f64,
    lat: &LatticeRealization,
    n: usize,
) -> Result<LogScaled> {
    if n + 1 > a.len().min(b.len()) {
        return Err(SpectralError::OutOfRange(format!(
            "wronskian index {n} beyond the shared trace range"
        )));
    }
    let s = checked_s(lat, n, k)?;
    let (ua, ub) = (a.unit(n + 1), b.unit(n + 1));
    let det = ua[0] * ub[1] - ua[1] * ub[0];
    Ok(LogScaled::new(det / s, a.logmag(n + 1) + b.logmag(n + 1)))
}

/// `sum_{n=1}^{N} ln|det T_n(k)|`, to be compared with `ln|s_N / s_0|`.
pub fn log_det_product(k: f64, lat: &LatticeRealization, n_steps: usize) -> Result<f64> {
    let mut total = 0.0;
    for n in 1..=n_steps {
        total += transfer_matrix(n, k, lat)?.det().norm().ln();
    }
    Ok(total)
}

/// Relative residual of `u_{n+1} = T_n u_n` at index `n`, evaluated on the
/// unit vectors with the scale difference folded in.
pub fn recurrence_residual(trace: &SolutionTrace, lat: &LatticeRealization, n: usize) -> Result<f64> {
    let t = transfer_matrix(n, trace.k, lat)?;
    let ratio = (trace.logmag(n) - trace.logmag(n + 1)).exp();
    let pred = mat_vec(&t.m, trace.unit(n));
    let pred = [pred[0] * ratio, pred[1] * ratio];
    let next = trace.unit(n + 1);
    let diff = [next[0] - pred[0], next[1] - pred[1]];
    Ok(vec_norm(&diff) / vec_norm(&pred).max(1.0))
}
