//! Finite sections of the Weyl-function Jacobi matrix `M(lambda)` and of
//! `B_alpha = diag(-alpha_n)`, and a gap diagnostic built on them.
//!
//! Finite sections cannot certify essential spectrum; [`gap_scan`] reports
//! numerical evidence only.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectralError};
use crate::lattice::{realize_lattice, LatticeRealization, ModelParams, PerturbationKind};
use crate::transfer::{c_n, s_n};

/// Denominators at or below this put `k` on the singular set.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Smallest `|eigenvalue|` below this at every section size flags a candidate.
pub const CANDIDATE_THRESHOLD: f64 = 1e-6;
/// Relative change of the distance between the two largest sections
/// accepted as stabilized.
pub const STABILIZATION_TOL: f64 = 0.1;

/// Real symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

/// `N x N` section of `M(lambda)` at `k = sqrt(lambda)` and boundary parameter `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiSection {
    pub n: usize,
    pub k: f64,
    pub kappa: f64,
    /// `b_1 .. b_N`
    pub diag: Vec<f64>,
    /// `a_1 .. a_{N-1}`
    pub offdiag: Vec<f64>,
}

fn singular(which: String, k: f64) -> SpectralError {
    SpectralError::SingularSetHit { which, k }
}

/// `s_0 cos(kappa) + k c_0 sin(kappa)`, the boundary denominator.
pub fn boundary_denominator(k: f64, kappa: f64, lat: &LatticeRealization) -> f64 {
    s_n(lat, 0, k) * kappa.cos() + k * c_n(lat, 0, k) * kappa.sin()
}

/// Entries `a_n = -k/s_n` and `b_n = k (c_n/s_n + c_{n-1}/s_{n-1})`, with the
/// boundary row `b_1 = k (c_0 cos - k s_0 sin)/(s_0 cos + k c_0 sin) + k c_1/s_1`.
pub fn weyl_section(k: f64, kappa: f64, lat: &LatticeRealization, n: usize) -> Result<JacobiSection> {
    if n == 0 || n + 1 > lat.n_max() {
        return Err(SpectralError::OutOfRange(format!(
            "section size {n} needs 1 <= N <= n_max - 1 = {}",
            lat.n_max().saturating_sub(1)
        )));
    }
    let mut ratio = Vec::with_capacity(n + 1); // c_m / s_m
    let mut s = Vec::with_capacity(n + 1);
    for m in 0..=n {
        let sm = s_n(lat, m, k);
        if sm.abs() <= SINGULAR_TOL {
            return Err(singular(format!("s_{m}"), k));
        }
        s.push(sm);
        ratio.push(c_n(lat, m, k) / sm);
    }
    let den = boundary_denominator(k, kappa, lat);
    if den.abs() <= SINGULAR_TOL {
        return Err(singular("s_0 cos(kappa) + k c_0 sin(kappa)".into(), k));
    }
    let (s0, c0) = (s[0], c_n(lat, 0, k));
    let mut diag = Vec::with_capacity(n);
    diag.push(k * (c0 * kappa.cos() - k * s0 * kappa.sin()) / den + k * ratio[1]);
    for m in 2..=n {
        diag.push(k * (ratio[m] + ratio[m - 1]));
    }
    let offdiag = (1..n).map(|m| -k / s[m]).collect();
    Ok(JacobiSection {
        n,
        k,
        kappa,
        diag,
        offdiag,
    })
}

/// `diag(-alpha_1, ..., -alpha_N)`.
pub fn b_operator_section(alpha: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(SpectralError::InvalidParameter("section size must be positive".into()));
    }
    if n > alpha.len() {
        return Err(SpectralError::OutOfRange(format!(
            "section size {n} exceeds the {} available strengths",
            alpha.len()
        )));
    }
    Ok(alpha[..n].iter().map(|a| -a).collect())
}

/// Section of `B_alpha - M(lambda)`.
pub fn b_minus_m(section: &JacobiSection, b_diag: &[f64]) -> Tridiagonal {
    assert_eq!(section.diag.len(), b_diag.len());
    Tridiagonal {
        diag: b_diag.iter().zip(&section.diag).map(|(b, m)| b - m).collect(),
        offdiag: section.offdiag.iter().map(|a| -a).collect(),
    }
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Leading `m x m` block.
    pub fn leading(&self, m: usize) -> Tridiagonal {
        Tridiagonal {
            diag: self.diag[..m].to_vec(),
            offdiag: self.offdiag[..m.saturating_sub(1)].to_vec(),
        }
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    pub fn count_below(&self, x: f64) -> usize {
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            let qq = if q == 0.0 { tiny } else { q };
            q = self.diag[i] - x - self.offdiag[i - 1] * self.offdiag[i - 1] / qq;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.offdiag[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `j`-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        assert!(j < self.len());
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        while hi - lo > 4.0 * f64::EPSILON * scale {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// All eigenvalues in increasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.eigenvalue(j)).collect()
    }

    /// The eigenvalue closest to zero and its index in increasing order.
    pub fn smallest_abs_eigenvalue(&self) -> (f64, usize) {
        let neg = self.count_below(0.0);
        let mut best = None;
        for j in [neg.checked_sub(1), (neg < self.len()).then_some(neg)]
            .into_iter()
            .flatten()
        {
            let e = self.eigenvalue(j);
            if best.map_or(true, |(b, _): (f64, usize)| e.abs() < b.abs()) {
                best = Some((e, j));
            }
        }
        best.expect("non-empty matrix")
    }

    /// Unit eigenvector for an eigenvalue estimate, by inverse iteration.
    pub fn eigenvector(&self, eigenvalue: f64) -> Vec<f64> {
        let n = self.len();
        let (lo, hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        let shift = eigenvalue + 1e3 * f64::EPSILON * scale;
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        for _ in 0..4 {
            v = self.solve_shifted(shift, &v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Solves `(T - shift) x = rhs` by Gaussian elimination with partial pivoting.
    fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        if n == 1 {
            let d = self.diag[0] - shift;
            return vec![rhs[0] / if d == 0.0 { f64::EPSILON } else { d }];
        }
        // row i holds columns (i, i+1, i+2) in (d, u, u2) after elimination
        let mut d: Vec<f64> = self.diag.iter().map(|x| x - shift).collect();
        let mut u: Vec<f64> = self.offdiag.clone();
        u.push(0.0);
        let mut u2 = vec![0.0; n];
        let l = &self.offdiag;
        let mut b = rhs.to_vec();
        for i in 0..n - 1 {
            if l[i].abs() > d[i].abs() {
                let (di, ui) = (d[i], u[i]);
                d[i] = l[i];
                u[i] = d[i + 1];
                u2[i] = u[i + 1];
                b.swap(i, i + 1);
                let m = di / d[i];
                d[i + 1] = ui - m * u[i];
                u[i + 1] = -m * u2[i];
                b[i + 1] -= m * b[i];
            } else {
                let piv = if d[i] == 0.0 { f64::EPSILON } else { d[i] };
                let m = l[i] / piv;
                d[i + 1] -= m * u[i];
                b[i + 1] -= m * b[i];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = b[i];
            if i + 1 < n {
                acc -= u[i] * x[i + 1];
            }
            if i + 2 < n {
                acc -= u2[i] * x[i + 2];
            }
            let piv = if d[i] == 0.0 { f64::EPSILON } else { d[i] };
            x[i] = acc / piv;
        }
        x
    }

    /// `|T v - lambda v|`.
    pub fn residual(&self, lambda: f64, v: &[f64]) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut r = (self.diag[i] - lambda) * v[i];
                if i > 0 {
                    r += self.offdiag[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    r += self.offdiag[i] * v[i + 1];
                }
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Fraction of the eigenvector's squared mass in the last quarter of the section.
pub fn tail_mass(v: &[f64]) -> f64 {
    let start = v.len() - v.len() / 4;
    v[start..].iter().map(|x| x * x).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>()
}

/// A `k` where one of the singular-set denominators vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub k: f64,
    pub which: String,
    pub residual: f64,
}

fn bracket_roots(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut a = lo;
    let mut fa = f(a);
    while a < hi {
        let b = (a + step).min(hi);
        let fb = f(b);
        if fa == 0.0 {
            out.push(a);
        } else if fa * fb < 0.0 {
            let (mut x, mut y, mut fx) = (a, b, fa);
            while y - x > 1e-13 {
                let m = 0.5 * (x + y);
                let fm = f(m);
                if (fm < 0.0) == (fx < 0.0) {
                    x = m;
                    fx = fm;
                } else {
                    y = m;
                }
            }
            out.push(0.5 * (x + y));
        }
        a = b;
        fa = fb;
    }
    out
}

/// Roots in `[k_lo, k_hi]` of `s_n(k)` for `n < n_terms` and of the boundary
/// denominator, bracketed on a grid and refined by bisection.
pub fn singular_set_scan(
    k_lo: f64,
    k_hi: f64,
    kappa: f64,
    lat: &LatticeRealization,
    grid_step: f64,
    n_terms: usize,
) -> Result<Vec<SingularPoint>> {
    if !(grid_step > 0.0) || !(k_hi > k_lo) {
        return Err(SpectralError::InvalidParameter(format!(
            "singular-set scan needs k_lo < k_hi and a positive step (got [{k_lo}, {k_hi}], {grid_step})"
        )));
    }
    if n_terms > lat.n_max() {
        return Err(SpectralError::OutOfRange(format!(
            "{n_terms} spacings requested, lattice has {}",
            lat.n_max()
        )));
    }
    let mut out: Vec<SingularPoint> = (0..n_terms)
        .into_par_iter()
        .flat_map_iter(|m| {
            let f = move |k: f64| s_n(lat, m, k);
            bracket_roots(&f, k_lo, k_hi, grid_step)
                .into_iter()
                .map(move |k| SingularPoint {
                    k,
                    which: format!("s_{m}"),
                    residual: f(k).abs(),
                })
        })
        .collect();
    let g = |k: f64| boundary_denominator(k, kappa, lat);
    out.extend(
        bracket_roots(&g, k_lo, k_hi, grid_step)
            .into_iter()
            .map(|k| SingularPoint {
                k,
                which: "boundary".into(),
                residual: g(k).abs(),
            }),
    );
    out.sort_by(|a, b| a.k.total_cmp(&b.k));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScanPoint {
    pub lambda: f64,
    /// Smallest `|eigenvalue|` for each section size.
    pub distances: Vec<f64>,
    /// Relative change between the two largest sections.
    pub relative_change: f64,
    pub stabilized: bool,
    /// Below the threshold at every size with an eigenvector that decays
    /// along the largest section.
    pub flagged: bool,
    /// Tail mass of the eigenvector of the largest section.
    pub tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScanResult {
    pub section_sizes: Vec<usize>,
    pub kappa: f64,
    pub threshold: f64,
    pub points: Vec<GapScanPoint>,
    /// Grid energies on the singular set, with the offending denominator.
    pub dropped: Vec<(f64, String)>,
}

impl GapScanResult {
    /// Writes `lambda, N, min_abs_eigenvalue, flagged`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["lambda", "N", "min_abs_eigenvalue", "flagged"])?;
        for p in &self.points {
            for (n, d) in self.section_sizes.iter().zip(&p.distances) {
                wtr.write_record(&[
                    p.lambda.to_string(),
                    n.to_string(),
                    d.to_string(),
                    p.flagged.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `dist(0, spec(B_alpha - M(lambda)))` on sections of a fixed lattice.
pub fn section_distances(k: f64, kappa: f64, lat: &LatticeRealization, sizes: &[usize]) -> Result<(Vec<f64>, f64)> {
    let top = *sizes.last().expect("non-empty sizes");
    let m = weyl_section(k, kappa, lat, top)?;
    let b = b_operator_section(lat.strengths(), top)?;
    let full = b_minus_m(&m, &b);
    let mut out = Vec::with_capacity(sizes.len());
    let mut tail = 1.0;
    for &n in sizes {
        let t = full.leading(n);
        let (e, _) = t.smallest_abs_eigenvalue();
        out.push(e.abs());
        if n == top {
            tail = tail_mass(&t.eigenvector(e));
        }
    }
    Ok((out, tail))
}

pub fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpectralError::InvalidParameter(format!(
            "section sizes must be positive and strictly increasing, got {sizes:?}"
        )));
    }
    Ok(())
}

/// For each `lambda`, the distance from 0 to the spectrum of sections of
/// `B_alpha - M(lambda)` at every size. Singular-set energies are dropped.
pub fn gap_scan(
    params: &ModelParams,
    kind: PerturbationKind,
    kappa: f64,
    lambdas: &[f64],
    sizes: &[usize],
) -> Result<GapScanResult> {
    validate_sizes(sizes)?;
    params.validate()?;
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(SpectralError::InvalidParameter(format!(
            "energies must be positive, got {l}"
        )));
    }
    let lat = realize_lattice(params, kind, sizes.last().unwrap() + 1)?;
    let results: Vec<std::result::Result<GapScanPoint, (f64, String)>> = lambdas
        .par_iter()
        .map(|&lambda| match section_distances(lambda.sqrt(), kappa, &lat, sizes) {
            Ok((distances, tail)) => {
                let n = distances.len();
                let relative_change = if n >= 2 {
                    (distances[n - 1] - distances[n - 2]).abs() / distances[n - 2].max(f64::MIN_POSITIVE)
                } else {
                    0.0
                };
                let flagged = distances.iter().all(|d| *d < CANDIDATE_THRESHOLD) && tail < 1e-3;
                Ok(GapScanPoint {
                    lambda,
                    distances,
                    relative_change,
                    stabilized: relative_change < STABILIZATION_TOL,
                    flagged,
                    tail_mass: tail,
                })
            }
            Err(SpectralError::SingularSetHit { which, .. }) => Err((lambda, which)),
            Err(e) => Err((lambda, e.to_string())),
        })
        .collect();
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(d) => dropped.push(d),
        }
    }
    Ok(GapScanResult {
        section_sizes: sizes.to_vec(),
        kappa,
        threshold: CANDIDATE_THRESHOLD,
        points,
        dropped,
    })
}
