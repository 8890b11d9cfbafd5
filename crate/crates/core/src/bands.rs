//! Band structure of the unperturbed Kronig-Penney comb.
//!
//! Everything here depends only on `d` and `alpha0` (and `omega` for the
//! critical points). Bands are where the Lyapunov function
//! `L(k) = cos(kd) + alpha0 sin(kd) / (2k)` satisfies `|L| <= 1`; the edges
//! are the roots of `L = +-1`, the critical points the roots of
//! `L = +-cos(omega)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectralError};

/// Roots closer than this are the same root; golden-section searches stop here.
pub const ROOT_TOL: f64 = 1e-12;
/// Acceptance threshold for `|L(k) - target|` at a stored root.
pub const ROOT_RESIDUAL: f64 = 1e-10;
/// Width of the tolerance band used by [`classify_energy`].
pub const CLASS_TOL: f64 = 1e-9;

const MAX_GRID_POINTS: usize = 1 << 24;

/// `cos(kd) + alpha0 sin(kd) / (2k)`, continued to `k = 0` by `1 + alpha0 d / 2`.
#[inline]
pub fn lyapunov(k: f64, d: f64, alpha0: f64) -> f64 {
    if k.abs() < 1e-300 {
        return 1.0 + 0.5 * alpha0 * d;
    }
    let (s, c) = (k * d).sin_cos();
    c + alpha0 * s / (2.0 * k)
}

/// Inverse Joukowsky map `w + sqrt(w^2 - 1)`.
///
/// The branch satisfies `|Phi(w)| > 1` off the cut `[-1, 1]`; on the cut the
/// boundary value from the upper half-plane, `w + i sqrt(1 - w^2)`, is used.
pub fn joukowsky_inv(w: Complex64) -> Complex64 {
    if w.im == 0.0 && w.re.abs() <= 1.0 {
        return Complex64::new(w.re, (1.0 - w.re * w.re).sqrt());
    }
    let r = (w * w - 1.0).sqrt();
    let (p, m) = (w + r, w - r);
    if p.norm() >= m.norm() {
        p
    } else {
        m
    }
}

/// Eigenvalues `l +- sqrt(l^2 - 1)` of `[[0, 1], [-1, 2l]]`.
///
/// For `|l| < 1` these are `exp(+-i theta)` with `cos(theta) = l`.
pub fn mu_pm(l: f64) -> (Complex64, Complex64) {
    let disc = l * l - 1.0;
    let r = if disc >= 0.0 {
        Complex64::new(disc.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-disc).sqrt())
    };
    let l = Complex64::new(l, 0.0);
    (l + r, l - r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootTag {
    /// `L = +1`
    PlusOne,
    /// `L = -1`
    MinusOne,
    /// `L = +cos(omega)`
    PlusCos,
    /// `L = -cos(omega)`
    MinusCos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedRoot {
    pub k: f64,
    pub tag: RootTag,
}

impl TaggedRoot {
    pub fn lambda(&self) -> f64 {
        self.k * self.k
    }
}

/// Roots of one target equation, split into sign crossings and tangential
/// contacts.
#[derive(Debug, Clone, Default)]
struct RootScan {
    crossings: Vec<f64>,
    contacts: Vec<f64>,
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    // run to adjacent floats: critical-point quantities are sensitive to k
    loop {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}

/// Golden-section search for the maximum of `g` on `[a, b]`.
fn golden_max(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > ROOT_TOL {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

fn scan_roots(f: &impl Fn(f64) -> f64, k_max: f64, step: f64) -> RootScan {
    let n = (k_max / step).ceil().max(1.0) as usize;
    let h = k_max / n as f64;
    let grid: Vec<f64> = (0..=n).map(|i| f(i as f64 * h)).collect();
    let mut out = RootScan::default();
    for i in 0..n {
        let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
        let (fa, fb) = (grid[i], grid[i + 1]);
        if fa * fb < 0.0 {
            out.crossings.push(bisect(f, a, b));
        } else if fb == 0.0 && i + 2 <= n && fa * grid[i + 2] < 0.0 {
            out.crossings.push(b);
        }
    }
    // Local extrema of f that approach zero without a sign change on the
    // grid: either a tangential contact or a pair of crossings hidden
    // inside one or two grid cells.
    for i in 1..n {
        let (l, m, r) = (grid[i - 1], grid[i], grid[i + 1]);
        if m == 0.0 || l * m <= 0.0 || m * r <= 0.0 {
            continue;
        }
        if m.abs() > l.abs() || m.abs() > r.abs() {
            continue;
        }
        let (a, b) = ((i - 1) as f64 * h, (i + 1) as f64 * h);
        let s = -m.signum();
        let k_ext = golden_max(&|k| s * f(k), a, b);
        let f_ext = f(k_ext);
        if f_ext.abs() < ROOT_RESIDUAL {
            out.contacts.push(k_ext);
        } else if f_ext * m < 0.0 {
            out.crossings.push(bisect(f, a, k_ext));
            out.crossings.push(bisect(f, k_ext, b));
        }
    }
    out.crossings.sort_by(f64::total_cmp);
    out.crossings.dedup_by(|x, y| (*x - *y).abs() < ROOT_TOL);
    out
}

/// Scans with grid refinement until no two crossings are closer than four
/// grid steps.
fn robust_scan(f: impl Fn(f64) -> f64, d: f64, k_max: f64) -> Result<RootScan> {
    if !(k_max > 0.0) || !k_max.is_finite() {
        return Err(SpectralError::InvalidParameter(format!(
            "k_max must be positive and finite, got {k_max}"
        )));
    }
    let mut step = PI / (16.0 * d);
    loop {
        let scan = scan_roots(&f, k_max, step);
        let crowded = scan
            .crossings
            .windows(2)
            .find(|w| w[1] - w[0] < 4.0 * step)
            .map(|w| w[0]);
        match crowded {
            None => return Ok(scan),
            Some(k) => {
                let min_gap = scan
                    .crossings
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::INFINITY, f64::min);
                let next = (0.5 * min_gap).min(0.5 * step);
                if k_max / next > MAX_GRID_POINTS as f64 || next <= 0.0 {
                    return Err(SpectralError::GridTooCoarse { k, step });
                }
                step = next;
            }
        }
    }
}

fn tagged(ks: &[f64], tag: RootTag) -> impl Iterator<Item = TaggedRoot> + '_ {
    ks.iter().map(move |&k| TaggedRoot { k, tag })
}

fn sort_roots(v: &mut [TaggedRoot]) {
    v.sort_by(|a, b| a.k.total_cmp(&b.k));
}

/// Roots of `L(k) = +-1` in `(0, k_max]`, sign crossings only, sorted.
pub fn find_band_edges(d: f64, alpha0: f64, k_max: f64) -> Result<Vec<TaggedRoot>> {
    Ok(band_edges_with_contacts(d, alpha0, k_max)?.0)
}

/// Sign-crossing edges and tangential (closed-gap) contacts.
pub fn band_edges_with_contacts(d: f64, alpha0: f64, k_max: f64) -> Result<(Vec<TaggedRoot>, Vec<TaggedRoot>)> {
    let plus = robust_scan(|k| lyapunov(k, d, alpha0) - 1.0, d, k_max)?;
    let minus = robust_scan(|k| lyapunov(k, d, alpha0) + 1.0, d, k_max)?;
    let mut edges: Vec<_> = tagged(&plus.crossings, RootTag::PlusOne)
        .chain(tagged(&minus.crossings, RootTag::MinusOne))
        .filter(|r| r.k > 0.0)
        .collect();
    let mut contacts: Vec<_> = tagged(&plus.contacts, RootTag::PlusOne)
        .chain(tagged(&minus.contacts, RootTag::MinusOne))
        .filter(|r| r.k > 0.0)
        .collect();
    sort_roots(&mut edges);
    sort_roots(&mut contacts);
    Ok((edges, contacts))
}

/// Roots of `L(k) = +-cos(omega)` in `(0, k_max]`, sorted.
pub fn find_critical_points(d: f64, alpha0: f64, omega: f64, k_max: f64) -> Result<Vec<TaggedRoot>> {
    let co = omega.cos();
    let plus = robust_scan(|k| lyapunov(k, d, alpha0) - co, d, k_max)?;
    let minus = robust_scan(|k| lyapunov(k, d, alpha0) + co, d, k_max)?;
    let mut roots: Vec<_> = tagged(&plus.crossings, RootTag::PlusCos)
        .chain(tagged(&minus.crossings, RootTag::MinusCos))
        .filter(|r| r.k > 0.0)
        .collect();
    sort_roots(&mut roots);
    for r in &roots {
        let l = lyapunov(r.k, d, alpha0);
        if l.abs() >= 1.0 {
            return Err(SpectralError::InvalidParameter(format!(
                "critical point k={} is not inside a band (L={l})",
                r.k
            )));
        }
    }
    Ok(roots)
}

/// A band `[k_lo, k_hi]`; `complete` when both ends are genuine edges found
/// inside `(0, k_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub k_lo: f64,
    pub k_hi: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStructure {
    pub d: f64,
    pub alpha0: f64,
    pub omega: f64,
    pub k_max: f64,
    pub edges: Vec<TaggedRoot>,
    /// Tangential contacts (closed gaps); not used to split bands.
    pub contacts: Vec<TaggedRoot>,
    pub criticals: Vec<TaggedRoot>,
    pub bands: Vec<[f64; 2]>,
    pub gaps: Vec<[f64; 2]>,
    #[serde(skip)]
    band_meta: Vec<Band>,
}

impl BandStructure {
    pub fn compute(d: f64, alpha0: f64, omega: f64, k_max: f64) -> Result<Self> {
        let (edges, contacts) = band_edges_with_contacts(d, alpha0, k_max)?;
        let criticals = find_critical_points(d, alpha0, omega, k_max)?;

        let mut band_meta = Vec::new();
        let mut gaps = Vec::new();
        let mut in_band = lyapunov(0.0, d, alpha0).abs() <= 1.0;
        let mut start = 0.0;
        let mut start_is_edge = false;
        for e in &edges {
            if in_band {
                band_meta.push(Band {
                    k_lo: start,
                    k_hi: e.k,
                    complete: start_is_edge,
                });
            } else {
                gaps.push([start, e.k]);
            }
            in_band = !in_band;
            start = e.k;
            start_is_edge = true;
        }
        if start < k_max {
            if in_band {
                band_meta.push(Band {
                    k_lo: start,
                    k_hi: k_max,
                    complete: false,
                });
            } else {
                gaps.push([start, k_max]);
            }
        }
        Ok(BandStructure {
            d,
            alpha0,
            omega,
            k_max,
            edges,
            contacts,
            criticals,
            bands: band_meta.iter().map(|b| [b.k_lo, b.k_hi]).collect(),
            gaps,
            band_meta,
        })
    }

    pub fn band_list(&self) -> &[Band] {
        &self.band_meta
    }

    pub fn complete_bands(&self) -> impl Iterator<Item = &Band> {
        self.band_meta.iter().filter(|b| b.complete)
    }

    /// Critical points lying strictly inside `band`.
    pub fn criticals_in(&self, band: &Band) -> Vec<TaggedRoot> {
        self.criticals
            .iter()
            .filter(|c| c.k > band.k_lo && c.k < band.k_hi)
            .copied()
            .collect()
    }

    /// Index of the band containing `k`, if any.
    pub fn band_index(&self, k: f64) -> Option<usize> {
        self.band_meta.iter().position(|b| k >= b.k_lo && k <= b.k_hi)
    }

    /// Checks that every complete band carries exactly one `PlusCos` and one
    /// `MinusCos` critical point. Returns the offending band otherwise.
    pub fn check_interlacing(&self) -> std::result::Result<(), Band> {
        for b in self.complete_bands() {
            let cs = self.criticals_in(b);
            let plus = cs.iter().filter(|c| c.tag == RootTag::PlusCos).count();
            let minus = cs.iter().filter(|c| c.tag == RootTag::MinusCos).count();
            if plus != 1 || minus != 1 {
                return Err(*b);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyKind {
    Gap,
    BandInterior,
    CriticalPlus,
    CriticalMinus,
    BandEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyClass {
    pub kind: EnergyKind,
    pub lyapunov: f64,
}

impl EnergyClass {
    pub fn from_lyapunov(l: f64, omega: f64) -> Self {
        let co = omega.cos();
        let kind = if (l.abs() - 1.0).abs() <= CLASS_TOL {
            EnergyKind::BandEdge
        } else if (l - co).abs() <= CLASS_TOL {
            EnergyKind::CriticalPlus
        } else if (l + co).abs() <= CLASS_TOL {
            EnergyKind::CriticalMinus
        } else if l.abs() < 1.0 {
            EnergyKind::BandInterior
        } else {
            EnergyKind::Gap
        };
        EnergyClass { kind, lyapunov: l }
    }

    pub fn is_critical(&self) -> bool {
        matches!(self.kind, EnergyKind::CriticalPlus | EnergyKind::CriticalMinus)
    }
}

/// Classifies `lambda > 0` by the value of `L(sqrt(lambda))`.
pub fn classify_energy(lambda: f64, d: f64, alpha0: f64, omega: f64) -> Result<EnergyClass> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(SpectralError::InvalidParameter(format!(
            "energy must be positive, got {lambda}"
        )));
    }
    Ok(EnergyClass::from_lyapunov(lyapunov(lambda.sqrt(), d, alpha0), omega))
}
