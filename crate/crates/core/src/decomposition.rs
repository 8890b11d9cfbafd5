//! Oscillatory decomposition of the transfer matrix,
//!
//! ```text
//! T_n(k) = [[0, 1], [-1, 2l]] + [[0, 0], [a, b]] e^{2iwn}/n^g + conj + R_n,
//! ```
//!
//! the derived quantities `z, beta, phi` (and `z1, beta1, phi1`), the comparison
//! envelopes `f_n^+-`, and a numerical check that `R_n` is summable.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bands::lyapunov;
use crate::error::{Result, SpectralError};
use crate::lattice::{realize_lattice, ModelParams, PerturbationKind};
use crate::stats::linear_fit;
use crate::transfer::{transfer_matrix, Mat2};

/// `|sin(kd)|` below this makes the coefficients undefined.
pub const RESONANCE_TOL: f64 = 1e-12;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Which critical line an energy sits on: `L = +cos w` or `L = -cos w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x >= 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub l: f64,
    pub a: Complex64,
    pub b: Complex64,
}

/// `l = L(k)` and the oscillatory coefficients `a, b` of the chosen model.
pub fn model_coefficients(k: f64, params: &ModelParams, kind: PerturbationKind) -> Result<Coefficients> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(SpectralError::InvalidParameter(format!("k must be positive, got {k}")));
    }
    let d = params.d;
    let (s, co) = (k * d).sin_cos();
    if s.abs() < RESONANCE_TOL {
        return Err(SpectralError::ResonantK { k, value: s });
    }
    let l = lyapunov(k, d, params.alpha0);
    let c = params.c;
    let w = params.omega;
    let (a, b) = match kind {
        PerturbationKind::None => (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
        PerturbationKind::AmplitudeWvN => (Complex64::new(0.0, 0.0), c * s / (2.0 * I * k)),
        PerturbationKind::PositionalWvN => {
            let cot = co / s;
            let a = -2.0 * I * k * c * cot * w.sin().powi(2);
            // cos(kd) cot(2kd) = cos(2kd) / (2 sin(kd)): finite at kd = pi/2
            let cos_cot2 = (2.0 * k * d).cos() / (2.0 * s);
            let bracket = 4.0 * k * w.cos() * cos_cot2 - 2.0 * k * co * cot * Complex64::from_polar(1.0, -w)
                + params.alpha0 * co * Complex64::from_polar(1.0, w);
            (a, c * w.sin() * bracket)
        }
    };
    Ok(Coefficients { l, a, b })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZQuantities {
    pub z: Complex64,
    pub beta: f64,
    pub phi: f64,
}

/// `z = (a e^{-iw} + b e^{-2iw}) / (2i sin w)` for `Plus`,
/// `z1 = (a e^{-iw} - b e^{-2iw}) / (2i sin w)` for `Minus`.
pub fn z_quantities(sign: Sign, a: Complex64, b: Complex64, omega: f64) -> ZQuantities {
    let e1 = Complex64::from_polar(1.0, -omega);
    let e2 = Complex64::from_polar(1.0, -2.0 * omega);
    let z = (a * e1 + sign.factor() * b * e2) / (2.0 * I * omega.sin());
    ZQuantities {
        z,
        beta: z.norm(),
        phi: z.arg(),
    }
}

/// `ln f_n^+-(beta)`: `+-beta n^{1-g}/(1-g)` for `g < 1`, `+-beta ln n` for `g = 1`.
pub fn log_f_n(beta: f64, gamma: f64, sign: Sign, n: f64) -> f64 {
    sign.factor() * beta * envelope_abscissa(gamma, n)
}

/// The abscissa the envelope exponent is linear in: `ln n` or `n^{1-g}/(1-g)`.
pub fn envelope_abscissa(gamma: f64, n: f64) -> f64 {
    if gamma >= 1.0 {
        n.ln()
    } else {
        n.powf(1.0 - gamma) / (1.0 - gamma)
    }
}

/// Growth exponent `beta(k)` in closed form for each model.
pub fn table_beta(k: f64, params: &ModelParams, kind: PerturbationKind) -> f64 {
    match kind {
        PerturbationKind::None => 0.0,
        PerturbationKind::AmplitudeWvN => (params.c * (k * params.d).sin() / (4.0 * k * params.omega.sin())).abs(),
        PerturbationKind::PositionalWvN => (params.c * params.alpha0 / 2.0).abs(),
    }
}

/// Oscillation phase `theta_+-(k)` in closed form, in `[0, pi)`.
pub fn table_theta(sign: Sign, k: f64, params: &ModelParams, kind: PerturbationKind) -> f64 {
    let arg = match kind {
        PerturbationKind::None => 0.0,
        PerturbationKind::AmplitudeWvN => {
            let v = -sign.factor() * params.c * (k * params.d).sin() / k;
            // arg of a real number, with -0.0 treated as 0
            if v < 0.0 {
                PI
            } else {
                0.0
            }
        }
        PerturbationKind::PositionalWvN => (I * params.c * params.alpha0).arg(),
    };
    wrap_pi(0.5 * arg)
}

/// The phase implied by `arg z`: `phi/2 + w (mod pi)`.
pub fn theta_from_phi(phi: f64, omega: f64) -> f64 {
    wrap_pi(0.5 * phi + omega)
}

/// Reduces an angle to `[0, pi)`.
pub fn wrap_pi(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Distance between two angles taken mod `pi`.
pub fn angle_distance_pi(a: f64, b: f64) -> f64 {
    let d = wrap_pi(a - b);
    d.min(PI - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryDecomposition {
    pub k: f64,
    pub model: PerturbationKind,
    pub l: f64,
    pub a: Complex64,
    pub b: Complex64,
    pub z: Complex64,
    pub beta: f64,
    pub phi: f64,
    pub z1: Complex64,
    pub beta1: f64,
    pub phi1: f64,
}

impl OscillatoryDecomposition {
    pub fn compute(k: f64, params: &ModelParams, kind: PerturbationKind) -> Result<Self> {
        let Coefficients { l, a, b } = model_coefficients(k, params, kind)?;
        let p = z_quantities(Sign::Plus, a, b, params.omega);
        let m = z_quantities(Sign::Minus, a, b, params.omega);
        Ok(OscillatoryDecomposition {
            k,
            model: kind,
            l,
            a,
            b,
            z: p.z,
            beta: p.beta,
            phi: p.phi,
            z1: m.z,
            beta1: m.beta,
            phi1: m.phi,
        })
    }

    /// The quantities that govern the critical line `sign`.
    pub fn critical(&self, sign: Sign) -> ZQuantities {
        match sign {
            Sign::Plus => ZQuantities {
                z: self.z,
                beta: self.beta,
                phi: self.phi,
            },
            Sign::Minus => ZQuantities {
                z: self.z1,
                beta: self.beta1,
                phi: self.phi1,
            },
        }
    }

    /// Constant plus both oscillatory terms, i.e. `T_n - R_n`.
    pub fn model_matrix(&self, n: usize, gamma: f64, omega: f64) -> Mat2 {
        let zero = Complex64::new(0.0, 0.0);
        let e = Complex64::from_polar((n as f64).powf(-gamma), 2.0 * omega * n as f64);
        let osc_a = self.a * e + (self.a * e).conj();
        let osc_b = self.b * e + (self.b * e).conj();
        [
            [zero, Complex64::new(1.0, 0.0)],
            [
                Complex64::new(-1.0, 0.0) + osc_a,
                Complex64::new(2.0 * self.l, 0.0) + osc_b,
            ],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderReport {
    pub n: Vec<usize>,
    /// Frobenius norms `|R_n|`.
    pub norms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Per-index rounding floor below which a norm is indistinguishable from 0.
    pub noise_floor: Vec<f64>,
    /// True if every norm is at or below its noise floor.
    pub vanishes: bool,
    /// Fitted `p` in `|R_n| ~ C n^{-p}`; infinite when the remainder vanishes.
    pub decay_exponent: f64,
    pub fit_constant: f64,
    /// `|R_N|`, the last increment of the partial sums.
    pub last_increment: f64,
    /// Estimate of `sum_{n > N} |R_n|` from the fitted power law.
    pub tail_estimate: f64,
}

impl RemainderReport {
    /// Summable on the evidence: fitted exponent above one and a small tail.
    pub fn is_summable(&self, tail_tol: f64) -> bool {
        self.vanishes || (self.decay_exponent > 1.0 && self.tail_estimate < tail_tol)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "norm", "partial_sum"])?;
        for ((n, r), s) in self.n.iter().zip(&self.norms).zip(&self.partial_sums) {
            wtr.write_record(&[n.to_string(), r.to_string(), s.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn frobenius(m: &Mat2) -> f64 {
    m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `R_n` at every `n` in `n_lo..=n_hi`, with partial sums and a decay fit.
pub fn remainder_series(
    k: f64,
    params: &ModelParams,
    kind: PerturbationKind,
    n_lo: usize,
    n_hi: usize,
) -> Result<RemainderReport> {
    if n_lo == 0 || n_hi < n_lo + 8 {
        return Err(SpectralError::InvalidParameter(format!(
            "remainder range {n_lo}..={n_hi} must start at 1 or later and span at least 8 indices"
        )));
    }
    let dec = OscillatoryDecomposition::compute(k, params, kind)?;
    let lat = realize_lattice(params, kind, n_hi + 1)?;
    let mut ns = Vec::with_capacity(n_hi - n_lo + 1);
    let mut norms = Vec::with_capacity(ns.capacity());
    let mut floor = Vec::with_capacity(ns.capacity());
    for n in n_lo..=n_hi {
        let t = transfer_matrix(n, k, &lat)?;
        let m = dec.model_matrix(n, params.gamma, params.omega);
        let mut r = t.m;
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] -= m[i][j];
            }
        }
        let s_prev = (k * lat.spacing(n - 1)).sin().abs();
        // rounding in the centres is relative to x_n, amplified by 1/s_{n-1}
        floor.push(64.0 * f64::EPSILON * (1.0 + k * lat.x(n + 1)) * frobenius(&t.m) / s_prev);
        ns.push(n);
        norms.push(frobenius(&r));
    }
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = norms
        .iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect();
    let vanishes = norms.iter().zip(&floor).all(|(r, f)| r <= f);
    let last_increment = *norms.last().unwrap();
    let (decay_exponent, fit_constant, tail_estimate) = if vanishes {
        (f64::INFINITY, 0.0, 0.0)
    } else {
        let (p, c) = fit_block_maxima(&ns, &norms);
        let n_end = n_hi as f64;
        let tail = if p > 1.0 {
            c * n_end.powf(1.0 - p) / (p - 1.0)
        } else {
            f64::INFINITY
        };
        (p, c, tail)
    };
    Ok(RemainderReport {
        n: ns,
        norms,
        partial_sums,
        noise_floor: floor,
        vanishes,
        decay_exponent,
        fit_constant,
        last_increment,
        tail_estimate,
    })
}

/// Fits `log max_{block} |R| = log C - p log n` over geometric blocks; the
/// block maxima ride over the zeros of the oscillating remainder.
fn fit_block_maxima(ns: &[usize], norms: &[f64]) -> (f64, f64) {
    let first = ns[0] as f64;
    let last = *ns.last().unwrap() as f64;
    let blocks = (((last / first).ln() / 0.25).ceil() as usize).clamp(4, 40);
    let ratio = (last / first).powf(1.0 / blocks as f64);
    let mut pts = Vec::new();
    let mut lo = first;
    for _ in 0..blocks {
        let hi = lo * ratio;
        let best = ns
            .iter()
            .zip(norms)
            .filter(|(&n, _)| (n as f64) >= lo && (n as f64) < hi.max(lo + 1.0))
            .map(|(&n, &r)| (n, r))
            .fold(None, |acc: Option<(usize, f64)>, (n, r)| match acc {
                Some((_, br)) if br >= r => acc,
                _ => Some((n, r)),
            });
        if let Some((n, r)) = best {
            if r > 0.0 {
                pts.push(((n as f64).ln(), r.ln()));
            }
        }
        lo = hi;
    }
    match linear_fit(&pts) {
        Some(f) => (-f.slope, f.intercept.exp()),
        None => (0.0, 0.0),
    }
}
