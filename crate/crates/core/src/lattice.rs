//! Model parameters and finite lattice prefixes.
//!
//! A lattice is a set of interaction centres `0 = x_0 < x_1 < x_2 < ...` with
//! strengths `alpha_1, alpha_2, ...`. Three realizations are supported:
//!
//! - unperturbed Kronig-Penney: `x_n = n d`, `alpha_n = alpha0`;
//! - amplitude perturbation: `x_n = n d`,
//!   `alpha_n = alpha0 + c sin(2 omega n) / n^gamma + q_n`;
//! - positional perturbation: `alpha_n = alpha0`,
//!   `x_n = n d + c sin(2 omega n) / n^gamma + q_n`.
//!
//! The tail `q_n` is summable and given in closed form or read from a file.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpectralError};

/// Summable correction sequence `q_n`, `n >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailSequence {
    #[default]
    Zero,
    /// `q_n = s r^n`, `|r| < 1`.
    Geometric { r: f64, s: f64 },
    /// `q_n = s n^(-p)`, `p > 1`.
    PowerLaw { p: f64, s: f64 },
    /// Values read from a text file, one per line starting at `n = 1`;
    /// zero beyond the end of the list.
    File {
        path: String,
        #[serde(default)]
        values: Vec<f64>,
    },
}

impl TailSequence {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let values = parse_tail_values(&text)?;
        Ok(TailSequence::File {
            path: path.display().to_string(),
            values,
        })
    }

    /// Loads the values of a `File` tail whose list is still empty.
    pub fn load(self) -> Result<Self> {
        match self {
            TailSequence::File { path, values } if values.is_empty() => TailSequence::from_file(path),
            other => Ok(other),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TailSequence::Zero => Ok(()),
            TailSequence::Geometric { r, s } => {
                if !(r.abs() < 1.0) || !s.is_finite() {
                    return Err(SpectralError::InvalidParameter(format!(
                        "geometric tail needs |r| < 1 and finite s (r={r}, s={s})"
                    )));
                }
                Ok(())
            }
            TailSequence::PowerLaw { p, s } => {
                if !(p > 1.0) || !p.is_finite() || !s.is_finite() {
                    return Err(SpectralError::InvalidParameter(format!(
                        "power-law tail needs p > 1 and finite s (p={p}, s={s})"
                    )));
                }
                Ok(())
            }
            TailSequence::File { ref values, .. } => {
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(SpectralError::InvalidParameter(format!(
                        "tail file contains non-finite value {v}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `q_n` for `n >= 1`.
    pub fn value(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        match *self {
            TailSequence::Zero => 0.0,
            TailSequence::Geometric { r, s } => s * r.powi(n as i32),
            TailSequence::PowerLaw { p, s } => s * (n as f64).powf(-p),
            TailSequence::File { ref values, .. } => values.get(n - 1).copied().unwrap_or(0.0),
        }
    }

    /// Upper bound on `sup_{m >= n} |q_m|`.
    pub fn tail_sup(&self, n: usize) -> f64 {
        match *self {
            TailSequence::Zero => 0.0,
            TailSequence::Geometric { r, s } => (s * r.abs().powi(n as i32)).abs(),
            TailSequence::PowerLaw { p, s } => s.abs() * (n as f64).powf(-p),
            TailSequence::File { ref values, .. } => values
                .iter()
                .skip(n.saturating_sub(1))
                .fold(0.0_f64, |m, v| m.max(v.abs())),
        }
    }

    /// The l1 norm, in closed form where available.
    pub fn l1_norm(&self) -> f64 {
        match *self {
            TailSequence::Zero => 0.0,
            TailSequence::Geometric { r, s } => s.abs() * r.abs() / (1.0 - r.abs()),
            TailSequence::PowerLaw { p, s } => s.abs() * zeta(p),
            TailSequence::File { ref values, .. } => values.iter().map(|v| v.abs()).sum(),
        }
    }
}

fn parse_tail_values(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>()
                .map_err(|e| SpectralError::InvalidParameter(format!("tail file line {}: {e}", i + 1)))
        })
        .collect()
}

/// Riemann zeta for `p > 1`: direct sum plus Euler-Maclaurin tail.
fn zeta(p: f64) -> f64 {
    const M: usize = 1000;
    let head: f64 = (1..M).map(|n| (n as f64).powf(-p)).sum();
    let m = M as f64;
    head + m.powf(1.0 - p) / (p - 1.0) + 0.5 * m.powf(-p) + p * m.powf(-p - 1.0) / 12.0
}

/// Which Wigner-von Neumann perturbation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    #[default]
    None,
    /// Perturbs strengths (Model I).
    #[serde(rename = "amplitude", alias = "amplitude_wvn")]
    AmplitudeWvN,
    /// Perturbs positions (Model II).
    #[serde(rename = "positional", alias = "positional_wvn")]
    PositionalWvN,
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerturbationKind::None => "none",
            PerturbationKind::AmplitudeWvN => "amplitude",
            PerturbationKind::PositionalWvN => "positional",
        })
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = SpectralError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PerturbationKind::None),
            "amplitude" | "amplitude_wvn" | "I" => Ok(PerturbationKind::AmplitudeWvN),
            "positional" | "positional_wvn" | "II" => Ok(PerturbationKind::PositionalWvN),
            other => Err(SpectralError::InvalidParameter(format!(
                "unknown model '{other}' (expected none, amplitude or positional)"
            ))),
        }
    }
}

/// Physical constants of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Lattice period.
    pub d: f64,
    /// Unperturbed interaction strength.
    pub alpha0: f64,
    /// Perturbation amplitude.
    pub c: f64,
    /// Perturbation frequency, in `(0, pi/2)`.
    pub omega: f64,
    /// Decay exponent, in `(1/2, 1]`.
    pub gamma: f64,
    /// Boundary-condition angle at the origin, in `[0, pi)`.
    pub kappa: f64,
    #[serde(default)]
    pub q: TailSequence,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            d: 1.5,
            alpha0: 4.0,
            c: 0.0,
            omega: 1.0,
            gamma: 1.0,
            kappa: 0.0,
            q: TailSequence::Zero,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SpectralError::InvalidParameter(msg));
        if !(self.d > 0.0) || !self.d.is_finite() {
            return bad(format!("d must be positive and finite, got {}", self.d));
        }
        if !self.alpha0.is_finite() || !self.c.is_finite() {
            return bad("alpha0 and c must be finite".into());
        }
        if !(self.omega > 0.0 && self.omega < FRAC_PI_2) {
            return bad(format!("omega must lie in (0, pi/2), got {}", self.omega));
        }
        if !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (1/2, 1], got {}", self.gamma));
        }
        if !(self.kappa >= 0.0 && self.kappa < PI) {
            return bad(format!("kappa must lie in [0, pi), got {}", self.kappa));
        }
        self.q.validate()
    }

    /// The oscillating term `c sin(2 omega n) / n^gamma`.
    pub fn wvn(&self, n: usize) -> f64 {
        let nf = n as f64;
        self.c * (2.0 * self.omega * nf).sin() / nf.powf(self.gamma)
    }

    /// An index `N` with `|c|/n^gamma + |q_n| < eps` for every `n >= N`.
    pub fn settling_index(&self, eps: f64) -> usize {
        assert!(eps > 0.0);
        let half = 0.5 * eps;
        let mut n = if self.c == 0.0 {
            1
        } else {
            ((self.c.abs() / half).powf(1.0 / self.gamma).floor() as usize) + 1
        };
        while self.q.tail_sup(n) >= half {
            n = n.saturating_mul(2);
        }
        n.max(1)
    }
}

/// Finite prefix `x_1..x_{n_max}`, `alpha_1..alpha_{n_max}` of a lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeRealization {
    n_max: usize,
    /// Centres with `x[0] = 0`; length `n_max + 1`.
    x: Vec<f64>,
    /// Strengths; `alpha[n - 1]` is `alpha_n`.
    alpha: Vec<f64>,
}

impl LatticeRealization {
    /// Builds a lattice from explicit centres `x_1..` and strengths `alpha_1..`.
    pub fn from_parts(centres: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if centres.len() != alpha.len() || centres.len() < 2 {
            return Err(SpectralError::InvalidParameter(
                "centres and strengths must have equal length >= 2".into(),
            ));
        }
        let mut x = Vec::with_capacity(centres.len() + 1);
        x.push(0.0);
        x.extend(centres);
        let lat = LatticeRealization {
            n_max: alpha.len(),
            x,
            alpha,
        };
        lat.check_monotone()?;
        Ok(lat)
    }

    fn check_monotone(&self) -> Result<()> {
        for n in 0..self.n_max {
            let gap = self.x[n + 1] - self.x[n];
            if !(gap > 0.0) {
                return Err(SpectralError::NonMonotoneLattice { index: n, gap });
            }
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Centre `x_n` for `0 <= n <= n_max`.
    #[inline]
    pub fn x(&self, n: usize) -> f64 {
        self.x[n]
    }

    /// Strength `alpha_n` for `1 <= n <= n_max`.
    #[inline]
    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha[n - 1]
    }

    /// `x_{n+1} - x_n` for `0 <= n < n_max`.
    #[inline]
    pub fn spacing(&self, n: usize) -> f64 {
        self.x[n + 1] - self.x[n]
    }

    pub fn centres(&self) -> &[f64] {
        &self.x[1..]
    }

    pub fn strengths(&self) -> &[f64] {
        &self.alpha
    }
}

/// Materializes the first `n_max` centres and strengths of the chosen model.
pub fn realize_lattice(params: &ModelParams, kind: PerturbationKind, n_max: usize) -> Result<LatticeRealization> {
    if n_max < 2 {
        return Err(SpectralError::InvalidParameter(format!(
            "n_max must be at least 2, got {n_max}"
        )));
    }
    params.validate()?;
    let mut x = Vec::with_capacity(n_max + 1);
    let mut alpha = Vec::with_capacity(n_max);
    x.push(0.0);
    for n in 1..=n_max {
        let base = n as f64 * params.d;
        match kind {
            PerturbationKind::None => {
                x.push(base);
                alpha.push(params.alpha0);
            }
            PerturbationKind::AmplitudeWvN => {
                x.push(base);
                alpha.push(params.alpha0 + params.wvn(n) + params.q.value(n));
            }
            PerturbationKind::PositionalWvN => {
                x.push(base + params.wvn(n) + params.q.value(n));
                alpha.push(params.alpha0);
            }
        }
    }
    let lat = LatticeRealization { n_max, x, alpha };
    lat.check_monotone()?;
    Ok(lat)
}

/// Minimum and maximum of `x_{n+1} - x_n` over `1 <= n < n_max`.
pub fn spacing_report(lat: &LatticeRealization) -> (f64, f64) {
    (1..lat.n_max)
        .map(|n| lat.spacing(n))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
}
