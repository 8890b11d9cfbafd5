//! Embedded eigenvalues at critical energies: square-integrability of the
//! subordinate solution and the boundary parameter that selects it.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{fit_growth_on, Abscissa, GrowthModel};
use crate::bands::{classify_energy, BandStructure, EnergyKind};
use crate::decomposition::{table_beta, wrap_pi};
use crate::error::{Result, SpectralError};
use crate::lattice::{realize_lattice, LatticeRealization, ModelParams, PerturbationKind};
use crate::transfer::{
    boundary_values, direction_distance, propagate, propagate_backward, recurrence_residual, retreat, SolutionTrace,
};

/// Two backward seeds must agree in direction at `n = 1` to this.
pub const SEED_AGREEMENT: f64 = 1e-6;
/// `beta` closer than this to 1/2 is treated as the unclassified boundary case.
pub const BETA_HALF_TOL: f64 = 1e-12;
/// Backward runs start at `HORIZON_FACTOR * N` so the stored part is clean.
pub const HORIZON_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Verdict {
    Admissible,
    NotAdmissible,
    /// `gamma = 1` with `beta = 1/2`, not covered by the criterion.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Criterion {
    pub verdict: L2Verdict,
    pub beta: f64,
    pub reason: String,
}

impl L2Criterion {
    pub fn admissible(&self) -> bool {
        self.verdict == L2Verdict::Admissible
    }
}

fn critical_k(params: &ModelParams, lambda: f64) -> Result<(f64, EnergyKind)> {
    let class = classify_energy(lambda, params.d, params.alpha0, params.omega)?;
    if !class.is_critical() {
        return Err(SpectralError::NotCritical {
            lyapunov: class.lyapunov,
        });
    }
    Ok((lambda.sqrt(), class.kind))
}

/// Whether the subordinate solution at a critical energy is square-summable:
/// `gamma < 1`, or `gamma = 1` and `beta > 1/2`.
pub fn l2_criterion(params: &ModelParams, kind: PerturbationKind, lambda: f64) -> Result<L2Criterion> {
    let (k, _) = critical_k(params, lambda)?;
    let beta = table_beta(k, params, kind);
    let (verdict, reason) = if beta == 0.0 {
        (
            L2Verdict::NotAdmissible,
            "beta = 0: no oscillatory perturbation acts at this energy".to_string(),
        )
    } else if params.gamma < 1.0 {
        (L2Verdict::Admissible, format!("gamma = {} < 1", params.gamma))
    } else if (beta - 0.5).abs() <= BETA_HALF_TOL {
        (
            L2Verdict::Inconclusive,
            "gamma = 1 and beta = 1/2: boundary case".to_string(),
        )
    } else if beta > 0.5 {
        (L2Verdict::Admissible, format!("gamma = 1 and beta = {beta} > 1/2"))
    } else {
        (L2Verdict::NotAdmissible, format!("gamma = 1 and beta = {beta} < 1/2"))
    };
    Ok(L2Criterion { verdict, beta, reason })
}

#[derive(Debug, Clone)]
pub struct SubordinateSolution {
    /// `n = 1..=N`, stored by backward propagation.
    pub trace: SolutionTrace,
    /// Direction distance of the two seeds at `n = 1`.
    pub seed_distance: f64,
    /// Index the backward runs started from.
    pub horizon: usize,
}

/// The solution that decays fastest, obtained by propagating two independent
/// seeds backward from `HORIZON_FACTOR * N` and checking that they meet.
pub fn subordinate_solution(
    lambda: f64,
    params: &ModelParams,
    kind: PerturbationKind,
    n: usize,
) -> Result<SubordinateSolution> {
    let (k, _) = critical_k(params, lambda)?;
    let horizon = HORIZON_FACTOR * n;
    let lat = realize_lattice(params, kind, horizon + 1)?;
    subordinate_on(k, &lat, n, horizon)
}

/// As [`subordinate_solution`] on an existing lattice (`n_max > horizon`).
pub fn subordinate_on(k: f64, lat: &LatticeRealization, n: usize, horizon: usize) -> Result<SubordinateSolution> {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let seeds = [[one, zero], [zero, one]];
    let at_n: Vec<_> = seeds
        .par_iter()
        .map(|s| retreat(k, lat, *s, horizon, n))
        .collect::<Result<Vec<_>>>()?;
    let stored = propagate_backward(k, lat, at_n[0].0, n)?;
    let (other, _) = retreat(k, lat, at_n[1].0, n, 1)?;
    let seed_distance = direction_distance(stored.unit(1), &other);
    if !(seed_distance < SEED_AGREEMENT) {
        return Err(SpectralError::NoConvergence {
            distance: seed_distance,
            n,
        });
    }
    Ok(SubordinateSolution {
        trace: stored,
        seed_distance,
        horizon,
    })
}

/// Retries with `N` doubled up to `max_doublings` times on `NoConvergence`.
pub fn subordinate_adaptive(
    lambda: f64,
    params: &ModelParams,
    kind: PerturbationKind,
    n: usize,
    max_doublings: u32,
) -> Result<SubordinateSolution> {
    let mut n = n;
    let mut last = None;
    for _ in 0..=max_doublings {
        match subordinate_solution(lambda, params, kind, n) {
            Err(e @ SpectralError::NoConvergence { .. }) => {
                last = Some(e);
                n *= 2;
            }
            other => return other,
        }
    }
    Err(last.expect("loop ran at least once"))
}

/// `kappa` in `[0, pi)` with `psi(0) cos(kappa) - psi'(0) sin(kappa) = 0`.
pub fn kappa_star(trace: &SolutionTrace, k: f64, lat: &LatticeRealization) -> Result<f64> {
    let (p0, dp0) = boundary_values(trace, k, lat)?;
    kappa_from_boundary(p0, dp0)
}

/// `atan2(psi(0), psi'(0))` reduced mod pi; a common complex phase is removed first.
pub fn kappa_from_boundary(p0: Complex64, dp0: Complex64) -> Result<f64> {
    let scale = p0.norm().max(dp0.norm());
    if !(scale > 1e-14) {
        return Err(SpectralError::DegenerateBoundary);
    }
    let pivot = if p0.norm() >= dp0.norm() { p0 } else { dp0 };
    let rot = pivot.conj() / pivot.norm();
    Ok(wrap_pi((p0 * rot).re.atan2((dp0 * rot).re)))
}

/// `u_1 = (xi_0, xi_1)` of the solution obeying the boundary condition at `kappa`:
/// `psi(0) = sin(kappa)`, `psi'(0) = cos(kappa)`.
pub fn boundary_seed(kappa: f64, k: f64, lat: &LatticeRealization) -> [Complex64; 2] {
    let (s, c) = kappa.sin_cos();
    let x1 = lat.x(1);
    let xi1 = s * (k * x1).cos() + c * (k * x1).sin() / k;
    [Complex64::new(s, 0.0), Complex64::new(xi1, 0.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessCheck {
    pub kappas: Vec<f64>,
    pub slopes: Vec<f64>,
    pub beta: f64,
    /// Largest `|slope - beta| / beta` over the grid.
    pub worst_relative: f64,
    pub all_dominant: bool,
}

/// Propagates the boundary solution for `count` values of `kappa` spread
/// evenly over `[0, pi)` and offset from `kappa_star` by half a step; each
/// must grow with slope `+beta` within `rel_tol`.
pub fn uniqueness_check(
    k: f64,
    lat: &LatticeRealization,
    kappa_star: f64,
    growth: GrowthModel,
    count: usize,
    n: usize,
    rel_tol: f64,
) -> Result<UniquenessCheck> {
    let beta = growth
        .beta()
        .ok_or_else(|| SpectralError::InvalidParameter("uniqueness check needs a critical growth model".into()))?;
    let abscissa = growth.abscissa();
    let kappas: Vec<f64> = (1..=count)
        .map(|j| wrap_pi(kappa_star + (j as f64 - 0.5) * PI / count as f64))
        .collect();
    let slopes = kappas
        .par_iter()
        .map(|&kappa| {
            let tr = propagate(k, lat, boundary_seed(kappa, k, lat), n)?;
            Ok(fit_growth_on(&tr, abscissa)?.slope)
        })
        .collect::<Result<Vec<f64>>>()?;
    let worst_relative = slopes.iter().map(|s| (s - beta).abs() / beta).fold(0.0, f64::max);
    Ok(UniquenessCheck {
        kappas,
        slopes,
        beta,
        worst_relative,
        all_dominant: worst_relative <= rel_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedEigenvalueReport {
    pub lambda: f64,
    pub k: f64,
    pub class: EnergyKind,
    pub beta: f64,
    pub l2: L2Criterion,
    pub kappa_star: Option<f64>,
    /// `kappa*` recomputed with twice the length.
    pub kappa_star_2n: Option<f64>,
    /// `|kappa*(N) - kappa*(2N)|`, distance mod pi.
    pub kappa_stability: Option<f64>,
    pub seed_distance: Option<f64>,
    /// Largest relative recurrence residual at spot-checked indices.
    pub recurrence_residual: Option<f64>,
    /// Slope of `ln |u_n|` of the subordinate solution on the envelope abscissa.
    pub subordinate_slope: Option<f64>,
    /// Fitted exponent of the increments `|u_n|^2` against `ln n`.
    pub l2_increment_exponent: Option<f64>,
    pub n: usize,
    pub error: Option<String>,
}

/// Spot-check indices for the recurrence residual.
fn spot_indices(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [1, 2, 10, n / 10, n / 2, n - 2, n - 1]
        .into_iter()
        .filter(|&i| i >= 1 && i + 1 <= n)
        .collect();
    v.dedup();
    v
}

/// Full analysis of one critical energy.
pub fn analyse_critical_point(
    lambda: f64,
    params: &ModelParams,
    kind: PerturbationKind,
    n: usize,
) -> Result<EmbeddedEigenvalueReport> {
    let (k, class) = critical_k(params, lambda)?;
    let l2 = l2_criterion(params, kind, lambda)?;
    let mut report = EmbeddedEigenvalueReport {
        lambda,
        k,
        class,
        beta: l2.beta,
        l2: l2.clone(),
        kappa_star: None,
        kappa_star_2n: None,
        kappa_stability: None,
        seed_distance: None,
        recurrence_residual: None,
        subordinate_slope: None,
        l2_increment_exponent: None,
        n,
        error: None,
    };
    if !l2.admissible() {
        return Ok(report);
    }
    let lat = realize_lattice(params, kind, 2 * HORIZON_FACTOR * n + 1)?;
    let (sub, sub2) = rayon::join(
        || subordinate_on(k, &lat, n, HORIZON_FACTOR * n),
        || subordinate_on(k, &lat, 2 * n, 2 * HORIZON_FACTOR * n),
    );
    let (sub, sub2) = match (sub, sub2) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            report.error = Some(e.to_string());
            return Ok(report);
        }
    };
    let ks = kappa_star(&sub.trace, k, &lat)?;
    let ks2 = kappa_star(&sub2.trace, k, &lat)?;
    report.kappa_star = Some(ks);
    report.kappa_star_2n = Some(ks2);
    report.kappa_stability = Some(crate::decomposition::angle_distance_pi(ks, ks2));
    report.seed_distance = Some(sub.seed_distance);
    let mut worst: f64 = 0.0;
    for i in spot_indices(n) {
        worst = worst.max(recurrence_residual(&sub.trace, &lat, i)?);
    }
    report.recurrence_residual = Some(worst);
    let abscissa = if params.gamma >= 1.0 {
        Abscissa::LogN
    } else {
        Abscissa::Stretched { gamma: params.gamma }
    };
    if n >= crate::asymptotics::MIN_FIT_LENGTH {
        report.subordinate_slope = Some(fit_growth_on(&sub.trace, abscissa)?.slope);
        report.l2_increment_exponent = Some(2.0 * fit_growth_on(&sub.trace, Abscissa::LogN)?.slope);
    }
    Ok(report)
}

/// Analyses every critical point inside the complete bands below `k_max`.
/// Failures are recorded per point and the scan continues.
pub fn scan_critical_points(
    params: &ModelParams,
    kind: PerturbationKind,
    k_max: f64,
    n: usize,
) -> Result<Vec<EmbeddedEigenvalueReport>> {
    params.validate()?;
    let bs = BandStructure::compute(params.d, params.alpha0, params.omega, k_max)?;
    let ks: Vec<f64> = bs
        .complete_bands()
        .flat_map(|b| bs.criticals_in(b))
        .map(|r| r.k)
        .collect();
    Ok(ks
        .par_iter()
        .map(|&k| {
            analyse_critical_point(k * k, params, kind, n).unwrap_or_else(|e| EmbeddedEigenvalueReport {
                lambda: k * k,
                k,
                class: EnergyKind::BandInterior,
                beta: table_beta(k, params, kind),
                l2: L2Criterion {
                    verdict: L2Verdict::Inconclusive,
                    beta: f64::NAN,
                    reason: "analysis failed".into(),
                },
                kappa_star: None,
                kappa_star_2n: None,
                kappa_stability: None,
                seed_distance: None,
                recurrence_residual: None,
                subordinate_slope: None,
                l2_increment_exponent: None,
                n,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

/// CSV summary: `k, lambda, class, beta, admissible, kappa_star, kappa_stability`.
pub fn write_scan_csv<W: Write>(reports: &[EmbeddedEigenvalueReport], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "k",
        "lambda",
        "class",
        "beta",
        "admissible",
        "kappa_star",
        "kappa_stability",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in reports {
        wtr.write_record(&[
            r.k.to_string(),
            r.lambda.to_string(),
            format!("{:?}", r.class),
            r.beta.to_string(),
            r.l2.admissible().to_string(),
            opt(r.kappa_star),
            opt(r.kappa_stability),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
