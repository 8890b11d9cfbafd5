use std::io::Write;
use std::path::PathBuf;

use kp_core::asymptotics::{
    extract_phase, fit_growth, predict, verify, Envelope, GrowthFit, PhaseEstimate, PredictedAsymptotics,
    VerificationReport, MIN_PHASE_LENGTH,
};
use kp_core::bands::{classify_energy, lyapunov, BandStructure, EnergyClass, RootTag};
use kp_core::decomposition::{remainder_series, table_beta, OscillatoryDecomposition, RemainderReport, Sign};
use kp_core::eigensearch::{boundary_seed, scan_critical_points, write_scan_csv, EmbeddedEigenvalueReport};
use kp_core::lattice::{realize_lattice, PerturbationKind};
use kp_core::transfer::{
    direction_distance, discrete_wronskian, log_det_product, propagate, propagate_backward, recurrence_residual, s_n,
};
use kp_core::weyl::{gap_scan, GapScanResult};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::OutputDir;

#[derive(Debug, Serialize)]
pub struct BandsOutput {
    pub structure: BandStructure,
    pub complete_bands: usize,
    pub interlacing_ok: bool,
    /// Largest `|L(k) -+ 1|` over the edges.
    pub max_edge_residual: f64,
    /// Largest `|L(k) -+ cos w|` over the critical points.
    pub max_critical_residual: f64,
}

fn tag_target(tag: RootTag, omega: f64) -> f64 {
    match tag {
        RootTag::PlusOne => 1.0,
        RootTag::MinusOne => -1.0,
        RootTag::PlusCos => omega.cos(),
        RootTag::MinusCos => -omega.cos(),
    }
}

pub fn band_summary(cfg: &RunConfig) -> CliResult<BandsOutput> {
    let p = &cfg.params;
    let bs = BandStructure::compute(p.d, p.alpha0, p.omega, cfg.k_max)?;
    let resid = |roots: &[kp_core::bands::TaggedRoot]| {
        roots
            .iter()
            .map(|r| (lyapunov(r.k, p.d, p.alpha0) - tag_target(r.tag, p.omega)).abs())
            .fold(0.0, f64::max)
    };
    let out = BandsOutput {
        complete_bands: bs.complete_bands().count(),
        interlacing_ok: bs.check_interlacing().is_ok(),
        max_edge_residual: resid(&bs.edges),
        max_critical_residual: resid(&bs.criticals),
        structure: bs,
    };
    Ok(out)
}

pub fn bands(cfg: &RunConfig) -> CliResult<(BandsOutput, Vec<PathBuf>)> {
    let p = &cfg.params;
    let out = band_summary(cfg)?;
    let mut dir = OutputDir::create(&cfg.out)?;
    dir.json("bands.json", "bands", cfg, &out)?;
    if cfg.format == Format::Csv {
        dir.csv("bands.csv", "bands", cfg, |w| {
            writeln!(w, "kind,k,lambda,tag")?;
            for (kind, roots) in [("edge", &out.structure.edges), ("critical", &out.structure.criticals)] {
                for r in roots.iter() {
                    writeln!(w, "{kind},{},{},{:?}", r.k, r.lambda(), r.tag)?;
                }
            }
            writeln!(w)?;
            writeln!(w, "interval,k_lo,k_hi,complete")?;
            for b in out.structure.band_list() {
                writeln!(w, "band,{},{},{}", b.k_lo, b.k_hi, b.complete)?;
            }
            for g in &out.structure.gaps {
                writeln!(w, "gap,{},{},", g[0], g[1])?;
            }
            Ok(())
        })?;
    }
    let m = cfg.bands.plot_points;
    if m > 0 {
        dir.csv("lyapunov_plot.csv", "bands", cfg, |w| {
            writeln!(w, "k,L,cos_omega")?;
            let cw = p.omega.cos();
            for i in 1..=m {
                let k = cfg.k_max * i as f64 / m as f64;
                writeln!(w, "{k},{},{cw}", lyapunov(k, p.d, p.alpha0))?;
            }
            Ok(())
        })?;
    }
    Ok((out, dir.written().to_vec()))
}

#[derive(Debug, Serialize)]
pub struct PropagateOutput {
    pub lambda: f64,
    pub predicted: PredictedAsymptotics,
    pub kappa: f64,
    pub fit: GrowthFit,
    pub phase: Option<PhaseEstimate>,
    pub phase_note: Option<String>,
    pub verification: VerificationReport,
}

pub fn propagate_cmd(cfg: &RunConfig) -> CliResult<(PropagateOutput, Vec<PathBuf>)> {
    let lambda = cfg.require_lambda()?;
    let p = &cfg.params;
    let predicted = predict(lambda, p, cfg.model)?;
    let k = predicted.k;
    let lat = realize_lattice(p, cfg.model, cfg.n + 1)?;
    let trace = propagate(k, &lat, boundary_seed(p.kappa, k, &lat), cfg.n)?;
    let fit = fit_growth(&trace, &predicted)?;

    let (mut phase, mut phase_note) = (None, None);
    if let Some(beta) = predicted.growth.beta() {
        if cfg.n >= MIN_PHASE_LENGTH {
            let env = Envelope {
                beta,
                gamma: p.gamma,
                sign: Sign::Plus,
            };
            match extract_phase(&trace, p.omega, predicted.parity, &env) {
                Ok(ph) => phase = Some(ph),
                Err(e) => phase_note = Some(e.to_string()),
            }
        } else {
            phase_note = Some(format!("phase needs n >= {MIN_PHASE_LENGTH}"));
        }
    }
    let verification = verify(&predicted, &fit, phase.as_ref(), Sign::Plus, &cfg.tolerances);
    let out = PropagateOutput {
        lambda,
        predicted,
        kappa: p.kappa,
        fit,
        phase,
        phase_note,
        verification,
    };

    let mut dir = OutputDir::create(&cfg.out)?;
    dir.json("propagate.json", "propagate", cfg, &out)?;
    dir.csv("trace.csv", "propagate", cfg, |w| {
        trace.write_csv(w).map_err(CliError::from)
    })?;
    Ok((out, dir.written().to_vec()))
}

#[derive(Debug, Serialize)]
pub struct EigenscanOutput {
    pub critical_points: usize,
    pub admissible: usize,
    pub all_admissible: bool,
    pub reports: Vec<EmbeddedEigenvalueReport>,
}

pub fn eigenscan(cfg: &RunConfig) -> CliResult<(EigenscanOutput, Vec<PathBuf>)> {
    let reports = scan_critical_points(&cfg.params, cfg.model, cfg.k_max, cfg.n)?;
    for r in reports.iter().filter(|r| r.error.is_some()) {
        log::warn!("critical point k={}: {}", r.k, r.error.as_deref().unwrap_or_default());
    }
    let admissible = reports.iter().filter(|r| r.l2.admissible()).count();
    let out = EigenscanOutput {
        critical_points: reports.len(),
        admissible,
        all_admissible: !reports.is_empty() && admissible == reports.len(),
        reports,
    };
    let mut dir = OutputDir::create(&cfg.out)?;
    dir.json("eigenscan.json", "eigenscan", cfg, &out)?;
    if cfg.format == Format::Csv {
        dir.csv("eigenscan.csv", "eigenscan", cfg, |w| {
            write_scan_csv(&out.reports, w).map_err(CliError::from)
        })?;
    }
    Ok((out, dir.written().to_vec()))
}

#[derive(Debug, Serialize)]
pub struct GapscanOutput {
    pub note: &'static str,
    pub scan: GapScanResult,
    /// Band-interior controls, for which the distance should shrink with N.
    pub controls: Option<GapScanResult>,
}

/// Energies in the central half of every gap closed below `k_max`, spread
/// as evenly as possible over the gaps.
pub fn mid_gap_grid(bs: &BandStructure, points: usize) -> Vec<f64> {
    let gaps: Vec<[f64; 2]> = bs.gaps.iter().copied().filter(|g| g[1] < bs.k_max).collect();
    if gaps.is_empty() || points == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(points);
    for (i, g) in gaps.iter().enumerate() {
        let m = points / gaps.len() + usize::from(i < points % gaps.len());
        let (lo, hi) = (g[0] * g[0], g[1] * g[1]);
        for j in 0..m {
            let t = 0.25 + 0.5 * (j as f64 + 0.5) / m as f64;
            out.push(lo + (hi - lo) * t);
        }
    }
    out
}

/// Centres of the first `count` complete bands.
pub fn band_controls(bs: &BandStructure, count: usize) -> Vec<f64> {
    bs.complete_bands()
        .take(count)
        .map(|b| {
            let k = 0.5 * (b.k_lo + b.k_hi);
            k * k
        })
        .collect()
}

pub fn gapscan(cfg: &RunConfig) -> CliResult<(GapscanOutput, Vec<PathBuf>)> {
    let p = &cfg.params;
    let g = &cfg.gapscan;
    let bs = BandStructure::compute(p.d, p.alpha0, p.omega, cfg.k_max)?;
    let lambdas = g.lambdas.clone().unwrap_or_else(|| mid_gap_grid(&bs, g.gap_points));
    let scan = gap_scan(p, cfg.model, p.kappa, &lambdas, &g.section_sizes)?;
    for (l, why) in &scan.dropped {
        log::warn!("dropped lambda={l}: {why}");
    }
    let controls = if g.lambdas.is_none() && g.control_points > 0 {
        let c = band_controls(&bs, g.control_points);
        (!c.is_empty())
            .then(|| gap_scan(p, cfg.model, p.kappa, &c, &g.section_sizes))
            .transpose()?
    } else {
        None
    };
    let out = GapscanOutput {
        note: "heuristic: finite sections cannot certify the essential spectrum",
        scan,
        controls,
    };
    let mut dir = OutputDir::create(&cfg.out)?;
    dir.json("gapscan.json", "gapscan", cfg, &out)?;
    if cfg.format == Format::Csv {
        dir.csv("gapscan.csv", "gapscan", cfg, |w| {
            out.scan.write_csv(w).map_err(CliError::from)
        })?;
        if let Some(c) = &out.controls {
            dir.csv("gapscan_controls.csv", "gapscan", cfg, |w| {
                c.write_csv(w).map_err(CliError::from)
            })?;
        }
    }
    Ok((out, dir.written().to_vec()))
}

#[derive(Debug, Serialize)]
pub struct DecomposeOutput {
    pub lambda: f64,
    pub class: EnergyClass,
    pub decomposition: OscillatoryDecomposition,
    /// Closed-form growth exponent at a critical energy.
    pub table_beta: Option<f64>,
    /// Fitted decay exponent of `|R_n|` above one, or `R_n` identically zero.
    pub summable: bool,
    pub remainder: RemainderReport,
}

pub fn decompose(cfg: &RunConfig) -> CliResult<(DecomposeOutput, Vec<PathBuf>)> {
    let lambda = cfg.require_lambda()?;
    let p = &cfg.params;
    let k = lambda.sqrt();
    let class = classify_energy(lambda, p.d, p.alpha0, p.omega)?;
    let decomposition = OscillatoryDecomposition::compute(k, p, cfg.model)?;
    if cfg.n < cfg.decompose.n_lo + 8 {
        return Err(CliError::Config(format!(
            "n = {} must exceed decompose.n_lo + 8 = {}",
            cfg.n,
            cfg.decompose.n_lo + 8
        )));
    }
    let remainder = remainder_series(k, p, cfg.model, cfg.decompose.n_lo, cfg.n)?;
    let out = DecomposeOutput {
        lambda,
        class,
        decomposition,
        table_beta: class.is_critical().then(|| table_beta(k, p, cfg.model)),
        summable: remainder.vanishes || remainder.decay_exponent > 1.0,
        remainder,
    };
    let mut dir = OutputDir::create(&cfg.out)?;
    dir.json("decompose.json", "decompose", cfg, &out)?;
    if cfg.format == Format::Csv {
        dir.csv("remainder.csv", "decompose", cfg, |w| {
            out.remainder.write_csv(w).map_err(CliError::from)
        })?;
    }
    Ok((out, dir.written().to_vec()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SelfCheckOutput {
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn c64(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Energies between the two critical points of each complete band (up to
/// `count`); they avoid edges, criticals and the resonances `sin kd = 0`.
fn check_energies(bs: &BandStructure, count: usize) -> Vec<f64> {
    bs.complete_bands()
        .filter_map(|b| {
            let cs = bs.criticals_in(b);
            (cs.len() == 2).then(|| 0.5 * (cs[0].k + cs[1].k))
        })
        .take(count)
        .collect()
}

pub fn selfcheck(cfg: &RunConfig) -> CliResult<(SelfCheckOutput, Vec<PathBuf>)> {
    let p = &cfg.params;
    let mut checks = Vec::new();

    let bands = band_summary(cfg)?;
    checks.push(Check::below("band_edge_residual", bands.max_edge_residual, 1e-10));
    checks.push(Check::below(
        "critical_point_residual",
        bands.max_critical_residual,
        1e-10,
    ));
    checks.push(Check {
        name: "two_criticals_per_band".into(),
        value: bands.complete_bands as f64,
        tolerance: 0.0,
        passed: bands.interlacing_ok,
    });

    let n = cfg.n.min(10_000);
    let lat = realize_lattice(p, cfg.model, n + 2)?;
    let energies = check_energies(&bands.structure, 3);
    let mut w_drift: f64 = 0.0;
    let mut det_err: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let mut round_trip: f64 = 0.0;
    for &k in &energies {
        let a = propagate(k, &lat, [c64(1.0), c64(0.0)], n)?;
        let b = propagate(k, &lat, [c64(0.0), c64(1.0)], n)?;
        let w0 = discrete_wronskian(&a, &b, k, &lat, 0)?;
        for m in [n / 2, n - 1] {
            let w = discrete_wronskian(&a, &b, k, &lat, m)?;
            w_drift = w_drift.max((w.ratio(&w0) - 1.0).norm());
        }
        let lhs = log_det_product(k, &lat, n)?;
        let rhs = (s_n(&lat, n, k) / s_n(&lat, 0, k)).abs().ln();
        det_err = det_err.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        for m in [1, n / 2, n - 1] {
            residual = residual.max(recurrence_residual(&a, &lat, m)?);
        }
        let back = propagate_backward(k, &lat, *a.unit(n), n)?;
        round_trip = round_trip.max(direction_distance(back.unit(1), a.unit(1)));
    }
    checks.push(Check::below("wronskian_relative_drift", w_drift, 1e-8));
    checks.push(Check::below("determinant_telescoping", det_err, 1e-10));
    checks.push(Check::below("recurrence_residual", residual, 1e-10));
    checks.push(Check::below("forward_backward_round_trip", round_trip, 1e-8));

    if cfg.model != PerturbationKind::None {
        let mut beta_err: f64 = 0.0;
        let mut z_err: f64 = 0.0;
        for r in &bands.structure.criticals {
            let dec = match OscillatoryDecomposition::compute(r.k, p, cfg.model) {
                Ok(d) => d,
                Err(e) if e.is_numerical() => continue,
                Err(e) => return Err(e.into()),
            };
            let z = dec.critical(Sign::of(dec.l));
            beta_err = beta_err.max((z.beta - table_beta(r.k, p, cfg.model)).abs());
            // amplitude: z = -z1 at every k; positional: z (at +cos w) and
            // z1 (at -cos w) both equal i c alpha0 e^{-2iw} / 2
            let miss = match cfg.model {
                PerturbationKind::AmplitudeWvN => (dec.z + dec.z1).norm(),
                _ => (z.z - Complex64::new(0.0, p.c * p.alpha0) * Complex64::from_polar(0.5, -2.0 * p.omega)).norm(),
            };
            z_err = z_err.max(miss);
        }
        checks.push(Check::below("beta_matches_closed_form", beta_err, 1e-12));
        checks.push(Check::below("critical_z_identity", z_err, 1e-12));
    }

    let passed = checks.iter().all(|c| c.passed);
    let out = SelfCheckOutput { checks, passed };
    let mut dir = OutputDir::create(&cfg.out)?;
    dir.json("selfcheck.json", "selfcheck", cfg, &out)?;
    if !out.passed {
        let failed: Vec<&str> = out
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::CheckFailed(failed.join(", ")));
    }
    Ok((out, dir.written().to_vec()))
}
