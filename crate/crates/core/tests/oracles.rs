//! End-to-end checks against references built here from first principles:
//! piecewise integration of the Schroedinger equation, brute-force root
//! scans and dense eigenvalue solvers.

use std::f64::consts::PI;

use kp_core::asymptotics::{fit_growth_on, Abscissa};
use kp_core::bands::BandStructure;
use kp_core::eigensearch::{analyse_critical_point, boundary_seed};
use kp_core::lattice::{realize_lattice, LatticeRealization, ModelParams, PerturbationKind};
use kp_core::transfer::{propagate, reconstruct_psi, SolutionTrace};
use kp_core::weyl::{b_minus_m, b_operator_section, weyl_section};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn lyapunov(k: f64, d: f64, alpha0: f64) -> f64 {
    (k * d).cos() + alpha0 * (k * d).sin() / (2.0 * k)
}

/// `psi(x_n)` for `n = 0..=n_max` from `psi(0) = sin kappa`, `psi'(0) = cos kappa`,
/// free evolution between centres and the jump `psi'(x+) - psi'(x-) = alpha psi(x)`.
fn integrate(k: f64, kappa: f64, lat: &LatticeRealization, n_max: usize) -> Vec<f64> {
    let (mut psi, mut dpsi) = (kappa.sin(), kappa.cos());
    let mut out = vec![psi];
    for n in 0..n_max {
        let h = lat.x(n + 1) - lat.x(n);
        let (s, c) = (k * h).sin_cos();
        let next = psi * c + dpsi * s / k;
        let dnext = -psi * k * s + dpsi * c;
        psi = next;
        dpsi = dnext + lat.alpha(n + 1) * psi;
        out.push(psi);
    }
    out
}

fn xi(trace: &SolutionTrace, m: usize) -> f64 {
    let v = trace.xi(m).value();
    assert!(v.im.abs() <= 1e-12 * v.re.abs().max(1.0));
    v.re
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transfer_recursion_matches_direct_integration(
        k in 0.5f64..6.0,
        kappa in 0.0f64..3.14,
        c in -0.3f64..0.3,
        gamma in 0.6f64..1.0,
        positional in any::<bool>(),
    ) {
        let kind = if positional { PerturbationKind::PositionalWvN } else { PerturbationKind::AmplitudeWvN };
        let p = ModelParams { c, gamma, ..ModelParams::default() };
        let n = 150;
        let lat = realize_lattice(&p, kind, n + 1).unwrap();
        prop_assume!((0..n).all(|i| (k * lat.spacing(i)).sin().abs() > 1e-3));
        let direct = integrate(k, kappa, &lat, n);
        let tr = propagate(k, &lat, boundary_seed(kappa, k, &lat), n).unwrap();
        // errors are measured against the running size of the solution,
        // since xi_m itself may sit near a zero
        let mut scale: f64 = 0.0;
        for m in 0..=n {
            scale = scale.max(direct[m].abs());
            prop_assert!((xi(&tr, m) - direct[m]).abs() <= 1e-10 * scale,
                "m={} transfer={} direct={}", m, xi(&tr, m), direct[m]);
        }
    }
}

#[test]
fn reconstructed_psi_satisfies_matching_conditions() {
    let p = ModelParams {
        c: 0.4,
        ..ModelParams::default()
    };
    let lat = realize_lattice(&p, PerturbationKind::PositionalWvN, 60).unwrap();
    let k = 3.5;
    let tr = propagate(k, &lat, boundary_seed(0.7, k, &lat), 50).unwrap();
    let h = 1e-6;
    for n in [3, 17, 40] {
        let x = lat.x(n);
        let grid = [x - 2.0 * h, x - h, x, x + h, x + 2.0 * h];
        let v: Vec<f64> = reconstruct_psi(&tr, k, &lat, &grid)
            .unwrap()
            .iter()
            .map(|s| s.value.value().re)
            .collect();
        assert!((v[1] - v[2]).abs() < 1e-5 * v[2].abs().max(1.0), "continuity at x_{n}");
        let left = (3.0 * v[2] - 4.0 * v[1] + v[0]) / (2.0 * h);
        let right = (-3.0 * v[2] + 4.0 * v[3] - v[4]) / (2.0 * h);
        let jump = right - left;
        assert!(
            (jump - lat.alpha(n) * v[2]).abs() < 1e-4 * v[2].abs().max(1.0),
            "jump at x_{n}: {jump} vs {}",
            lat.alpha(n) * v[2]
        );
    }
}

/// Brute-force scan of `|L| - target` with bisection; independent of the
/// library's root finder.
fn brute_roots(d: f64, alpha0: f64, target: f64, k_max: f64) -> Vec<f64> {
    let f = |k: f64| lyapunov(k, d, alpha0).abs() - target;
    let m = 400_000;
    let mut roots = Vec::new();
    let mut prev = f(1e-9);
    let mut kp = 1e-9;
    for i in 1..=m {
        let k = k_max * i as f64 / m as f64;
        let v = f(k);
        if (prev < 0.0) != (v < 0.0) {
            let (mut a, mut b) = (kp, k);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if (f(mid) < 0.0) == (f(a) < 0.0) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev = v;
        kp = k;
    }
    roots
}

#[test]
fn band_edges_and_criticals_match_brute_force_scan() {
    for (d, alpha0, omega) in [(1.5, 4.0, 1.0), (1.0, -2.5, 0.6), (2.2, 7.0, 1.3)] {
        let bs = BandStructure::compute(d, alpha0, omega, 8.0).unwrap();
        let edges: Vec<f64> = bs.edges.iter().map(|r| r.k).collect();
        let crits: Vec<f64> = bs.criticals.iter().map(|r| r.k).collect();
        let be = brute_roots(d, alpha0, 1.0, 8.0);
        let bc = brute_roots(d, alpha0, omega.cos(), 8.0);
        assert_eq!(edges.len(), be.len(), "edges for {d} {alpha0}: {edges:?} vs {be:?}");
        assert_eq!(crits.len(), bc.len());
        for (a, b) in edges.iter().zip(&be).chain(crits.iter().zip(&bc)) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn section_spectrum_matches_dense_solver() {
    let p = ModelParams {
        c: 0.3,
        ..ModelParams::default()
    };
    let lat = realize_lattice(&p, PerturbationKind::AmplitudeWvN, 80).unwrap();
    let n = 60;
    for k in [0.9, 2.5, 3.3] {
        let m = weyl_section(k, 0.4, &lat, n).unwrap();
        let b = b_operator_section(lat.strengths(), n).unwrap();
        let t = b_minus_m(&m, &b);

        // dense B - M built from the Jacobi entries directly
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = -lat.alpha(i + 1) - m.diag[i];
            if i + 1 < n {
                dense[(i, i + 1)] = -m.offdiag[i];
                dense[(i + 1, i)] = -m.offdiag[i];
            }
        }
        let mut reference: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        reference.sort_by(f64::total_cmp);
        let ours = t.eigenvalues();
        let scale = reference.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        for (a, b) in ours.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9 * scale, "k={k}: {a} vs {b}");
        }
    }
}

#[test]
fn kappa_star_selects_the_decaying_solution() {
    // Model II, beta = |c alpha0 / 2| = 1
    let p = ModelParams {
        c: 0.5,
        ..ModelParams::default()
    };
    let kind = PerturbationKind::PositionalWvN;
    let bs = BandStructure::compute(p.d, p.alpha0, p.omega, 8.0).unwrap();
    let k = bs.criticals[0].k;
    let rep = analyse_critical_point(k * k, &p, kind, 4000).unwrap();
    let kappa = rep.kappa_star.unwrap();
    assert!((0.0..PI).contains(&kappa));

    let n = 2000;
    let lat = realize_lattice(&p, kind, n + 1).unwrap();
    let decaying = propagate(k, &lat, boundary_seed(kappa, k, &lat), n).unwrap();
    let slope = fit_growth_on(&decaying, Abscissa::LogN).unwrap().slope;
    assert!((slope + 1.0).abs() < 0.05, "forward slope from kappa*: {slope}");
    let other = propagate(k, &lat, boundary_seed((kappa + 0.3) % PI, k, &lat), n).unwrap();
    let slope = fit_growth_on(&other, Abscissa::LogN).unwrap().slope;
    assert!((slope - 1.0).abs() < 0.05, "forward slope away from kappa*: {slope}");
}

#[test]
fn trace_csv_round_trip() {
    let p = ModelParams::default();
    let lat = realize_lattice(&p, PerturbationKind::None, 40).unwrap();
    let tr = propagate(3.5, &lat, [Complex64::new(1.0, 0.0), Complex64::new(0.2, 0.0)], 30).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 30);
    for (i, r) in rows.iter().enumerate() {
        let n: usize = r[0].parse().unwrap();
        assert_eq!(n, i + 1);
        let u0: f64 = r[1].parse().unwrap();
        let lm: f64 = r[5].parse().unwrap();
        assert_eq!(u0, tr.unit(n)[0].re);
        assert_eq!(lm, tr.logmag(n));
    }
}
