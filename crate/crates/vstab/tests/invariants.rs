//! Cross-module invariants: relations that must hold for every load model
//! and operating point, checked over whole traced curves and trajectories.

use proptest::prelude::*;

use vstab::continuation::{default_grid, grid, trace_manifold, Branch};
use vstab::modal::{classify_curve, oltc_eigenvalue_fd, OltcParams, Stability};
use vstab::network::{solve_alpha_closed_form, NetworkParams};
use vstab::perunit::make_base;
use vstab::tdsim::{simulate, SimConfig};
use vstab::loadmodel::preset;
use vstab::network::expand_state;

fn study_net() -> NetworkParams {
    NetworkParams::new(1.0, 0.4, make_base(100e3, 100e6).unwrap()).unwrap()
}

/// The implicit-function eigenvalue and its finite-difference fallback must
/// agree on every classified point of every curve exercised here.
#[test]
fn eigenvalue_fd_agreement_over_classified_curves() {
    let net = study_net();
    let oltc = OltcParams::new(10.0, 1.0).unwrap();
    let cases = [
        ("aircon", 1.0),
        ("aircon", 1.1),
        ("inductive_095", 1.0),
        ("constant_power_095", 1.0),
    ];
    let mut checked = 0usize;
    for (name, n_tap) in cases {
        let load = preset(name).unwrap();
        let m = trace_manifold(&net, &load, n_tap, &default_grid(1.0, n_tap)).unwrap();
        let c = classify_curve(&m, &net, &load, &oltc);
        // The fold sits at the maximum loading factor; for quadratic loads
        // that is not the same voltage as the maximum power.
        let v_fold = c
            .points
            .iter()
            .max_by(|a, b| a.alpha.total_cmp(&b.alpha))
            .unwrap()
            .v_l;
        for p in &c.points {
            if p.branch == Branch::Nose || p.stable == Some(Stability::Indeterminate) {
                continue;
            }
            // Near the fold v(N) has square-root geometry, so the centered
            // difference with its fixed 1e-6 tap step loses accuracy like
            // (distance to fold)^-2; the comparison is meaningful only at
            // points the fold does not dominate.
            if (p.v_l - c.nose.1).abs() <= 5e-3 || (p.v_l - v_fold).abs() <= 5e-3 {
                continue;
            }
            let ift = p.eigenvalue.expect("classified point lost its eigenvalue");
            let fd = oltc_eigenvalue_fd(p, &net, &load, &oltc)
                .unwrap_or_else(|e| panic!("{name} tap {n_tap} v {}: {e}", p.v_l));
            let bound = 1e-4 * ift.abs().max(fd.abs());
            assert!(
                (ift - fd).abs() <= bound,
                "{name} tap {n_tap} v {}: ift {ift:e} vs fd {fd:e}",
                p.v_l
            );
            checked += 1;
        }
    }
    assert!(checked > 3000, "expected a dense sweep, got {checked} points");
}

/// For a unity-power-factor constant-power load the solved voltages must sit
/// on the analytic circle: v^2 = (V1^2 +- sqrt(V1^4 - 4 X^2 P^2)) / 2.
#[test]
fn constant_power_solutions_sit_on_circle() {
    let net = study_net();
    let load = preset("constant_power_unity").unwrap();
    let m = trace_manifold(&net, &load, 1.0, &default_grid(1.0, 1.0)).unwrap();
    for p in &m.points {
        let disc = (1.0f64 - 4.0 * 0.4 * 0.4 * p.p_load * p.p_load).max(0.0);
        let hi = (1.0 + disc.sqrt()) / 2.0;
        let lo = (1.0 - disc.sqrt()) / 2.0;
        let x = p.v_l * p.v_l;
        let err = (x - hi).abs().min((x - lo).abs());
        assert!(err < 1e-8, "v {} off circle by {err:e}", p.v_l);
    }
}

/// Grid refinement may only improve the nose estimate, and the refined nose
/// must hit the analytic resistive values.
#[test]
fn nose_refinement_converges_toward_analytic() {
    let net = study_net();
    let load = preset("resistive").unwrap();
    let p_exact = 1.25;
    let v_exact = std::f64::consts::FRAC_1_SQRT_2;
    let coarse = trace_manifold(&net, &load, 1.0, &grid(0.999, 0.05, 4e-3)).unwrap();
    let fine = trace_manifold(&net, &load, 1.0, &grid(0.999, 0.05, 1e-3)).unwrap();
    let e_coarse = (coarse.nose.0 - p_exact).abs();
    let e_fine = (fine.nose.0 - p_exact).abs();
    assert!(e_fine <= e_coarse + 1e-9, "refinement went backwards: {e_coarse:e} -> {e_fine:e}");
    assert!(e_fine < 1e-7, "refined nose power off by {e_fine:e}");
    assert!((fine.nose.1 - v_exact).abs() < 1e-6);
    assert!((coarse.nose.1 - v_exact).abs() < 1e-6);
}

/// Stability labels cannot depend on the tap time constant; eigenvalues scale
/// exactly with 1/tau.
#[test]
fn classification_is_tau_invariant() {
    let net = study_net();
    let load = preset("aircon").unwrap();
    let m = trace_manifold(&net, &load, 1.05, &grid(0.95, 0.05, 2e-3)).unwrap();
    let slow = classify_curve(&m, &net, &load, &OltcParams::new(10.0, 1.0).unwrap());
    let fast = classify_curve(&m, &net, &load, &OltcParams::new(1000.0, 1.0).unwrap());
    for (a, b) in slow.points.iter().zip(&fast.points) {
        assert_eq!(a.stable, b.stable, "label flipped at v {}", a.v_l);
        if let (Some(la), Some(lb)) = (a.eigenvalue, b.eigenvalue) {
            let scaled = (la * 10.0 - lb * 1000.0).abs();
            assert!(
                scaled <= 1e-12 * (la * 10.0).abs().max(1.0),
                "tau scaling broke at v {}: {scaled:e}",
                a.v_l
            );
        }
    }
}

/// An infinitely slow controller holds the network at its initial point.
#[test]
fn huge_tau_freezes_the_trajectory() {
    let net = study_net();
    let load = preset("inductive_095").unwrap();
    let alpha = solve_alpha_closed_form(0.9, 1.0, &net, &load).unwrap()[0].0;
    let cfg = SimConfig {
        alpha,
        n_initial: 1.0,
        oltc: OltcParams::new(1e9, 0.9).unwrap(),
        t_end: 100.0,
        dt: 1.0,
        guess: expand_state(0.9, alpha, 1.0, &net, &load).unwrap(),
    };
    let traj = simulate(&cfg, &net, &load).unwrap();
    assert!(traj.collapsed_at.is_none());
    assert_eq!(traj.points.len(), 101);
    for p in &traj.points {
        assert!((p.v_l - 0.9).abs() < 1e-9, "drift at t {}: {}", p.t, p.v_l);
    }
}

/// Halving the step size must not visibly move a resolved trajectory.
#[test]
fn step_halving_leaves_trajectory_unchanged() {
    let net = study_net();
    let load = preset("inductive_095").unwrap();
    let alpha = solve_alpha_closed_form(0.9, 1.0, &net, &load).unwrap()[0].0;
    let base = SimConfig {
        alpha,
        n_initial: 1.001,
        oltc: OltcParams::new(10.0, 0.9).unwrap(),
        t_end: 50.0,
        dt: 0.1,
        guess: expand_state(0.9, alpha, 1.001, &net, &load).unwrap(),
    };
    let coarse = simulate(&base, &net, &load).unwrap();
    let fine = simulate(&SimConfig { dt: 0.05, ..base }, &net, &load).unwrap();
    assert_eq!(fine.points.len(), 2 * coarse.points.len() - 1);
    for (k, cp) in coarse.points.iter().enumerate() {
        let fp = &fine.points[2 * k];
        assert!((cp.t - fp.t).abs() < 1e-9);
        assert!(
            (cp.v_l - fp.v_l).abs() < 1e-6,
            "dt sensitivity at t {}: {:e}",
            cp.t,
            (cp.v_l - fp.v_l).abs()
        );
    }
}

/// Tracing and simulating twice from identical inputs must give bitwise
/// identical results.
#[test]
fn tracing_and_simulation_are_deterministic() {
    let net = study_net();
    let load = preset("aircon").unwrap();
    let g = grid(0.95, 0.3, 2e-3);
    let a = trace_manifold(&net, &load, 1.0, &g).unwrap();
    let b = trace_manifold(&net, &load, 1.0, &g).unwrap();
    assert_eq!(a.points.len(), b.points.len());
    for (x, y) in a.points.iter().zip(&b.points) {
        assert_eq!(x.v_l.to_bits(), y.v_l.to_bits());
        assert_eq!(x.alpha.to_bits(), y.alpha.to_bits());
        assert_eq!(x.p_load.to_bits(), y.p_load.to_bits());
    }

    let alpha = solve_alpha_closed_form(0.8, 1.0, &net, &load).unwrap()[0].0;
    let cfg = SimConfig {
        alpha,
        n_initial: 1.001,
        oltc: OltcParams::new(10.0, 0.8).unwrap(),
        t_end: 20.0,
        dt: 0.1,
        guess: expand_state(0.8, alpha, 1.001, &net, &load).unwrap(),
    };
    let s = simulate(&cfg, &net, &load).unwrap();
    let t = simulate(&cfg, &net, &load).unwrap();
    assert_eq!(s.collapsed_at, t.collapsed_at);
    for (x, y) in s.points.iter().zip(&t.points) {
        assert_eq!(x.n_tap.to_bits(), y.n_tap.to_bits());
        assert_eq!(x.v_l.to_bits(), y.v_l.to_bits());
    }
}

proptest! {
    /// The line is lossless, so active power injected at the source equals
    /// the load's active power, and the reactive gap equals the line's
    /// own consumption X |ip|^2. Holds at every solved state.
    #[test]
    fn power_balance_at_solved_states(
        which in 0usize..4,
        n_tap in 0.85f64..1.15,
        frac in 0.06f64..0.93,
    ) {
        let net = study_net();
        let names = ["aircon", "resistive", "inductive_095", "constant_power_095"];
        let load = preset(names[which]).unwrap();
        let v_l = frac / n_tap;
        for (alpha, z) in solve_alpha_closed_form(v_l, n_tap, &net, &load).unwrap() {
            let s_src = z.v1 * z.ip.conj();
            let s_load = z.vl * z.is_.conj();
            let line_q = 0.4 * (z.ip.re * z.ip.re + z.ip.im * z.ip.im);
            prop_assert!((s_src.re - s_load.re).abs() < 1e-10,
                "P loss {:e} at alpha {alpha}", (s_src.re - s_load.re).abs());
            prop_assert!((s_src.im - s_load.im - line_q).abs() < 1e-10,
                "Q mismatch {:e} at alpha {alpha}", (s_src.im - s_load.im - line_q).abs());
            // The ideal transformer itself passes power through unchanged.
            let s_p = z.vp * z.ip.conj();
            let s_s = z.vs * z.is_.conj();
            prop_assert!((s_p.re - s_s.re).abs() < 1e-12);
            prop_assert!((s_p.im - s_s.im).abs() < 1e-12);
        }
    }
}
