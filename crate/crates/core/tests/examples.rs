mod common;

use common::*;
use crq::amp::{amp_run, AmpOptions, Calibration};
use crq::cli::{self, ExperimentConfig, RunPayload};
use crq::precoder::{self, InnerOptions};
use crq::simulation::{generate_instance, run_sep_experiment, SolverBackend, SystemConfig};
use crq::state_evolution::{self, ModelParams};
use ndarray::{Array1, Array2};

fn cfg(n: usize, k: usize, sigma2: f64) -> SystemConfig {
    SystemConfig {
        n,
        k,
        sigma2,
        rho: 0.2,
        lambda: 0.2,
        squid: false,
        solver: SolverBackend::Convex,
    }
}

#[test]
fn fixed_point_at_reference_config() {
    let p = ModelParams::new(0.5, 0.2, 0.2, 0.0).unwrap();
    let fp = state_evolution::solve_fixed_point(0.8, &p).unwrap();
    let (t2, g) = fixed_point_oracle(0.8, 0.5, 0.2);
    assert!(
        (fp.tau2 - t2).abs() < 1e-9 && (fp.gamma - g).abs() < 1e-9,
        "{fp:?} vs {t2} {g}"
    );
}

#[test]
fn risk_at_reference_config() {
    let p = ModelParams::new(0.5, 0.2, 0.3, 0.0).unwrap();
    let f = state_evolution::risk_f(1.0, &p).unwrap();
    let oracle = risk_oracle(1.0, 0.5, 0.2, 0.3);
    assert!((f - oracle).abs() < 1e-9, "{f} vs {oracle}");
}

#[test]
fn doubling_lambda_shrinks_the_box() {
    let a1 =
        state_evolution::minimize_risk(&ModelParams::new(0.5, 0.2, 0.2, 0.0).unwrap()).unwrap();
    let a2 =
        state_evolution::minimize_risk(&ModelParams::new(0.5, 0.2, 0.4, 0.0).unwrap()).unwrap();
    assert!(a2 < a1, "{a2} !< {a1}");
}

#[test]
fn beta_bar_matches_direct_quadrature() {
    for &(delta, rho, lambda) in &[(0.5, 0.2, 0.2), (0.25, 0.05, 0.6), (1.5, 1.0, 0.1)] {
        let p = ModelParams::new(delta, rho, lambda, 0.0).unwrap();
        let c = state_evolution::characterize(&p).unwrap();
        let (tau, a, g) = (c.fp_star.tau2.sqrt(), c.a_star, c.fp_star.gamma);
        let eta = |x: f64| (x / (1.0 + g)).max(-a).min(a);
        let k = a * (1.0 + g) / tau;
        let direct = gauss_expect(
            |z| (c.alpha_bar * eta(tau * z).abs() - 1.0).powi(2),
            &[-k, 0.0, k],
            1 << 14,
        ) / delta;
        assert!(
            (c.beta_bar - direct).abs() < 1e-10,
            "{} vs {direct}",
            c.beta_bar
        );
    }
}

#[test]
fn tuned_lambda_beats_squid() {
    let sigma2 = cli::snr_db_to_sigma2(5.0);
    let tuned =
        state_evolution::characterize(&ModelParams::new(0.5, 0.0, 0.31, sigma2).unwrap()).unwrap();
    let squid =
        state_evolution::characterize(&precoder::squid_preset(256, 128, sigma2).unwrap()).unwrap();
    assert!(tuned.sep < squid.sep, "{} vs {}", tuned.sep, squid.sep);
}

#[test]
fn amp_objective_matches_reference_solver() {
    let p = ModelParams::new(0.5, 0.2, 0.2, 0.0).unwrap();
    let c = state_evolution::characterize(&p).unwrap();
    let inst = generate_instance(&cfg(512, 256, 0.0), 31);
    let pg = precoder::solve_inner(
        inst.h.view(),
        inst.s.view(),
        c.a_star,
        0.2,
        InnerOptions {
            tol: 1e-12,
            max_iter: 100_000,
        },
    )
    .unwrap();
    let opts = AmpOptions {
        calibration: Calibration::Adaptive,
        ..AmpOptions::default()
    };
    let out = amp_run(
        inst.h.view(),
        inst.s.view(),
        c.a_star,
        &c.fp_star,
        0.2,
        opts,
    )
    .unwrap();
    assert!(out.converged);
    let v = precoder::empirical_objective(inst.h.view(), inst.s.view(), out.x.view(), 0.2);
    assert!((v - pg.value).abs() < 1e-8, "{v} vs {}", pg.value);
}

#[test]
fn amp_energy_follows_state_evolution() {
    let p = ModelParams::new(0.5, 0.2, 0.2, 0.0).unwrap();
    let c = state_evolution::characterize(&p).unwrap();
    let n = 2048;
    let tol = 5.0 / (n as f64).sqrt();
    let inst = generate_instance(&cfg(n, n / 2, 0.0), 8);
    let out = amp_run(
        inst.h.view(),
        inst.s.view(),
        c.a_star,
        &c.fp_star,
        0.2,
        AmpOptions::default(),
    )
    .unwrap();
    // First iterate: x_1 = eta(H^T s) with H^T s ~ N(0, 1) entrywise.
    let first = kernels_oracle(1.0, c.a_star, c.fp_star.gamma, 4096).0;
    assert!(
        (out.trace[0].energy - first).abs() < tol,
        "{} vs {first}",
        out.trace[0].energy
    );
    let last = out.trace.last().unwrap().energy;
    let predicted = 0.5 * (c.fp_star.tau2 - 1.0);
    assert!((last - predicted).abs() < tol, "{last} vs {predicted}");
    let cmp = crq::amp::empirical_tau_trace(&out.trace, &c.fp_star, 0.5);
    assert_eq!(cmp.len(), out.trace.len());
    assert!(cmp.iter().take(10).all(|r| r.deviation < tol));
}

#[test]
fn two_by_two_reference_instance() {
    let h = Dense {
        rows: 2,
        cols: 2,
        v: vec![0.9, -0.4, 0.3, 1.1],
    };
    let s = [1.0, -1.0];
    let (x_ref, v_ref) = box_ridge_2d_oracle(&h, &s, 0.3, 0.7);
    let hn = Array2::from_shape_vec((2, 2), h.v.clone()).unwrap();
    let sn = Array1::from(s.to_vec());
    let sol = precoder::solve_inner(
        hn.view(),
        sn.view(),
        0.7,
        0.3,
        InnerOptions {
            tol: 1e-13,
            max_iter: 100_000,
        },
    )
    .unwrap();
    for (x, r) in sol.x.iter().zip(&x_ref) {
        assert!((x - r).abs() < 1e-6, "{:?} vs {x_ref:?}", sol.x);
    }
    assert!((sol.value - v_ref).abs() < 1e-10);
}

#[test]
fn channel_entries_have_variance_one_over_k() {
    let c = cfg(2000, 500, 0.0);
    let inst = generate_instance(&c, 1);
    let m = inst.h.len() as f64;
    let mean = inst.h.sum() / m;
    let var = inst.h.mapv(|v| (v - mean).powi(2)).sum() / (m - 1.0);
    assert!((var * 500.0 - 1.0).abs() < 0.01, "{var}");
}

#[test]
fn residual_skewness_vanishes() {
    let r = run_sep_experiment(&cfg(256, 128, 0.1), 60, 3).unwrap();
    let m = r.moment_check();
    assert!(m.skewness.within(3.0), "{:?}", m.skewness);
    assert!(m.second_moment.within(3.0), "{:?}", m.second_moment);
}

#[test]
fn lambda_grid_has_interior_minimum() {
    let c = ExperimentConfig {
        delta: Some(0.5),
        rho: Some(0.0),
        lambda: Some(0.31),
        snr_db: Some(5.0),
        theory_only: true,
        grid: vec!["lambda=0.05:1.0:0.01".into()],
        ..ExperimentConfig::default()
    };
    let out = cli::cmd_sweep(&c).unwrap();
    let RunPayload::Sweep { rows } = &out.record.payload else {
        panic!()
    };
    assert_eq!(rows.len(), 96);
    let seps: Vec<f64> = rows.iter().map(|r| r.sep_theory().unwrap()).collect();
    let imin = (0..seps.len())
        .min_by(|&i, &j| seps[i].partial_cmp(&seps[j]).unwrap())
        .unwrap();
    assert!(imin > 0 && imin < seps.len() - 1);
    assert!((rows[imin].point.params.lambda - 0.31).abs() <= 0.1);
    // Parsable by a plain CSV reader: constant field count, numeric theory.
    let widths: Vec<usize> = out.csv.lines().map(|l| l.split(',').count()).collect();
    assert!(widths.iter().all(|&w| w == 15));
}

#[test]
fn rho_lambda_grid_is_minimized_at_rho_zero() {
    let c = ExperimentConfig {
        delta: Some(0.5),
        snr_db: Some(5.0),
        theory_only: true,
        grid: vec!["rho=0:0.3:0.05".into(), "lambda=0.1:0.6:0.05".into()],
        ..ExperimentConfig::default()
    };
    let out = cli::cmd_sweep(&c).unwrap();
    let RunPayload::Sweep { rows } = &out.record.payload else {
        panic!()
    };
    let best = rows
        .iter()
        .min_by(|a, b| {
            a.sep_theory()
                .unwrap()
                .partial_cmp(&b.sep_theory().unwrap())
                .unwrap()
        })
        .unwrap();
    assert_eq!(best.point.params.rho, 0.0);
}
