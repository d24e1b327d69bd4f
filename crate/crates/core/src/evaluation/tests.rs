use super::*;
use crate::fields::{GaussianMixture, GmmField};
use crate::scheme::SchemeGrids;
use crate::schedulers::{make_cosine_scheduler, make_ot_scheduler, Scheduler};
use crate::solvers::solve_adaptive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mixture() -> GaussianMixture {
    GaussianMixture::circle(2, 5, 3.0, 0.09).unwrap()
}

fn testbed() -> GmmField {
    GmmField::new(make_ot_scheduler().shared(), mixture())
}

fn noise(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..2).map(|_| rng.sample(rand_distr::StandardNormal)).collect()).collect()
}

#[test]
fn psnr_examples() {
    let a = vec![vec![0.5, -0.2], vec![0.1, 0.3]];
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    let b: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x + 0.1).collect()).collect();
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let gain = psnr(&a, &b, 2.0).unwrap() - psnr(&a, &b, 1.0).unwrap();
    assert!((gain - 10.0 * 4f64.log10()).abs() < 1e-12);
    assert!(psnr(&a, &b, 0.0).is_err());
    assert_eq!(default_peak(&a), 0.5);
}

#[test]
fn slope_of_exact_power_law() {
    let xs = [0.1, 0.05, 0.025, 0.0125];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 7.0 * x.powi(3)).collect();
    assert!((log_log_slope(&xs, &ys) - 3.0).abs() < 1e-12);
}

#[test]
fn base_solver_local_orders() {
    let f = testbed();
    let paths: Vec<_> = noise(8, 1).iter().map(|x0| solve_adaptive(&f, x0, 1e-11, 1e-11, 1.0).unwrap()).collect();
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let anchors = [0.1, 0.3, 0.5, 0.7];
    let rk1 = base_step_order(&f, StepKind::Rk1, &paths, &anchors, &hs).unwrap();
    let rk2 = base_step_order(&f, StepKind::Rk2, &paths, &anchors, &hs).unwrap();
    assert!((rk1.slope - 2.0).abs() <= 0.3, "{rk1:?}");
    assert!((rk2.slope - 3.0).abs() <= 0.3, "{rk2:?}");
}

#[test]
fn bespoke_local_order_on_random_member() {
    let f = testbed();
    let paths: Vec<_> = noise(4, 2).iter().map(|x0| solve_adaptive(&f, x0, 1e-11, 1e-11, 1.0).unwrap()).collect();
    let fam = SmoothScaleTime::sample(&mut ChaCha8Rng::seed_from_u64(3), 3);
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let anchors = [0.1, 0.3, 0.5, 0.7];
    let fit = bespoke_step_order(&f, &fam, BaseKind::Rk2, &paths, &anchors, &hs).unwrap();
    assert!((fit.slope - 3.0).abs() <= 0.3, "{fit:?}");
}

#[test]
fn scale_time_map_examples() {
    let same = ScaleTimeMap::new(Scheduler::Ot, Scheduler::Ot);
    assert_eq!(same.at(0.37).unwrap(), crate::scheme::Node { t: 0.37, dt: 1.0, s: 1.0, ds: 0.0 });
    let map = ScaleTimeMap::new(make_ot_scheduler(), make_cosine_scheduler());
    let nd = map.at(0.5).unwrap();
    assert!((nd.t - 0.5).abs() < 1e-12);
    assert!((nd.s - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn scale_time_map_derivatives_match_differences() {
    let map = ScaleTimeMap::new(Scheduler::default_vp(), make_cosine_scheduler());
    let h = 1e-6;
    for &r in &[0.1, 0.5, 0.9] {
        let (lo, mid, hi) = (map.at(r - h).unwrap(), map.at(r).unwrap(), map.at(r + h).unwrap());
        assert!(((hi.t - lo.t) / (2.0 * h) - mid.dt).abs() < 1e-6 * (1.0 + mid.dt.abs()));
        assert!(((hi.s - lo.s) / (2.0 * h) - mid.ds).abs() < 1e-6 * (1.0 + mid.ds.abs()));
    }
}

#[test]
fn identical_schedulers_are_trivially_equivalent() {
    let rep = scheduler_equivalence(Scheduler::Cosine, Scheduler::Cosine, &mixture(), &noise(2, 4), &EquivalenceOptions::default()).unwrap();
    assert_eq!(rep.max_path_residual, 0.0);
    assert_eq!(rep.max_field_rel_error, 0.0);
}

#[test]
fn ot_and_vp_paths_are_equivalent() {
    let opts = EquivalenceOptions { field_points: 50, ..EquivalenceOptions::default() };
    let rep = scheduler_equivalence(Scheduler::Ot, Scheduler::default_vp(), &mixture(), &noise(4, 5), &opts).unwrap();
    assert!(rep.max_path_residual <= 1e-5, "{}", rep.max_path_residual);
    assert!(rep.max_field_rel_error <= 1e-8, "{}", rep.max_field_rel_error);
    let rev = scheduler_equivalence(Scheduler::default_vp(), Scheduler::Ot, &mixture(), &noise(4, 5), &opts).unwrap();
    assert!(rev.max_path_residual <= 1e-5, "{}", rev.max_path_residual);
}

#[test]
fn sweep_accounting_and_identity_row() {
    let f = testbed();
    let x0 = noise(16, 6);
    let reference: Vec<Vec<f64>> = x0.iter().map(|x| solve_adaptive(&f, x, 1e-11, 1e-11, 1.0).unwrap().final_state().to_vec()).collect();
    let solvers = [SolverSpec::Plain(StepKind::Rk2), SolverSpec::Identity(BaseKind::Rk2), SolverSpec::Plain(StepKind::Rk4)];
    let rep = sweep(&f, &solvers, &[8, 16, 20], &x0, &reference, None).unwrap();
    assert_eq!(rep.rows.len(), 9);
    assert_eq!(rep.row("rk2", 16).unwrap().steps, 8);
    assert_eq!(rep.row("rk4", 16).unwrap().steps, 4);
    for nfe in [8, 16, 20] {
        let (a, b) = (rep.row("rk2", nfe).unwrap(), rep.row("identity-rk2", nfe).unwrap());
        assert!((a.rmse - b.rmse).abs() <= 1e-12 * a.rmse);
    }
    let rk2: Vec<f64> = [8, 16, 20].iter().map(|&n| rep.row("rk2", n).unwrap().rmse).collect();
    assert!(rk2.windows(2).all(|w| w[1] <= w[0]));
    assert!(sweep(&f, &solvers, &[10], &x0, &reference, None).is_err());
    let mut csv = Vec::new();
    rep.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 10);
}

#[test]
fn missing_trained_scheme_is_a_config_error() {
    let f = testbed();
    let x0 = noise(2, 7);
    let g = SchemeGrids::identity(BaseKind::Rk2, 5).unwrap();
    let spec = SolverSpec::Bespoke { label: "bespoke".into(), schemes: vec![g] };
    assert!(sweep(&f, &[spec.clone()], &[10], &x0, &x0, Some(1.0)).is_ok());
    assert!(sweep(&f, &[spec], &[12], &x0, &x0, Some(1.0)).is_err());
}
