mod common;

use std::fs;

use denseleaf::densities::{marginal_fk, Family, ModelDescriptor};
use denseleaf::harness::{
    emit_plot_data, least_squares, read_results, run_experiment, summarize, write_results,
    CalibrationSettings, ExperimentConfig, PlotKind, ResultRow,
};
use denseleaf::kde::{generate_responses, resolve_bandwidth, BandwidthRule};
use denseleaf::kernels::{build_order_kernel, KernelSpec};
use denseleaf::network::{architecture_from_n, TrainSchedule};
use denseleaf::theorycheck::{
    bias_bound_value, check_bias_bound, check_noise_variance, check_poissonization,
    interior_probes, Statistic, ThresholdSet,
};
use denseleaf::twostage::{evaluate, fit_fd, fit_sd, Method, NetworkFitConfig, TestSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick_cfg(epochs: usize, f: f64) -> NetworkFitConfig {
    NetworkFitConfig {
        schedule: TrainSchedule {
            epochs,
            ..Default::default()
        },
        sup_cap: f,
        ..Default::default()
    }
}

#[test]
fn sd_is_deterministic_and_stores_recomputable_responses() {
    let model = ModelDescriptor::new(Family::NBm, 2, 1).build().unwrap();
    let data = model.sample(120, 9).unwrap();
    let k = KernelSpec::box_kernel();
    let cfg = quick_cfg(40, model.sup_bound());
    let a = fit_sd(&data, &k, 0.6, &cfg, 5).unwrap();
    let b = fit_sd(&data, &k, 0.6, &cfg, 5).unwrap();
    let (_, pa) = a.network().unwrap();
    let (_, pb) = b.network().unwrap();
    assert_eq!(pa.flatten(), pb.flatten());

    let n = 60;
    let h = 0.6 * ((n as f64).ln() / n as f64).powf(0.5);
    let y = generate_responses(
        &data.slice(n..2 * n).unwrap(),
        &data.slice(0..n).unwrap(),
        &k,
        h,
    )
    .unwrap();
    assert_eq!(a.provenance().responses, y);
    assert!((a.provenance().bandwidth - h).abs() < 1e-15);
}

#[test]
fn fd_uses_the_full_sample_size_in_its_rules() {
    let model = ModelDescriptor::new(Family::NBm, 2, 1).build().unwrap();
    let data = model.sample(200, 3).unwrap();
    let k = KernelSpec::box_kernel();
    let cfg = quick_cfg(5, model.sup_bound());
    let fd = fit_fd(&data, &k, 0.5, &cfg, 1).unwrap();
    let (arch, _) = fd.network().unwrap();
    // n = 100 per half, m = 2n = 200: ceil(sqrt 400) = 20, ceil(log2 400) = 9
    assert_eq!(arch.depth(), 9);
    assert!(arch.widths()[1..arch.depth() + 1].iter().all(|&w| w == 20));
    assert_eq!(fd.provenance().rule_sample_size, 200);
    let reference = architecture_from_n(200, 2, cfg.sup_cap).unwrap();
    assert_eq!(reference.widths(), arch.widths());
    let h = resolve_bandwidth(BandwidthRule::ScaledTheory { c: 0.5 }, 200, 2).unwrap();
    assert_eq!(fd.provenance().bandwidth, h);
    let again = fit_fd(&data, &k, 0.5, &cfg, 1).unwrap();
    assert_eq!(
        fd.network().unwrap().1.flatten(),
        again.network().unwrap().1.flatten()
    );
}

#[test]
fn fd_and_sd_responses_differ_on_duplicated_halves() {
    let model = ModelDescriptor::new(Family::Linear, 1, 0).build().unwrap();
    let half = model.sample(30, 4).unwrap();
    let data = half.concat(&half).unwrap();
    let k = KernelSpec::box_kernel();
    let cfg = quick_cfg(2, 2.0);
    let sd = fit_sd(&data, &k, 0.5, &cfg, 0).unwrap();
    let fd = fit_fd(&data, &k, 0.5, &cfg, 0).unwrap();
    assert_ne!(
        sd.provenance().responses[..30],
        fd.provenance().responses[..30]
    );
}

#[test]
fn evaluation_is_pure_and_stable_across_seeds() {
    let model = ModelDescriptor::new(Family::NBm, 2, 1).build().unwrap();
    let data = model.sample(100, 2).unwrap();
    let cfg = quick_cfg(300, model.sup_bound());
    let h = fit_sd(&data, &KernelSpec::box_kernel(), 0.6, &cfg, 3).unwrap();
    let a = evaluate(&h, &model, 100_000, 11).unwrap();
    let again = evaluate(&h, &model, 100_000, 11).unwrap();
    assert_eq!(a.test_error.to_bits(), again.test_error.to_bits());
    assert_eq!(a.zero_baseline.to_bits(), again.zero_baseline.to_bits());
    assert_eq!(a.train_error.to_bits(), again.train_error.to_bits());
    let b = evaluate(&h, &model, 100_000, 12).unwrap();
    let tol = 3.0 * (a.test_error_se.powi(2) + b.test_error_se.powi(2)).sqrt();
    assert!((a.test_error - b.test_error).abs() <= tol, "{a:?} vs {b:?}");

    // (F + max f0)^2 bounds every squared error; max f0 from a dense grid
    let mut max_f0 = 0.0f64;
    for i in 0..=400 {
        for j in 0..=400 {
            max_f0 = max_f0.max(model.eval(&[i as f64 / 400.0, j as f64 / 400.0]).unwrap());
        }
    }
    assert!(a.test_error <= (cfg.sup_cap + max_f0).powi(2));
}

#[test]
fn poissonization_matches_the_exact_instance() {
    // uniform density, h = 1[x <= 1/2], A = {sum >= 5}, n = 5
    let model = ModelDescriptor::new(Family::Uniform, 1, 0).build().unwrap();
    let stat = Statistic::BoxIndicator {
        lo: vec![0.0],
        hi: vec![0.5],
    };
    let set = ThresholdSet::AtLeast { t: 5.0 };
    let exact_lhs = 0.5f64.powi(5);
    // M ~ Poi(5) thinned by 1/2 gives Poi(2.5) hits
    let lambda = 2.5f64;
    let mut below = 0.0;
    let mut term = (-lambda).exp();
    for k in 0..5 {
        below += term;
        term *= lambda / (k + 1) as f64;
    }
    let exact_rhs = (2.0 * std::f64::consts::E * std::f64::consts::PI * 5.0).sqrt() * (1.0 - below);

    let small = check_poissonization(&model, 5, &stat, &set, 10_000, 1).unwrap();
    let large = check_poissonization(&model, 5, &stat, &set, 100_000, 1).unwrap();
    for r in [&small, &large] {
        assert!(r.pass && !r.inconclusive);
        let se_lhs = (exact_lhs * (1.0 - exact_lhs) / r.trials as f64).sqrt();
        assert!((r.lhs - exact_lhs).abs() < 4.0 * se_lhs, "{r:?}");
        assert!(
            (r.rhs - exact_rhs).abs() < r.slack + 0.05 * exact_rhs,
            "{r:?} vs {exact_rhs}"
        );
    }
    assert_eq!(small.pass, large.pass);
    assert_eq!(
        small,
        check_poissonization(&model, 5, &stat, &set, 10_000, 1).unwrap()
    );
}

#[test]
fn poissonization_certain_fixed_sample_event() {
    // every one of the n = 20 points lands in [0, 1], so the fixed-size
    // probability is 1 while the Poisson side is P(M >= 20) ~ 1/2
    let model = ModelDescriptor::new(Family::Uniform, 1, 0).build().unwrap();
    let stat = Statistic::BoxIndicator {
        lo: vec![0.0],
        hi: vec![1.0],
    };
    let r = check_poissonization(
        &model,
        20,
        &stat,
        &ThresholdSet::AtLeast { t: 20.0 },
        10_000,
        3,
    )
    .unwrap();
    assert_eq!(r.lhs, 1.0);
    assert!(r.pass && !r.inconclusive);
    let factor = (2.0 * std::f64::consts::E * std::f64::consts::PI * 20.0).sqrt();
    assert!((r.rhs / factor - 0.5).abs() < 0.05);
}

#[test]
fn bias_shrinks_at_least_as_fast_as_the_bound() {
    let model = ModelDescriptor::new(Family::NBm, 2, 2).build().unwrap();
    let k = KernelSpec::box_kernel();
    let probes = interior_probes(2, 0.25, 4);
    let coarse = check_bias_bound(&model, &k, 0.25, &probes).unwrap();
    let fine = check_bias_bound(&model, &k, 0.125, &probes).unwrap();
    assert!(coarse.pass && fine.pass);
    assert!(fine.lhs <= 2f64.powf(model.declared_beta()) * coarse.lhs + 1e-12);
    assert!(coarse.lhs > 0.0);
    // F = 1, d = 1, beta = 1, box kernel, h = 1/4
    assert!((bias_bound_value(0.25, 1.0, 1, &k, 1.0) - 0.125).abs() < 1e-15);
}

#[test]
fn bias_check_rejects_mismatched_kernel_and_high_dimension() {
    let model = ModelDescriptor::new(Family::Linear, 1, 0).build().unwrap();
    let k3 = build_order_kernel(3).unwrap();
    assert!(check_bias_bound(&model, &k3, 0.25, &[vec![0.5]]).is_err());
    assert!(check_bias_bound(&model, &KernelSpec::box_kernel(), 1.5, &[vec![0.5]]).is_err());
    let big = ModelDescriptor::new(Family::Linear, 4, 0).build().unwrap();
    assert!(check_bias_bound(&big, &KernelSpec::box_kernel(), 0.25, &[vec![0.5; 4]]).is_err());
}

#[test]
fn noise_variance_estimates_agree_across_seeds() {
    let model = ModelDescriptor::new(Family::Linear, 1, 0).build().unwrap();
    let k = KernelSpec::box_kernel();
    let a = check_noise_variance(&model, &k, 0.125, 50, 10_000, 1).unwrap();
    let b = check_noise_variance(&model, &k, 0.125, 50, 10_000, 2).unwrap();
    assert!(a.pass && b.pass);
    let (se_a, se_b) = (a.slack / 3.0, b.slack / 3.0);
    assert!((a.lhs - b.lhs).abs() <= 6.0 * (se_a * se_a + se_b * se_b).sqrt());
    let single = check_noise_variance(&model, &k, 0.125, 1, 10_000, 1).unwrap();
    assert!(single.pass && single.lhs.is_finite());
    assert_eq!(
        a,
        check_noise_variance(&model, &k, 0.125, 50, 10_000, 1).unwrap()
    );
}

#[test]
fn vine_marginals_match_closed_form() {
    let model = ModelDescriptor::new(Family::C, 3, 0).build().unwrap();
    let n = 100_000;
    let pts = model.sample(n, 17).unwrap();
    let bins = 50;
    for coord in 0..3 {
        let mut hist = vec![0.0; bins];
        for row in pts.rows() {
            hist[((row[coord] * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let gl = denseleaf::quadrature::GaussLegendre::new(8);
        let l1: f64 = (0..bins)
            .map(|b| {
                let (lo, hi) = (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
                let mass = gl.integrate(lo, hi, |x| marginal_fk(x, 3).unwrap());
                (hist[b] / n as f64 - mass).abs()
            })
            .sum();
        assert!(l1 < 0.02, "coordinate {coord}: L1 {l1}");
    }
}

#[test]
fn joint_densities_have_unit_mass() {
    for (family, d) in [
        (Family::NBm, 3),
        (Family::NBs, 3),
        (Family::BTm, 3),
        (Family::BTs, 3),
        (Family::C, 3),
        (Family::Linear, 2),
    ] {
        let model = ModelDescriptor::new(family, d, 1).build().unwrap();
        let mass: f64 = common::cell_masses(&model, 32, 3).iter().sum();
        assert!((mass - 1.0).abs() < 0.005, "{family} d={d}: mass {mass}");
    }
}

fn synthetic_rows(count: usize, seed: u64) -> Vec<ResultRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| ResultRow {
            model: "NBm".into(),
            d: 2,
            n: if i % 2 == 0 { 200 } else { 1000 },
            method: Method::SD,
            replicate: i / 2,
            seed: i as u64,
            train_error: rng.random_range(0.0..1.0),
            test_error: rng.random_range(0.0..2.0),
            zero_baseline: 3.0,
            optimization_gap_proxy: f64::NAN,
            wall_time_seconds: None,
            error: None,
        })
        .collect()
}

#[test]
fn summary_min_train_selection_matches_a_scan() {
    let rows = synthetic_rows(40, 1);
    let summary = summarize(&rows);
    for n in [200usize, 1000] {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| r.n == n).collect();
        let best = group
            .iter()
            .fold(None::<&ResultRow>, |acc, r| match acc {
                Some(a) if a.train_error <= r.train_error => Some(a),
                _ => Some(r),
            })
            .unwrap();
        let entry = &summary["NBm"][&2][&n][&Method::SD];
        assert_eq!(entry.min_train_test_error, Some(best.test_error));
        let mut tests: Vec<f64> = group.iter().map(|r| r.test_error).collect();
        tests.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(entry.q2, tests[9]);
        assert_eq!(entry.q1, tests[4]);
        assert_eq!(entry.q3, tests[14]);
    }
}

#[test]
fn single_row_summary_is_flat() {
    let rows = synthetic_rows(1, 2);
    let e = &summarize(&rows)["NBm"][&2][&200][&Method::SD];
    let t = rows[0].test_error;
    assert_eq!([e.q0, e.q1, e.q2, e.q3, e.q4], [t; 5]);
}

#[test]
fn scatter_fit_matches_normal_equations() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = synthetic_rows(200, 3);
    rows.retain(|r| r.n == 200);
    assert_eq!(rows.len(), 100);
    let path = dir.path().join("results.csv");
    write_results(&path, &rows).unwrap();
    let files = emit_plot_data(&path, PlotKind::Scatter, dir.path()).unwrap();
    let fit = fs::read_to_string(&files[1]).unwrap();
    let line = fit.lines().nth(1).unwrap();
    let cols: Vec<&str> = line.split(',').collect();
    let (slope, intercept): (f64, f64) = (cols[5].parse().unwrap(), cols[6].parse().unwrap());

    // normal equations [n Σx; Σx Σx²] [b; a] = [Σy; Σxy]
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for r in &rows {
        sx += r.train_error;
        sy += r.test_error;
        sxx += r.train_error * r.train_error;
        sxy += r.train_error * r.test_error;
    }
    let n = rows.len() as f64;
    let det = n * sxx - sx * sx;
    let a = (n * sxy - sx * sy) / det;
    let b = (sxx * sy - sx * sxy) / det;
    assert!((slope - a).abs() < 1e-10 && (intercept - b).abs() < 1e-10);
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.train_error, r.test_error)).collect();
    assert!((least_squares(&pts).0 - a).abs() < 1e-10);

    let boxes = emit_plot_data(&path, PlotKind::Boxplot, dir.path()).unwrap();
    assert_eq!(fs::read_to_string(&boxes[0]).unwrap().lines().count(), 2);
}

#[test]
fn small_run_row_count_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        model: ModelDescriptor::new(Family::NBm, 2, 0),
        sample_sizes: vec![40, 60],
        replicates: 2,
        methods: vec![Method::SD, Method::FD, Method::KDE],
        calibration: CalibrationSettings {
            n_cal: 40,
            n_datasets: 2,
            folds: 5,
            ..Default::default()
        },
        n_test: 2000,
        schedule: TrainSchedule {
            epochs: 20,
            ..Default::default()
        },
        output_dir: dir.path().to_path_buf(),
        save_handles: true,
        ..ExperimentConfig::desk_scale()
    };
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 2 * (2 * 2 + 1));
    assert!(rows.iter().all(|r| r.error.is_none()));
    let back = read_results(&dir.path().join("results.csv")).unwrap();
    assert_eq!(back.len(), rows.len());
    for r in &back {
        assert_eq!(
            r.seed,
            denseleaf::harness::row_seed(0, "NBm", 2, r.n, r.method, r.replicate)
        );
    }
    let handles = fs::read_dir(dir.path().join("handles")).unwrap().count();
    assert_eq!(handles, rows.len());
    let test = TestSet::draw(&cfg.model.build().unwrap(), 10, 1).unwrap();
    assert_eq!(test.len(), 10);
}
