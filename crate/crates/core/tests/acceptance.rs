//! Acceptance suite. Built with `harness = false` so the PASS/FAIL table is
//! printed by a plain `cargo test`. Exits non-zero when any criterion fails.
//!
//! Run alone with `cargo test -p gpmpc --test acceptance`.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gpmpc::data::Dataset;
use gpmpc::dynamics::{LinearNominal, ResidualDynamics};
use gpmpc::gp::{expand_params, log_evidence, nll, nll_grad, train_hyperparams, ExactGp, TrainOptions};
use gpmpc::kernel::{gram, kernel_grad_hyper, kernel_grad_input, KernelParams};
use gpmpc::model::{ModelOptions, ModelRegistry};
use gpmpc::mpc::{solve_ocp, CovarianceMode, MpcConfig, MpcController, Ocp, SolverOptions};
use gpmpc::plant::{
    empirical_violation_rate, generate_dataset, run_closed_loop, BenchmarkA, Excitation, Monitor, Pendulum,
    PlantModel, SimResult,
};
use gpmpc::propagation::{mc_onestep, mc_rollout, moment_match, propagate_onestep, rollout};
use gpmpc::sparse::{subset_of_data, FitcPosterior, InducingSet, SsgpModel, SubsetStrategy, VfePosterior};
use gpmpc::{GaussianBelief, PropagationMethod, PropagatorRegistry, Regressor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_points(r: &mut ChaCha8Rng, n: usize, n_z: usize) -> Vec<DVector<f64>> {
    (0..n).map(|_| DVector::from_fn(n_z, |_, _| r.random_range(-2.0..2.0))).collect()
}

/// Smooth targets plus a little noise.
fn random_dataset(seed: u64, n: usize, n_z: usize) -> Dataset {
    let mut r = rng(seed);
    let inputs = random_points(&mut r, n, n_z);
    let targets = DMatrix::from_fn(n, 1, |i, _| {
        inputs[i].iter().map(|x| x.sin()).sum::<f64>() + 0.1 * r.random::<f64>()
    });
    Dataset::new(inputs, targets).unwrap()
}

fn random_params(r: &mut ChaCha8Rng) -> KernelParams {
    KernelParams::new(r.random_range(0.5..2.0), r.random_range(0.2..2.0), r.random_range(1e-3..1e-1)).unwrap()
}

/// Relative error with a floor on the denominator so entries near zero are
/// judged on absolute error instead.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn budget(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
    }
}

// 1 ------------------------------------------------------------------------

fn exact_gp_oracle() -> Outcome {
    let (worst, elapsed) = timed(|| {
        let mut worst = 0.0f64;
        for seed in 0..50u64 {
            let mut r = rng(1000 + seed);
            let n = r.random_range(1..=50);
            let n_z = r.random_range(1..=4);
            let data = random_dataset(seed, n, n_z);
            let p = random_params(&mut r);
            let gp = ExactGp::fit(&data, &[p]).unwrap();
            let zs = random_points(&mut r, 5, n_z);
            let pred = gp.predict(&zs).unwrap();

            let mut k = gram(data.inputs(), data.inputs(), &p).unwrap();
            for i in 0..n {
                k[(i, i)] += p.sigma_w_sq;
            }
            let inv = k.try_inverse().unwrap();
            let ks = gram(data.inputs(), &zs, &p).unwrap();
            let mean = ks.transpose() * &inv * data.target_column(0);
            let cov = gram(&zs, &zs, &p).unwrap() - ks.transpose() * &inv * &ks;
            worst = worst
                .max((pred.mean.column(0) - mean).amax())
                .max((&pred.cov[0] - cov).amax());
        }
        worst
    });
    budget(elapsed, 10.0)?;
    let msg = format!("max abs error {worst:.2e} (tol 1e-8), {:.2}s", elapsed.as_secs_f64());
    if worst <= 1e-8 { Ok(msg) } else { Err(msg) }
}

// 2 ------------------------------------------------------------------------

#[derive(Default)]
struct GradWorst {
    nll: f64,
    hyper: f64,
    input: f64,
    dmean: f64,
    dvar: f64,
    d2var: f64,
}

fn gradient_case(seed: u64, w: &mut GradWorst) {
    let h = 1e-5;
    let mut r = rng(2000 + seed);
    let n = r.random_range(5..=15);
    let n_z = r.random_range(1..=3);
    let data = random_dataset(3000 + seed, n, n_z);
    let x = [r.random_range(-0.7..0.7), r.random_range(-1.5..0.7), r.random_range(-6.0..-2.0)];
    let p = KernelParams::from_log(&x);

    let g = nll_grad(&data, &[p]).unwrap()[0];
    for j in 0..3 {
        let fd = central(
            |s| {
                let mut y = x;
                y[j] += s;
                nll(&data, &[KernelParams::from_log(&y)]).unwrap()
            },
            h,
        );
        w.nll = w.nll.max(rel(g[j], fd));
    }

    let (dk_dl, dk_de) = kernel_grad_hyper(data.inputs(), &p).unwrap();
    for (j, dk) in [(0, &dk_dl), (1, &dk_de)] {
        let plus = {
            let mut y = x;
            y[j] += h;
            gram(data.inputs(), data.inputs(), &KernelParams::from_log(&y)).unwrap()
        };
        let minus = {
            let mut y = x;
            y[j] -= h;
            gram(data.inputs(), data.inputs(), &KernelParams::from_log(&y)).unwrap()
        };
        let fd = (plus - minus) / (2.0 * h);
        for (a, b) in dk.iter().zip(fd.iter()) {
            w.hyper = w.hyper.max(rel(*a, *b));
        }
    }

    let za = &random_points(&mut r, 1, n_z)[0];
    let zb = &data.inputs()[0];
    let gi = kernel_grad_input(za, zb, &p).unwrap();
    for j in 0..n_z {
        let fd = central(
            |s| {
                let mut z = za.clone();
                z[j] += s;
                p.k(&z, zb)
            },
            h,
        );
        w.input = w.input.max(rel(gi[j], fd));
    }

    let gp = ExactGp::fit(&data, &[p]).unwrap();
    let out = &gp.predict_gradients(za).unwrap()[0];
    let e = gp.expansion(0);
    let shift = |j: usize, s: f64| {
        let mut z = za.clone();
        z[j] += s;
        z
    };
    for j in 0..n_z {
        let dm = central(|s| e.mean_var(&shift(j, s)).0, h);
        let dv = central(|s| e.mean_var(&shift(j, s)).1, h);
        w.dmean = w.dmean.max(rel(out.dmean[j], dm));
        w.dvar = w.dvar.max(rel(out.dvar[j], dv));
        let plus = e.gradients(&shift(j, h)).dvar;
        let minus = e.gradients(&shift(j, -h)).dvar;
        for i in 0..n_z {
            let fd = (plus[i] - minus[i]) / (2.0 * h);
            w.d2var = w.d2var.max(rel(out.d2var[(i, j)], fd));
        }
    }
}

fn gradient_suite() -> Outcome {
    let (w, elapsed) = timed(|| {
        let mut w = GradWorst::default();
        for seed in 0..100 {
            gradient_case(seed, &mut w);
        }
        w
    });
    budget(elapsed, 30.0)?;
    let first = [w.nll, w.hyper, w.input, w.dmean, w.dvar].into_iter().fold(0.0, f64::max);
    let msg = format!(
        "worst rel error: nll {:.1e}, kernel hyper {:.1e}, kernel input {:.1e}, dmean {:.1e}, dvar {:.1e} (tol 1e-5); \
         d2var {:.1e} (tol 1e-4); {:.2}s",
        w.nll,
        w.hyper,
        w.input,
        w.dmean,
        w.dvar,
        w.d2var,
        elapsed.as_secs_f64()
    );
    if first <= 1e-5 && w.d2var <= 1e-4 { Ok(msg) } else { Err(msg) }
}

// 3 ------------------------------------------------------------------------

fn sparse_consistency() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut r = rng(4000 + seed);
        let n_z = r.random_range(1..=3);
        let data = random_dataset(4100 + seed, r.random_range(5..=30), n_z);
        let p = KernelParams::new(r.random_range(0.5..2.0), r.random_range(0.3..2.0), r.random_range(1e-2..1e-1)).unwrap();
        let gp = ExactGp::fit(&data, &[p]).unwrap();
        let set = InducingSet::new(data.inputs().to_vec()).unwrap();
        let fitc = FitcPosterior::fit(&data, &[p], &set).unwrap();
        let vfe = VfePosterior::fit(&data, &[p], &set).unwrap();
        for z in random_points(&mut r, 10, n_z) {
            let (m, var) = gp.predict_point(&z).unwrap();
            for (sm, sv, _) in [fitc.predict(&z).unwrap()[0], vfe.predict(&z).unwrap()[0]] {
                worst = worst.max((sm - m[0]).abs()).max((sv - var[0]).abs());
            }
        }
    }
    let mut bound_gap = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let data = random_dataset(4200 + seed, 40, 2);
        let p = KernelParams::new(1.0, 0.7, 0.05).unwrap();
        let sub = subset_of_data(&data, 3 + (seed as usize % 15), SubsetStrategy::Random, seed).unwrap();
        let set = InducingSet::new(sub.inputs().to_vec()).unwrap();
        let elbo = VfePosterior::fit(&data, &[p], &set).unwrap().elbo();
        bound_gap = bound_gap.max(elbo - log_evidence(&data, &[p]).unwrap());
    }
    let msg = format!(
        "Z=X max gap {worst:.2e} (tol 1e-6); max(ELBO - log evidence) {bound_gap:.2e} over 20 subsets (slack 1e-9)"
    );
    if worst <= 1e-6 && bound_gap <= 1e-9 { Ok(msg) } else { Err(msg) }
}

// 4 ------------------------------------------------------------------------

fn ssgp_convergence() -> Outcome {
    let p = KernelParams::new(1.0, 1.0, 0.01).unwrap();
    let model = SsgpModel::prior(&[p], 1, 2000, 0).unwrap();
    let mut r = rng(12);
    let (mut worst, mut diag) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = v(&[r.random_range(-2.0..2.0)]);
        let b = v(&[r.random_range(-2.0..2.0)]);
        diag = diag.max((model.implied_kernel(0, &a, &a) - p.lambda).abs());
        worst = worst.max((model.implied_kernel(0, &a, &b) - p.k(&a, &b)).abs());
    }
    let msg = format!("M=2000: max kernel error {worst:.4} (tol 0.05), diagonal error {diag:.1e} (tol 1e-12)");
    if worst < 0.05 && diag <= 1e-12 { Ok(msg) } else { Err(msg) }
}

// 5 ------------------------------------------------------------------------

fn moment_matching_vs_mc() -> Outcome {
    let n = 1_000_000;
    let ((worst_mean, worst_var), elapsed) = timed(|| {
        let (mut wm, mut wv) = (0.0f64, 0.0f64);
        for case in 0..10u64 {
            let mut r = rng(5000 + case);
            let n_z = 1 + (case as usize % 2);
            let data = random_dataset(5100 + case, 10, n_z);
            let p = KernelParams::new(r.random_range(0.5..1.5), r.random_range(0.3..1.0), 0.01).unwrap();
            let gp = ExactGp::fit(&data, &[p]).unwrap();
            let a = DMatrix::from_fn(n_z, n_z, |_, _| r.random_range(-0.3..0.3));
            let cov = &a * a.transpose() + DMatrix::identity(n_z, n_z) * 0.02;
            let belief = GaussianBelief::new(random_points(&mut r, 1, n_z).remove(0) * 0.5, cov).unwrap();
            let mm = moment_match(&gp, belief.mean(), belief.cov()).unwrap();
            let mc = mc_onestep(&gp, &belief, n, 6000 + case).unwrap();
            let nf = n as f64;
            let mean = mc.samples.iter().map(|s| s[0]).sum::<f64>() / nf;
            let var = mc.samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let m4 = mc.samples.iter().map(|s| (s[0] - mean).powi(4)).sum::<f64>() / nf;
            wm = wm.max((mm.mean[0] - mean).abs() / (var / nf).sqrt());
            wv = wv.max((mm.cov[(0, 0)] - var).abs() / ((m4 - var * var) / nf).sqrt());
        }
        (wm, wv)
    });
    budget(elapsed, 60.0)?;
    let msg = format!(
        "worst mean gap {worst_mean:.2} SE (tol 3), worst variance gap {worst_var:.2} SE (tol 5), {:.1}s",
        elapsed.as_secs_f64()
    );
    if worst_mean <= 3.0 && worst_var <= 5.0 { Ok(msg) } else { Err(msg) }
}

// 6 ------------------------------------------------------------------------

fn point_mass_identity() -> Outcome {
    let data = random_dataset(7000, 20, 2);
    let p = KernelParams::new(1.0, 0.5, 0.01).unwrap();
    let set = InducingSet::new(data.inputs()[..6].to_vec()).unwrap();
    let models: Vec<Box<dyn Regressor>> = vec![
        Box::new(ExactGp::fit(&data, &[p]).unwrap()),
        Box::new(ExactGp::fit(&subset_of_data(&data, 8, SubsetStrategy::FarthestPoint, 0).unwrap(), &[p]).unwrap()),
        Box::new(FitcPosterior::fit(&data, &[p], &set).unwrap()),
        Box::new(VfePosterior::fit(&data, &[p], &set).unwrap()),
        Box::new(SsgpModel::fit(&data, &[p], 50, 1).unwrap()),
    ];
    let methods = [
        PropagationMethod::deterministic(),
        PropagationMethod::linearized(1),
        PropagationMethod::linearized(2),
        PropagationMethod::moment_matching(),
        PropagationMethod::sigma_point(None),
        PropagationMethod::monte_carlo(1000, 0),
    ];
    let registry = PropagatorRegistry::default();
    let belief = GaussianBelief::point(v(&[0.3, -0.8]));
    let (mut worst, mut pairs) = (0.0f64, 0);
    for model in &models {
        let (mu, var) = model.predict(belief.mean());
        for m in &methods {
            let prop = registry.create(m).unwrap();
            if !prop.supports(model.as_ref()) {
                continue;
            }
            let out = propagate_onestep(model.as_ref(), &belief, prop.as_ref()).unwrap();
            worst = worst
                .max((out.mean - &mu).amax())
                .max((out.cov - DMatrix::from_diagonal(&var)).amax());
            pairs += 1;
        }
    }
    let msg = format!("{pairs} method/model pairs, max deviation {worst:.1e} (tol 1e-12)");
    if worst <= 1e-12 { Ok(msg) } else { Err(msg) }
}

// 7 ------------------------------------------------------------------------

fn kalman_rollout() -> Outcome {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.05, 0.95]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
    let sigma_v = DMatrix::from_row_slice(2, 2, &[1e-3, 2e-4, 2e-4, 5e-4]);
    let dynamics = ResidualDynamics::new(
        Arc::new(LinearNominal::new(a.clone(), b.clone()).unwrap()),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        sigma_v.clone(),
    )
    .unwrap();
    // a GP whose prior scale makes the residual identically negligible
    let mut r = rng(8);
    let inputs = random_points(&mut r, 10, 3);
    let gp = ExactGp::fit(&Dataset::new(inputs, DMatrix::zeros(10, 1)).unwrap(), &[KernelParams::new(1e-14, 1.0, 1e-2).unwrap()])
        .unwrap();
    let x0 = GaussianBelief::new(v(&[1.0, -0.5]), DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.05])).unwrap();
    let us: Vec<DVector<f64>> = (0..20).map(|i| v(&[(i as f64 * 0.3).sin()])).collect();
    let registry = PropagatorRegistry::default();
    let mut worst = 0.0f64;
    for m in [
        PropagationMethod::deterministic(),
        PropagationMethod::linearized(1),
        PropagationMethod::linearized(2),
        PropagationMethod::moment_matching(),
        PropagationMethod::sigma_point(None),
    ] {
        let prop = registry.create(&m).unwrap();
        let traj = rollout(&dynamics, &gp, &x0, &us, prop.as_ref()).unwrap();
        let (mut mean, mut cov) = (x0.mean().clone(), x0.cov().clone());
        for (k, u) in us.iter().enumerate() {
            mean = &a * &mean + &b * u;
            cov = &a * &cov * a.transpose() + &sigma_v;
            worst = worst
                .max((traj[k + 1].mean() - &mean).amax())
                .max((traj[k + 1].cov() - &cov).amax());
        }
    }
    let msg = format!("5 methods over T=20, max deviation {worst:.1e} (tol 1e-6)");
    if worst <= 1e-6 { Ok(msg) } else { Err(msg) }
}

// 8 ------------------------------------------------------------------------

fn zero_gp(n_z: usize) -> Arc<dyn Regressor> {
    let inputs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 - 1.5; n_z]).collect();
    let data = Dataset::from_rows(&inputs, &vec![vec![0.0]; 4]).unwrap();
    Arc::new(ExactGp::fit(&data, &[KernelParams::new(1.0, 1.0, 0.01).unwrap()]).unwrap())
}

fn mpc_sanity() -> Outcome {
    let scalar = ResidualDynamics::new(
        Arc::new(LinearNominal::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap()),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    let toy = MpcConfig {
        horizon: 1,
        x_ref: vec![0.0],
        q: vec![vec![1.0]],
        r: vec![vec![1.0]],
        q_terminal: None,
        constraints: vec![],
        u_lo: vec![-2.0],
        u_hi: vec![2.0],
        covariance_mode: CovarianceMode::Propagated,
        propagation: PropagationMethod::deterministic(),
        solver: SolverOptions::default(),
    };
    let sol = solve_ocp(&toy, &v(&[1.0]), zero_gp(2), &scalar).map_err(|e| e.to_string())?;
    let toy_err = (sol.u_seq[0][0] + 0.5).abs();

    // double integrator against the finite-horizon LQ feedback
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
    let dynamics = ResidualDynamics::new(
        Arc::new(LinearNominal::new(a.clone(), b.clone()).unwrap()),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::zeros(2, 2),
    )
    .unwrap();
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.1]);
    let q_t = DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 1.0]);
    let rr = DMatrix::from_element(1, 1, 0.5);
    let horizon = 10;
    let mut s = q_t.clone();
    let mut k = DMatrix::zeros(1, 2);
    for _ in 0..horizon {
        k = (&rr + b.transpose() * &s * &b).try_inverse().unwrap() * b.transpose() * &s * &a;
        s = &q + a.transpose() * &s * &a - a.transpose() * &s * &b * &k;
    }
    let cfg = MpcConfig {
        horizon,
        x_ref: vec![0.0, 0.0],
        q: vec![vec![1.0, 0.0], vec![0.0, 0.1]],
        r: vec![vec![0.5]],
        q_terminal: Some(vec![vec![5.0, 0.0], vec![0.0, 1.0]]),
        u_lo: vec![-100.0],
        u_hi: vec![100.0],
        ..toy
    };
    let mut ctrl = MpcController::new(Ocp::new(cfg, dynamics, zero_gp(3)).map_err(|e| e.to_string())?);
    let mut x = v(&[1.0, -0.5]);
    let mut lq_err = 0.0f64;
    for _ in 0..30 {
        let out = ctrl.step(&x).map_err(|e| e.to_string())?;
        lq_err = lq_err.max((out.u[0] + (&k * &x)[0]).abs());
        x = &a * &x + &b * &out.u;
    }
    let msg = format!("toy |u0 + 0.5| = {toy_err:.1e} (tol 1e-6); LQ closed loop max gap {lq_err:.1e} (tol 1e-4)");
    if toy_err <= 1e-6 && lq_err <= 1e-4 { Ok(msg) } else { Err(msg) }
}

// 9 ------------------------------------------------------------------------

/// Trained hyperparameters and a sparse model on fresh excitation data.
fn learned_model(plant: &dyn PlantModel, n: usize, inducing: usize, start: KernelParams, seed: u64) -> Arc<dyn Regressor> {
    let data = generate_dataset(plant, &Excitation::default(), n, seed).unwrap();
    let trained = train_hyperparams(&data, &[start], &TrainOptions::default()).unwrap();
    let params = expand_params(&trained.params, data.output_dim()).unwrap();
    let registry = ModelRegistry::default();
    let opts = ModelOptions {
        inducing: Some(inducing),
        ..Default::default()
    };
    let opts = registry.get("fitc").unwrap().resolve(&data, &opts).unwrap();
    Arc::from(registry.build("fitc", &data, &params, &opts).unwrap())
}

fn benchmark_a_model() -> Arc<dyn Regressor> {
    learned_model(&BenchmarkA, 300, 25, KernelParams::new(0.1, 1.0, 1e-3).unwrap(), 0)
}

/// Seeded episodes from the origin, spread over the available cores.
fn episodes(plant: &dyn PlantModel, cfg: &MpcConfig, model: &Arc<dyn Regressor>, seeds: &[u64], steps: usize) -> Vec<SimResult> {
    let monitor = Monitor::from_mpc(cfg).unwrap();
    let x0 = DVector::zeros(plant.state_dim());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
    let chunk = seeds.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                let (monitor, x0) = (&monitor, &x0);
                s.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let ocp = Ocp::new(cfg.clone(), plant.dynamics().unwrap(), model.clone()).unwrap();
                            let mut ctrl = MpcController::new(ocp);
                            run_closed_loop(plant, &mut ctrl, monitor, x0, steps, seed).unwrap()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

fn chance_constraint_study() -> Outcome {
    let (out, elapsed) = timed(|| {
        let plant = BenchmarkA;
        let model = benchmark_a_model();
        let seeds: Vec<u64> = (1..=200).collect();
        let rate = |p: f64| {
            let mut cfg = plant.default_mpc();
            cfg.constraints[0].p = p;
            let res = episodes(&plant, &cfg, &model, &seeds, 50);
            let infeasible: usize = res.iter().map(|r| r.infeasible_steps.len()).sum();
            (empirical_violation_rate(&res).unwrap().remove(0), infeasible)
        };
        (rate(0.9), rate(0.5))
    });
    let ((tight, inf_t), (loose, inf_l)) = out;
    budget(elapsed, 600.0)?;
    let msg = format!(
        "p=0.9: {}/{} = {:.4} [{:.4}, {:.4}], p=0.5: {}/{} = {:.4} [{:.4}, {:.4}]; infeasible solves {inf_t}/{inf_l}; {:.0}s",
        tight.violations,
        tight.total,
        tight.rate,
        tight.wilson_lo,
        tight.wilson_hi,
        loose.violations,
        loose.total,
        loose.rate,
        loose.wilson_lo,
        loose.wilson_hi,
        elapsed.as_secs_f64()
    );
    if tight.rate <= loose.rate && tight.rate <= 0.20 { Ok(msg) } else { Err(msg) }
}

// 10 -----------------------------------------------------------------------

fn frozen_speedup() -> Outcome {
    let plant = Pendulum::default();
    let model = learned_model(&plant, 300, 25, KernelParams::new(0.01, 1.0, 1e-4).unwrap(), 0);
    let median_solve = |mode: CovarianceMode| {
        let mut cfg = plant.default_mpc();
        cfg.covariance_mode = mode;
        let mut ctrl = MpcController::new(Ocp::new(cfg.clone(), plant.dynamics().unwrap(), model.clone()).unwrap());
        let monitor = Monitor::from_mpc(&cfg).unwrap();
        // one cold solve so that every timed solve is warm-started
        let x0 = DVector::zeros(2);
        ctrl.step(&x0).unwrap();
        let mut times = Vec::new();
        let mut timed_ctrl = TimedController { inner: &mut ctrl, times: &mut times };
        run_closed_loop(&plant, &mut timed_ctrl, &monitor, &x0, 20, 1).unwrap();
        times.sort_by(f64::total_cmp);
        (times[9] + times[10]) / 2.0
    };
    let propagated = median_solve(CovarianceMode::Propagated);
    let frozen = median_solve(CovarianceMode::Frozen);
    let msg = format!(
        "median solve: frozen {:.2} ms, propagated {:.2} ms (ratio {:.2})",
        frozen * 1e3,
        propagated * 1e3,
        frozen / propagated
    );
    if frozen < propagated { Ok(msg) } else { Err(msg) }
}

struct TimedController<'a> {
    inner: &'a mut MpcController,
    times: &'a mut Vec<f64>,
}

impl gpmpc::plant::Controller for TimedController<'_> {
    fn step(&mut self, x: &DVector<f64>) -> gpmpc::Result<gpmpc::mpc::ControlStep> {
        let t = Instant::now();
        let out = self.inner.step(x);
        self.times.push(t.elapsed().as_secs_f64());
        out
    }
}

// 11 -----------------------------------------------------------------------

/// Everything a seeded pipeline produces, in one comparable value.
#[derive(PartialEq)]
struct PipelineOutput {
    params: Vec<[f64; 3]>,
    predictions: Vec<(DVector<f64>, DVector<f64>)>,
    rollout: Vec<(DVector<f64>, DMatrix<f64>)>,
    particles: Vec<Vec<DVector<f64>>>,
    ssgp: Vec<(f64, f64, f64)>,
    subset: Vec<DVector<f64>>,
    episodes: Vec<SimResult>,
}

fn pipeline() -> PipelineOutput {
    let plant = BenchmarkA;
    let data = generate_dataset(&plant, &Excitation::default(), 80, 42).unwrap();
    let trained = train_hyperparams(&data, &[KernelParams::new(0.1, 1.0, 1e-3).unwrap()], &TrainOptions::default()).unwrap();
    let model: Arc<dyn Regressor> = Arc::new(ExactGp::fit(&data, &trained.params).unwrap());
    let probes = random_points(&mut rng(43), 5, 2);
    let dynamics = plant.dynamics().unwrap();
    let x0 = GaussianBelief::new(v(&[0.1]), DMatrix::from_element(1, 1, 0.01)).unwrap();
    let us = vec![v(&[0.3]); 10];
    let lin = PropagatorRegistry::default().create(&PropagationMethod::linearized(1)).unwrap();
    let cfg = plant.default_mpc();
    PipelineOutput {
        params: trained.params.iter().map(|p| p.to_log()).collect(),
        predictions: probes.iter().map(|z| model.predict(z)).collect(),
        rollout: rollout(&dynamics, model.as_ref(), &x0, &us, lin.as_ref())
            .unwrap()
            .iter()
            .map(|b| (b.mean().clone(), b.cov().clone()))
            .collect(),
        particles: mc_rollout(&dynamics, model.as_ref(), &x0, &us, 500, 44).unwrap(),
        ssgp: SsgpModel::fit(&data, &trained.params, 40, 45).unwrap().predict(&probes[0]).unwrap(),
        subset: subset_of_data(&data, 10, SubsetStrategy::Random, 46).unwrap().inputs().to_vec(),
        episodes: episodes(&plant, &cfg, &model, &[1, 2], 15),
    }
}

fn determinism() -> Outcome {
    let a = pipeline();
    let b = pipeline();
    if a == b {
        Ok("training, prediction, rollouts, particles, features, subsets and episodes rerun bit for bit".into())
    } else {
        Err("a seeded rerun produced different output".into())
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("exact GP against dense-inverse oracle", exact_gp_oracle),
        ("gradients against central differences", gradient_suite),
        ("sparse consistency and ELBO bound", sparse_consistency),
        ("SSGP kernel convergence", ssgp_convergence),
        ("moment matching against Monte Carlo", moment_matching_vs_mc),
        ("point-mass belief identity", point_mass_identity),
        ("linear-Gaussian rollout against Kalman recursion", kalman_rollout),
        ("MPC solver sanity", mpc_sanity),
        ("closed-loop chance constraints, Benchmark A", chance_constraint_study),
        ("frozen covariance speedup, pendulum", frozen_speedup),
        ("determinism of seeded pipelines", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
