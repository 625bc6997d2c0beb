//! Acceptance suite: one check per criterion, each printing a PASS/FAIL line.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Arguments not starting with `--` filter checks by name substring; the
//! process exits nonzero when any selected check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use vgmi::baselines::{identify_cma_es, identify_least_squares, EntropySearch, LeastSquaresOptions};
use vgmi::belief::estimate_min_distribution;
use vgmi::dynamics::{step, Action, State, SystemSpec};
use vgmi::gp::{GpModel, Kernel};
use vgmi::harness::{read_records, run_experiment, value_prediction_error, BudgetSweep, DataConfig, ExperimentConfig, ExperimentOutcome, GridChoice};
use vgmi::objective::{BudgetSpec, SimulationError};
use vgmi::policy::{gaussian_kl, policy_update, PolicySearchConfig, Task};
use vgmi::vgmi::{identify_with, Acquisition, GreedyEntropy, IdentifyOutcome, LoopOptions, VgmiConfig};
use vgmi::{identify, ModelGrid, ModelParams, Policy, TransitionDataset};

const SEEDS: u64 = 20;

fn report(id: &str, pass: bool, detail: String) {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn truth() -> ModelParams {
    ModelParams(vec![1.0, 0.1])
}

/// Hand-tuned upright stabilizer used as the reference policy.
fn stabilizer(task: &Task) -> Policy {
    Policy::new(&task.spec, vec![3.0, 5.5, -45.0, -10.0, 0.0], vec![1.0; 5]).unwrap()
}

struct Setup {
    task: Task,
    grid: ModelGrid,
    data: TransitionDataset,
}

fn setup(seed: u64) -> Setup {
    let task = Task::cart_pole_balance();
    let grid = GridChoice::default().build(&task.spec, &truth(), seed).unwrap();
    let data = DataConfig::default().collect(&task, &truth(), seed).unwrap();
    Setup { task, grid, data }
}

fn criterion_1_identification_correctness() {
    let mut hits = 0;
    let mut slowest: f64 = 0.0;
    let mut details = Vec::new();
    for seed in 0..SEEDS {
        let s = setup(seed);
        // oracle: exhaustive evaluation of the error over the grid
        let objective = SimulationError::new(&s.data, &s.task.spec).unwrap();
        let errors: Vec<f64> = s.grid.points().iter().map(|p| objective.error(p).unwrap()).collect();
        let oracle = (0..errors.len()).min_by(|&a, &b| errors[a].total_cmp(&errors[b])).unwrap();
        assert!(s.grid.cells_apart(s.grid.point(oracle), &truth()) <= 1.0);

        let started = Instant::now();
        // the stopping test only fires at the cap, after 40 models
        let cfg = VgmiConfig {
            seed,
            k_min: 40,
            k_max: 40,
            ..Default::default()
        };
        let out = identify(&s.data, &s.grid, &stabilizer(&s.task), &s.task, &cfg).unwrap();
        slowest = slowest.max(started.elapsed().as_secs_f64());
        let apart = s.grid.cells_apart(&out.map_theta, &truth());
        hits += (apart <= 1.0) as usize;
        details.push(format!("{apart:.2}"));
    }
    let pass = hits >= 18 && slowest <= 60.0;
    report(
        "1",
        pass,
        format!(
            "MAP within one cell of the truth in {hits}/{SEEDS} seeds (need 18), slowest seed {slowest:.1}s (limit 60) [cells apart: {}]",
            details.join(" ")
        ),
    );
    assert!(pass);
}

/// Cart-pole learning setup shared by the stopping and budget criteria.
fn learning_config(output_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.learn.vgmi.k_min = 25;
    cfg.learn.vgmi.refine_iterations = 3;
    cfg.learn.policy_search.kl_bound = 0.2;
    cfg.seeds = (0..SEEDS).collect();
    cfg.output_dir = output_dir.to_path_buf();
    cfg
}

/// Ten outer iterations of VGMI per seed, computed once.
fn vgmi_runs() -> &'static (TempDir, ExperimentConfig, ExperimentOutcome) {
    static RUNS: OnceLock<(TempDir, ExperimentConfig, ExperimentOutcome)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = learning_config(dir.path());
        let out = run_experiment(&cfg).unwrap();
        (dir, cfg, out)
    })
}

fn criterion_2_stopping_soundness() {
    let (_, cfg, out) = vgmi_runs();
    let mut sound_seeds = 0;
    let (mut stops, mut sound_stops) = (0, 0);
    let (mut capped, mut sound_capped) = (0, 0);
    let mut worst = Vec::new();
    for run in &out.runs {
        let mut all_sound = true;
        let mut seed_worst: f64 = f64::NEG_INFINITY;
        for r in &run.records {
            let Some(eps) = r.epsilon else { continue };
            let next = Policy::new(&cfg.task.spec, r.weights.clone(), r.exploration.clone()).unwrap();
            let diagnostic = value_prediction_error(&cfg.task, &next, &r.theta, &cfg.truth).unwrap();
            // a stop forced by k_max certifies nothing; count it apart
            if !r.value_consensus {
                capped += 1;
                sound_capped += (diagnostic <= eps) as usize;
                continue;
            }
            stops += 1;
            if diagnostic <= eps {
                sound_stops += 1;
            } else {
                all_sound = false;
            }
            seed_worst = seed_worst.max(diagnostic - eps);
        }
        sound_seeds += all_sound as usize;
        worst.push(format!("{seed_worst:+.1}"));
    }
    let pass = sound_seeds >= 18;
    report(
        "2",
        pass,
        format!(
            "every value-consensus stop within epsilon in {sound_seeds}/{SEEDS} seeds (need 18); {sound_stops}/{stops} consensus stops sound, {sound_capped}/{capped} k_max-capped identifications within epsilon [worst diagnostic - epsilon per seed: {}]",
            worst.join(" ")
        ),
    );
    assert!(pass);
}

fn learning_mostly_improves_real_reward() {
    let (_, _, out) = vgmi_runs();
    let (mut pairs, mut kept) = (0, 0);
    for run in &out.runs {
        for w in run.records.windows(2) {
            pairs += 1;
            kept += (w[1].real_reward >= w[0].real_reward) as usize;
        }
    }
    println!("real reward nondecreasing in {kept}/{pairs} consecutive iteration pairs");
    assert!(kept as f64 >= 0.8 * pairs as f64);
}

fn summary_means_recompute_from_record_files() {
    let (_, _, out) = vgmi_runs();
    let finals: Vec<f64> = out
        .runs
        .iter()
        .map(|r| read_records(&r.path).unwrap().last().unwrap().real_reward)
        .collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let mut summary = csv::Reader::from_path(&out.summary_path).unwrap();
    let row = summary
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[0] == "vgmi" && &r[1] == "final_real_reward")
        .unwrap();
    assert_eq!(row[2].parse::<usize>().unwrap(), SEEDS as usize);
    assert!((row[3].parse::<f64>().unwrap() - mean).abs() <= 1e-12);
}

fn criterion_3_budget_tradeoff() {
    let (_, anchor_cfg, anchor) = vgmi_runs();
    // equal total budget: VGMI's mean cost over the ten-iteration runs
    let costs: Vec<f64> = anchor.runs.iter().map(|r| r.records.last().unwrap().cost as f64).collect();
    let budget = (costs.iter().sum::<f64>() / costs.len() as f64).round() as u64;

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = learning_config(dir.path());
    cfg.learn.outer_iterations = 1000;
    cfg.learn.total_budget = Some(budget);
    cfg.budget_sweep = Some(BudgetSweep {
        multipliers: vec![0.25, 1.0, 4.0],
    });
    assert_eq!(cfg.seeds, anchor_cfg.seeds);
    let out = run_experiment(&cfg).unwrap();
    let reward = |method: &str| {
        out.summary
            .iter()
            .find(|row| row.method == method && row.metric == "final_real_reward")
            .map(|row| row.mean)
            .unwrap()
    };
    let vgmi = reward("vgmi");
    let fixed: Vec<(String, f64)> = out
        .summary
        .iter()
        .filter(|row| row.method.starts_with("fixed-") && row.metric == "final_real_reward")
        .map(|row| (row.method.clone(), row.mean))
        .collect();
    assert_eq!(fixed.len(), 3);
    let best = fixed.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let pass = vgmi >= best - 0.05 * best.abs();
    let listed: Vec<String> = fixed.iter().map(|(m, v)| format!("{m} {v:.2}")).collect();
    report(
        "3",
        pass,
        format!(
            "mean final real reward at budget {budget}: vgmi {vgmi:.2} vs best fixed {best:.2} (need >= {:.2}) [{}]",
            best - 0.05 * best.abs(),
            listed.join(", ")
        ),
    );
    assert!(pass);
}

struct AcquisitionRun {
    per_iteration_s: f64,
    /// Objective evaluations when the belief entropy first fell to 0.5 nats.
    evaluations_to_target: Option<usize>,
}

fn acquisition_run<A: Acquisition>(s: &Setup, seed: u64, acquisition: &A) -> AcquisitionRun {
    let objective = SimulationError::new(&s.data, &s.task.spec).unwrap();
    let cfg = VgmiConfig {
        seed,
        refine: false,
        ..Default::default()
    };
    let options = LoopOptions {
        entropy_target: Some(0.5),
        ..Default::default()
    };
    let out: IdentifyOutcome = identify_with(&objective, &s.grid, &cfg, acquisition, options).unwrap();
    let n = out.iterations.len() as f64;
    AcquisitionRun {
        per_iteration_s: out.iterations.iter().map(|r| r.acquisition_s).sum::<f64>() / n,
        evaluations_to_target: out
            .iterations
            .iter()
            .find(|r| r.entropy <= 0.5)
            .map(|r| r.objective_evaluations),
    }
}

fn criterion_4_acquisition_efficiency() {
    let (mut ges_s, mut es_s) = (0.0, 0.0);
    let (mut ges_evals, mut es_evals) = (0usize, 0usize);
    let mut reached = true;
    let mut details = Vec::new();
    for seed in 0..SEEDS {
        let s = setup(seed);
        let ges = acquisition_run(&s, seed, &GreedyEntropy);
        let es = acquisition_run(&s, seed, &EntropySearch::default());
        ges_s += ges.per_iteration_s;
        es_s += es.per_iteration_s;
        match (ges.evaluations_to_target, es.evaluations_to_target) {
            (Some(g), Some(e)) => {
                ges_evals += g;
                es_evals += e;
                details.push(format!("{g}/{e}"));
            }
            (g, e) => {
                reached = false;
                details.push(format!("{g:?}/{e:?}"));
            }
        }
    }
    let ratio = ges_s / es_s;
    let pass = ratio <= 0.2 && reached && ges_evals as f64 <= 1.2 * es_evals as f64;
    report(
        "4",
        pass,
        format!(
            "greedy acquisition takes {:.2e}s vs {:.2e}s per iteration (ratio {ratio:.4}, need <= 0.2); both reach entropy 0.5: {reached}; evaluations {ges_evals} vs {es_evals} (need <= {:.0}) [per seed greedy/nested: {}]",
            ges_s / SEEDS as f64,
            es_s / SEEDS as f64,
            1.2 * es_evals as f64,
            details.join(" ")
        ),
    );
    assert!(pass);
}

fn criterion_5_baseline_comparison() {
    let budget = 40;
    let (mut beat_cma, mut beat_ls) = (0, 0);
    let mut details = Vec::new();
    for seed in 0..SEEDS {
        let s = setup(seed);
        let objective = SimulationError::new(&s.data, &s.task.spec).unwrap();
        // per-candidate refinement would spend most of the budget inside a
        // handful of cells; the reserve refines only the final MAP
        let cfg = VgmiConfig {
            seed,
            k_max: budget,
            refine: false,
            final_refine: 16,
            ..Default::default()
        };
        let options = LoopOptions {
            budget: Some(BudgetSpec::evaluations(budget)),
            ..Default::default()
        };
        let out = identify_with(&objective, &s.grid, &cfg, &GreedyEntropy, options).unwrap();
        assert!(out.objective_evaluations <= budget);
        let vgmi_best = out.log.entries.iter().map(|e| e.error).fold(f64::INFINITY, f64::min);
        let cma = identify_cma_es(&objective, s.grid.bounds(), BudgetSpec::evaluations(budget), seed).unwrap();
        let ls = identify_least_squares(
            &objective,
            s.grid.bounds(),
            BudgetSpec::evaluations(budget),
            &LeastSquaresOptions::default(),
            seed,
        )
        .unwrap();
        assert!(cma.trace.len() <= budget && ls.trace.len() <= budget);
        beat_cma += (vgmi_best <= cma.error) as usize;
        beat_ls += (vgmi_best <= ls.error) as usize;
        details.push(format!("{vgmi_best:.3}/{:.3}/{:.3}", cma.error, ls.error));
    }
    let pass = beat_cma >= 12 && beat_ls >= 12;
    report(
        "5",
        pass,
        format!(
            "VGMI best E <= CMA-ES in {beat_cma}/{SEEDS}, <= LS in {beat_ls}/{SEEDS} (need 12 each) at {budget} evaluations [vgmi/cma/ls: {}]",
            details.join(" ")
        ),
    );
    assert!(pass);
}

// Criterion 6: property suites, one line each.

fn criterion_6_belief_normalization() {
    let task = Task::cart_pole_balance();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let grid = GridChoice::default().build(&task.spec, &truth(), seed).unwrap();
        let picks: Vec<ModelParams> = (0..6).map(|i| grid.point((seed as usize * 37 + i * 71) % grid.len()).clone()).collect();
        let targets: Vec<f64> = (0..6).map(|i| ((seed + i) as f64 * 0.7).sin()).collect();
        let gp = GpModel::fit(&picks, &targets, Kernel::default_for(&grid), 1e-6).unwrap();
        let p = estimate_min_distribution(&gp, &grid, 1 + seed as usize * 13, seed).unwrap();
        assert!(p.probabilities().iter().all(|&v| v >= 0.0));
        worst = worst.max((p.probabilities().iter().sum::<f64>() - 1.0).abs());
    }
    let pass = worst <= 1e-9;
    report("6 (belief normalization)", pass, format!("max |sum P - 1| = {worst:.1e} over 50 beliefs"));
    assert!(pass);
}

fn criterion_6_error_vanishes_at_truth() {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let s = setup(seed);
        worst = worst.max(SimulationError::new(&s.data, &s.task.spec).unwrap().error(&truth()).unwrap());
    }
    let push = Task::planar_push();
    let push_truth = ModelParams(vec![1.5, 0.3]);
    for seed in 0..5 {
        let data = DataConfig::default().collect(&push, &push_truth, seed).unwrap();
        worst = worst.max(SimulationError::new(&data, &push.spec).unwrap().error(&push_truth).unwrap());
    }
    let pass = worst <= 1e-9;
    report("6 (zero error at truth)", pass, format!("max E(truth) = {worst:.1e} over 10 noiseless datasets"));
    assert!(pass);
}

fn criterion_6_gp_interpolation() {
    let points: Vec<ModelParams> = [[0.2, 0.3], [0.5, 0.9], [0.8, 0.1], [0.4, 0.5], [0.9, 0.7]]
        .iter()
        .map(|p| ModelParams(p.to_vec()))
        .collect();
    let targets = [1.3, -0.4, 2.2, 0.0, 0.7];
    let gp = GpModel::fit(&points, &targets, Kernel::new(1.0, vec![0.3, 0.3]), 0.0).unwrap();
    let worst = points
        .iter()
        .zip(targets)
        .map(|(p, y)| (gp.predict(p).0 - y).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 1e-6;
    report("6 (GP interpolation)", pass, format!("max |m(x_i) - y_i| = {worst:.1e} at zero noise"));
    assert!(pass);
}

fn criterion_6_joint_sample_covariance() {
    let task = Task::cart_pole_balance();
    let grid = ModelGrid::new(task.spec.param_bounds.clone(), vec![4, 3]).unwrap();
    let points = vec![grid.point(1).clone(), grid.point(6).clone(), grid.point(10).clone()];
    let gp = GpModel::fit(&points, &[0.5, -1.0, 0.2], Kernel::new(1.0, vec![1.5, 0.3]), 1e-4).unwrap();
    let sampler = gp.grid_sampler(&grid).unwrap();
    let n = 5000;
    let draws = sampler.draw(n, &mut ChaCha8Rng::seed_from_u64(11));
    let g = grid.len();
    let centered = DMatrix::from_fn(g, n, |i, j| draws[(i, j)] - sampler.mean[i]);
    let empirical = &centered * centered.transpose() / n as f64;
    let mut worst: f64 = 0.0;
    for i in 0..g {
        for j in 0..g {
            let c = &sampler.cov;
            // standard error of a sample second moment of a bivariate normal
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n as f64).sqrt();
            if se > 0.0 {
                worst = worst.max((empirical[(i, j)] - c[(i, j)]).abs() / se);
            }
        }
    }
    let pass = worst <= 5.0;
    report("6 (joint-sample covariance)", pass, format!("max deviation {worst:.2} standard errors over {n} draws"));
    assert!(pass);
}

fn criterion_6_push_stopping_distance() {
    let spec = SystemSpec::planar_push();
    let mut worst: f64 = f64::NEG_INFINITY;
    for (v, mu_f) in [(0.5, 0.2), (1.0, 0.5), (1.5, 0.3), (0.8, 0.9)] {
        let expected = v * v / (2.0 * mu_f * spec.gravity);
        let mut x = State(vec![0.0, 0.0, v, 0.0]);
        let zero = Action(vec![0.0, 0.0]);
        for _ in 0..500 {
            x = step(&spec, &x, &zero, &ModelParams(vec![2.0, mu_f])).unwrap();
        }
        worst = worst.max((x[0] - expected).abs() - 2.0 * spec.dt * v);
    }
    let pass = worst <= 0.0;
    report(
        "6 (push stopping distance)",
        pass,
        format!("largest excess over the 2*dt*v tolerance: {worst:.2e} m over 4 cases"),
    );
    assert!(pass);
}

fn criterion_6_policy_update_kl_and_value() {
    let task = Task::cart_pole_balance();
    let cfg = PolicySearchConfig::default();
    let mut pi = Policy::zeros(&task.spec, 25.0);
    let (mut kl_excess, mut value_drop): (f64, f64) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for seed in 0..100u64 {
        let up = policy_update(&pi, &truth(), &task, &cfg, seed).unwrap();
        let kl = gaussian_kl(&up.policy.weights, &up.policy.exploration, &pi.weights, &pi.exploration);
        kl_excess = kl_excess.max(kl - cfg.kl_bound);
        value_drop = value_drop.max(up.value_before - up.value_after);
        pi = up.policy;
    }
    let pass = kl_excess <= 1e-9 && value_drop <= 1e-9;
    report(
        "6 (policy update)",
        pass,
        format!("over 100 updates: max KL - bound = {kl_excess:.2e}, max value drop = {value_drop:.2e}"),
    );
    assert!(pass);
}

fn criterion_6_rk4_order() {
    let theta = ModelParams(vec![1.0, 0.1]);
    let x0 = State(vec![0.0, 0.5, 2.0, 1.0]);
    let push = Action(vec![3.0]);
    let horizon = 0.64;
    let integrate = |dt: f64| {
        let spec = SystemSpec {
            dt,
            ..SystemSpec::cart_pole()
        };
        let mut x = x0.clone();
        for _ in 0..(horizon / dt).round() as usize {
            x = step(&spec, &x, &push, &theta).unwrap();
        }
        x
    };
    let reference = integrate(0.0005);
    let error = |x: &State| x.iter().zip(reference.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ratio = error(&integrate(0.04)) / error(&integrate(0.02));
    let pass = ratio >= 12.0;
    report("6 (RK4 order)", pass, format!("error ratio at halved step = {ratio:.2} (need >= 12)"));
    assert!(pass);
}

fn criterion_6_byte_identical_reruns() {
    let run = |dir: &Path| {
        let mut cfg = ExperimentConfig::default();
        cfg.learn.outer_iterations = 3;
        cfg.learn.vgmi.k_max = 10;
        cfg.seeds = vec![3, 4];
        cfg.output_dir = dir.to_path_buf();
        run_experiment(&cfg).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (run(a.path()), run(b.path()));
    let mut files = vec![(ra.summary_path.clone(), rb.summary_path.clone())];
    files.extend(ra.runs.iter().zip(&rb.runs).map(|(x, y)| (x.path.clone(), y.path.clone())));
    let identical = files
        .iter()
        .all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
    report(
        "6 (byte-identical reruns)",
        identical,
        format!("{} record and summary files compared", files.len()),
    );
    assert!(identical);
}

const CHECKS: &[(&str, fn())] = &[
    ("criterion_1_identification_correctness", criterion_1_identification_correctness),
    ("criterion_2_stopping_soundness", criterion_2_stopping_soundness),
    ("criterion_3_budget_tradeoff", criterion_3_budget_tradeoff),
    ("criterion_4_acquisition_efficiency", criterion_4_acquisition_efficiency),
    ("criterion_5_baseline_comparison", criterion_5_baseline_comparison),
    ("criterion_6_belief_normalization", criterion_6_belief_normalization),
    ("criterion_6_error_vanishes_at_truth", criterion_6_error_vanishes_at_truth),
    ("criterion_6_gp_interpolation", criterion_6_gp_interpolation),
    ("criterion_6_joint_sample_covariance", criterion_6_joint_sample_covariance),
    ("criterion_6_push_stopping_distance", criterion_6_push_stopping_distance),
    ("criterion_6_policy_update_kl_and_value", criterion_6_policy_update_kl_and_value),
    ("criterion_6_rk4_order", criterion_6_rk4_order),
    ("criterion_6_byte_identical_reruns", criterion_6_byte_identical_reruns),
    ("learning_mostly_improves_real_reward", learning_mostly_improves_real_reward),
    ("summary_means_recompute_from_record_files", summary_means_recompute_from_record_files),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with("--")).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, check) in CHECKS {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        if catch_unwind(AssertUnwindSafe(check)).is_err() {
            failed.push(*name);
        }
        println!("  ({name}: {:.1}s)", started.elapsed().as_secs_f64());
    }
    println!("\nacceptance: {} of {ran} checks passed", ran - failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
