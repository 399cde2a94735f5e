//! Acceptance criteria for the three demo campaigns, the engine, numerics
//! and the workflow language. One PASS/FAIL line per criterion.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::mutate::{mutate, MUTATIONS};
use common::*;
use labloom::datastore::Responder;
use labloom::dsl::{parse_workflow, serialize, validate, WorkflowSpec};
use labloom::engine::{make_headless, Phase, Run};
use labloom::ml::{expected_improvement, fit_scoring, gp_fit, map_gradient, map_objective, GpHyper};
use labloom::plugin::PluginRegistry;
use labloom::rng::rng_from_seed;
use labloom::sim::{expected_instability, inner_behavior_optimize, outer_performance, SimulatorConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: u64 = 20;
const TIME_LIMIT: Duration = Duration::from_secs(60);

// Case A
const CASE_A_REL_GAP: f64 = 0.05;
const CASE_A_MAX_EVALS: usize = 20;
const CASE_A_BO_MIN_HITS: usize = 18;
const CASE_A_RANDOM_MAX_HITS: usize = 10;
// Case B
const CASE_B_INNER_RESULTS: usize = 5;
const CASE_B_MIN_WINS: usize = 15;
const CASE_B_INNER_BUDGET: u32 = 30;
// Case C
const CASE_C_MIN_COSINE: f64 = 0.9;
const CASE_C_MIN_HITS: usize = 18;
const CASE_C_LABELS: usize = 25;
// Numerics
const EI_TOL: f64 = 1e-3;
const EI_TRIPLES: usize = 50;
const EI_DRAWS: usize = 1_000_000;
const GP_TOL: f64 = 1e-8;
const GP_MAX_POINTS: usize = 8;
const GRAD_REL_TOL: f64 = 1e-6;
// Defaults
const DEFAULT_TIMEOUT_S: f64 = 1.0;
const DEFAULT_CAP: usize = 10;
// Language
const MUTANTS: usize = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn runs_dir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn observed_points(run: &Run) -> Vec<Vec<f64>> {
    points(&last_value(run, "accum", "observations"))
}

fn swap_to_random(spec: &mut WorkflowSpec) {
    let bo = spec.nodes.iter_mut().find(|n| n.id == "bo").expect("bo node");
    bo.plugin = "random-search".into();
    bo.methods.retain(|m| m.name == "propose");
    for m in &mut bo.methods {
        m.params.remove("xi");
    }
}

fn case_a(reg: &Arc<PluginRegistry>) -> Verdict {
    let cfg = SimulatorConfig::load(&demo_dir("case_a").join("simulator.json")).expect("case A config");
    let times: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
    let expected = |p: &[f64]| expected_instability([p[0], p[1]], cfg.c_star, cfg.noise_sigma, &times);
    let grid: Vec<Vec<f64>> = (0..=20)
        .flat_map(|i| (0..=20 - i).map(move |j| vec![i as f64 / 20.0, j as f64 / 20.0]))
        .collect();
    let global = grid.iter().map(|p| expected(p)).fold(f64::INFINITY, f64::min);
    let hit = |run: &Run| {
        let pts = observed_points(run);
        let best = pts.iter().map(|p| expected(p)).fold(f64::INFINITY, f64::min);
        (pts.len(), best <= global + CASE_A_REL_GAP * global.abs())
    };
    let dir = runs_dir();
    let t0 = Instant::now();
    let mut bo_hits = 0;
    let mut max_evals = 0;
    for seed in 1..=SEEDS {
        let run = run_headless(reg, "case_a", dir.path(), seed, |_| {});
        let (n, ok) = hit(&run);
        max_evals = max_evals.max(n);
        bo_hits += usize::from(ok);
    }
    let bo_time = t0.elapsed();
    let mut random_hits = 0;
    for seed in 1..=SEEDS {
        let run = run_headless(reg, "case_a", dir.path(), seed, swap_to_random);
        random_hits += usize::from(hit(&run).1);
    }
    let pass = bo_hits >= CASE_A_BO_MIN_HITS
        && random_hits <= CASE_A_RANDOM_MAX_HITS
        && max_evals <= CASE_A_MAX_EVALS
        && bo_time < TIME_LIMIT;
    verdict(
        pass,
        format!(
            "BO within {:.0}% of min expected I_c {global:.4} in {bo_hits}/{SEEDS} seeds, random {random_hits}/{SEEDS}, \
             at most {max_evals} evaluations, {:.1}s",
            CASE_A_REL_GAP * 100.0,
            bo_time.as_secs_f64()
        ),
    )
}

fn sorted_ids(run: &Run) -> Vec<String> {
    let mut v: Vec<String> = run.store().records().iter().map(|r| r.artifact_id.clone()).collect();
    v.sort();
    v
}

fn determinism(reg: &Arc<PluginRegistry>) -> Verdict {
    let dir = runs_dir();
    let seed = 31;
    let a = run_headless(reg, "case_a", dir.path(), seed, |_| {});
    let b = run_headless(reg, "case_a", dir.path(), seed, |_| {});
    let steps = a.events().since(0).iter().filter(|e| e.kind.name() == "node-started").count();
    let k = rng_from_seed(2).random_range(0..steps);
    let mut c = start_demo(reg, "case_a", make_headless(&demo_spec("case_a"), reg), dir.path(), seed);
    for _ in 0..k {
        if c.phase() != Phase::Running {
            break;
        }
        c.step().expect("step");
    }
    let ck = c.pause().expect("pause");
    drop(c);
    let mut c = Run::resume_from(Arc::clone(reg), &ck).expect("resume");
    let done = c.run_to_end().expect("run") == Phase::Completed;
    let (ia, ib, ic) = (sorted_ids(&a), sorted_ids(&b), sorted_ids(&c));
    verdict(
        done && ia == ib && ib == ic,
        format!("{} artifacts per run, identical hashes: a=b {}, paused after {k} steps and resumed = a {}", ia.len(), ia == ib, ia == ic),
    )
}

fn case_b(reg: &Arc<PluginRegistry>) -> Verdict {
    let cfg = SimulatorConfig::load(&demo_dir("case_b").join("simulator.json")).expect("case B config");
    let j = |d: &[f64], seed: u64| {
        let d = [d[0], d[1]];
        let (_, r) = inner_behavior_optimize(d, CASE_B_INNER_BUDGET, &mut rng_from_seed(seed)).expect("inner loop");
        outer_performance(d, r, cfg.d_center)
    };
    let dir = runs_dir();
    let t0 = Instant::now();
    let mut wins = 0;
    let mut shape_ok = true;
    for seed in 1..=SEEDS {
        let run = run_headless(reg, "case_b", dir.path(), seed, |_| {});
        let results: Vec<_> = run.store().at_port("perf", "result").collect();
        let mut outer: Vec<usize> = results.iter().filter_map(|r| r.iteration.index_of("design")).collect();
        outer.sort();
        outer.dedup();
        shape_ok &= results.len() == CASE_B_INNER_RESULTS && outer.len() == CASE_B_INNER_RESULTS;
        let best = last_value(&run, "report", "best");
        let rec: Vec<f64> = numbers(&best["point"]);
        let j_rec = j(&rec, seed);
        let baseline = run_headless(reg, "case_b", dir.path(), seed + 1000, swap_to_random);
        let j_rand = numbers(&last_value(&baseline, "accum", "observations")["values"])
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        wins += usize::from(j_rec >= j_rand);
    }
    let elapsed = t0.elapsed();
    verdict(
        shape_ok && wins >= CASE_B_MIN_WINS && elapsed < TIME_LIMIT,
        format!(
            "{CASE_B_INNER_RESULTS} inner results with distinct outer indices in every seed: {shape_ok}, \
             J(recommended) >= 5-point random J in {wins}/{SEEDS} seeds, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn case_c(reg: &Arc<PluginRegistry>) -> Verdict {
    let cfg = SimulatorConfig::load(&demo_dir("case_c").join("simulator.json")).expect("case C config");
    let dir = runs_dir();
    let t0 = Instant::now();
    let mut hits = 0;
    let mut labels_ok = true;
    let mut worst = f64::INFINITY;
    for seed in 1..=SEEDS {
        let run = run_headless(reg, "case_c", dir.path(), seed, |_| {});
        labels_ok &= run.store().at_port("chemist", "label").count() == CASE_C_LABELS;
        let w: Vec<f64> = numbers(&last_value(&run, "infer", "model")["w"]);
        let c = cosine(&w, &cfg.w_star);
        worst = worst.min(c);
        hits += usize::from(c >= CASE_C_MIN_COSINE);
    }
    let elapsed = t0.elapsed();
    verdict(
        labels_ok && hits >= CASE_C_MIN_HITS && elapsed < TIME_LIMIT,
        format!(
            "cosine(w, w*) >= {CASE_C_MIN_COSINE} in {hits}/{SEEDS} seeds (worst {worst:.3}), {CASE_C_LABELS} labels each: {labels_ok}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).expect("non-empty");
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn numerics() -> Verdict {
    let mut rng = rng_from_seed(77);
    let mut ei_err = 0.0f64;
    for k in 0..EI_TRIPLES {
        let (mu, sigma, f_min) = (rng.random_range(-1.0..1.0), rng.random_range(0.05..0.5), rng.random_range(-1.0..1.0));
        let mut draws = rng_from_seed(1000 + k as u64);
        let gain = |z: f64| (f_min - (mu + sigma * z)).max(0.0);
        let mc = (0..EI_DRAWS / 2)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut draws);
                gain(z) + gain(-z)
            })
            .sum::<f64>()
            / EI_DRAWS as f64;
        ei_err = ei_err.max((expected_improvement(mu, sigma, f_min, 0.0) - mc).abs());
    }

    let mut gp_err = 0.0f64;
    for n in 1..=GP_MAX_POINTS {
        let h = GpHyper {
            sigma_f2: rng.random_range(0.5..2.0),
            ell: rng.random_range(0.3..1.5),
            sigma_n2: rng.random_range(1e-4..0.1),
            m0: rng.random_range(-1.0..1.0),
        };
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let model = gp_fit(&x, &y, h).expect("gp fit");
        let k = |a: &[f64], b: &[f64]| {
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
            h.sigma_f2 * (-d2 / (2.0 * h.ell * h.ell)).exp()
        };
        let gram: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| k(&x[i], &x[j]) + if i == j { h.sigma_n2 } else { 0.0 }).collect())
            .collect();
        let alpha = dense_solve(gram.clone(), y.iter().map(|v| v - h.m0).collect());
        for _ in 0..5 {
            let q = vec![rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5)];
            let ks: Vec<f64> = x.iter().map(|xi| k(xi, &q)).collect();
            let v = dense_solve(gram.clone(), ks.clone());
            let mean = h.m0 + ks.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
            let var = (k(&q, &q) - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()).max(0.0);
            let (m, s) = model.predict(std::slice::from_ref(&q)).expect("predict");
            gp_err = gp_err.max((m[0] - mean).abs()).max((s[0] - var).abs());
        }
    }

    let mut grad_err = 0.0f64;
    for _ in 0..10 {
        let x: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<u8> = (0..12).map(|_| rng.random_range(0..2)).collect();
        let fit = fit_scoring(&x, &labels, 1.0).expect("fit");
        let probes = [fit.w.iter().copied().chain([fit.b]).collect::<Vec<_>>(), (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()];
        for theta in probes {
            let g = map_gradient(&x, &labels, 1.0, &theta);
            for j in 0..theta.len() {
                let h = 1e-5;
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (map_objective(&x, &labels, 1.0, &up) - map_objective(&x, &labels, 1.0, &dn)) / (2.0 * h);
                grad_err = grad_err.max((g[j] - fd).abs() / g[j].abs().max(1.0));
            }
        }
    }
    verdict(
        ei_err < EI_TOL && gp_err < GP_TOL && grad_err < GRAD_REL_TOL,
        format!(
            "EI vs Monte Carlo max error {ei_err:.1e} on {EI_TRIPLES} triples, GP vs dense solve {gp_err:.1e}, \
             scoring gradient vs differences {grad_err:.1e} relative"
        ),
    )
}

fn timeout_defaults(reg: &Arc<PluginRegistry>) -> Verdict {
    let spec = demo_spec("case_a");
    let (timeout, cap, default) = match &spec.loops.iter().find(|l| l.id == "campaign").expect("campaign loop").condition {
        labloom::dsl::LoopCondition::UserDecision { timeout_s, cap, default, .. } => (*timeout_s, *cap, *default),
        _ => return verdict(false, "campaign is not a user-decision loop".into()),
    };
    let dir = runs_dir();
    let mut run = start_demo(reg, "case_a", spec, dir.path(), 3);
    let t0 = Instant::now();
    let phase = run.run_to_end().expect("engine");
    let elapsed = t0.elapsed();
    let decisions: Vec<_> = run
        .store()
        .records()
        .iter()
        .filter(|r| r.port == "decision-campaign")
        .cloned()
        .collect();
    let all_default = decisions.iter().all(|r| r.responder == Some(Responder::TimeoutDefault));
    let passes = run.store().at_port("imaging", "index").count() / 2;
    let pass = phase == Phase::Completed
        && timeout == DEFAULT_TIMEOUT_S
        && cap == Some(DEFAULT_CAP as u32)
        && default == labloom::dsl::Decision::Continue
        && !decisions.is_empty()
        && all_default
        && passes == DEFAULT_CAP;
    verdict(
        pass,
        format!(
            "{} after {passes} campaign passes in {:.1}s, {} decisions all timeout-default: {all_default}",
            phase.as_str(),
            elapsed.as_secs_f64(),
            decisions.len()
        ),
    )
}

fn language(reg: &Arc<PluginRegistry>) -> Verdict {
    let mut identity = true;
    for case in ["case_a", "case_b", "case_c"] {
        let text = std::fs::read_to_string(demo_dir(case).join("workflow.xml")).expect("demo");
        let spec = parse_workflow(&text).expect("demo parses");
        let once = serialize(&spec);
        let back = parse_workflow(&once).expect("serialized demo parses");
        identity &= back.normalize() == spec.normalize() && serialize(&back) == once;
    }
    let mut rng = rng_from_seed(7);
    let specs: Vec<WorkflowSpec> = ["case_a", "case_b", "case_c"].iter().map(|c| demo_spec(c)).collect();
    let (mut rejected, mut round_tripped, mut broken) = (0, 0, 0);
    let mut made = 0;
    while made < MUTANTS {
        let base = &specs[rng.random_range(0..specs.len())];
        let which = rng.random_range(0..MUTATIONS.len());
        let Some((_, _, m)) = mutate(base, reg, which, &mut rng) else { continue };
        made += 1;
        if !validate(&m, reg).ok {
            rejected += 1;
            continue;
        }
        let text = serialize(&m);
        match parse_workflow(&text) {
            Ok(back) if back.normalize() == m.normalize() && serialize(&back) == text => round_tripped += 1,
            _ => broken += 1,
        }
    }
    verdict(
        identity && broken == 0,
        format!(
            "parse(serialize) identity on the demos: {identity}; {MUTANTS} mutants: {rejected} rejected, \
             {round_tripped} round-tripped, {broken} neither"
        ),
    )
}

fn main() -> ExitCode {
    let reg = registry();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("1 case A optimization", Box::new(|| case_a(&reg))),
        ("2 determinism", Box::new(|| determinism(&reg))),
        ("3 case B nested loops", Box::new(|| case_b(&reg))),
        ("4 case C preference inference", Box::new(|| case_c(&reg))),
        ("5 numerics", Box::new(numerics)),
        ("6 case A timeout defaults", Box::new(|| timeout_defaults(&reg))),
        ("7 workflow language", Box::new(|| language(&reg))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let v = check();
        println!("criterion {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
