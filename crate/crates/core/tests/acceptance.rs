//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Set `ZTOP_ACCEPTANCE_DIR` to keep the run
//! directories for inspection.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ztop::harness::{
    check_dominance, load_registry, read_results_csv, run_experiment, save_registry,
    ExperimentConfig, ResultRow,
};
use ztop::objective::{Direction, ProblemKind};
use ztop::policy::maxcut::MaxcutPolicyParams;
use ztop::policy::tsp::{TspDims, TspPolicyParams};
use ztop::policy::Policy;
use ztop::portfolio::{evaluate_matrix, select_top_k, select_top_k_from, Method};
use ztop::problems::{gen_tsp, parse_graphs, parse_tsp};
use ztop::task::{MaxcutCase, MaxcutTask, Task, TspTask};
use ztop::training::{train_tsp, TrainConfig};

type Outcome = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn tsp_config(dir: &Path, workers: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.problem = ProblemKind::Tsp;
    cfg.n = 10;
    cfg.train_size = 2000;
    cfg.val_size = 500;
    cfg.test_size = 500;
    cfg.epochs = 30;
    cfg.seeds = vec![1, 2, 3, 4];
    cfg.ensemble_sizes = vec![1, 3, 5, 10];
    cfg.methods = vec![Method::Single, Method::Average, Method::Ztop];
    cfg.enumerate_k = 3;
    cfg.enumerate_pool = 20;
    cfg.variance_instances = 6;
    cfg.variance_models = 10;
    cfg.workers = workers;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn maxcut_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.problem = ProblemKind::Maxcut;
    cfg.family = "er".into();
    cfg.n = 15;
    cfg.test_n = Some(20);
    cfg.train_size = 64;
    cfg.val_size = 32;
    cfg.test_size = 32;
    cfg.epochs = 8;
    cfg.start_count = 50;
    cfg.seeds = vec![1, 2, 3];
    cfg.ensemble_sizes = vec![1, 3, 5];
    cfg.methods = vec![Method::Single, Method::Average, Method::Ztop];
    cfg.enumerate_k = 3;
    cfg.enumerate_pool = 5;
    cfg.variance_instances = 6;
    cfg.variance_models = 5;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn results(dir: &Path) -> Result<Vec<ResultRow>, String> {
    let bytes = fs::read(dir.join("results.csv")).map_err(err)?;
    read_results_csv(&bytes[..]).map_err(err)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Recomputes each member's objective on the test split from the saved
/// checkpoints and checks every ZTop row equals the pointwise best of its
/// first k members, bit for bit.
fn exact_pointwise_best<T: Task>(
    task: &T,
    cfg: &ExperimentConfig,
    rows: &[ResultRow],
    seed: u64,
    test: &[T::Instance],
) -> Result<usize, String> {
    let reg = load_registry::<T::Model>(&cfg.output_dir.join(format!("checkpoints/seed-{seed}")))
        .map_err(err)?;
    let k_max = *cfg.ensemble_sizes.iter().max().unwrap();
    let set = select_top_k_from(&reg, k_max, cfg.selection_pool).map_err(err)?;
    let matrix = evaluate_matrix(task, &set.models(), test).map_err(err)?;
    let dir = task.direction();
    let by_key: BTreeMap<(&str, usize), f64> = rows
        .iter()
        .filter(|r| r.method == Method::Ztop)
        .map(|r| ((r.instance_id.as_str(), r.k), r.objective))
        .collect();
    let mut checked = 0;
    for &k in &cfg.ensemble_sizes {
        for (i, id) in matrix.instance_ids.iter().enumerate() {
            let best = (0..k)
                .map(|m| matrix.objectives[m][i])
                .reduce(|a, b| if dir.better(b, a) { b } else { a })
                .unwrap();
            let got = by_key
                .get(&(id.as_str(), k))
                .ok_or_else(|| format!("no ztop({k}) row for {id}"))?;
            if got.to_bits() != best.to_bits() {
                return Err(format!("{id}: ztop({k}) = {got}, best member = {best}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn c1_dominance(tsp: &ExperimentConfig, mc: &ExperimentConfig) -> Outcome {
    let mut checked = 0;
    for cfg in [tsp, mc] {
        let rows = results(&cfg.output_dir)?;
        check_dominance(&rows, cfg.problem.direction()).map_err(err)?;
        let dir = &cfg.output_dir;
        for &seed in &cfg.seeds {
            let text =
                fs::read_to_string(dir.join(format!("data/seed-{seed}/test.txt"))).map_err(err)?;
            checked += match cfg.problem {
                ProblemKind::Tsp => exact_pointwise_best(
                    &TspTask,
                    cfg,
                    &rows,
                    seed,
                    &parse_tsp(&text).map_err(err)?,
                )?,
                ProblemKind::Maxcut => {
                    let cases: Vec<MaxcutCase> = parse_graphs(&text)
                        .map_err(err)?
                        .into_iter()
                        .map(|g| MaxcutCase::prepare(g, cfg.start_count, seed))
                        .collect();
                    let task = MaxcutTask {
                        max_steps: cfg.max_steps,
                    };
                    exact_pointwise_best(&task, cfg, &rows, seed, &cases)?
                }
            };
        }
    }
    Ok(format!(
        "{checked} ztop cells equal the best member; aggregate and k-monotonicity hold"
    ))
}

fn c2_gradients() -> Outcome {
    let (tsp, maxcut) = common::gradient_check(25, 1e-5);
    let worst = tsp.max(maxcut);
    let line = format!(
        "50 networks, worst relative error {worst:.2e} (tsp {tsp:.2e}, maxcut {maxcut:.2e})"
    );
    if worst < 1e-4 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c3_oracles() -> Outcome {
    common::oracle_consistency(200, 200)
}

fn c4_tsp_trend(rows: &[ResultRow], seeds: &[u64]) -> Outcome {
    let mut improved = 0;
    let mut parts = Vec::new();
    for &seed in seeds {
        let of = |m: Method, k: usize| {
            mean(
                rows.iter()
                    .filter(|r| r.method == m && r.k == k && r.seed().ok() == Some(seed))
                    .map(|r| r.objective),
            )
        };
        let single = of(Method::Single, 1);
        let ztop = of(Method::Ztop, 5);
        let gain = (single - ztop) / single;
        if ztop < single && gain >= 0.005 {
            improved += 1;
        }
        parts.push(format!(
            "seed {seed}: single {single:.4} ztop5 {ztop:.4} ({:+.2}%)",
            -100.0 * gain
        ));
    }
    let line = format!(
        "{improved}/{} seeds improve by >= 0.5%; {}",
        seeds.len(),
        parts.join("; ")
    );
    if improved >= 3 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c5_maxcut_trend(rows: &[ResultRow], seeds: &[u64]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for &seed in seeds {
        let of = |m: Method, k: usize| {
            mean(
                rows.iter()
                    .filter(|r| r.method == m && r.k == k && r.seed().ok() == Some(seed))
                    .map(|r| r.objective),
            )
        };
        let (single, ztop) = (of(Method::Single, 1), of(Method::Ztop, 5));
        ok &= ztop >= single;
        parts.push(format!("seed {seed}: single {single:.4} ztop5 {ztop:.4}"));
    }
    let line = parts.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c6_optimal_k(dir: &Path) -> Outcome {
    let text = fs::read_to_string(dir.join("enumerate.csv")).map_err(err)?;
    let line = text
        .lines()
        .skip(1)
        .find(|l| l.starts_with("1,"))
        .ok_or("no enumeration row for seed 1")?;
    let f: Vec<&str> = line.split(',').collect();
    let ratio: f64 = f[6].parse().map_err(err)?;
    let msg = format!(
        "seed 1, 3 of top-{}: optimal {} vs ztop {} -> ratio {ratio:.4} (soft target 0.95 {})",
        f[2],
        f[4],
        f[5],
        if ratio >= 0.95 { "met" } else { "missed" }
    );
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7_variance(dir: &Path) -> Outcome {
    let text = fs::read_to_string(dir.join("variance.csv")).map_err(err)?;
    let mut instances = BTreeSet::new();
    let mut winners = BTreeSet::new();
    let mut models = BTreeSet::new();
    for line in text.lines().skip(1).filter(|l| l.starts_with("1,")) {
        let f: Vec<&str> = line.split(',').collect();
        instances.insert(f[1].to_string());
        models.insert(f[2].to_string());
        if f[5] == "1" {
            winners.insert(f[3].to_string());
        }
    }
    let msg = format!(
        "{} instances x {} models, winning epochs {:?}",
        instances.len(),
        models.len(),
        winners
    );
    if instances.len() == 6 && models.len() == 10 && winners.len() >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_determinism(a: &Path, b: &Path) -> Outcome {
    let ra = fs::read(a.join("results.csv")).map_err(err)?;
    let rb = fs::read(b.join("results.csv")).map_err(err)?;
    if ra != rb {
        return Err("results.csv differs between 1 and 8 workers".into());
    }

    let scratch = tempfile::tempdir().map_err(err)?;
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 16,
        seed: 21,
        tsp_dims: TspDims {
            d: 8,
            d_ff: 16,
            layers: 1,
        },
        ..TrainConfig::default()
    };
    let data = gen_tsp(8, 96, 21).map_err(err)?;
    let out = train_tsp(&cfg, &data[..64], &data[64..]).map_err(err)?;
    save_registry(scratch.path(), &out.registry).map_err(err)?;
    let loaded = load_registry::<TspPolicyParams>(scratch.path()).map_err(err)?;
    for k in 1..=5 {
        let x = select_top_k(&out.registry, k).map_err(err)?;
        let y = select_top_k(&loaded, k).map_err(err)?;
        let same = x.epochs() == y.epochs()
            && x.checkpoints().iter().zip(y.checkpoints()).all(|(p, q)| {
                p.val_score.to_bits() == q.val_score.to_bits()
                    && p.params.params().tensors() == q.params.params().tensors()
            });
        if !same {
            return Err(format!(
                "select_top_k({k}) changed after a save/load round trip"
            ));
        }
    }
    // and for the registries the acceptance run stored
    let maxcut_dir = a.parent().unwrap().join("maxcut/checkpoints/seed-1");
    let reg = load_registry::<MaxcutPolicyParams>(&maxcut_dir).map_err(err)?;
    let again_dir = scratch.path().join("again");
    save_registry(&again_dir, &reg).map_err(err)?;
    let again = load_registry::<MaxcutPolicyParams>(&again_dir).map_err(err)?;
    if select_top_k(&reg, 5).map_err(err)?.epochs()
        != select_top_k(&again, 5).map_err(err)?.epochs()
    {
        return Err("maxcut selection changed after a round trip".into());
    }
    Ok(format!(
        "results.csv identical at 1 and 8 workers ({} bytes); top-k selections survive save/load",
        ra.len()
    ))
}

fn timed(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(msg) => {
            println!("{name} PASS [{secs:.1}s] {msg}");
            true
        }
        Err(msg) => {
            println!("{name} FAIL [{secs:.1}s] {msg}");
            false
        }
    }
}

fn main() {
    let keep = std::env::var_os("ZTOP_ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    let tsp = tsp_config(&root.join("tsp"), 1);
    let tsp8 = tsp_config(&root.join("tsp-w8"), 8);
    let mc = maxcut_config(&root.join("maxcut"));

    let start = Instant::now();
    let runs: Vec<(&str, Result<String, String>)> =
        [("tsp", &tsp), ("tsp (8 workers)", &tsp8), ("maxcut", &mc)]
            .into_iter()
            .map(|(name, cfg)| (name, run_experiment(cfg).map_err(err)))
            .collect();
    for (name, r) in &runs {
        if let Err(e) = r {
            println!("run {name} failed: {e}");
        }
    }
    println!(
        "pipelines finished in {:.1}s",
        start.elapsed().as_secs_f64()
    );

    let mut passed = Vec::new();
    passed.push(timed("C1", || c1_dominance(&tsp, &mc)));
    passed.push(timed("C2", c2_gradients));
    passed.push(timed("C3", c3_oracles));
    passed.push(timed("C4", || {
        c4_tsp_trend(&results(&tsp.output_dir)?, &tsp.seeds)
    }));
    passed.push(timed("C5", || {
        let rows = results(&mc.output_dir)?;
        check_dominance(&rows, Direction::Maximize).map_err(err)?;
        c5_maxcut_trend(&rows, &mc.seeds)
    }));
    passed.push(timed("C6", || c6_optimal_k(&tsp.output_dir)));
    passed.push(timed("C7", || c7_variance(&tsp.output_dir)));
    passed.push(timed("C8", || {
        c8_determinism(&tsp.output_dir, &tsp8.output_dir)
    }));

    let failed = passed.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        passed.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
