//! Stage functions behind the CLI and the end-to-end `run_experiment`.
//!
//! Every stage reads its inputs from and writes its outputs to the output
//! directory, so stages can be run separately or resumed. A state file keyed
//! by the config hash records finished stages; a different hash wipes the
//! previous artifacts before anything is reused.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;

use super::checkpoint::{load_registry, save_registry};
use super::config::ExperimentConfig;
use super::error::{read_to_string, write};
use super::results::{
    read_results_csv, render_report, rows_from, sort_rows, write_results_csv, ResultRow,
};
use super::HarnessError;
use crate::objective::ProblemKind;
use crate::policy::Policy;
use crate::portfolio::{
    enumerate_optimal_k, eval_average, eval_sampling, evaluate_matrix,
    per_instance_variance_report, select_top_k_from, Method, PortfolioResult,
};
use crate::problems::{
    format_graphs, format_tsp, gen_graph, gen_tsp, parse_graphs, parse_tsp, GraphInstance,
};
use crate::seeding::rng_for;
use crate::task::{MaxcutCase, MaxcutTask, Task, TspTask};
use crate::training::{train_maxcut, train_tsp, CheckpointRegistry, EpochLog};

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self, seed: u64, split: &str) -> PathBuf {
        self.root.join(format!("data/seed-{seed}/{split}.txt"))
    }

    pub fn checkpoints(&self, seed: u64) -> PathBuf {
        self.root.join(format!("checkpoints/seed-{seed}"))
    }

    pub fn train_log(&self, seed: u64) -> PathBuf {
        self.root.join(format!("logs/train-seed-{seed}.csv"))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn variance(&self) -> PathBuf {
        self.root.join("variance.csv")
    }

    pub fn enumeration(&self) -> PathBuf {
        self.root.join("enumerate.csv")
    }

    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.txt")
    }

    pub fn state(&self) -> PathBuf {
        self.root.join("state.txt")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
}

/// Finished stages for the current config hash.
#[derive(Debug)]
pub struct RunState {
    path: PathBuf,
    hash: String,
    done: BTreeSet<String>,
}

impl RunState {
    /// Loads the state file. When it was written for another config, every
    /// derived artifact is removed and the state starts empty.
    pub fn open(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let layout = Layout::new(&cfg.output_dir);
        let path = layout.state();
        let hash = cfg.hash();
        let mut done = BTreeSet::new();
        let mut stale = false;
        if path.exists() {
            let text = read_to_string(&path)?;
            let mut lines = text.lines();
            if lines.next() == Some(format!("config {hash}").as_str()) {
                done.extend(
                    lines
                        .filter_map(|l| l.strip_prefix("done "))
                        .map(str::to_string),
                );
            } else {
                stale = true;
            }
        }
        if stale {
            for dir in ["data", "checkpoints", "logs"] {
                let p = layout.root.join(dir);
                if p.exists() {
                    std::fs::remove_dir_all(&p).map_err(|e| HarnessError::io(&p, e))?;
                }
            }
            for p in [
                layout.results(),
                layout.summary(),
                layout.variance(),
                layout.enumeration(),
                layout.selection(),
            ] {
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
                }
            }
        }
        let state = Self { path, hash, done };
        state.save()?;
        write(&layout.config(), cfg.to_text())?;
        Ok(state)
    }

    pub fn is_done(&self, stage: &str, seed: u64) -> bool {
        self.done.contains(&format!("{stage} {seed}"))
    }

    pub fn mark(&mut self, stage: &str, seed: u64) -> Result<(), HarnessError> {
        self.done.insert(format!("{stage} {seed}"));
        self.save()
    }

    fn save(&self) -> Result<(), HarnessError> {
        let mut text = format!("config {}\n", self.hash);
        for d in &self.done {
            let _ = writeln!(text, "done {d}");
        }
        write(&self.path, text)
    }
}

/// Runs `f` on a pool of `cfg.workers` threads.
pub fn with_workers<R: Send>(
    cfg: &ExperimentConfig,
    f: impl FnOnce() -> Result<R, HarnessError> + Send,
) -> Result<R, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("workers: {e}")))?;
    pool.install(f)
}

fn split_sizes(cfg: &ExperimentConfig) -> (usize, usize, usize) {
    (cfg.train_size, cfg.val_size, cfg.test_size)
}

/// Train and validation share one generated sequence; the test split
/// continues it when sizes match and is drawn separately otherwise.
fn generate<T>(
    cfg: &ExperimentConfig,
    gen: impl Fn(usize, usize) -> Result<Vec<T>, HarnessError>,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), HarnessError> {
    let (tr, va, te) = split_sizes(cfg);
    if cfg.test_n() == cfg.n {
        let mut all = gen(cfg.n, tr + va + te)?;
        let test = all.split_off(tr + va);
        let val = all.split_off(tr);
        Ok((all, val, test))
    } else {
        let mut all = gen(cfg.n, tr + va)?;
        let val = all.split_off(tr);
        Ok((all, val, gen(cfg.test_n(), te)?))
    }
}

/// Writes the train/val/test splits of every seed.
pub fn stage_gen(cfg: &ExperimentConfig, state: &mut RunState) -> Result<(), HarnessError> {
    let layout = Layout::new(&cfg.output_dir);
    for &seed in &cfg.seeds {
        let texts = match cfg.problem {
            ProblemKind::Tsp => {
                let (a, b, c) = generate(cfg, |n, count| Ok(gen_tsp(n, count, seed)?))?;
                [format_tsp(&a), format_tsp(&b), format_tsp(&c)]
            }
            ProblemKind::Maxcut => {
                let family = cfg.graph_family()?;
                let (a, b, c) = generate(cfg, |n, count| Ok(gen_graph(family, n, count, seed)?))?;
                [format_graphs(&a), format_graphs(&b), format_graphs(&c)]
            }
        };
        for (split, text) in ["train", "val", "test"].iter().zip(texts) {
            write(&layout.data(seed, split), text)?;
        }
        state.mark("gen", seed)?;
    }
    Ok(())
}

fn read_split<T>(
    layout: &Layout,
    seed: u64,
    split: &str,
    parse: fn(&str) -> Result<Vec<T>, crate::problems::ProblemError>,
) -> Result<Vec<T>, HarnessError> {
    let path = layout.data(seed, split);
    if !path.exists() {
        return Err(HarnessError::Data(format!(
            "{} is missing; run `gen` first",
            path.display()
        )));
    }
    parse(&read_to_string(&path)?)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

fn cases(cfg: &ExperimentConfig, seed: u64, graphs: Vec<GraphInstance>) -> Vec<MaxcutCase> {
    use rayon::prelude::*;
    graphs
        .into_par_iter()
        .map(|g| MaxcutCase::prepare(g, cfg.start_count, seed))
        .collect()
}

fn write_train_log(path: &Path, initial: f64, log: &[EpochLog]) -> Result<(), HarnessError> {
    let mut text = String::from("epoch,train_loss,val_score\n");
    let _ = writeln!(text, "0,,{initial}");
    for l in log {
        let _ = writeln!(text, "{},{},{}", l.epoch, l.train_loss, l.val_score);
    }
    write(path, text)
}

/// Trains one registry per seed and saves every retained checkpoint.
pub fn stage_train(cfg: &ExperimentConfig, state: &mut RunState) -> Result<(), HarnessError> {
    let layout = Layout::new(&cfg.output_dir);
    for &seed in &cfg.seeds {
        let tc = cfg.train_config(seed);
        match cfg.problem {
            ProblemKind::Tsp => {
                let train = read_split(&layout, seed, "train", parse_tsp)?;
                let val = read_split(&layout, seed, "val", parse_tsp)?;
                let out = train_tsp(&tc, &train, &val)?;
                save_registry(&layout.checkpoints(seed), &out.registry)?;
                write_train_log(&layout.train_log(seed), out.initial_val_score, &out.log)?;
            }
            ProblemKind::Maxcut => {
                let train = read_split(&layout, seed, "train", parse_graphs)?;
                let val = cases(cfg, seed, read_split(&layout, seed, "val", parse_graphs)?);
                let out = train_maxcut(&tc, &train, &val)?;
                save_registry(&layout.checkpoints(seed), &out.registry)?;
                write_train_log(&layout.train_log(seed), out.initial_val_score, &out.log)?;
            }
        }
        state.mark("train", seed)?;
    }
    Ok(())
}

fn load_reg<P: Policy>(layout: &Layout, seed: u64) -> Result<CheckpointRegistry<P>, HarnessError> {
    let dir = layout.checkpoints(seed);
    if !dir.exists() {
        return Err(HarnessError::Data(format!(
            "{} is missing; run `train` first",
            dir.display()
        )));
    }
    load_registry(&dir)
}

/// Writes the selected epochs for every ensemble size and seed.
pub fn stage_select(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
    let layout = Layout::new(&cfg.output_dir);
    let mut text = String::new();
    for &seed in &cfg.seeds {
        let epochs_for = |k: usize| -> Result<Vec<usize>, HarnessError> {
            Ok(match cfg.problem {
                ProblemKind::Tsp => select_top_k_from(
                    &load_reg::<crate::policy::tsp::TspPolicyParams>(&layout, seed)?,
                    k,
                    cfg.selection_pool,
                )?
                .epochs(),
                ProblemKind::Maxcut => select_top_k_from(
                    &load_reg::<crate::policy::maxcut::MaxcutPolicyParams>(&layout, seed)?,
                    k,
                    cfg.selection_pool,
                )?
                .epochs(),
            })
        };
        for &k in &cfg.ensemble_sizes {
            let e: Vec<String> = epochs_for(k)?.iter().map(ToString::to_string).collect();
            let _ = writeln!(text, "seed {seed} k {k} epochs {}", e.join(","));
        }
    }
    write(&layout.selection(), &text)?;
    Ok(text)
}

/// Which evaluation products a call should compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalParts {
    pub methods: bool,
    pub enumerate: bool,
}

#[derive(Debug, Default)]
struct SeedOutput {
    results: Vec<PortfolioResult>,
    variance: String,
    enumeration: String,
}

fn evaluate_seed<T: Task>(
    cfg: &ExperimentConfig,
    seed: u64,
    task: &T,
    reg: &CheckpointRegistry<T::Model>,
    val: &[T::Instance],
    test: &[T::Instance],
    parts: EvalParts,
) -> Result<SeedOutput, HarnessError>
where
    T::Instance: Clone,
{
    let mut out = SeedOutput::default();
    let k_max = cfg.ensemble_sizes.iter().copied().max().unwrap_or(1);
    let mut pool_size = 0;
    if parts.methods {
        pool_size = k_max;
    }
    if parts.enumerate {
        pool_size = pool_size.max(cfg.enumerate_pool);
    }
    if pool_size == 0 {
        return Ok(out);
    }
    let set = select_top_k_from(reg, pool_size, cfg.selection_pool)?;
    let epochs = set.epochs();
    // one evaluation of each member on each test instance, shared below
    let matrix = evaluate_matrix(task, &set.models(), test)?;

    if parts.methods {
        let mut sizes = cfg.ensemble_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        for &method in &cfg.methods {
            match method {
                Method::Single => out.results.push(matrix.single()?),
                Method::Ztop => {
                    for &k in &sizes {
                        out.results.push(matrix.ztop(k)?);
                    }
                }
                Method::Average => {
                    for &k in &sizes {
                        out.results.push(eval_average(task, &set.prefix(k)?, test)?);
                    }
                }
                Method::Sampling => out.results.push(eval_sampling(
                    task,
                    &set.checkpoints()[0].params,
                    test,
                    cfg.samples,
                    seed,
                )?),
                Method::Optimal => {}
            }
        }

        // per-instance spread of the top models on a few validation instances
        let picks = {
            let mut v = sample(
                &mut rng_for(seed, "variance"),
                val.len(),
                cfg.variance_instances.min(val.len()),
            )
            .into_vec();
            v.sort_unstable();
            v
        };
        let chosen: Vec<T::Instance> = picks.iter().map(|&i| val[i].clone()).collect();
        let vset = select_top_k_from(reg, cfg.variance_models, cfg.selection_pool)?;
        let vmatrix = evaluate_matrix(task, &vset.models(), &chosen)?;
        let report =
            per_instance_variance_report(&vmatrix, &(0..chosen.len()).collect::<Vec<_>>())?;
        for (i, id) in report.instance_ids.iter().enumerate() {
            for (m, obj) in report.objectives[i].iter().enumerate() {
                let _ = writeln!(
                    out.variance,
                    "{seed},{id},{m},{},{obj},{}",
                    vset.epochs()[m],
                    u8::from(report.winners[i] == m)
                );
            }
        }
    }

    if parts.enumerate {
        let sub = if pool_size == cfg.enumerate_pool {
            matrix.clone()
        } else {
            let mut m = matrix.clone();
            m.objectives.truncate(cfg.enumerate_pool);
            m.times.truncate(cfg.enumerate_pool);
            m
        };
        let opt = enumerate_optimal_k(&sub, cfg.enumerate_k, cfg.enumeration_budget)?;
        let subset: Vec<String> = opt
            .best_subset
            .iter()
            .map(|&i| epochs[i].to_string())
            .collect();
        let _ = writeln!(
            out.enumeration,
            "{seed},{},{},{},{},{},{}",
            cfg.enumerate_k,
            cfg.enumerate_pool,
            subset.join(";"),
            opt.best_aggregate,
            opt.ztop_aggregate,
            opt.ratio
        );
        out.results.push(opt.result(&sub));
    }
    Ok(out)
}

const VARIANCE_HEADER: &str = "seed,instance_id,model,epoch,objective,winner\n";
const ENUMERATION_HEADER: &str =
    "seed,k,pool,best_subset_epochs,best_aggregate,ztop_aggregate,ratio\n";

/// Evaluates the requested parts for every seed and merges them into the
/// results file, replacing earlier rows of the same methods.
pub fn stage_eval(
    cfg: &ExperimentConfig,
    parts: EvalParts,
) -> Result<Vec<ResultRow>, HarnessError> {
    let layout = Layout::new(&cfg.output_dir);
    let mut outputs = Vec::new();
    for &seed in &cfg.seeds {
        let out = match cfg.problem {
            ProblemKind::Tsp => {
                let reg = load_reg(&layout, seed)?;
                let val = read_split(&layout, seed, "val", parse_tsp)?;
                let test = read_split(&layout, seed, "test", parse_tsp)?;
                evaluate_seed(cfg, seed, &TspTask, &reg, &val, &test, parts)?
            }
            ProblemKind::Maxcut => {
                let reg = load_reg(&layout, seed)?;
                let val = cases(cfg, seed, read_split(&layout, seed, "val", parse_graphs)?);
                let test = cases(cfg, seed, read_split(&layout, seed, "test", parse_graphs)?);
                let task = MaxcutTask {
                    max_steps: cfg.max_steps,
                };
                evaluate_seed(cfg, seed, &task, &reg, &val, &test, parts)?
            }
        };
        outputs.push(out);
    }

    let mut rows = if layout.results().exists() {
        let bytes =
            std::fs::read(layout.results()).map_err(|e| HarnessError::io(&layout.results(), e))?;
        read_results_csv(&bytes[..])?
    } else {
        Vec::new()
    };
    rows.retain(|r| {
        let optimal = r.method == Method::Optimal;
        !((parts.methods && !optimal) || (parts.enumerate && optimal))
    });
    for o in &outputs {
        rows.extend(rows_from(&o.results, cfg.timing));
    }
    sort_rows(&mut rows);
    write(&layout.results(), write_results_csv(&rows)?)?;
    if parts.methods {
        let body: String = outputs.iter().map(|o| o.variance.as_str()).collect();
        write(&layout.variance(), format!("{VARIANCE_HEADER}{body}"))?;
    }
    if parts.enumerate {
        let body: String = outputs.iter().map(|o| o.enumeration.as_str()).collect();
        write(&layout.enumeration(), format!("{ENUMERATION_HEADER}{body}"))?;
    }
    Ok(rows)
}

/// Renders the summary table from the results file.
pub fn stage_report(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
    let layout = Layout::new(&cfg.output_dir);
    let path = layout.results();
    let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
    let rows = read_results_csv(&bytes[..])
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let mut text = render_report(&rows, cfg.problem.direction())?;
    let enum_path = layout.enumeration();
    if enum_path.exists() {
        let _ = writeln!(
            text,
            "\noptimal-k enumeration\n{}",
            read_to_string(&enum_path)?.trim_end()
        );
    }
    write(&layout.summary(), &text)?;
    Ok(text)
}

/// Full pipeline: gen, train, select, eval, enumerate, report. Finished
/// generation and training stages are reused when the config hash matches.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
    cfg.validate()?;
    with_workers(cfg, || {
        let mut state = RunState::open(cfg)?;
        let pending = |state: &RunState, stage: &str| -> ExperimentConfig {
            let mut sub = cfg.clone();
            sub.seeds.retain(|&s| !state.is_done(stage, s));
            sub
        };
        let todo = pending(&state, "gen");
        if !todo.seeds.is_empty() {
            stage_gen(&todo, &mut state)?;
        }
        let todo = pending(&state, "train");
        if !todo.seeds.is_empty() {
            stage_train(&todo, &mut state)?;
        }
        stage_select(cfg)?;
        // a fresh results file, so rows never outlive the run that made them
        let results = Layout::new(&cfg.output_dir).results();
        if results.exists() {
            std::fs::remove_file(&results).map_err(|e| HarnessError::io(&results, e))?;
        }
        stage_eval(
            cfg,
            EvalParts {
                methods: true,
                enumerate: true,
            },
        )?;
        stage_report(cfg)
    })
}
