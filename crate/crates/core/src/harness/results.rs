//! Results CSV, re-aggregation and the rendered summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use super::HarnessError;
use crate::objective::Direction;
use crate::portfolio::{Method, PortfolioResult};

pub const RESULT_COLUMNS: [&str; 6] = [
    "instance_id",
    "method",
    "k",
    "objective",
    "chosen_model",
    "time_ms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub instance_id: String,
    pub method: Method,
    pub k: usize,
    pub objective: f64,
    pub chosen_model: Option<usize>,
    pub time_ms: f64,
}

impl ResultRow {
    /// Master seed embedded in the instance id (`<kind>-<n>-<seed>-<index>`).
    pub fn seed(&self) -> Result<u64, HarnessError> {
        seed_of(&self.instance_id)
    }
}

pub fn seed_of(instance_id: &str) -> Result<u64, HarnessError> {
    let parts: Vec<&str> = instance_id.rsplitn(3, '-').collect();
    parts
        .get(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HarnessError::Data(format!("instance id {instance_id:?} carries no seed")))
}

/// Flattens portfolio results; times are kept only when `timing` is set.
pub fn rows_from(results: &[PortfolioResult], timing: bool) -> Vec<ResultRow> {
    results
        .iter()
        .flat_map(|r| {
            r.rows.iter().map(move |row| ResultRow {
                instance_id: row.instance_id.clone(),
                method: r.method,
                k: r.k,
                objective: row.objective,
                chosen_model: row.chosen_model,
                time_ms: if timing {
                    row.time.as_secs_f64() * 1e3
                } else {
                    0.0
                },
            })
        })
        .collect()
}

/// Canonical row order: seed, method, k, instance id.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        let key = |r: &ResultRow| (seed_of(&r.instance_id).unwrap_or(u64::MAX), r.method, r.k);
        key(a)
            .cmp(&key(b))
            .then_with(|| a.instance_id.cmp(&b.instance_id))
    });
}

pub fn write_results_csv(rows: &[ResultRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| HarnessError::Data(format!("writing results: {e}"));
    w.write_record(RESULT_COLUMNS).map_err(err)?;
    for r in rows {
        w.write_record([
            r.instance_id.clone(),
            r.method.tag().to_string(),
            r.k.to_string(),
            r.objective.to_string(),
            r.chosen_model.map(|c| c.to_string()).unwrap_or_default(),
            if r.time_ms == 0.0 {
                "0".to_string()
            } else {
                format!("{:.3}", r.time_ms)
            },
        ])
        .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Data(format!("writing results: {e}")))
}

/// Parses a results CSV; errors name the offending line.
pub fn read_results_csv(input: impl Read) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| HarnessError::Data(format!("results header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != RESULT_COLUMNS {
        return Err(HarnessError::Data(format!(
            "line 1: expected columns {}, found {}",
            RESULT_COLUMNS.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            HarnessError::Data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| HarnessError::Data(format!("line {line}: bad {what}"));
        let field = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ResultRow {
            instance_id: field(0).to_string(),
            method: field(1).parse().map_err(|_| bad("method"))?,
            k: field(2).parse().map_err(|_| bad("k"))?,
            objective: field(3).parse().map_err(|_| bad("objective"))?,
            chosen_model: match field(4) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("chosen_model"))?),
            },
            time_ms: field(5).parse().map_err(|_| bad("time_ms"))?,
        });
    }
    Ok(rows)
}

/// Mean objective of one (seed, method, k) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub seed: u64,
    pub method: Method,
    pub k: usize,
    pub mean: f64,
    pub count: usize,
}

pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut groups: BTreeMap<(u64, Method, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.seed()?, r.method, r.k)).or_insert((0.0, 0));
        g.0 += r.objective;
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|((seed, method, k), (sum, count))| SummaryRow {
            seed,
            method,
            k,
            mean: sum / count as f64,
            count,
        })
        .collect())
}

/// Checks, per seed and instance, that ZTop(k) equals or beats Single and
/// that ZTop is monotone in k. Zero tolerance.
pub fn check_dominance(rows: &[ResultRow], direction: Direction) -> Result<(), HarnessError> {
    let mut single: BTreeMap<&str, f64> = BTreeMap::new();
    let mut ztop: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        match r.method {
            Method::Single => {
                single.insert(&r.instance_id, r.objective);
            }
            Method::Ztop => {
                ztop.entry(&r.instance_id)
                    .or_default()
                    .insert(r.k, r.objective);
            }
            _ => {}
        }
    }
    for (id, by_k) in &ztop {
        let mut prev = single.get(id).copied();
        let mut prev_label = "single".to_string();
        for (k, &v) in by_k {
            if let Some(p) = prev {
                if direction.better(p, v) {
                    return Err(HarnessError::Data(format!(
                        "dominance violated on {id}: ztop k={k} gives {v}, {prev_label} gives {p}"
                    )));
                }
            }
            prev = Some(v);
            prev_label = format!("ztop k={k}");
        }
    }
    Ok(())
}

/// Counts, per seed, how often each member index was kept by ZTop at the largest k.
pub fn winner_histogram(
    rows: &[ResultRow],
) -> Result<BTreeMap<u64, (usize, BTreeMap<usize, usize>)>, HarnessError> {
    let mut max_k: BTreeMap<u64, usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == Method::Ztop) {
        let e = max_k.entry(r.seed()?).or_insert(0);
        *e = (*e).max(r.k);
    }
    let mut out: BTreeMap<u64, (usize, BTreeMap<usize, usize>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == Method::Ztop) {
        let seed = r.seed()?;
        if r.k == max_k[&seed] {
            if let Some(c) = r.chosen_model {
                *out.entry(seed)
                    .or_insert_with(|| (r.k, BTreeMap::new()))
                    .1
                    .entry(c)
                    .or_insert(0) += 1;
            }
        }
    }
    Ok(out)
}

/// Text table of per-(seed, method, k) means plus the ZTop winner histogram.
/// Fails if any rendered ZTop row is worse than Single for its seed.
pub fn render_report(rows: &[ResultRow], direction: Direction) -> Result<String, HarnessError> {
    check_dominance(rows, direction)?;
    let summary = summarize(rows)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6}  {:<9} {:>4} {:>8}  {:>14}",
        "seed", "method", "k", "count", "mean"
    );
    for s in &summary {
        let single = summary
            .iter()
            .find(|x| x.seed == s.seed && x.method == Method::Single)
            .map(|x| x.mean);
        if let (Method::Ztop, Some(base)) = (s.method, single) {
            if direction.better(base, s.mean) {
                return Err(HarnessError::Data(format!(
                    "seed {}: ztop k={} mean {} is worse than single {}",
                    s.seed, s.k, s.mean, base
                )));
            }
        }
        let _ = writeln!(
            out,
            "{:>6}  {:<9} {:>4} {:>8}  {:>14.6}",
            s.seed,
            s.method.tag(),
            s.k,
            s.count,
            s.mean
        );
    }
    let hist = winner_histogram(rows)?;
    if !hist.is_empty() {
        let _ = writeln!(out, "\nztop winners (member index: instances)");
        for (seed, (k, counts)) in &hist {
            let parts: Vec<String> = counts.iter().map(|(m, c)| format!("{m}:{c}")).collect();
            let _ = writeln!(out, "{seed:>6}  k={k:<3} {}", parts.join(" "));
        }
    }
    Ok(out)
}
