//! Line-oriented text format for instance sets.
//!
//! ```text
//! # ztop-instances v1
//! tsp <id> <n> <x0> <y0> ... <x(n-1)> <y(n-1)>
//! graph <id> <family> <param> <n> <edges> <u> <v> <w> ...
//! ```
//!
//! Reals are written with 17 significant digits so a parse reproduces the
//! exact `f64`. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{Edge, GraphFamily, GraphInstance, ProblemError, TspInstance};

const HEADER: &str = "# ztop-instances v1";

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_tsp(set: &[TspInstance]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for inst in set {
        write!(out, "tsp {} {}", inst.id, inst.n()).expect("string write");
        for c in &inst.coords {
            write!(out, " {} {}", real(c[0]), real(c[1])).expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn format_graphs(set: &[GraphInstance]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for g in set {
        write!(
            out,
            "graph {} {} {} {} {}",
            g.id,
            g.family.tag(),
            real(g.family.param()),
            g.n,
            g.edges.len()
        )
        .expect("string write");
        for e in &g.edges {
            write!(out, " {} {} {}", e.u, e.v, e.w).expect("string write");
        }
        out.push('\n');
    }
    out
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn err(&self, msg: impl Into<String>) -> ProblemError {
        ProblemError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn word(&mut self, what: &str) -> Result<&'a str, ProblemError> {
        self.it
            .next()
            .ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn num<T: FromStr>(&mut self, what: &str) -> Result<T, ProblemError> {
        let w = self.word(what)?;
        w.parse()
            .map_err(|_| self.err(format!("bad {what}: {w:?}")))
    }

    fn finish(mut self) -> Result<(), ProblemError> {
        match self.it.next() {
            None => Ok(()),
            Some(extra) => Err(self.err(format!("trailing field {extra:?}"))),
        }
    }
}

fn records<'a>(
    text: &'a str,
    kind: &'static str,
) -> impl Iterator<Item = Result<Fields<'a>, ProblemError>> {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let mut f = Fields {
            line: i + 1,
            it: line.split_whitespace(),
        };
        Some(match f.word("record kind") {
            Ok(k) if k == kind => Ok(f),
            Ok(k) => Err(f.err(format!("expected a {kind} record, found {k:?}"))),
            Err(e) => Err(e),
        })
    })
}

pub fn parse_tsp(text: &str) -> Result<Vec<TspInstance>, ProblemError> {
    records(text, "tsp")
        .map(|rec| {
            let mut f = rec?;
            let id = f.word("id")?.to_string();
            let n: usize = f.num("city count")?;
            let mut coords = Vec::with_capacity(n);
            for _ in 0..n {
                coords.push([f.num("x")?, f.num("y")?]);
            }
            let line = f.line;
            f.finish()?;
            TspInstance::new(id, coords).map_err(|e| ProblemError::Parse {
                line,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn parse_graphs(text: &str) -> Result<Vec<GraphInstance>, ProblemError> {
    records(text, "graph")
        .map(|rec| {
            let mut f = rec?;
            let id = f.word("id")?.to_string();
            let tag = f.word("family")?;
            let param: f64 = f.num("family parameter")?;
            let n: usize = f.num("vertex count")?;
            let m: usize = f.num("edge count")?;
            let mut edges = Vec::with_capacity(m);
            for _ in 0..m {
                edges.push(Edge {
                    u: f.num("u")?,
                    v: f.num("v")?,
                    w: f.num("w")?,
                });
            }
            let line = f.line;
            f.finish()?;
            let wrap = |e: ProblemError| ProblemError::Parse {
                line,
                msg: e.to_string(),
            };
            let family = GraphFamily::from_tag(tag, param).map_err(wrap)?;
            GraphInstance::new(id, n, edges, family).map_err(wrap)
        })
        .collect()
}
