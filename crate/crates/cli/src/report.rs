//! Comparison tables and trend flags from an aggregate CSV.
//!
//! Two strategies are ordered only when their means differ by at least the
//! standard error of the difference, `sqrt(se_a² + se_b²)`; otherwise the
//! pair is reported as a tie.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use wpt_sched_core::sim::Summary;

use crate::runner::{label, AggregateRow, AGGREGATE_HEADER};
use crate::Error;

/// One aggregate row as the report sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub n_nodes: usize,
    pub slot_minislots: u32,
    /// `strategy` or `strategy[design]`.
    pub label: String,
    pub runs: usize,
    pub delivered: Summary,
    pub throughput_pps: Summary,
    pub loss_rate: Summary,
}

impl From<&AggregateRow> for Entry {
    fn from(r: &AggregateRow) -> Self {
        Self {
            n_nodes: r.n_nodes,
            slot_minislots: r.slot_minislots,
            label: label(&r.strategy, &r.design),
            runs: r.aggregate.runs,
            delivered: r.aggregate.delivered,
            throughput_pps: r.aggregate.throughput_pps,
            loss_rate: r.aggregate.loss_rate,
        }
    }
}

pub fn read_aggregate(path: &Path) -> Result<Vec<Entry>, Error> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv(name.clone(), e))?;
    let header = r
        .headers()
        .map_err(|e| Error::Csv(name.clone(), e))?
        .clone();
    if header.iter().ne(AGGREGATE_HEADER) {
        return Err(Error::Schema(format!(
            "{name}: expected columns {}, found {}",
            AGGREGATE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(name.clone(), e))?;
        let bad = |col: usize| {
            Error::Schema(format!(
                "{name} row {}: bad {}",
                line + 1,
                AGGREGATE_HEADER[col]
            ))
        };
        let f = |col: usize| rec[col].parse::<f64>().map_err(|_| bad(col));
        let summary = |col: usize| -> Result<Summary, Error> {
            Ok(Summary {
                mean: f(col)?,
                stderr: f(col + 1)?,
            })
        };
        out.push(Entry {
            n_nodes: rec[0].parse().map_err(|_| bad(0))?,
            slot_minislots: rec[1].parse().map_err(|_| bad(1))?,
            label: label(&rec[2], &rec[3]),
            runs: rec[4].parse().map_err(|_| bad(4))?,
            delivered: summary(7)?,
            throughput_pps: summary(11)?,
            loss_rate: summary(13)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Greater,
    Tie,
    Less,
}

impl Relation {
    pub fn symbol(&self) -> &'static str {
        match self {
            Self::Greater => ">",
            Self::Tie => "≈",
            Self::Less => "<",
        }
    }
}

/// Compares `a` with `b` at one standard error of the difference.
pub fn compare(a: Summary, b: Summary) -> Relation {
    let d = a.mean - b.mean;
    let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    if d == 0.0 || d.abs() < se {
        Relation::Tie
    } else if d > 0.0 {
        Relation::Greater
    } else {
        Relation::Less
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Throughput,
    Loss,
}

impl Metric {
    pub fn of(&self, e: &Entry) -> Summary {
        match self {
            Self::Throughput => e.throughput_pps,
            Self::Loss => e.loss_rate,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Throughput => "throughput (pkt/slot)",
            Self::Loss => "loss rate",
        }
    }
}

/// Strategies of one grid point ranked by a metric, best first.
#[derive(Debug, Clone)]
pub struct Ranking {
    pub n_nodes: usize,
    pub slot_minislots: u32,
    pub metric: Metric,
    pub ranked: Vec<(String, Summary)>,
    /// Relation between each adjacent pair of `ranked`.
    pub relations: Vec<Relation>,
}

fn groups(entries: &[Entry]) -> BTreeMap<(usize, u32), Vec<&Entry>> {
    let mut g: BTreeMap<(usize, u32), Vec<&Entry>> = BTreeMap::new();
    for e in entries {
        g.entry((e.n_nodes, e.slot_minislots)).or_default().push(e);
    }
    g
}

pub fn rankings(entries: &[Entry], metric: Metric) -> Vec<Ranking> {
    groups(entries)
        .into_iter()
        .map(|((n, t), es)| {
            let mut ranked: Vec<(String, Summary)> =
                es.iter().map(|e| (e.label.clone(), metric.of(e))).collect();
            ranked.sort_by(|a, b| {
                let o = b.1.mean.total_cmp(&a.1.mean);
                let o = if metric == Metric::Loss {
                    o.reverse()
                } else {
                    o
                };
                o.then_with(|| a.0.cmp(&b.0))
            });
            let relations = ranked.windows(2).map(|w| compare(w[0].1, w[1].1)).collect();
            Ranking {
                n_nodes: n,
                slot_minislots: t,
                metric,
                ranked,
                relations,
            }
        })
        .collect()
}

/// Checks an expected chain `labels[0] ≥ labels[1] ≥ …` (throughput) or
/// `≤` (loss) at one grid point. Returns each adjacent pair with its
/// relation, oriented so that `Greater` means the expected order holds.
pub fn check_chain(
    entries: &[Entry],
    n_nodes: usize,
    slot_minislots: u32,
    labels: &[&str],
    metric: Metric,
) -> Option<Vec<(String, String, Relation)>> {
    let find = |l: &str| {
        entries
            .iter()
            .find(|e| e.n_nodes == n_nodes && e.slot_minislots == slot_minislots && e.label == l)
    };
    let mut out = Vec::new();
    for w in labels.windows(2) {
        let (a, b) = (find(w[0])?, find(w[1])?);
        let r = match metric {
            Metric::Throughput => compare(metric.of(a), metric.of(b)),
            Metric::Loss => compare(metric.of(b), metric.of(a)),
        };
        out.push((w[0].to_string(), w[1].to_string(), r));
    }
    Some(out)
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// How one strategy's metrics move along the T̂ axis at fixed N.
///
/// Throughput here is delivered packets per run, which over a fixed time
/// horizon is the packet count the network achieves in that time.
#[derive(Debug, Clone)]
pub struct Trend {
    pub n_nodes: usize,
    pub label: String,
    pub slot_minislots: Vec<u32>,
    pub delivered: Vec<f64>,
    pub loss_rate: Vec<f64>,
    pub delivered_rho: f64,
    pub loss_rho: f64,
}

impl Trend {
    pub fn throughput_non_increasing(&self) -> bool {
        self.delivered_rho <= 0.0
    }

    pub fn loss_non_decreasing(&self) -> bool {
        self.loss_rho >= 0.0
    }
}

/// Trends for every `(N, strategy)` with at least two T̂ values.
pub fn trends(entries: &[Entry]) -> Vec<Trend> {
    let mut g: BTreeMap<(usize, &str), Vec<&Entry>> = BTreeMap::new();
    for e in entries {
        g.entry((e.n_nodes, e.label.as_str())).or_default().push(e);
    }
    g.into_iter()
        .filter(|(_, es)| es.len() >= 2)
        .map(|((n, l), mut es)| {
            es.sort_by_key(|e| e.slot_minislots);
            let t: Vec<f64> = es.iter().map(|e| e.slot_minislots as f64).collect();
            let delivered: Vec<f64> = es.iter().map(|e| e.delivered.mean).collect();
            let loss_rate: Vec<f64> = es.iter().map(|e| e.loss_rate.mean).collect();
            Trend {
                n_nodes: n,
                label: l.into(),
                slot_minislots: es.iter().map(|e| e.slot_minislots).collect(),
                delivered_rho: spearman(&t, &delivered),
                loss_rho: spearman(&t, &loss_rate),
                delivered,
                loss_rate,
            }
        })
        .collect()
}

fn render_ranking(out: &mut String, r: &Ranking) {
    let _ = writeln!(
        out,
        "N={} T̂={} by {}",
        r.n_nodes,
        r.slot_minislots,
        r.metric.name()
    );
    // Each symbol compares the row above with the row it marks.
    for (i, (l, s)) in r.ranked.iter().enumerate() {
        let rel = if i == 0 {
            " "
        } else {
            r.relations[i - 1].symbol()
        };
        let _ = writeln!(out, "  {rel} {l:<24} {:>12.6} ± {:.6}", s.mean, s.stderr);
    }
}

/// Full text report: rankings per grid point, then T̂ trends.
pub fn render(entries: &[Entry]) -> String {
    let mut out = String::new();
    for metric in [Metric::Throughput, Metric::Loss] {
        for r in rankings(entries, metric) {
            render_ranking(&mut out, &r);
        }
        out.push('\n');
    }
    let t = trends(entries);
    if !t.is_empty() {
        let _ = writeln!(out, "T̂ trends (Spearman ρ against T̂)");
        for tr in &t {
            let _ = writeln!(
                out,
                "  N={:<3} {:<24} delivered ρ={:+.3} {:<16} loss ρ={:+.3} {}",
                tr.n_nodes,
                tr.label,
                tr.delivered_rho,
                if tr.throughput_non_increasing() {
                    "non-increasing"
                } else {
                    "INCREASING"
                },
                tr.loss_rho,
                if tr.loss_non_decreasing() {
                    "non-decreasing"
                } else {
                    "DECREASING"
                },
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&x, &[1.0, 5.0, 7.0, 9.0]), 1.0);
        assert_eq!(spearman(&x, &[2.0; 4]), 0.0);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn separation_is_one_stderr_of_difference() {
        let s = |mean, stderr| Summary { mean, stderr };
        assert_eq!(compare(s(1.0, 0.3), s(0.5, 0.4)), Relation::Greater);
        assert_eq!(compare(s(1.0, 0.3), s(0.6, 0.4)), Relation::Tie);
        assert_eq!(compare(s(0.2, 0.0), s(0.2, 0.0)), Relation::Tie);
        assert_eq!(compare(s(0.1, 0.0), s(0.2, 0.0)), Relation::Less);
    }
}
