//! Report rows, aggregation and CSV / JSON-lines rendering.

use serde::{Deserialize, Serialize};

use super::config::{ReportFormat, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// One replicate.
    Run,
    Mean,
    /// Sample standard deviation over replicates (0 for a single seed).
    Std,
    /// Mean of this strategy minus mean of small-loss.
    Delta,
}

impl RowKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::Mean => "mean",
            Self::Std => "std",
            Self::Delta => "delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub strategy: Strategy,
    /// Set on `run` rows only.
    pub seed: Option<u64>,
    pub realized_noise: Option<f64>,
    pub n_selected: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub best_acc: Option<f64>,
    pub last_acc: Option<f64>,
}

const HEADER: &str = "kind,strategy,seed,realized_noise,n_selected,precision,recall,f1,best_acc,last_acc";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ReportRow {
    fn numeric(&self) -> [Option<f64>; 7] {
        [
            self.realized_noise,
            Some(self.n_selected),
            self.precision,
            self.recall,
            self.f1,
            self.best_acc,
            self.last_acc,
        ]
    }

    fn from_numeric(kind: RowKind, strategy: Strategy, v: [Option<f64>; 7]) -> Self {
        Self {
            kind,
            strategy,
            seed: None,
            realized_noise: v[0],
            n_selected: v[1].unwrap_or(0.0),
            precision: v[2],
            recall: v[3],
            f1: v[4],
            best_acc: v[5],
            last_acc: v[6],
        }
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.kind.as_str(),
            self.strategy,
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            opt(self.realized_noise),
            self.n_selected,
            opt(self.precision),
            opt(self.recall),
            opt(self.f1),
            opt(self.best_acc),
            opt(self.last_acc)
        )
    }
}

fn column_stat(rows: &[&ReportRow], col: usize, f: impl Fn(&[f64]) -> f64) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().map(|r| r.numeric()[col]).collect();
    vals.map(|v| f(&v))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Appends mean and std rows per strategy (in first-appearance order) and,
/// when small-loss is present, delta rows for every other strategy.
pub fn aggregate(runs: &[ReportRow], with_delta: bool) -> Vec<ReportRow> {
    let mut order: Vec<Strategy> = Vec::new();
    for r in runs {
        if !order.contains(&r.strategy) {
            order.push(r.strategy);
        }
    }
    let mut out = runs.to_vec();
    let mut means = Vec::new();
    for &s in &order {
        let group: Vec<&ReportRow> = runs.iter().filter(|r| r.strategy == s).collect();
        let m: [Option<f64>; 7] = std::array::from_fn(|c| column_stat(&group, c, mean));
        let sd: [Option<f64>; 7] = std::array::from_fn(|c| column_stat(&group, c, sample_std));
        means.push((s, m));
        out.push(ReportRow::from_numeric(RowKind::Mean, s, m));
        out.push(ReportRow::from_numeric(RowKind::Std, s, sd));
    }
    if with_delta {
        if let Some(&(_, base)) = means.iter().find(|(s, _)| *s == Strategy::SmallLoss) {
            for &(s, m) in means.iter().filter(|(s, _)| *s != Strategy::SmallLoss) {
                let d: [Option<f64>; 7] = std::array::from_fn(|c| Some(m[c]? - base[c]?));
                out.push(ReportRow::from_numeric(RowKind::Delta, s, d));
            }
        }
    }
    out
}

/// Renders the rows; both formats are byte-stable for equal inputs.
pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> String {
    let mut s = String::new();
    match format {
        ReportFormat::Csv => {
            s.push_str(HEADER);
            s.push('\n');
            for r in rows {
                s.push_str(&r.csv_line());
                s.push('\n');
            }
        }
        ReportFormat::Jsonl => {
            for r in rows {
                s.push_str(&serde_json::to_string(r).expect("row serializes"));
                s.push('\n');
            }
        }
    }
    s
}
