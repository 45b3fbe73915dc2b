use super::{evaluate, BenchError, Dataset, EvalResult, ScoringMode, Variant};
use crate::imaging::{DegradationKind, DegradationSpec};
use crate::ocr::TextDetector;
use num_rational::Ratio;
use serde::Serialize;
use std::fmt::Write as _;

/// A named sweep of degradation levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: String,
    pub specs: Vec<DegradationSpec>,
}

impl Suite {
    pub fn new(name: impl Into<String>, specs: Vec<DegradationSpec>) -> Self {
        Self { name: name.into(), specs }
    }

    /// Scale 0.1 to 0.9 in steps of 0.1.
    pub fn scale() -> Self {
        Self::new("scale", (1..=9).map(|i| DegradationSpec::scale(i as f64 / 10.0)).collect())
    }

    /// Box kernels 10 to 90 in steps of 10.
    pub fn blur() -> Self {
        Self::new("blur", (1..=9).map(|i| DegradationSpec::blur(i * 10)).collect())
    }

    pub fn gamma() -> Self {
        Self::new("gamma", [0.25, 1.5, 3.0].into_iter().map(DegradationSpec::gamma).collect())
    }

    /// Levels 10 to 90 in steps of 10, mapped to density `level / 1000`.
    pub fn salt_pepper(seed: u64) -> Self {
        Self::new(
            "sp",
            (1..=9u64)
                .map(|i| DegradationSpec::salt_pepper(i as f64 * 10.0 / 1000.0, seed.wrapping_add(i)))
                .collect(),
        )
    }
}

/// The four standard sweeps: scale, blur, gamma and salt-and-pepper.
pub fn study_suites(seed: u64) -> Vec<Suite> {
    vec![Suite::scale(), Suite::blur(), Suite::gamma(), Suite::salt_pepper(seed)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub suite: String,
    pub result: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportMatrix {
    pub rows: Vec<ReportRow>,
}

#[derive(Serialize)]
struct ChartPoint<'a> {
    backend: &'a str,
    suite: &'a str,
    level: String,
    accuracy: f64,
}

impl ReportMatrix {
    pub fn csv(&self) -> String {
        let mut out = String::from("backend,kind,level,correct,total,accuracy\n");
        for row in &self.rows {
            let r = &row.result;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.backend,
                r.variant.kind_label(),
                r.variant.level_label(),
                r.correct_results,
                r.total,
                r.accuracy()
            );
        }
        out
    }

    /// JSON array of `{backend, suite, level, accuracy}` for grouped bar charts.
    pub fn chart_data(&self) -> String {
        let points: Vec<ChartPoint<'_>> = self
            .rows
            .iter()
            .map(|row| ChartPoint {
                backend: &row.result.backend,
                suite: &row.suite,
                level: row.result.variant.level_label(),
                accuracy: row.result.accuracy().tenths() as f64 / 10.0,
            })
            .collect();
        serde_json::to_string_pretty(&points).expect("chart data serializes")
    }

    pub fn backends(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.result.backend.as_str()) {
                seen.push(&row.result.backend);
            }
        }
        seen
    }

    /// Exact mean of the per-cell accuracies (percent) of one backend.
    pub fn mean_accuracy(&self, backend: &str) -> Option<Ratio<u64>> {
        let cells: Vec<Ratio<u64>> = self
            .rows
            .iter()
            .filter(|r| r.result.backend == backend)
            .map(|r| r.result.accuracy().ratio())
            .collect();
        if cells.is_empty() {
            return None;
        }
        let sum = cells.iter().fold(Ratio::from_integer(0), |acc, c| acc + c);
        Some(sum / Ratio::from_integer(cells.len() as u64))
    }

    pub fn total_failures(&self, backend: &str) -> u64 {
        self.rows.iter().filter(|r| r.result.backend == backend).map(|r| r.result.failures).sum()
    }

    /// True when every evaluation of every backend failed on every entry.
    pub fn all_unavailable(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.result.failures == r.result.total)
    }

    /// Per-backend means, pairwise deltas against the first backend, and failure counts.
    pub fn summary(&self) -> String {
        let backends = self.backends();
        let mut out = String::new();
        let means: Vec<(&str, Ratio<u64>)> =
            backends.iter().filter_map(|b| self.mean_accuracy(b).map(|m| (*b, m))).collect();
        let render = |r: Ratio<u64>| tenths_string(*r.numer() as i128, *r.denom() as i128);
        let listed: Vec<String> = means.iter().map(|(b, m)| format!("{b} {}", render(*m))).collect();
        let _ = write!(out, "mean accuracy: {}", listed.join(", "));
        if let Some((first, base)) = means.first() {
            for (b, m) in means.iter().skip(1) {
                let (num, den) = signed_difference(*base, *m);
                let _ = write!(out, "; {first} - {b} = {} points", tenths_string(num, den));
            }
        }
        out.push('\n');
        for b in &backends {
            let _ = writeln!(out, "failures: {b} {}", self.total_failures(b));
        }
        out
    }
}

fn signed_difference(a: Ratio<u64>, b: Ratio<u64>) -> (i128, i128) {
    let (an, ad) = (*a.numer() as i128, *a.denom() as i128);
    let (bn, bd) = (*b.numer() as i128, *b.denom() as i128);
    (an * bd - bn * ad, ad * bd)
}

/// Rational rendered to one decimal, half away from zero, with a sign for negatives.
fn tenths_string(num: i128, den: i128) -> String {
    let neg = (num < 0) != (den < 0);
    let (n, d) = (num.abs(), den.abs());
    let t = (20 * n + d) / (2 * d);
    format!("{}{}.{}", if neg && t != 0 { "-" } else { "" }, t / 10, t % 10)
}

/// Every backend against the original dataset and every suite level.
pub fn compare(
    backends: &[&dyn TextDetector],
    dataset: &Dataset,
    suites: &[Suite],
    mode: ScoringMode,
) -> Result<ReportMatrix, BenchError> {
    if backends.is_empty() || suites.is_empty() {
        return Err(BenchError::InvalidArgument("compare needs at least one backend and one suite".into()));
    }
    let mut rows = Vec::new();
    for backend in backends {
        rows.push(ReportRow { suite: "original".into(), result: evaluate(*backend, dataset, None, mode)? });
        for suite in suites {
            for spec in &suite.specs {
                let result = evaluate(*backend, dataset, Some(spec), mode)?;
                rows.push(ReportRow { suite: suite.name.clone(), result });
            }
        }
    }
    Ok(ReportMatrix { rows })
}

impl Variant {
    pub fn is_original(&self) -> bool {
        matches!(self, Variant::Original)
    }

    pub fn kind(&self) -> Option<DegradationKind> {
        match self {
            Variant::Original => None,
            Variant::Degraded(s) => Some(s.kind),
        }
    }
}
