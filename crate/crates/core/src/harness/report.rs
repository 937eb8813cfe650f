use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub shape_id: String,
    pub strategy: String,
    pub perturbation: String,
    pub metric: String,
    pub value: f64,
    /// Wall time of the measured step, when one was timed.
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Sum of the timed rows, if any.
    pub total_elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub config: serde_json::Value,
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
}

pub const CSV_HEADER: [&str; 5] = ["shape_id", "strategy", "perturbation", "metric", "value"];

impl BenchReport {
    pub fn new(name: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            config: serde_json::to_value(config)?,
            metadata: BTreeMap::new(),
            rows: Vec::new(),
            summary: Vec::new(),
        })
    }

    pub fn push(&mut self, shape_id: &str, strategy: &str, perturbation: &str, metric: &str, value: f64, elapsed_ms: Option<f64>) {
        self.rows.push(ReportRow {
            shape_id: shape_id.into(),
            strategy: strategy.into(),
            perturbation: perturbation.into(),
            metric: metric.into(),
            value,
            elapsed_ms,
        });
    }

    /// Checks every value is finite and rebuilds the per-(strategy, metric)
    /// summary in key order.
    pub fn finish(&mut self) -> Result<()> {
        if let Some(bad) = self.rows.iter().find(|r| !r.value.is_finite()) {
            return Err(Error::Assertion(format!(
                "non-finite {} for {} / {}",
                bad.metric, bad.shape_id, bad.strategy
            )));
        }
        let mut groups: BTreeMap<(String, String), Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.strategy.clone(), r.metric.clone())).or_default().push(r);
        }
        self.summary = groups
            .into_iter()
            .map(|((strategy, metric), rows)| {
                let n = rows.len() as f64;
                let mean = rows.iter().map(|r| r.value).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / n;
                let timed: Vec<f64> = rows.iter().filter_map(|r| r.elapsed_ms).collect();
                SummaryRow {
                    strategy,
                    metric,
                    mean,
                    std: var.sqrt(),
                    count: rows.len(),
                    total_elapsed_ms: (!timed.is_empty()).then(|| timed.iter().sum()),
                }
            })
            .collect();
        Ok(())
    }

    pub fn mean(&self, strategy: &str, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.strategy == strategy && s.metric == metric)
            .map(|s| s.mean)
    }

    pub fn total_elapsed_ms(&self, strategy: &str) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .filter_map(|r| r.elapsed_ms)
            .sum()
    }

    /// Metric rows without timings, so reruns compare byte for byte.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let value = r.value.to_string();
            w.write_record([&r.shape_id, &r.strategy, &r.perturbation, &r.metric, &value])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["shape_id", "strategy", "perturbation", "metric", "elapsed_ms"])
            .map_err(csv_err)?;
        for r in self.rows.iter().filter(|r| r.elapsed_ms.is_some()) {
            let ms = r.elapsed_ms.unwrap_or_default().to_string();
            w.write_record([&r.shape_id, &r.strategy, &r.perturbation, &r.metric, &ms])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Name, metadata and summary, without the per-row data.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct View<'a> {
            name: &'a str,
            metadata: &'a BTreeMap<String, String>,
            rows: usize,
            summary: &'a [SummaryRow],
        }
        Ok(serde_json::to_string_pretty(&View {
            name: &self.name,
            metadata: &self.metadata,
            rows: self.rows.len(),
            summary: &self.summary,
        })?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_groups_and_orders() {
        let mut r = BenchReport::new("t", &serde_json::json!({"a": 1})).unwrap();
        r.push("s0", "zeta", "p", "m", 1.0, Some(2.0));
        r.push("s0", "alpha", "p", "m", 3.0, None);
        r.push("s1", "zeta", "p", "m", 3.0, Some(4.0));
        r.finish().unwrap();
        assert_eq!(r.summary.len(), 2);
        assert_eq!(r.summary[0].strategy, "alpha");
        assert_eq!(r.mean("zeta", "m"), Some(2.0));
        assert_eq!(r.summary[1].std, 1.0);
        assert_eq!(r.summary[1].total_elapsed_ms, Some(6.0));
        assert_eq!(r.total_elapsed_ms("zeta"), 6.0);
    }

    #[test]
    fn csv_has_no_timings() {
        let mut r = BenchReport::new("t", &()).unwrap();
        r.push("s,0", "cds", "identity", "npr", 0.125, Some(1.5));
        r.finish().unwrap();
        assert_eq!(
            r.csv_string().unwrap(),
            "shape_id,strategy,perturbation,metric,value\n\"s,0\",cds,identity,npr,0.125\n"
        );
    }

    #[test]
    fn non_finite_rejected() {
        let mut r = BenchReport::new("t", &()).unwrap();
        r.push("s", "x", "p", "m", f64::NAN, None);
        assert!(r.finish().is_err());
    }
}
