use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub roi: String,
    pub state: Option<usize>,
    pub value: f64,
}

/// Flat metric table, written as `metric,roi,state,value`. Rows that are
/// not tied to a state or ROI leave those fields empty. A CNR with equal
/// means is kept as `-inf`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: &str, roi: &str, state: Option<usize>, value: f64) {
        self.rows.push(MetricRow {
            metric: metric.to_string(),
            roi: roi.to_string(),
            state,
            value,
        });
    }

    pub fn get(&self, metric: &str, roi: &str, state: Option<usize>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.roi == roi && r.state == state)
            .map(|r| r.value)
    }

    /// Rows whose value is not finite.
    pub fn flagged(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| !r.value.is_finite())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,roi,state,value\n");
        for r in &self.rows {
            let state = r.state.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.metric, r.roi, state, r.value);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
