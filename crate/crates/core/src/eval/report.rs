//! Evaluation reports: named metrics with CSV and text-table output.

use std::fmt::Write as _;

/// CSV schema of [`EvalReport::to_csv`].
pub const CSV_HEADER: &str = "suite,metric,value,samples,seed";

/// Metrics of one suite. A metric with no samples has no value.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub suite: String,
    pub seed: u64,
    pub samples: usize,
    pub metrics: Vec<(String, Option<f64>)>,
}

impl EvalReport {
    pub fn new(suite: &str, seed: u64) -> Self {
        Self {
            suite: suite.to_string(),
            seed,
            samples: 0,
            metrics: Vec::new(),
        }
    }

    pub fn set(&mut self, name: &str, value: Option<f64>) {
        match self.metrics.iter_mut().find(|m| m.0 == name) {
            Some(m) => m.1 = value,
            None => self.metrics.push((name.to_string(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.0 == name).and_then(|m| m.1)
    }

    /// Rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for (name, v) in &self.metrics {
            let v = v.map_or(String::new(), |v| v.to_string());
            writeln!(s, "{},{name},{v},{},{}", self.suite, self.samples, self.seed).unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }

    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let width = self.metrics.iter().map(|m| m.0.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{} (samples {}, seed {})\n", self.suite, self.samples, self.seed);
        for (name, v) in &self.metrics {
            let v = v.map_or("-".to_string(), |v| format!("{v:.4}"));
            writeln!(s, "  {name:<width$}  {v:>8}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_schema() {
        let mut r = EvalReport::new("edit", 3);
        r.samples = 10;
        r.set("edit_success", Some(0.5));
        r.set("preservation_rmse", None);
        r.set("edit_success", Some(0.25));
        assert_eq!(
            r.to_csv(),
            "suite,metric,value,samples,seed\nedit,edit_success,0.25,10,3\nedit,preservation_rmse,,10,3\n"
        );
        assert!(r.to_table().contains("preservation_rmse         -"));
    }
}
