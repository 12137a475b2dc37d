use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample_id: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single row.
    pub sd: f64,
    pub n: usize,
}

/// Compensated (Neumaier) sum; falls back to the plain sum if any term is non-finite.
pub fn neumaier_sum(values: &[f64]) -> f64 {
    if values.iter().any(|v| !v.is_finite()) {
        return values.iter().sum();
    }
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate { mean: f64::NAN, sd: f64::NAN, n };
    }
    let mean = neumaier_sum(values) / n as f64;
    let sd = if n == 1 {
        0.0
    } else {
        let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        (neumaier_sum(&sq) / (n - 1) as f64).sqrt()
    };
    Aggregate { mean, sd, n }
}

/// Per-sample metric rows, plus samples that could not be scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    #[serde(default)]
    pub failures: Vec<Failure>,
}

fn json_number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample_id: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.rows.push(MetricRow { sample_id: sample_id.into(), metric: metric.into(), value });
    }

    pub fn fail(&mut self, sample_id: impl Into<String>, reason: impl Into<String>) {
        self.failures.push(Failure { sample_id: sample_id.into(), reason: reason.into() });
    }

    pub fn extend(&mut self, other: MetricReport) {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = self.rows.iter().map(|r| r.metric.clone()).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| r.value).collect()
    }

    pub fn aggregates(&self) -> BTreeMap<String, Aggregate> {
        self.metrics().into_iter().map(|m| {
            let a = aggregate(&self.values(&m));
            (m, a)
        }).collect()
    }

    /// `{metric: {mean, sd, n}}`; non-finite numbers are written as strings.
    pub fn aggregates_json(&self) -> Value {
        let map: serde_json::Map<String, Value> = self
            .aggregates()
            .into_iter()
            .map(|(m, a)| (m, json!({"mean": json_number(a.mean), "sd": json_number(a.sd), "n": a.n})))
            .collect();
        Value::Object(map)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "metric", "value"])?;
        for r in &self.rows {
            w.write_record([r.sample_id.as_str(), r.metric.as_str(), &r.value.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["sample_id", "metric", "value"] {
            return Err(MetricsError::InvalidInput(format!("unexpected csv header {headers:?}")));
        }
        let mut report = MetricReport::new();
        for rec in r.records() {
            let rec = rec?;
            let value: f64 = rec[2]
                .parse()
                .map_err(|_| MetricsError::InvalidInput(format!("bad value {:?}", &rec[2])))?;
            report.push(&rec[0], &rec[1], value);
        }
        Ok(report)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_aggregates_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.aggregates_json())?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_mean_and_sd() {
        let a = aggregate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.mean, 2.5);
        // sample variance = 5/3
        assert!((a.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(aggregate(&[7.0]).sd, 0.0);
    }

    #[test]
    fn compensated_sum_is_order_independent() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(&vals), 2.0);
        let mut rev = vals;
        rev.reverse();
        assert_eq!(neumaier_sum(&rev), 2.0);
    }

    #[test]
    fn csv_round_trip_and_json() {
        let mut r = MetricReport::new();
        r.push("s1", "dice", 0.5);
        r.push("s2", "dice", 0.75);
        r.push("s1", "psnr", f64::INFINITY);
        r.fail("s3", "decode error");
        let back = MetricReport::from_csv_str(&r.to_csv_string().unwrap()).unwrap();
        assert_eq!(back.rows, r.rows);
        let j = r.aggregates_json();
        assert_eq!(j["dice"]["mean"], json!(0.625));
        assert_eq!(j["dice"]["n"], json!(2));
        assert_eq!(j["psnr"]["mean"], json!("inf"));
        assert!(r.to_csv_string().unwrap().starts_with("sample_id,metric,value\n"));
    }
}
