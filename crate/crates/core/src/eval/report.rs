//! Report files: metrics table, per-class accuracy bars and PCA scatter data.
//! Metric values in these files are percentages rounded to 2 decimals.

use std::path::Path;

use serde_json::{Map, Value};

use crate::data::manifest::Provenance;
use crate::error::{Error, Result};
use crate::eval::metrics::MetricsReport;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const BARS_CSV: &str = "class_acc_bars.csv";
pub const BASELINE_CONFIG: &str = "real_noaug";

/// Percent with two decimals.
pub fn percent(v: f64) -> f64 {
    (v * 10_000.0).round() / 100.0
}

/// One table row: a configuration name and its metrics in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub config: String,
    pub overall_acc: f64,
    pub overall_prec: f64,
    pub overall_rec: f64,
    pub overall_f1: f64,
    pub class_acc: Vec<f64>,
}

impl MetricsRow {
    pub fn from_report(config: &str, m: &MetricsReport) -> Self {
        Self {
            config: config.to_string(),
            overall_acc: percent(m.overall_acc),
            overall_prec: percent(m.macro_precision),
            overall_rec: percent(m.macro_recall),
            overall_f1: percent(m.macro_f1),
            class_acc: m.class_acc.iter().map(|&a| percent(a)).collect(),
        }
    }

    fn fields(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("overall_acc".to_string(), self.overall_acc),
            ("overall_prec".to_string(), self.overall_prec),
            ("overall_rec".to_string(), self.overall_rec),
            ("overall_f1".to_string(), self.overall_f1),
        ];
        for (k, &a) in self.class_acc.iter().enumerate() {
            out.push((format!("class{k}_acc"), a));
        }
        out
    }
}

fn header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "config",
        "overall_acc",
        "overall_prec",
        "overall_rec",
        "overall_f1",
    ]
    .map(String::from)
    .to_vec();
    h.extend((0..num_classes).map(|k| format!("class{k}_acc")));
    h
}

fn check_rows(rows: &[MetricsRow]) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Contract("a report needs at least one configuration".into()))?;
    let c = first.class_acc.len();
    if rows.iter().any(|r| r.class_acc.len() != c) {
        return Err(Error::dim("report rows disagree on the number of classes"));
    }
    Ok(c)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let c = check_rows(rows)?;
    let mut out = header(c).join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.config);
        for (_, v) in r.fields() {
            out.push_str(&format!(",{v:.2}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn metrics_json(rows: &[MetricsRow]) -> Result<String> {
    check_rows(rows)?;
    let list: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut obj = Map::new();
            obj.insert("config".into(), Value::String(r.config.clone()));
            for (k, v) in r.fields() {
                obj.insert(k, Value::from(v));
            }
            Value::Object(obj)
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&list)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_metrics_json(text: &str) -> Result<Vec<MetricsRow>> {
    let list: Vec<Map<String, Value>> = serde_json::from_str(text)?;
    list.into_iter()
        .map(|obj| {
            let num = |k: &str| {
                obj.get(k)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Data(format!("metrics entry lacks numeric `{k}`")))
            };
            let config = obj
                .get("config")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Data("metrics entry lacks `config`".into()))?
                .to_string();
            let mut class_acc = Vec::new();
            while let Some(v) = obj.get(&format!("class{}_acc", class_acc.len())) {
                class_acc.push(
                    v.as_f64()
                        .ok_or_else(|| Error::Data("non-numeric class accuracy".into()))?,
                );
            }
            Ok(MetricsRow {
                config,
                overall_acc: num("overall_acc")?,
                overall_prec: num("overall_prec")?,
                overall_rec: num("overall_rec")?,
                overall_f1: num("overall_f1")?,
                class_acc,
            })
        })
        .collect()
}

/// `config,class,accuracy,improvement_vs_baseline`, measured against the
/// `real_noaug` row, or the first row when that configuration is absent.
pub fn class_bars_csv(rows: &[MetricsRow]) -> Result<String> {
    let c = check_rows(rows)?;
    let base = rows
        .iter()
        .find(|r| r.config == BASELINE_CONFIG)
        .unwrap_or(&rows[0]);
    let mut out = String::from("config,class,accuracy,improvement_vs_baseline\n");
    for r in rows {
        for k in 0..c {
            let delta = r.class_acc[k] - base.class_acc[k];
            out.push_str(&format!(
                "{},{k},{:.2},{:.2}\n",
                r.config,
                r.class_acc[k],
                delta + 0.0
            ));
        }
    }
    Ok(out)
}

/// A PCA scatter point of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaPoint {
    pub class: usize,
    pub provenance: Provenance,
    pub pc1: f64,
    pub pc2: f64,
}

pub fn pca_csv(points: &[PcaPoint]) -> String {
    let mut out = String::from("class,provenance,pc1,pc2\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            p.class, p.provenance, p.pc1, p.pc2
        ));
    }
    out
}

pub fn pca_file_name(class: usize) -> String {
    format!("pca_{class}.csv")
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes `metrics.csv`, `metrics.json` and `class_acc_bars.csv` into `dir`.
pub fn emit_report(rows: &[MetricsRow], dir: &Path) -> Result<()> {
    write(dir, METRICS_CSV, &metrics_csv(rows)?)?;
    write(dir, METRICS_JSON, &metrics_json(rows)?)?;
    write(dir, BARS_CSV, &class_bars_csv(rows)?)
}

pub fn emit_pca(class: usize, points: &[PcaPoint], dir: &Path) -> Result<()> {
    write(dir, &pca_file_name(class), &pca_csv(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(config: &str, class1: f64) -> MetricsRow {
        MetricsRow {
            config: config.into(),
            overall_acc: 85.71,
            overall_prec: 88.89,
            overall_rec: 83.33,
            overall_f1: 82.22,
            class_acc: vec![100.0, class1, 100.0],
        }
    }

    #[test]
    fn improvement_against_named_baseline() {
        let rows = [row("real_noaug", 64.05), row("real_gen_aug", 82.06)];
        let bars = class_bars_csv(&rows).unwrap();
        assert!(bars.contains("real_gen_aug,1,82.06,18.01\n"), "{bars}");
        assert!(bars.contains("real_noaug,1,64.05,0.00\n"));
    }

    #[test]
    fn single_configuration_is_its_own_baseline() {
        let bars = class_bars_csv(&[row("only", 50.0)]).unwrap();
        for line in bars.lines().skip(1) {
            assert!(line.ends_with(",0.00"), "{line}");
        }
    }

    #[test]
    fn csv_header_and_json_round_trip() {
        let rows = vec![row("real_noaug", 64.05), row("x", 82.06)];
        let csv = metrics_csv(&rows).unwrap();
        assert!(csv.starts_with(
            "config,overall_acc,overall_prec,overall_rec,overall_f1,class0_acc,class1_acc,class2_acc\n"
        ));
        assert!(csv.contains("real_noaug,85.71,88.89,83.33,82.22,100.00,64.05,100.00\n"));
        let back = parse_metrics_json(&metrics_json(&rows).unwrap()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(percent(6.0 / 7.0), 85.71);
        assert_eq!(percent(1.0), 100.0);
    }

    #[test]
    fn empty_report_is_rejected() {
        assert!(matches!(metrics_csv(&[]), Err(Error::Contract(_))));
    }
}
