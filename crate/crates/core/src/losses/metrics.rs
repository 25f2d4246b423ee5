use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric values are clamped to `±METRIC_CAP_DB`.
pub const METRIC_CAP_DB: f64 = 100.0;

fn check(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.is_empty() || reference.is_empty() {
        return Err(Error::invalid("metric of an empty signal"));
    }
    if est.len() != reference.len() {
        return Err(Error::invalid(format!("metric length mismatch: {} vs {}", est.len(), reference.len())));
    }
    Ok(())
}

fn db_ratio(num: f64, den: f64) -> f64 {
    let v = 10.0 * (num / den).log10();
    if v.is_nan() {
        -METRIC_CAP_DB
    } else {
        v.clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
    }
}

/// Scale-invariant SDR in dB, without a stabilizing epsilon.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check(est, reference)?;
    let ss: f64 = reference.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return Err(Error::invalid("si_sdr: reference is all zeros"));
    }
    let alpha = est.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / ss;
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, s) in est.iter().zip(reference) {
        let p = alpha * s;
        num += p * p;
        den += (e - p) * (e - p);
    }
    Ok(db_ratio(num, den))
}

/// Energy-ratio SDR `10·log10(‖s‖² / ‖s − ŝ‖²)` in dB.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check(est, reference)?;
    let num: f64 = reference.iter().map(|v| v * v).sum();
    let den: f64 = reference.iter().zip(est).map(|(s, e)| (s - e) * (s - e)).sum();
    Ok(db_ratio(num, den))
}

pub fn si_sdri(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(mixture, reference)?)
}

pub fn sdri(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sdr(est, reference)? - sdr(mixture, reference)?)
}

/// Column order of both the JSON records and the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub si_sdri: f64,
    pub sdr_in: f64,
    pub sdr_out: f64,
    pub sdri: f64,
}

impl MetricsRow {
    pub fn compute(id: impl Into<String>, est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<Self> {
        let si_sdr_in = si_sdr(mixture, reference)?;
        let si_sdr_out = si_sdr(est, reference)?;
        let sdr_in = sdr(mixture, reference)?;
        let sdr_out = sdr(est, reference)?;
        Ok(MetricsRow {
            id: id.into(),
            si_sdr_in,
            si_sdr_out,
            si_sdri: si_sdr_out - si_sdr_in,
            sdr_in,
            sdr_out,
            sdri: sdr_out - sdr_in,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub si_sdri: f64,
    pub sdr_in: f64,
    pub sdr_out: f64,
    pub sdri: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn summary(&self) -> MetricsSummary {
        let n = self.rows.len();
        let mean = |f: fn(&MetricsRow) -> f64| {
            if n == 0 {
                0.0
            } else {
                self.rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        MetricsSummary {
            n,
            si_sdr_in: mean(|r| r.si_sdr_in),
            si_sdr_out: mean(|r| r.si_sdr_out),
            si_sdri: mean(|r| r.si_sdri),
            sdr_in: mean(|r| r.sdr_in),
            sdr_out: mean(|r| r.sdr_out),
            sdri: mean(|r| r.sdri),
        }
    }

    /// One JSON record per row, then a `{"mean": ...}` record.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&serde_json::json!({ "mean": self.summary() }))?);
        out.push('\n');
        Ok(out)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>10} {:>8} {:>8} {:>8} {:>8}",
            "id", "si_sdr_in", "si_sdr_out", "si_sdri", "sdr_in", "sdr_out", "sdri"
        );
        let mut line = |id: &str, v: [f64; 6]| {
            let _ = writeln!(
                out,
                "{:<14} {:>9.2} {:>10.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                id, v[0], v[1], v[2], v[3], v[4], v[5]
            );
        };
        for r in &self.rows {
            line(&r.id, [r.si_sdr_in, r.si_sdr_out, r.si_sdri, r.sdr_in, r.sdr_out, r.sdri]);
        }
        let s = self.summary();
        line("mean", [s.si_sdr_in, s.si_sdr_out, s.si_sdri, s.sdr_in, s.sdr_out, s.sdri]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_improvement_is_zero() {
        let s = [1.0, -0.5, 0.25, 0.0];
        let y = [0.7, 0.1, -0.3, 0.2];
        assert_eq!(si_sdri(&y, &s, &y).unwrap(), 0.0);
        assert_eq!(sdri(&y, &s, &y).unwrap(), 0.0);
    }

    #[test]
    fn perfect_estimate_is_capped() {
        let s = [1.0, -0.5, 0.25, 0.0];
        let y = [0.7, 0.1, -0.3, 0.2];
        assert_eq!(si_sdr(&s, &s).unwrap(), METRIC_CAP_DB);
        assert_eq!(si_sdri(&s, &s, &y).unwrap(), METRIC_CAP_DB - si_sdr(&y, &s).unwrap());
        assert_eq!(sdr(&s, &s).unwrap(), METRIC_CAP_DB);
    }

    #[test]
    fn empty_rejected() {
        assert!(si_sdr(&[], &[]).is_err());
        assert!(sdr(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_formats() {
        let rep = MetricsReport {
            rows: vec![
                MetricsRow::compute("a", &[1.0, 0.0], &[1.0, 0.1], &[1.0, 1.0]).unwrap(),
                MetricsRow::compute("b", &[0.5, 0.5], &[1.0, 0.1], &[1.0, 1.0]).unwrap(),
            ],
        };
        let s = rep.summary();
        assert_eq!(s.n, 2);
        assert!((s.si_sdri - (rep.rows[0].si_sdri + rep.rows[1].si_sdri) / 2.0).abs() < 1e-12);
        let jsonl = rep.to_jsonl().unwrap();
        assert_eq!(jsonl.lines().count(), 3);
        assert!(jsonl.lines().next().unwrap().starts_with("{\"id\":\"a\",\"si_sdr_in\""));
        assert_eq!(rep.to_table().lines().count(), 4);
    }
}
