//! Glycaemic metrics: time in bands, risk indices, insulin totals and cohort
//! summaries.
//!
//! Bands follow the usual interval notation: normoglycaemia [70, 180], mild
//! hypoglycaemia [50, 70), severe hypoglycaemia below 50, mild
//! hyperglycaemia (180, 250], severe hyperglycaemia above 250.
//!
//! LBGI and HBGI use the Kovatchev transform
//! f(BG) = 1.509·((ln BG)^1.084 − 5.381), with risk 10·f² assigned to the low
//! side when f < 0 and to the high side when f > 0.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub normo: f64,
    pub mild_hypo: f64,
    pub severe_hypo: f64,
    pub mild_hyper: f64,
    pub severe_hyper: f64,
}

impl Bands {
    pub fn as_array(&self) -> [f64; 5] {
        [self.normo, self.mild_hypo, self.severe_hypo, self.mild_hyper, self.severe_hyper]
    }
}

/// Index into [`Bands::as_array`] for one sample.
pub fn band_of(bg: f64) -> usize {
    if bg < 50.0 {
        2
    } else if bg < 70.0 {
        1
    } else if bg <= 180.0 {
        0
    } else if bg <= 250.0 {
        3
    } else {
        4
    }
}

pub fn band_percentages(trace: &[f64]) -> Result<Bands> {
    if trace.is_empty() {
        return Err(Error::Empty("glucose trace"));
    }
    let mut counts = [0usize; 5];
    for &v in trace {
        counts[band_of(v)] += 1;
    }
    let pct = |k: usize| 100.0 * counts[k] as f64 / trace.len() as f64;
    Ok(Bands { normo: pct(0), mild_hypo: pct(1), severe_hypo: pct(2), mild_hyper: pct(3), severe_hyper: pct(4) })
}

/// Symmetrized risk transform.
pub fn risk_transform(bg: f64) -> f64 {
    1.509 * (bg.ln().powf(1.084) - 5.381)
}

/// (LBGI, HBGI).
pub fn lbgi_hbgi(trace: &[f64]) -> Result<(f64, f64)> {
    if trace.is_empty() {
        return Err(Error::Empty("glucose trace"));
    }
    let mut lo = 0.0;
    let mut hi = 0.0;
    for &v in trace {
        if !(v > 0.0) {
            return Err(Error::InvalidSample(format!("glucose {v} must be positive")));
        }
        let f = risk_transform(v);
        let r = 10.0 * f * f;
        if f < 0.0 {
            lo += r;
        } else {
            hi += r;
        }
    }
    let n = trace.len() as f64;
    Ok((lo / n, hi / n))
}

/// Total daily insulin, U/day.
pub fn tdi(doses: &[f64], days: f64) -> Result<f64> {
    if !(days > 0.0) {
        return Err(Error::config("days must be positive"));
    }
    Ok(doses.iter().sum::<f64>() / days)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlycaemicReport {
    pub bg_mean: f64,
    pub bg_min: f64,
    pub bg_max: f64,
    pub bands: Bands,
    pub lbgi: f64,
    pub hbgi: f64,
    pub tdi: f64,
}

impl GlycaemicReport {
    /// Glucose statistics from `glucose` (one sample per tick) and TDI from
    /// the per-tick insulin amounts over `days`.
    pub fn from_trace(glucose: &[f64], insulin: &[f64], days: f64) -> Result<Self> {
        let bands = band_percentages(glucose)?;
        let (lbgi, hbgi) = lbgi_hbgi(glucose)?;
        let n = glucose.len() as f64;
        Ok(Self {
            bg_mean: glucose.iter().sum::<f64>() / n,
            bg_min: glucose.iter().copied().fold(f64::INFINITY, f64::min),
            bg_max: glucose.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            bands,
            lbgi,
            hbgi,
            tdi: tdi(insulin, days)?,
        })
    }

    pub const FIELDS: [&'static str; 12] =
        ["bg_mean", "bg_min", "bg_max", "normo", "mild_hypo", "severe_hypo", "mild_hyper", "severe_hyper", "lbgi", "hbgi", "tdi", "tir"];

    /// Values in [`Self::FIELDS`] order; `tir` repeats `normo`.
    pub fn values(&self) -> [f64; 12] {
        let b = self.bands.as_array();
        [self.bg_mean, self.bg_min, self.bg_max, b[0], b[1], b[2], b[3], b[4], self.lbgi, self.hbgi, self.tdi, b[0]]
    }

    pub fn csv_header() -> String {
        Self::FIELDS[..11].join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values()[..11].iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub count: usize,
    pub bg_mean: MeanStd,
    pub bg_min: MeanStd,
    pub bg_max: MeanStd,
    pub normo: MeanStd,
    pub mild_hypo: MeanStd,
    pub severe_hypo: MeanStd,
    pub mild_hyper: MeanStd,
    pub severe_hyper: MeanStd,
    pub lbgi: MeanStd,
    pub hbgi: MeanStd,
    pub tdi: MeanStd,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

/// Per-field mean and sample standard deviation.
pub fn cohort_aggregate(reports: &[GlycaemicReport]) -> Result<CohortSummary> {
    if reports.is_empty() {
        return Err(Error::Empty("reports"));
    }
    let field = |k: usize| {
        // sorting makes the sums independent of report order
        let mut v: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
        v.sort_by(f64::total_cmp);
        mean_std(&v)
    };
    Ok(CohortSummary {
        count: reports.len(),
        bg_mean: field(0),
        bg_min: field(1),
        bg_max: field(2),
        normo: field(3),
        mild_hypo: field(4),
        severe_hypo: field(5),
        mild_hyper: field(6),
        severe_hyper: field(7),
        lbgi: field(8),
        hbgi: field(9),
        tdi: field(10),
    })
}

impl CohortSummary {
    fn cells(&self) -> [MeanStd; 11] {
        [
            self.bg_mean,
            self.bg_min,
            self.bg_max,
            self.normo,
            self.mild_hypo,
            self.severe_hypo,
            self.mild_hyper,
            self.severe_hyper,
            self.lbgi,
            self.hbgi,
            self.tdi,
        ]
    }
}

/// Markdown table with one row per labelled summary, columns in the usual
/// glycaemic-report order.
pub fn write_markdown_table<W: Write>(rows: &[(String, CohortSummary)], extra: &[(&str, Vec<String>)], mut w: W) -> Result<()> {
    let mut header = vec!["", "BG mean", "BG min", "BG max", "[70,180]", "[50,70)", "<50", "(180,250]", ">250", "LBGI", "HBGI", "TDI"];
    header.extend(extra.iter().map(|(h, _)| *h));
    writeln!(w, "| {} |", header.join(" | "))?;
    writeln!(w, "|{}", "---|".repeat(header.len()))?;
    for (k, (label, s)) in rows.iter().enumerate() {
        let mut cells: Vec<String> = vec![label.clone()];
        cells.extend(s.cells().iter().map(|c| format!("{:.2} ± {:.2}", c.mean, c.std)));
        for (_, col) in extra {
            cells.push(col.get(k).cloned().unwrap_or_default());
        }
        writeln!(w, "| {} |", cells.join(" | "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_examples() {
        assert_eq!(band_percentages(&[120.0; 4]).unwrap().as_array(), [100.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(band_percentages(&[60.0, 120.0, 200.0, 260.0, 40.0]).unwrap().as_array(), [20.0; 5]);
        assert_eq!(band_of(70.0), 0);
        assert_eq!(band_of(180.0), 0);
        assert_eq!(band_of(50.0), 1);
        assert_eq!(band_of(250.0), 3);
        assert!(band_percentages(&[]).is_err());
    }

    #[test]
    fn risk_examples() {
        // root of the transform, computed by bisection in f64
        let (mut lo, mut hi) = (100.0f64, 130.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if risk_transform(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 112.5).abs() < 0.5, "{lo}");
        assert!(risk_transform(112.5).abs() < 1e-2);
        let (l, h) = lbgi_hbgi(&[112.5; 3]).unwrap();
        assert!(l < 1e-3 && h < 1e-3);
        assert_eq!(lbgi_hbgi(&[400.0; 3]).unwrap().0, 0.0);
        assert_eq!(lbgi_hbgi(&[40.0; 3]).unwrap().1, 0.0);
        assert!(lbgi_hbgi(&[0.0]).is_err());
    }

    #[test]
    fn tdi_examples() {
        assert!((tdi(&[0.1; 288], 1.0).unwrap() - 28.8).abs() < 1e-9);
        assert_eq!(tdi(&[0.0; 10], 1.0).unwrap(), 0.0);
        assert_eq!(tdi(&[0.125; 576], 2.0).unwrap(), tdi(&[0.125; 288], 1.0).unwrap());
    }

    #[test]
    fn aggregate_examples() {
        let mut a = GlycaemicReport::from_trace(&[120.0, 60.0], &[1.0], 1.0).unwrap();
        let same = cohort_aggregate(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.normo.std, 0.0);
        a.bands.normo = 80.0;
        let mut b = a.clone();
        b.bands.normo = 90.0;
        let s = cohort_aggregate(&[a, b]).unwrap();
        assert!((s.normo.mean - 85.0).abs() < 1e-12);
        assert!((s.normo.std - 7.0710678118654755).abs() < 1e-9);
    }
}
