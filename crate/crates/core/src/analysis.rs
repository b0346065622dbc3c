//! Back-of-envelope coverage model for multi-projector, multi-camera rigs,
//! separability curves, and CSV exports of analysis data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::demux::separability;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("device count {0} is outside 1..=4")]
    Count(usize),
    #[error("percentage {0} is outside (0, 100]")]
    Percent(f64),
    #[error("percentages must not decrease with device count")]
    NotMonotone,
    #[error("no loss in [0, 1) reproduces every amount within {tolerance} point(s); worst residual {worst}")]
    NoFit { tolerance: f64, worst: f64 },
    #[error("a curve needs at least two samples")]
    Samples,
    #[error("table is empty")]
    EmptyTable,
}

/// Per-device-count coverage percentages, index 0 for one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageAssumptions {
    /// Surface illuminated by P projectors.
    pub surf_illum: [f64; 4],
    /// Surface captured by C cameras.
    pub surf_capture: [f64; 4],
    /// Camera image illuminated by P projectors.
    pub image_illum: [f64; 4],
    /// Projection captured by C cameras.
    pub proj_capture: [f64; 4],
    /// Multiplicative loss of data amount per additional triangulation.
    pub per_triangulation_loss: f64,
}

impl Default for CoverageAssumptions {
    fn default() -> Self {
        Self {
            surf_illum: [40.0, 70.0, 90.0, 100.0],
            surf_capture: [40.0, 70.0, 90.0, 100.0],
            image_illum: [70.0, 80.0, 90.0, 100.0],
            proj_capture: [70.0, 80.0, 90.0, 100.0],
            per_triangulation_loss: 0.03,
        }
    }
}

impl CoverageAssumptions {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        for table in [&self.surf_illum, &self.surf_capture, &self.image_illum, &self.proj_capture] {
            if let Some(&p) = table.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
                return Err(AnalysisError::Percent(p));
            }
            if table.windows(2).any(|w| w[1] < w[0]) {
                return Err(AnalysisError::NotMonotone);
            }
        }
        Ok(())
    }
}

/// One row of the coverage table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub projectors: usize,
    pub cameras: usize,
    /// Relative amount of 3D data, percent of a single scan.
    pub amount: i64,
    /// Relative completeness, percent of the bounding sphere.
    pub completeness: i64,
}

/// Published rows: (projectors, cameras, amount, completeness).
pub const PUBLISHED_TABLE: [(usize, usize, i64, i64); 8] = [
    (1, 1, 28, 28),
    (1, 2, 54, 32),
    (2, 1, 54, 32),
    (2, 2, 102, 56),
    (3, 1, 79, 36),
    (3, 2, 144, 63),
    (3, 3, 198, 81),
    (4, 4, 284, 100),
];

fn check_count(n: usize) -> Result<usize, AnalysisError> {
    if (1..=4).contains(&n) {
        Ok(n - 1)
    } else {
        Err(AnalysisError::Count(n))
    }
}

/// Completeness in percent, before rounding: the smaller of the two ways
/// light and view can limit the surface.
pub fn completeness(p: usize, c: usize, a: &CoverageAssumptions) -> Result<f64, AnalysisError> {
    let (i, j) = (check_count(p)?, check_count(c)?);
    Ok((a.surf_illum[i] * a.proj_capture[j]).min(a.surf_capture[j] * a.image_illum[i]) / 100.0)
}

/// Amount in percent, before rounding: each of the `P C` triangulations
/// contributes one single-pair share, reduced by the loss per extra
/// triangulation.
pub fn amount(p: usize, c: usize, a: &CoverageAssumptions, loss: f64) -> Result<f64, AnalysisError> {
    check_count(p)?;
    check_count(c)?;
    let single = a.surf_illum[0] * a.image_illum[0] / 100.0;
    let n = (p * c) as i32;
    Ok(single * n as f64 * (1.0 - loss).powi(n - 1))
}

pub fn coverage_row(p: usize, c: usize, a: &CoverageAssumptions) -> Result<CoverageRow, AnalysisError> {
    Ok(CoverageRow {
        projectors: p,
        cameras: c,
        amount: amount(p, c, a, a.per_triangulation_loss)?.round() as i64,
        completeness: completeness(p, c, a)?.round() as i64,
    })
}

/// Least-squares loss fit against a table's amount column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFit {
    pub loss: f64,
    /// Rounded model amount minus published amount, per row.
    pub residuals: Vec<i64>,
    /// Sum of squared unrounded residuals.
    pub sse: f64,
}

/// Fits the per-triangulation loss to the amount column of `table` rows
/// `(P, C, amount, completeness)`, and fails unless every rounded amount is
/// within `tolerance` points.
pub fn fit_loss_parameter(
    table: &[(usize, usize, i64, i64)],
    a: &CoverageAssumptions,
    tolerance: f64,
) -> Result<LossFit, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    let sse = |loss: f64| -> Result<f64, AnalysisError> {
        table.iter().try_fold(0.0, |acc, &(p, c, amt, _)| {
            Ok(acc + (amount(p, c, a, loss)? - amt as f64).powi(2))
        })
    };
    // Coarse scan, then golden-section refinement around the best node.
    let steps = 1000;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..steps {
        let l = i as f64 / steps as f64 * 0.5;
        let e = sse(l)?;
        if e < best.1 {
            best = (l, e);
        }
    }
    let h = 0.5 / steps as f64;
    let (mut lo, mut hi) = ((best.0 - h).max(0.0), best.0 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if sse(m1)? < sse(m2)? {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let loss = 0.5 * (lo + hi);
    let residuals = table
        .iter()
        .map(|&(p, c, amt, _)| Ok(amount(p, c, a, loss)?.round() as i64 - amt))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let worst = residuals.iter().map(|r| r.abs()).max().unwrap_or(0) as f64;
    if worst > tolerance {
        return Err(AnalysisError::NoFit { tolerance, worst });
    }
    Ok(LossFit {
        loss,
        residuals,
        sse: sse(loss)?,
    })
}

/// Coverage rows as CSV with the published values alongside.
pub fn coverage_csv(a: &CoverageAssumptions) -> Result<String, AnalysisError> {
    let mut out = String::from("projectors,cameras,amount,completeness,published_amount,published_completeness\n");
    for &(p, c, amt, comp) in &PUBLISHED_TABLE {
        let r = coverage_row(p, c, a)?;
        writeln!(out, "{p},{c},{},{},{amt},{comp}", r.amount, r.completeness).expect("writing to a String");
    }
    Ok(out)
}

/// Separability `D(phi_alpha)` at `samples` evenly spaced angles over
/// `[0, 180)` degrees.
pub fn separability_curve(phi1: f64, phi2: f64, samples: usize) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if samples < 2 {
        return Err(AnalysisError::Samples);
    }
    Ok((0..samples)
        .map(|i| {
            let a = 180.0 * i as f64 / samples as f64;
            (a, separability(phi1, phi2, a))
        })
        .collect())
}

pub fn separability_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("phi_alpha_deg,d\n");
    for (a, d) in curve {
        writeln!(out, "{a},{d}").expect("writing to a String");
    }
    out
}

/// Chromaticity pairs as CSV.
pub fn chromaticity_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("r,g\n");
    for (r, g) in points {
        writeln!(out, "{r},{g}").expect("writing to a String");
    }
    out
}
