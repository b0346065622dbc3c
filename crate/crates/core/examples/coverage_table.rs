//! Coverage model for one to four projectors and cameras: completeness from
//! the illumination and capture assumptions, data amount with a fitted
//! per-triangulation loss. Also prints the separability curve of two
//! patterns 70 degrees apart.

use mpsl::analysis::{
    amount, coverage_csv, fit_loss_parameter, separability_curve, CoverageAssumptions, PUBLISHED_TABLE,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut a = CoverageAssumptions::default();
    let fit = fit_loss_parameter(&PUBLISHED_TABLE, &a, 1.0)?;
    println!("fitted loss per triangulation {:.4} (sse {:.3})", fit.loss, fit.sse);
    println!("amount residuals {:?}", fit.residuals);
    println!("2x2 amount without loss: {:.0}", amount(2, 2, &a, 0.0)?);
    a.per_triangulation_loss = fit.loss;
    print!("{}", coverage_csv(&a)?);

    let curve = separability_curve(20.0, 90.0, 1800)?;
    let (phi, d) = curve.iter().copied().fold((0.0, f64::MIN), |b, s| if s.1 > b.1 { s } else { b });
    println!("separability of 20 and 90 deg: maximum {d:.4} at {phi:.1} deg");
    Ok(())
}
