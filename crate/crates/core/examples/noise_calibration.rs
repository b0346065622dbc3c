//! Measures sensor noise the way a real camera is calibrated: 50 frames of
//! a flat, evenly lit patch, per-pixel temporal deviation pooled over a 7x7
//! window, with Sheppard's correction for 8-bit quantization.

use mpsl::raster::RadianceImage;
use mpsl::scene::{capture_stack, measure_noise, NoiseModel, MEASURED_SIGMA_RGB};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A gray patch exposed to about 128 gray levels, away from clipping.
    let patch = RadianceImage::filled(15, 15, [0.583, 0.581, 0.579]);
    let noise = NoiseModel::new(MEASURED_SIGMA_RGB, 2024)?;
    let stack = capture_stack(&patch, 220.0, &noise, 50);
    for step in [0.0, 1.0] {
        let sigma = measure_noise(&stack, [4, 4], 7, step)?;
        let rel: Vec<String> = sigma
            .iter()
            .zip(MEASURED_SIGMA_RGB)
            .map(|(m, s)| format!("{:+.2}%", 100.0 * (m - s) / s))
            .collect();
        let label = if step > 0.0 { "with Sheppard's correction" } else { "raw" };
        println!("{label:>26}: sigma {sigma:.4?} vs configured {MEASURED_SIGMA_RGB:?} ({})", rel.join(", "));
    }
    Ok(())
}
