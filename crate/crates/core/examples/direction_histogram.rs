//! Estimates local encoding directions of two superposed stripe patterns
//! from double-angle gradient histograms, noiseless and with sensor noise.

use mpsl::demux::{
    axial_diff_deg, compute_gradients, orientation_blocks, orientation_histogram, DerivativeFilter, HistogramParams,
    INTERIOR_MARGIN,
};
use mpsl::scene::{add_noise, NoiseModel};
use mpsl::synth::{superposed_stripes, SynthPattern};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (128, 128);
    for separation in [90.0, 70.0] {
        let truth = [15.0, 15.0 + separation];
        let pats: Vec<SynthPattern> = truth.iter().map(|&a| SynthPattern::new(a, 4.0)).collect();
        let clean = superposed_stripes(w, h, &pats, 0.8);
        for (label, img) in [("noiseless", clean.clone()), ("noisy", add_noise(&clean, &NoiseModel::measured(3)))] {
            let g = compute_gradients(&img, 0.0)?;
            let mut params = HistogramParams::default();
            if label == "noisy" {
                params = params.with_noise(NoiseModel::measured(0).mean_sigma(), 0.0, DerivativeFilter::default());
            }
            // Blocks touching the border see clamped derivatives.
            let m = INTERIOR_MARGIN;
            let blocks: Vec<_> = orientation_blocks(&g, &params)
                .into_iter()
                .filter(|b| b.origin.iter().all(|&o| o >= m && o + b.size <= w - m))
                .collect();
            let (mut worst, mut both) = (0.0f64, 0usize);
            for b in &blocks {
                let errs: Vec<f64> = truth
                    .iter()
                    .filter_map(|&t| b.lobes.iter().map(|l| axial_diff_deg(l.angle_deg, t)).reduce(f64::min))
                    .collect();
                if errs.len() == 2 && b.lobes.len() >= 2 {
                    both += 1;
                    worst = errs.iter().copied().fold(worst, f64::max);
                }
            }
            println!(
                "separation {separation:>4} deg, {label:>9}: {both}/{} interior blocks with both lobes, worst error {worst:.2} deg",
                blocks.len()
            );
            if label == "noiseless" {
                let hist = orientation_histogram(&g, 60, 60, 67, 67, &params);
                let peak = hist.iter().copied().fold(0.0, f64::max);
                let bars: String = hist
                    .iter()
                    .map(|v| [' ', '.', ':', '|'][((v / peak) * 3.0).round() as usize])
                    .collect();
                println!("  center window histogram [{bars}]");
            }
        }
    }
    Ok(())
}
