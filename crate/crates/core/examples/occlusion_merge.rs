//! Two objects lit from opposite sides: each projector leaves shadows the
//! other fills. Merges the two ranges with the windowed two-set rule and
//! with a plain median and compares coverage and error.

use mpsl::pipeline::{merge_on_camera, run_experiment, truth_range};
use mpsl::range::{error_metrics, select_set, MergeMode, MergePolicy, RangeImage};
use mpsl::scenarios;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exp = scenarios::two_cups().build(None)?;
    let (caps, recon, _) = run_experiment(&exp)?;
    let truth = truth_range(&caps[0].truth, 0);
    let ranges: Vec<&RangeImage> = recon.pairs().map(|p| &p.range).collect();

    let (w, h) = truth.dims();
    let (mut union, mut only) = (0usize, [0usize; 2]);
    for y in 0..h {
        for x in 0..w {
            let v = [ranges[0].get(x, y).is_some(), ranges[1].get(x, y).is_some()];
            union += (v[0] || v[1]) as usize;
            for i in 0..2 {
                only[i] += (v[i] && !v[1 - i]) as usize;
            }
        }
    }
    for (i, r) in ranges.iter().enumerate() {
        println!("projector {i}: coverage {:.3}, {} pixels only it measures", r.coverage(), only[i]);
    }
    println!("union of both: {:.3}", union as f64 / (w * h) as f64);

    for (label, mode) in [("windowed two-set", MergeMode::WindowedTwoSet), ("median", MergeMode::MedianOfN)] {
        let policy = MergePolicy {
            mode,
            ..MergePolicy::default()
        };
        let m = merge_on_camera(&exp.rig, &ranges, &policy, 0)?;
        let e = error_metrics(&m, &truth, None)?;
        println!(
            "{label:>16}: coverage {:.3}, rms {:.2} mm, outliers {:.4}%",
            m.coverage(),
            1e3 * e.rms,
            100.0 * e.outlier_fraction
        );
    }

    // The set rule on one neighbourhood: three agreeing samples beat one.
    let choice = select_set(&[1.00, 1.01, 0.99], &[1.30], 3);
    println!("set rule on {{1.00, 1.01, 0.99}} vs {{1.30}}: {choice:?}");
    Ok(())
}
