//! Full pipeline on a sphere in front of a plane under two projectors:
//! simulate, estimate directions, separate, decode, triangulate, merge and
//! score against ground truth. Pass a directory to also write the ranges.

use std::env;
use std::path::PathBuf;
use std::time::Instant;

use mpsl::io::write_pfm_gray;
use mpsl::pipeline::run_experiment;
use mpsl::scenarios;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exp = scenarios::double().build(None)?;
    let t = Instant::now();
    let (_, recon, metrics) = run_experiment(&exp)?;
    println!("{} in {:.1?}", exp.config.name, t.elapsed());

    for p in &metrics.pairs {
        let d = &p.decode;
        print!(
            "projector {}: stripe accuracy {:.4} over {} decoded pixels, coverage {:.3}",
            p.projector, d.accuracy, d.decoded, d.coverage
        );
        if let Some(r) = &p.range {
            print!(", depth rms {:.2} mm", 1e3 * r.rms);
        }
        println!();
    }
    if let Some(m) = &metrics.merged {
        println!(
            "merged: depth rms {:.2} mm ({:.3}% of the {:.0} mm depth range), coverage {:.3}",
            1e3 * m.rms,
            100.0 * m.rms / m.depth_range,
            1e3 * m.depth_range,
            m.coverage
        );
    }

    if let Some(dir) = env::args().nth(1).map(PathBuf::from) {
        for p in recon.pairs() {
            write_pfm_gray(dir.join(format!("range_p{}.pfm", p.projector)), &p.range.depth)?;
        }
        write_pfm_gray(dir.join("merged.pfm"), &recon.merged.depth)?;
        println!("wrote ranges to {}", dir.display());
    }
    Ok(())
}
