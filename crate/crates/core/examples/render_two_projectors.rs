//! Renders a sphere in front of a plane lit by two projectors with
//! perpendicular stripes, captures it with sensor noise and writes the
//! image and ground truth next to each other.

use std::env;
use std::path::PathBuf;

use mpsl::io::{write_pfm_gray, write_ppm};
use mpsl::pipeline::simulate;
use mpsl::scenarios;
use mpsl::scene::chromaticity_scatter;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = env::args().nth(1).map(PathBuf::from).unwrap_or_else(env::temp_dir);
    let exp = scenarios::double().build(None)?;
    for c in simulate(&exp, exp.config.seed)? {
        let t = &c.truth;
        let lit: Vec<usize> = (0..t.stripe.len()).map(|p| t.lit(p).count()).collect();
        println!(
            "camera {}: {}x{}, {:.3}% clipped, {} surface pixels, lit per projector {:?}",
            c.camera,
            c.image.width(),
            c.image.height(),
            100.0 * c.clipped_fraction,
            t.valid_depth().count(),
            lit
        );

        let pts = chromaticity_scatter(&c.image, Some(&t.valid_depth()));
        let mixed = pts.iter().filter(|(r, g)| r.max(*g).max(1.0 - r - g) < 0.8).count();
        println!("  {} of {} pixels have mixed chromaticity", mixed, pts.len());

        write_ppm(out.join(format!("double_cam{}.ppm", c.camera)), &c.image)?;
        write_pfm_gray(out.join(format!("double_cam{}_depth.pfm", c.camera)), &t.depth)?;
        for (p, s) in t.stripe.iter().enumerate() {
            write_pfm_gray(out.join(format!("double_cam{}_stripe_p{p}.pfm", c.camera)), s)?;
        }
    }
    println!("wrote images to {}", out.display());
    Ok(())
}
