//! Separates two and three superposed stripe patterns with known directions
//! by directional derivatives, measures how much of each pattern leaks into
//! the others' channels and decodes every separated pattern.

use nalgebra::Vector2;

use mpsl::decode::{decode_accuracy, decode_image, DecodeParams, Decoder};
use mpsl::demux::{compute_gradients, separate, DirectionField, SeparatedDerivative};
use mpsl::pattern::generate_pattern;
use mpsl::raster::{RadianceImage, Raster};
use mpsl::synth::{superposed_stripes, SynthPattern};

fn energy(s: &SeparatedDerivative) -> f64 {
    s.data
        .data()
        .iter()
        .zip(s.valid.data())
        .filter(|(_, &ok)| ok)
        .map(|(v, _)| v.iter().map(|&c| (c as f64).powi(2)).sum::<f64>())
        .sum()
}

fn separated(img: &RadianceImage, field: &DirectionField) -> Result<Vec<SeparatedDerivative>, Box<dyn std::error::Error>> {
    Ok(separate(&compute_gradients(img, 0.0)?, field, 20.0)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (160, 120);
    let decoder = Decoder::new(generate_pattern(7, 3)?)?;
    let params = DecodeParams {
        min_strength: 0.5,
        ..DecodeParams::default()
    };
    for angles in [&[10.0, 80.0][..], &[0.0, 60.0, 120.0]] {
        let pats: Vec<SynthPattern> = angles.iter().map(|&a| SynthPattern::new(a, 4.0)).collect();
        let dirs: Vec<Vector2<f64>> = pats.iter().map(|p| p.direction()).collect();
        let field = DirectionField::constant(w, h, &dirs);
        println!("{} patterns at {angles:?} deg:", angles.len());

        // Leakage: channel j of an image holding only pattern i.
        let alone: Vec<Vec<f64>> = pats
            .iter()
            .map(|p| Ok(separated(&superposed_stripes(w, h, std::slice::from_ref(p), 0.8), &field)?.iter().map(energy).collect()))
            .collect::<Result<_, Box<dyn std::error::Error>>>()?;
        for (j, _) in pats.iter().enumerate() {
            let worst = (0..pats.len())
                .filter(|&i| i != j)
                .map(|i| alone[i][j] / alone[j][j])
                .fold(0.0, f64::max);
            println!("  channel {j}: worst leakage from another pattern {:.2e}", worst);
        }

        let img = superposed_stripes(w, h, &pats, 0.8);
        for s in separated(&img, &field)? {
            let p = &pats[s.projector];
            let m = decode_image(&s, &field.dirs[s.projector], Some(&img), &decoder, &params)?;
            let truth = Raster::from_fn(w, h, |x, y| p.coordinate(x as f64, y as f64, w, h) as f32);
            let st = decode_accuracy(&m, &truth, None, 8);
            println!(
                "  pattern {} (derivative order {}): accuracy {:.4}, coverage {:.3}",
                s.projector, s.order, st.accuracy, st.coverage
            );
        }
    }
    Ok(())
}
