//! Image-space stripe patterns with exactly known directions, for testing
//! direction estimation and separation without scene geometry.

use std::sync::Arc;

use nalgebra::Vector2;

use crate::pattern::{generate_pattern, StripePattern};
use crate::raster::{gaussian_blur, RadianceImage, Raster};

/// One straight-stripe pattern drawn directly in the image plane.
#[derive(Debug, Clone)]
pub struct SynthPattern {
    /// Encoding direction, degrees from the image x-axis toward +y.
    pub angle_deg: f64,
    /// Stripe width in pixels.
    pub width_px: f64,
    /// Stripe coordinate at the image center.
    pub offset: f64,
    /// Gray level of a lit stripe.
    pub intensity: f32,
    pub pattern: Arc<StripePattern>,
}

impl SynthPattern {
    /// Standard 198-stripe pattern, centered, 100 gray levels.
    pub fn new(angle_deg: f64, width_px: f64) -> Self {
        Self {
            angle_deg,
            width_px,
            offset: 99.0,
            intensity: 100.0,
            pattern: Arc::new(generate_pattern(7, 3).expect("k = 7 is valid")),
        }
    }

    pub fn direction(&self) -> Vector2<f64> {
        let a = self.angle_deg.to_radians();
        Vector2::new(a.cos(), a.sin())
    }

    /// Continuous stripe coordinate at image position `(x, y)` of a
    /// `w x h` image.
    pub fn coordinate(&self, x: f64, y: f64, w: usize, h: usize) -> f64 {
        let d = self.direction();
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        ((x - cx) * d.x + (y - cy) * d.y) / self.width_px + self.offset
    }

    fn color(&self, s: f64) -> [f32; 3] {
        let n = self.pattern.len() as i64;
        let i = (s.floor() as i64).rem_euclid(n) as usize;
        let c = self.pattern.stripes()[i].rgb();
        [c[0] * self.intensity, c[1] * self.intensity, c[2] * self.intensity]
    }
}

/// Sum of the patterns, box-filtered over 4x4 sub-samples per pixel and then
/// blurred by a Gaussian point-spread function.
pub fn superposed_stripes(w: usize, h: usize, patterns: &[SynthPattern], psf_sigma: f64) -> RadianceImage {
    const SS: usize = 4;
    let img = Raster::from_fn(w, h, |x, y| {
        let mut acc = [0.0f32; 3];
        for sy in 0..SS {
            for sx in 0..SS {
                let u = x as f64 + (sx as f64 + 0.5) / SS as f64 - 0.5;
                let v = y as f64 + (sy as f64 + 0.5) / SS as f64 - 0.5;
                for p in patterns {
                    let c = p.color(p.coordinate(u, v, w, h));
                    for k in 0..3 {
                        acc[k] += c[k] / (SS * SS) as f32;
                    }
                }
            }
        }
        acc
    });
    gaussian_blur(&img, psf_sigma)
}
