//! Orientation demultiplexing of superposed stripe patterns.
//!
//! Local encoding directions are estimated from a magnitude-weighted
//! double-angle histogram of image gradients. Each pattern is then isolated
//! by differentiating perpendicular to the other patterns' encoding
//! directions: one derivative suppresses one pattern, so `N` superposed
//! patterns need derivatives of order `N - 1`.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::optics::{stripe_gradient_at_depth, Rig};
use crate::raster::{gaussian_blur, gaussian_kernel, Mask, RadianceImage, Raster, SignedImage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DemuxError {
    #[error("image must be at least 3x3, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("direction must be a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("expected {expected} direction rasters, got {got}")]
    DirectionCount { expected: usize, got: usize },
    #[error("between 1 and 3 patterns can be separated, got {0}")]
    PatternCount(usize),
    #[error("no nominal depth: optical axes do not converge and none was given")]
    NoNominalDepth,
}

/// Per-channel image gradients.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub gx: SignedImage,
    pub gy: SignedImage,
    /// Second derivatives: central differences of the gradients.
    pub hxx: SignedImage,
    pub hxy: SignedImage,
    pub hyy: SignedImage,
    /// Third derivatives `xxx`, `xxy`, `xyy`, `yyy`.
    pub third: [SignedImage; 4],
    /// False on the one-pixel border where central differences are undefined.
    pub reliable: Mask,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.gx.width()
    }

    pub fn height(&self) -> usize {
        self.gx.height()
    }

    pub fn magnitude(&self, x: usize, y: usize, c: usize) -> f32 {
        self.gx.get(x, y)[c].hypot(self.gy.get(x, y)[c])
    }

    /// Doubled gradient angle in `[0, 2 pi)`.
    pub fn double_angle(&self, x: usize, y: usize, c: usize) -> f64 {
        let a = 2.0 * (self.gy.get(x, y)[c] as f64).atan2(self.gx.get(x, y)[c] as f64);
        a.rem_euclid(std::f64::consts::TAU)
    }

    /// Third derivatives `[xxx, xxy, xyy, yyy]` of one channel.
    pub fn third(&self, x: usize, y: usize, c: usize) -> [f64; 4] {
        std::array::from_fn(|k| self.third[k].get(x, y)[c] as f64)
    }

    /// Per-channel derivative along a fixed unit direction.
    pub fn along(&self, d: Vector2<f64>) -> SignedImage {
        let (a, b) = (d.x as f32, d.y as f32);
        Raster::from_vec(
            self.width(),
            self.height(),
            self.gx
                .data()
                .iter()
                .zip(self.gy.data())
                .map(|(gx, gy)| [gx[0] * a + gy[0] * b, gx[1] * a + gy[1] * b, gx[2] * a + gy[2] * b])
                .collect(),
        )
    }
}

fn central_x(img: &SignedImage) -> SignedImage {
    let (w, h) = img.dims();
    Raster::from_fn(w, h, |x, y| {
        if x == 0 || x + 1 >= w {
            return [0.0; 3];
        }
        let (a, b) = (img.get(x - 1, y), img.get(x + 1, y));
        [(b[0] - a[0]) * 0.5, (b[1] - a[1]) * 0.5, (b[2] - a[2]) * 0.5]
    })
}

fn central_y(img: &SignedImage) -> SignedImage {
    let (w, h) = img.dims();
    Raster::from_fn(w, h, |x, y| {
        if y == 0 || y + 1 >= h {
            return [0.0; 3];
        }
        let (a, b) = (img.get(x, y - 1), img.get(x, y + 1));
        [(b[0] - a[0]) * 0.5, (b[1] - a[1]) * 0.5, (b[2] - a[2]) * 0.5]
    })
}

fn border_mask(w: usize, h: usize, border: usize) -> Mask {
    Raster::from_fn(w, h, |x, y| x >= border && y >= border && x + border < w && y + border < h)
}

/// Discrete derivative filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeFilter {
    /// `[-1/2, 0, 1/2]` with no cross smoothing.
    Central,
    /// Five-tap derivative with a matched five-tap cross prefilter, whose
    /// gradient direction has little dependence on orientation.
    #[default]
    Matched5,
}

const MATCHED5_PRE: [f32; 5] = [0.037659, 0.249153, 0.426375, 0.249153, 0.037659];
const MATCHED5_DER: [f32; 5] = [-0.109604, -0.276691, 0.0, 0.276691, 0.109604];

/// Separable correlation with a 1-D kernel along x or y, clamping at borders.
fn correlate(img: &SignedImage, k: &[f32], along_x: bool) -> SignedImage {
    let (w, h) = img.dims();
    let r = (k.len() / 2) as i64;
    Raster::from_fn(w, h, |x, y| {
        let mut acc = [0.0f32; 3];
        for (j, &kv) in k.iter().enumerate() {
            let o = j as i64 - r;
            let p = if along_x {
                img.get((x as i64 + o).clamp(0, w as i64 - 1) as usize, y)
            } else {
                img.get(x, (y as i64 + o).clamp(0, h as i64 - 1) as usize)
            };
            for c in 0..3 {
                acc[c] += kv * p[c];
            }
        }
        acc
    })
}

fn derivatives(img: &SignedImage, filter: DerivativeFilter) -> (SignedImage, SignedImage) {
    match filter {
        DerivativeFilter::Central => (central_x(img), central_y(img)),
        DerivativeFilter::Matched5 => (
            correlate(&correlate(img, &MATCHED5_DER, true), &MATCHED5_PRE, false),
            correlate(&correlate(img, &MATCHED5_PRE, true), &MATCHED5_DER, false),
        ),
    }
}

/// Gradients and second derivatives after optional Gaussian pre-smoothing,
/// with the default derivative filter.
pub fn compute_gradients(image: &RadianceImage, presmooth_sigma: f64) -> Result<GradientField, DemuxError> {
    compute_gradients_with(image, presmooth_sigma, DerivativeFilter::default())
}

pub fn compute_gradients_with(
    image: &RadianceImage,
    presmooth_sigma: f64,
    filter: DerivativeFilter,
) -> Result<GradientField, DemuxError> {
    let (w, h) = image.dims();
    if w < 3 || h < 3 {
        return Err(DemuxError::TooSmall(w, h));
    }
    let smooth = gaussian_blur(image, presmooth_sigma);
    let (gx, gy) = derivatives(&smooth, filter);
    let (hxx, a) = derivatives(&gx, filter);
    let (b, hyy) = derivatives(&gy, filter);
    let hxy = Raster::from_vec(
        w,
        h,
        a.data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| [(p[0] + q[0]) * 0.5, (p[1] + q[1]) * 0.5, (p[2] + q[2]) * 0.5])
            .collect(),
    );
    let (txxx, txxy_a) = derivatives(&hxx, filter);
    let (txyy_a, tyyy) = derivatives(&hyy, filter);
    let (txxy_b, txyy_b) = derivatives(&hxy, filter);
    let mean = |p: &SignedImage, q: &SignedImage| {
        Raster::from_vec(
            w,
            h,
            p.data()
                .iter()
                .zip(q.data())
                .map(|(a, b)| [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5, (a[2] + b[2]) * 0.5])
                .collect(),
        )
    };
    let third = [txxx, mean(&txxy_a, &txxy_b), mean(&txyy_a, &txyy_b), tyyy];
    let border = match filter {
        DerivativeFilter::Central => 1,
        DerivativeFilter::Matched5 => 2,
    };
    Ok(GradientField {
        gx,
        gy,
        hxx,
        hxy,
        hyy,
        third,
        reliable: border_mask(w, h, border),
    })
}

/// Noise standard deviation of one gradient component, per unit of image
/// noise, for the given pre-smoothing.
pub fn gradient_noise_gain(presmooth_sigma: f64, filter: DerivativeFilter) -> f64 {
    let g: Vec<f64> = if presmooth_sigma > 0.0 {
        gaussian_kernel(presmooth_sigma).iter().map(|&v| v as f64).collect()
    } else {
        vec![1.0]
    };
    let (der, pre): (Vec<f64>, Vec<f64>) = match filter {
        DerivativeFilter::Central => (vec![-0.5, 0.0, 0.5], vec![1.0]),
        DerivativeFilter::Matched5 => (
            MATCHED5_DER.iter().map(|&v| v as f64).collect(),
            MATCHED5_PRE.iter().map(|&v| v as f64).collect(),
        ),
    };
    let convolve = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    norm(&convolve(&g, &der)) * norm(&convolve(&g, &pre))
}

/// Per-channel derivative along a constant unit direction.
pub fn directional_derivative(
    image: &RadianceImage,
    direction: Vector2<f64>,
    presmooth_sigma: f64,
) -> Result<SignedImage, DemuxError> {
    if (direction.norm() - 1.0).abs() > 1e-6 {
        return Err(DemuxError::NotUnit(direction.norm()));
    }
    Ok(compute_gradients(image, presmooth_sigma)?.along(direction))
}

/// `|cos(a - phi1)| - |cos(a - phi2)|`, all angles in degrees: the response of
/// pattern 1 relative to pattern 2 for a derivative taken along `phi_alpha`.
pub fn separability(phi1: f64, phi2: f64, phi_alpha: f64) -> f64 {
    (phi_alpha - phi1).to_radians().cos().abs() - (phi_alpha - phi2).to_radians().cos().abs()
}

/// Grid-search maximizer of [`separability`] over `[0, 180)` at `step` degrees.
pub fn separability_argmax(phi1: f64, phi2: f64, step: f64) -> f64 {
    let n = (180.0 / step).round() as usize;
    (0..n)
        .map(|i| i as f64 * step)
        .max_by(|&a, &b| separability(phi1, phi2, a).total_cmp(&separability(phi1, phi2, b)))
        .unwrap_or(0.0)
}

/// Angular distance between two axial directions (degrees, modulo 180).
pub fn axial_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    /// Encoding direction in degrees, modulo 180.
    pub angle_deg: f64,
    /// Histogram mass within four bins of the peak.
    pub population: f64,
    /// Smoothed histogram value at the peak.
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationEstimate {
    pub origin: [usize; 2],
    pub size: usize,
    /// Lobes ordered by decreasing population.
    pub lobes: Vec<Lobe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramParams {
    pub bins: usize,
    /// Side of the square window, pixels.
    pub window: usize,
    /// Gradients weaker than this (gray levels per pixel) are ignored.
    pub min_magnitude: f64,
    /// Circular smoothing of the histogram, in bins.
    pub smoothing_bins: f64,
    pub merge_deg: f64,
    pub max_lobes: usize,
    /// Lobes below this fraction of the strongest population are dropped.
    pub min_relative_population: f64,
    /// Half-width in bins of the population sum around a peak.
    pub population_radius: usize,
    /// Candidate lobes considered by the consistency check.
    pub max_candidates: usize,
    /// Candidates below this fraction of the strongest population are dropped.
    pub candidate_relative_population: f64,
    /// Select lobes by derivative consistency rather than population alone.
    pub consistency: bool,
    /// A window is explained by one, two or three directions when their
    /// consistency residual is below the matching entry.
    pub residual_max: [f64; 3],
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            bins: 64,
            window: 7,
            min_magnitude: 3.0,
            smoothing_bins: 1.0,
            merge_deg: 10.0,
            max_lobes: 3,
            min_relative_population: 0.2,
            population_radius: 4,
            max_candidates: 5,
            candidate_relative_population: 0.1,
            consistency: true,
            residual_max: [0.1, 0.08, 0.1],
        }
    }
}

impl HistogramParams {
    /// Gradient threshold of three noise standard deviations.
    pub fn with_noise(mut self, sigma: f64, presmooth_sigma: f64, filter: DerivativeFilter) -> Self {
        self.min_magnitude = 3.0 * sigma * gradient_noise_gain(presmooth_sigma, filter);
        self
    }
}

/// Magnitude-weighted double-angle histogram of the window `[x0, x1) x [y0, y1)`
/// with linear interpolation between neighbouring bins.
pub fn orientation_histogram(
    grad: &GradientField,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    params: &HistogramParams,
) -> Vec<f64> {
    let bins = params.bins;
    let mut hist = vec![0.0; bins];
    let scale = bins as f64 / std::f64::consts::TAU;
    for y in y0..y1.min(grad.height()) {
        for x in x0..x1.min(grad.width()) {
            if !grad.reliable.get(x, y) {
                continue;
            }
            for c in 0..3 {
                let m = grad.magnitude(x, y, c) as f64;
                if m <= params.min_magnitude {
                    continue;
                }
                let p = grad.double_angle(x, y, c) * scale - 0.5;
                let lo = p.floor();
                let f = p - lo;
                let i = (lo as i64).rem_euclid(bins as i64) as usize;
                hist[i] += m * (1.0 - f);
                hist[(i + 1) % bins] += m * f;
            }
        }
    }
    hist
}

fn smooth_circular(hist: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return hist.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let n = hist.len() as i64;
    (0..n)
        .map(|i| {
            k.iter()
                .enumerate()
                .map(|(j, &w)| w as f64 * hist[(i + j as i64 - r).rem_euclid(n) as usize])
                .sum()
        })
        .collect()
}

/// Sub-bin peak offset from a least-squares parabola through the logs of the
/// five bins around `m` (a Gaussian fit).
fn gaussian_peak_offset(h: &[f64], m: usize) -> f64 {
    let n = h.len() as i64;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    let mut sx2y = 0.0;
    for dx in -2i64..=2 {
        let y = (h[(m as i64 + dx).rem_euclid(n) as usize] + 1e-12).ln();
        sy += y;
        sxy += dx as f64 * y;
        sx2y += (dx * dx) as f64 * y;
    }
    let b = sxy / 10.0;
    let c = (sx2y - 2.0 * sy) / 14.0;
    if c >= 0.0 {
        return 0.0;
    }
    (-b / (2.0 * c)).clamp(-2.0, 2.0)
}

/// Finds up to `max_lobes` dominant lobes in a raw double-angle histogram.
///
/// Eight windows of a quarter of the histogram at one-eighth steps are
/// scanned; a window's maximum counts only when it is interior. Detections
/// closer than `merge_deg` merge, and lobes are ranked by population.
pub fn find_lobes(hist: &[f64], params: &HistogramParams) -> Vec<Lobe> {
    let bins = hist.len();
    let smooth = smooth_circular(hist, params.smoothing_bins);
    if smooth.iter().all(|&v| v <= 0.0) {
        return Vec::new();
    }
    let width = bins / 4;
    let step = bins / 8;
    let bin_deg = 180.0 / bins as f64;
    let mut found: Vec<Lobe> = Vec::new();
    for w in 0..8 {
        let start = w * step;
        let (mut best, mut best_v) = (0, f64::NEG_INFINITY);
        for j in 0..=width {
            let v = smooth[(start + j) % bins];
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        if best == 0 || best == width || best_v <= 0.0 {
            continue;
        }
        let m = (start + best) % bins;
        let pos = m as f64 + gaussian_peak_offset(&smooth, m);
        let angle_deg = ((pos + 0.5) * bin_deg).rem_euclid(180.0);
        let r = params.population_radius as i64;
        let population: f64 = (-r..=r)
            .map(|d| hist[(m as i64 + d).rem_euclid(bins as i64) as usize])
            .sum();
        let lobe = Lobe {
            angle_deg,
            population,
            height: best_v,
        };
        match found
            .iter_mut()
            .find(|l| axial_diff_deg(l.angle_deg, angle_deg) < params.merge_deg)
        {
            Some(existing) if existing.height >= lobe.height => {}
            Some(existing) => *existing = lobe,
            None => found.push(lobe),
        }
    }
    found.sort_by(|a, b| b.population.total_cmp(&a.population));
    if let Some(top) = found.first().map(|l| l.population) {
        found.retain(|l| l.population >= params.min_relative_population * top);
    }
    found.truncate(params.max_lobes);
    found
}

fn unit_at(angle_deg: f64) -> Vector2<f64> {
    let a = angle_deg.to_radians();
    Vector2::new(a.cos(), a.sin())
}

/// Distance from the image border beyond which third derivatives are
/// unaffected by border clamping.
pub const INTERIOR_MARGIN: usize = 6;

/// Pixels of `[x0, x1) x [y0, y1)` far enough from the image border for
/// third derivatives to be unaffected by it.
fn interior(grad: &GradientField, win: [usize; 4]) -> impl Iterator<Item = (usize, usize)> {
    const M: usize = INTERIOR_MARGIN;
    let [x0, y0, x1, y1] = win;
    let (w, h) = (grad.width(), grad.height());
    let xs = x0.max(M)..x1.min(w.saturating_sub(M));
    (y0.max(M)..y1.min(h.saturating_sub(M))).flat_map(move |y| xs.clone().map(move |x| (x, y)))
}

/// Derivative of order `others.len() + 1` at a pixel and channel, contracted
/// with the given directions: a vector `u` such that `u . d` is the mixed
/// derivative along `d` and all of `others`.
fn contracted(grad: &GradientField, x: usize, y: usize, c: usize, others: &[Vector2<f64>]) -> Vector2<f64> {
    match others {
        [] => Vector2::new(grad.gx.get(x, y)[c] as f64, grad.gy.get(x, y)[c] as f64),
        [b] => {
            let (xx, xy, yy) = (grad.hxx.get(x, y)[c] as f64, grad.hxy.get(x, y)[c] as f64, grad.hyy.get(x, y)[c] as f64);
            Vector2::new(xx * b.x + xy * b.y, xy * b.x + yy * b.y)
        }
        [b, d] => {
            let t = grad.third(x, y, c);
            // Symmetric tensor entries: t[0] = xxx, t[1] = xxy, t[2] = xyy, t[3] = yyy.
            let (bb_xx, bb_xy, bb_yy) = (b.x * d.x, b.x * d.y + b.y * d.x, b.y * d.y);
            Vector2::new(
                t[0] * bb_xx + t[1] * bb_xy + t[2] * bb_yy,
                t[1] * bb_xx + t[2] * bb_xy + t[3] * bb_yy,
            )
        }
        _ => unreachable!("at most three directions"),
    }
}

/// Squared Frobenius norm of the derivative tensor of the given order at a
/// pixel and channel, counting symmetric entries with multiplicity.
fn tensor_energy(grad: &GradientField, x: usize, y: usize, c: usize, order: usize) -> f64 {
    match order {
        1 => (grad.gx.get(x, y)[c] as f64).powi(2) + (grad.gy.get(x, y)[c] as f64).powi(2),
        2 => {
            let (xx, xy, yy) = (grad.hxx.get(x, y)[c] as f64, grad.hxy.get(x, y)[c] as f64, grad.hyy.get(x, y)[c] as f64);
            xx * xx + 2.0 * xy * xy + yy * yy
        }
        _ => {
            let t = grad.third(x, y, c);
            t[0] * t[0] + 3.0 * t[1] * t[1] + 3.0 * t[2] * t[2] + t[3] * t[3]
        }
    }
}

/// Energy of the mixed derivative along the stripes of every direction in
/// `angles_deg` (one to three), relative to its expectation for random
/// directions. Near zero when patterns with exactly these encoding
/// directions explain the window; corner-fringe directions leave residue.
pub fn consistency_residual(grad: &GradientField, win: [usize; 4], angles_deg: &[f64]) -> f64 {
    let n = angles_deg.len();
    assert!((1..=3).contains(&n), "one to three directions");
    let perp: Vec<Vector2<f64>> = angles_deg.iter().map(|&a| unit_at(a + 90.0)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in interior(grad, win) {
        for c in 0..3 {
            let v = contracted(grad, x, y, c, &perp[1..]).dot(&perp[0]);
            num += v * v;
            den += tensor_energy(grad, x, y, c, n);
        }
    }
    if den <= 0.0 {
        return 1.0;
    }
    (1u32 << n) as f64 * num / den
}

/// Encoding angles minimizing the consistency residual, by alternating exact
/// minimization over each perpendicular with the others held fixed.
pub fn refine_directions(grad: &GradientField, win: [usize; 4], angles_deg: &[f64]) -> Vec<f64> {
    let n = angles_deg.len();
    assert!((1..=3).contains(&n), "one to three directions");
    let pix: Vec<(usize, usize)> = interior(grad, win).collect();
    let mut angles = angles_deg.to_vec();
    let sweeps = if n == 1 { 1 } else { 4 };
    for _ in 0..sweeps {
        for i in 0..n {
            let others: Vec<Vector2<f64>> = (0..n).filter(|&j| j != i).map(|j| unit_at(angles[j] + 90.0)).collect();
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for &(x, y) in &pix {
                for k in 0..3 {
                    let u = contracted(grad, x, y, k, &others);
                    a += u.x * u.x;
                    b += u.x * u.y;
                    c += u.y * u.y;
                }
            }
            // The perpendicular is the minor eigenvector of the scatter of
            // `u`, so the encoding direction is the major one.
            angles[i] = (0.5 * (2.0 * b).atan2(a - c)).to_degrees().rem_euclid(180.0);
        }
    }
    angles
}

/// Histogram population within `population_radius` bins of an angle.
fn population_at(hist: &[f64], angle_deg: f64, params: &HistogramParams) -> f64 {
    let bins = hist.len() as i64;
    let m = (angle_deg / 180.0 * bins as f64 - 0.5).round() as i64;
    let r = params.population_radius as i64;
    (-r..=r).map(|d| hist[(m + d).rem_euclid(bins) as usize]).sum()
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// The smallest set of `k` directions explaining the window, if any.
/// Candidate sets are tried in order of residual after refinement, which
/// also recovers true directions hidden under fringe lobes.
fn consistent_set(grad: &GradientField, win: [usize; 4], hist: &[f64], cands: &[Lobe], k: usize, params: &HistogramParams) -> Option<Vec<Lobe>> {
    let limit = params.residual_max[k - 1];
    let mut sets: Vec<(f64, Vec<usize>)> = subsets(cands.len(), k)
        .into_iter()
        .map(|s| {
            let angles: Vec<f64> = s.iter().map(|&i| cands[i].angle_deg).collect();
            (consistency_residual(grad, win, &angles), s)
        })
        .collect();
    sets.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, s) in sets {
        let start: Vec<f64> = s.iter().map(|&i| cands[i].angle_deg).collect();
        let angles = refine_directions(grad, win, &start);
        let distinct = (0..k).all(|i| (i + 1..k).all(|j| axial_diff_deg(angles[i], angles[j]) >= params.merge_deg));
        if !distinct || consistency_residual(grad, win, &angles) >= limit {
            continue;
        }
        let mut lobes: Vec<Lobe> = angles
            .iter()
            .zip(&s)
            .map(|(&angle_deg, &i)| Lobe {
                angle_deg,
                population: population_at(hist, angle_deg, params),
                height: cands[i].height,
            })
            .collect();
        lobes.sort_by(|a, b| b.population.total_cmp(&a.population));
        return Some(lobes);
    }
    None
}

/// Lobes of the window `[x0, x1) x [y0, y1)`.
///
/// Candidates come from the histogram in population order. The smallest set
/// of one to three directions whose mixed derivative annihilates the window
/// is returned, refined; corner-fringe lobes never complete such a set.
/// Without a consistent set the population ranking stands.
pub fn window_lobes(grad: &GradientField, x0: usize, y0: usize, x1: usize, y1: usize, params: &HistogramParams) -> Vec<Lobe> {
    let hist = orientation_histogram(grad, x0, y0, x1, y1, params);
    if !params.consistency {
        return find_lobes(&hist, params);
    }
    let wide = HistogramParams {
        max_lobes: params.max_candidates.max(params.max_lobes),
        min_relative_population: params.candidate_relative_population.min(params.min_relative_population),
        ..params.clone()
    };
    let cands = find_lobes(&hist, &wide);
    if cands.is_empty() {
        return cands;
    }
    let win = [x0, y0, x1, y1];
    for k in 1..=params.max_lobes.min(3).min(cands.len()) {
        if let Some(set) = consistent_set(grad, win, &hist, &cands, k, params) {
            return set;
        }
    }
    let top = cands[0].population;
    cands
        .into_iter()
        .filter(|l| l.population >= params.min_relative_population * top)
        .take(params.max_lobes)
        .collect()
}

/// Lobes of the window centered on `(x, y)`.
pub fn estimate_directions(grad: &GradientField, x: usize, y: usize, params: &HistogramParams) -> OrientationEstimate {
    let r = params.window / 2;
    let x0 = x.saturating_sub(r);
    let y0 = y.saturating_sub(r);
    OrientationEstimate {
        origin: [x0, y0],
        size: params.window,
        lobes: window_lobes(grad, x0, y0, x + r + 1, y + r + 1, params),
    }
}

/// Non-overlapping block estimates on a regular grid.
pub fn orientation_blocks(grad: &GradientField, params: &HistogramParams) -> Vec<OrientationEstimate> {
    let s = params.window;
    let mut out = Vec::new();
    for y0 in (0..grad.height().saturating_sub(s - 1)).step_by(s) {
        for x0 in (0..grad.width().saturating_sub(s - 1)).step_by(s) {
            out.push(OrientationEstimate {
                origin: [x0, y0],
                size: s,
                lobes: window_lobes(grad, x0, y0, x0 + s, y0 + s, params),
            });
        }
    }
    out
}

/// Signed encoding direction of every projector at every pixel: unit vectors
/// pointing toward increasing stripe index.
#[derive(Debug, Clone)]
pub struct DirectionField {
    pub dirs: Vec<Raster<[f32; 2]>>,
}

impl DirectionField {
    pub fn count(&self) -> usize {
        self.dirs.len()
    }

    pub fn at(&self, projector: usize, x: usize, y: usize) -> Vector2<f64> {
        let d = self.dirs[projector].get(x, y);
        Vector2::new(d[0] as f64, d[1] as f64)
    }

    /// Same direction at every pixel.
    pub fn constant(width: usize, height: usize, dirs: &[Vector2<f64>]) -> Self {
        Self {
            dirs: dirs
                .iter()
                .map(|d| {
                    let d = d.normalize();
                    Raster::filled(width, height, [d.x as f32, d.y as f32])
                })
                .collect(),
        }
    }
}

/// Expected encoding directions from calibration: the image gradient of each
/// projector's stripe coordinate on a fronto-parallel surface at
/// `nominal_depth`.
pub fn prior_directions(rig: &Rig, camera: usize, nominal_depth: f64) -> DirectionField {
    let cam = &rig.cameras[camera];
    let (w, h) = (cam.width(), cam.height());
    let dirs = rig
        .projectors
        .iter()
        .map(|p| {
            let center = stripe_gradient_at_depth(cam, p, cam.principal()[0], cam.principal()[1], nominal_depth)
                .and_then(|g| g.try_normalize(1e-12))
                .unwrap_or(Vector2::new(1.0, 0.0));
            let rows: Vec<Vec<[f32; 2]>> = (0..h)
                .into_par_iter()
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            let g = stripe_gradient_at_depth(cam, p, x as f64, y as f64, nominal_depth)
                                .and_then(|g| g.try_normalize(1e-12))
                                .unwrap_or(center);
                            [g.x as f32, g.y as f32]
                        })
                        .collect()
                })
                .collect();
            Raster::from_vec(w, h, rows.into_iter().flatten().collect())
        })
        .collect();
    DirectionField { dirs }
}

/// Nominal working depth of a camera: the mean crossing depth of its axis
/// with every projector axis.
pub fn nominal_depth(rig: &Rig, camera: usize) -> Result<f64, DemuxError> {
    let depths: Vec<f64> = (0..rig.projectors.len())
        .filter_map(|p| rig.axes_crossing_depth(camera, p))
        .collect();
    if depths.is_empty() {
        return Err(DemuxError::NoNominalDepth);
    }
    Ok(depths.iter().sum::<f64>() / depths.len() as f64)
}

fn angle_of(d: Vector2<f64>) -> f64 {
    d.y.atan2(d.x).to_degrees().rem_euclid(180.0)
}

/// Matches lobes to projectors. Each projector takes at most one lobe within
/// `tolerance_deg` of its prior; assignments maximize the number of matches,
/// then minimize total angular error. Unmatched projectors keep the prior.
/// Returned directions carry the prior's sign.
pub fn assign_lobes(lobes: &[Lobe], priors: &[Vector2<f64>], tolerance_deg: f64) -> Vec<Vector2<f64>> {
    assign_lobes_counted(lobes, priors, tolerance_deg).0
}

/// [`assign_lobes`] together with the number of projectors that found a lobe.
fn assign_lobes_counted(lobes: &[Lobe], priors: &[Vector2<f64>], tolerance_deg: f64) -> (Vec<Vector2<f64>>, usize) {
    let n = priors.len();
    let prior_angles: Vec<f64> = priors.iter().map(|&p| angle_of(p)).collect();
    let mut best: (usize, f64, Vec<Option<usize>>) = (0, 0.0, vec![None; n]);
    let options = lobes.len() + 1;
    let total = options.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut pick = vec![None; n];
        let mut used = 0u32;
        let mut ok = true;
        let mut err = 0.0;
        for (i, slot) in pick.iter_mut().enumerate() {
            let o = c % options;
            c /= options;
            if o == 0 {
                continue;
            }
            let l = o - 1;
            let d = axial_diff_deg(lobes[l].angle_deg, prior_angles[i]);
            if used & (1 << l) != 0 || d > tolerance_deg {
                ok = false;
                break;
            }
            used |= 1 << l;
            err += d;
            *slot = Some(l);
        }
        if !ok {
            continue;
        }
        let count = pick.iter().flatten().count();
        if count > best.0 || (count == best.0 && count > 0 && err < best.1) {
            best = (count, err, pick);
        }
    }
    let dirs = best
        .2
        .iter()
        .zip(priors)
        .map(|(pick, &prior)| match pick {
            Some(l) => {
                let a = lobes[*l].angle_deg.to_radians();
                let d = Vector2::new(a.cos(), a.sin());
                if d.dot(&prior) < 0.0 {
                    -d
                } else {
                    d
                }
            }
            None => prior,
        })
        .collect();
    (dirs, best.0)
}

/// Encoding directions at one window: lobes matched against the priors.
/// When a projector finds no lobe, the whole set is refined from the prior
/// angles and kept if it explains the window without leaving tolerance.
fn window_directions(
    grad: &GradientField,
    x: usize,
    y: usize,
    priors: &[Vector2<f64>],
    params: &HistogramParams,
    tolerance_deg: f64,
) -> Vec<Vector2<f64>> {
    let est = estimate_directions(grad, x, y, params);
    let (dirs, matched) = assign_lobes_counted(&est.lobes, priors, tolerance_deg);
    let n = priors.len();
    if matched == n || !params.consistency || n > 3 {
        return dirs;
    }
    let r = params.window / 2;
    let win = [x.saturating_sub(r), y.saturating_sub(r), x + r + 1, y + r + 1];
    let start: Vec<f64> = dirs.iter().map(|&d| angle_of(d)).collect();
    let refined = refine_directions(grad, win, &start);
    let within = refined
        .iter()
        .zip(priors)
        .all(|(&a, &p)| axial_diff_deg(a, angle_of(p)) <= tolerance_deg);
    if !within || consistency_residual(grad, win, &refined) >= params.residual_max[n - 1] {
        return dirs;
    }
    refined
        .iter()
        .zip(priors)
        .map(|(&a, &p)| {
            let d = unit_at(a);
            if d.dot(&p) < 0.0 {
                -d
            } else {
                d
            }
        })
        .collect()
}

/// Locally estimated encoding directions for every pixel.
///
/// Windows are evaluated every `stride` pixels and the signed directions
/// interpolated bilinearly between them; a stride of one evaluates every
/// pixel.
pub fn estimate_direction_field(
    grad: &GradientField,
    prior: &DirectionField,
    params: &HistogramParams,
    tolerance_deg: f64,
    stride: usize,
) -> DirectionField {
    let (w, h) = (grad.width(), grad.height());
    let n = prior.count();
    let stride = stride.max(1);
    // Grid nodes cover the image including its last row and column.
    let nodes = |len: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..len).step_by(stride).collect();
        if *v.last().expect("non-empty image") != len - 1 {
            v.push(len - 1);
        }
        v
    };
    let (gx, gy) = (nodes(w), nodes(h));
    let grid: Vec<Vec<Vec<Vector2<f64>>>> = gy
        .par_iter()
        .map(|&y| {
            gx.iter()
                .map(|&x| {
                    let priors: Vec<Vector2<f64>> = (0..n).map(|i| prior.at(i, x, y)).collect();
                    window_directions(grad, x, y, &priors, params, tolerance_deg)
                })
                .collect()
        })
        .collect();
    // Index of the grid cell containing a coordinate, and the fraction along it.
    let locate = |nodes: &[usize], v: usize| -> (usize, f64) {
        let k = nodes.partition_point(|&p| p <= v).saturating_sub(1).min(nodes.len().saturating_sub(2));
        if nodes.len() < 2 {
            return (0, 0.0);
        }
        let (a, b) = (nodes[k], nodes[k + 1]);
        (k, (v as f64 - a as f64) / (b - a) as f64)
    };
    let mut dirs: Vec<Raster<[f32; 2]>> = (0..n).map(|_| Raster::filled(w, h, [0.0f32; 2])).collect();
    for (i, out) in dirs.iter_mut().enumerate() {
        out.data_mut().par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let (ky, fy) = locate(&gy, y);
            let ky1 = (ky + 1).min(gy.len() - 1);
            for (x, px) in row.iter_mut().enumerate() {
                let (kx, fx) = locate(&gx, x);
                let kx1 = (kx + 1).min(gx.len() - 1);
                let v = grid[ky][kx][i] * ((1.0 - fx) * (1.0 - fy))
                    + grid[ky][kx1][i] * (fx * (1.0 - fy))
                    + grid[ky1][kx][i] * ((1.0 - fx) * fy)
                    + grid[ky1][kx1][i] * (fx * fy);
                let d = v.try_normalize(1e-9).unwrap_or_else(|| prior.at(i, x, y));
                *px = [d.x as f32, d.y as f32];
            }
        });
    }
    DirectionField { dirs }
}

/// Derivative signal of one projector's pattern.
#[derive(Debug, Clone)]
pub struct SeparatedDerivative {
    pub projector: usize,
    /// Derivative order: number of superposed patterns minus one (1 for a
    /// lone pattern).
    pub order: u8,
    pub data: SignedImage,
    /// False where the directions were too close to separate or on the border.
    pub valid: Mask,
}

/// Unit perpendicular of `d`, oriented to have positive projection on `toward`.
fn perpendicular_toward(d: Vector2<f64>, toward: Vector2<f64>) -> Vector2<f64> {
    let p = Vector2::new(-d.y, d.x);
    if p.dot(&toward) < 0.0 {
        -p
    } else {
        p
    }
}

/// Separates the superposed patterns at every pixel using local directions.
///
/// One pattern: derivative along its own encoding direction. Two patterns:
/// pattern `i` is the derivative along the perpendicular of the other
/// pattern's direction. Three patterns: pattern `i` is the mixed second
/// derivative along the perpendiculars of the other two. Perpendiculars are
/// oriented toward the retained pattern's encoding direction, so boundary
/// signs match the first-order transition codes.
pub fn separate(
    grad: &GradientField,
    field: &DirectionField,
    min_separation_deg: f64,
) -> Result<Vec<SeparatedDerivative>, DemuxError> {
    let n = field.count();
    if !(1..=3).contains(&n) {
        return Err(DemuxError::PatternCount(n));
    }
    let (w, h) = (grad.width(), grad.height());
    let border = if n == 3 { 2 } else { 1 };
    let inner = border_mask(w, h, border);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut data = Raster::filled(w, h, [0.0f32; 3]);
        let mut valid = Raster::filled(w, h, false);
        data.data_mut()
            .par_chunks_mut(w)
            .zip(valid.data_mut().par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (drow, vrow))| {
                for x in 0..w {
                    let xi = field.at(i, x, y);
                    let others: Vec<Vector2<f64>> = (0..n).filter(|&j| j != i).map(|j| field.at(j, x, y)).collect();
                    let separable = (0..n).all(|a| {
                        (a + 1..n).all(|b| {
                            axial_diff_deg(angle_of(field.at(a, x, y)), angle_of(field.at(b, x, y)))
                                >= min_separation_deg
                        })
                    });
                    vrow[x] = separable && *inner.get(x, y);
                    let gx = grad.gx.get(x, y);
                    let gy = grad.gy.get(x, y);
                    drow[x] = match others.len() {
                        0 => std::array::from_fn(|c| gx[c] * xi.x as f32 + gy[c] * xi.y as f32),
                        1 => {
                            let yv = perpendicular_toward(others[0], xi);
                            std::array::from_fn(|c| gx[c] * yv.x as f32 + gy[c] * yv.y as f32)
                        }
                        _ => {
                            let a = perpendicular_toward(others[0], xi);
                            let b = perpendicular_toward(others[1], xi);
                            let (xx, xy, yy) = (grad.hxx.get(x, y), grad.hxy.get(x, y), grad.hyy.get(x, y));
                            let cxx = (a.x * b.x) as f32;
                            let cxy = (a.x * b.y + a.y * b.x) as f32;
                            let cyy = (a.y * b.y) as f32;
                            std::array::from_fn(|c| cxx * xx[c] + cxy * xy[c] + cyy * yy[c])
                        }
                    };
                }
            });
        out.push(SeparatedDerivative {
            projector: i,
            order: n.saturating_sub(1).max(1) as u8,
            data,
            valid,
        });
    }
    Ok(out)
}
