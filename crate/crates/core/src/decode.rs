//! Stripe identification from separated derivative signals: feature
//! detection and classification along the encoding direction, chaining of
//! consistent features, and window decoding by multi-window voting.
//!
//! First-order signals are decoded from stripe boundaries, classified into
//! the six transition codes. Second-order signals (three superposed
//! patterns) are decoded from stripe centers, where the second derivative is
//! proportional to `c[i-1] - 2 c[i] + c[i+1]` and so names the stripe color.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demux::SeparatedDerivative;
use crate::pattern::{build_code_table, CodeTable, ColorLabel, PatternError, SecondOrderCode, StripePattern, TransitionCode};
use crate::raster::{Mask, RadianceImage, Raster, ScalarImage, SignedImage};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("derivative order {0} is not supported (1 or 2)")]
    Order(u8),
    #[error("local averaging radius must be at least 1")]
    Radius,
    #[error("raster sizes differ: {0:?} vs {1:?}")]
    Size((usize, usize), (usize, usize)),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    /// Scan half-length along the encoding direction, pixels.
    pub half_length: usize,
    /// Absolute floor on feature strength, raw derivative units.
    pub min_strength: f64,
    /// Features weaker than this fraction of the scan's 90th-percentile
    /// peak are ignored.
    pub relative_strength: f64,
    /// Minimum normalized dot product with a canonical signature.
    pub min_dot: f64,
    /// Neighbouring feature spacings differing by more than this ratio
    /// break a chain.
    pub max_spacing_ratio: f64,
    /// Minimum plurality votes for a feature identity.
    pub vote_min: usize,
    /// Image border excluded from decoding, pixels.
    pub border: usize,
    /// Radius of the local color average used to normalize signatures;
    /// `None` classifies raw signatures.
    pub normalize_radius: Option<usize>,
    /// Floor of the local average, gray levels.
    pub normalize_floor: f64,
    /// Pixels checked on each side along the stripe by the continuity
    /// filter; 0 disables it.
    pub continuity_radius: usize,
    /// Fraction of decoded neighbours along the stripe that must agree.
    pub continuity_support: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            half_length: 40,
            min_strength: 2.0,
            relative_strength: 0.2,
            min_dot: 0.8,
            max_spacing_ratio: 1.5,
            vote_min: 2,
            border: 3,
            normalize_radius: Some(8),
            normalize_floor: 1.0,
            continuity_radius: 4,
            continuity_support: 0.6,
        }
    }
}

/// Box average of each channel over a `(2 radius + 1)` square, clipped at
/// the image border.
pub fn local_average(image: &RadianceImage, radius: usize) -> Result<RadianceImage, DecodeError> {
    if radius < 1 {
        return Err(DecodeError::Radius);
    }
    let (w, h) = image.dims();
    // Summed-area table with a zero first row and column.
    let mut sat = vec![[0.0f64; 3]; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = [0.0f64; 3];
        for x in 0..w {
            let p = image.get(x, y);
            for c in 0..3 {
                row[c] += p[c] as f64;
                sat[(y + 1) * (w + 1) + x + 1][c] = sat[y * (w + 1) + x + 1][c] + row[c];
            }
        }
    }
    Ok(Raster::from_fn(w, h, |x, y| {
        let x0 = x.saturating_sub(radius);
        let y0 = y.saturating_sub(radius);
        let x1 = (x + radius + 1).min(w);
        let y1 = (y + radius + 1).min(h);
        let n = ((x1 - x0) * (y1 - y0)) as f64;
        std::array::from_fn(|c| {
            let s = sat[y1 * (w + 1) + x1][c] - sat[y0 * (w + 1) + x1][c] - sat[y1 * (w + 1) + x0][c]
                + sat[y0 * (w + 1) + x0][c];
            (s / n) as f32
        })
    }))
}

/// Each channel divided by its local average, floor-clamped at `floor`.
pub fn normalize_local_color(image: &RadianceImage, radius: usize, floor: f64) -> Result<RadianceImage, DecodeError> {
    let avg = local_average(image, radius)?;
    let f = floor as f32;
    Ok(Raster::from_vec(
        image.width(),
        image.height(),
        image
            .data()
            .iter()
            .zip(avg.data())
            .map(|(p, a)| std::array::from_fn(|c| p[c] / a[c].max(f)))
            .collect(),
    ))
}

/// Per-channel signature weights `1 / max(average, floor)`.
fn normalization_weights(avg: &RadianceImage, floor: f64) -> RadianceImage {
    let f = floor as f32;
    avg.map(|a| std::array::from_fn(|c| 1.0 / a[c].max(f)))
}

/// Identity of a detected feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureCode {
    /// A stripe boundary (first-order signal).
    Transition(TransitionCode),
    /// A stripe center (second-order signal).
    Stripe(SecondOrderCode),
}

impl FeatureCode {
    pub fn order(self) -> u8 {
        match self {
            FeatureCode::Transition(_) => 1,
            FeatureCode::Stripe(_) => 2,
        }
    }
}

/// A derivative peak along a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySample {
    /// Sub-pixel position along the scan, pixels from the scan origin.
    pub position: f64,
    /// `None` when no canonical signature is close enough; such samples
    /// still break chains.
    pub code: Option<FeatureCode>,
    /// Derivative magnitude at the peak.
    pub strength: f32,
    pub order: u8,
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn second_order_codes() -> Vec<SecondOrderCode> {
    let mut out = Vec::new();
    for a in ColorLabel::ALL {
        for b in ColorLabel::ALL {
            for c in ColorLabel::ALL {
                if let Some(code) = SecondOrderCode::from_colors(a, b, c) {
                    if !out.contains(&code) {
                        out.push(code);
                    }
                }
            }
        }
    }
    out
}

/// Nearest canonical code of a derivative vector by normalized dot product,
/// if that dot product reaches `min_dot`.
pub fn classify_signature(v: [f64; 3], order: u8, min_dot: f64) -> Option<FeatureCode> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n <= 0.0 || !n.is_finite() {
        return None;
    }
    let v = [v[0] / n, v[1] / n, v[2] / n];
    let dot = |s: [f64; 3]| {
        let s = unit(s);
        v[0] * s[0] + v[1] * s[1] + v[2] * s[2]
    };
    let best = match order {
        1 => TransitionCode::ALL
            .iter()
            .map(|&t| {
                let s = t.signature();
                (dot([s[0] as f64, s[1] as f64, s[2] as f64]), FeatureCode::Transition(t))
            })
            .max_by(|a, b| a.0.total_cmp(&b.0)),
        2 => second_order_codes()
            .into_iter()
            .map(|c| {
                let s = c.signature();
                (dot([s[0] as f64, s[1] as f64, s[2] as f64]), FeatureCode::Stripe(c))
            })
            .max_by(|a, b| a.0.total_cmp(&b.0)),
        _ => None,
    }?;
    (best.0 >= min_dot).then_some(best.1)
}

/// Derivative samples along a straight scan through a pixel, with the
/// signature weights at each sample.
#[derive(Debug, Clone, Default)]
pub struct Profile {
    /// Scan position of the first sample, pixels.
    pub start: i64,
    pub values: Vec<[f32; 3]>,
    pub weights: Vec<[f32; 3]>,
}

/// Samples `data` at unit steps along `dir` through `(x, y)`, up to
/// `half_length` each way, stopping at the first sample outside `valid`.
pub fn scan_profile(
    data: &SignedImage,
    valid: &Mask,
    weights: Option<&RadianceImage>,
    x: f64,
    y: f64,
    dir: [f64; 2],
    half_length: usize,
) -> Profile {
    let at = |t: i64| -> Option<([f32; 3], [f32; 3])> {
        let (px, py) = (x + dir[0] * t as f64, y + dir[1] * t as f64);
        if !valid.at_nearest(px, py) {
            return None;
        }
        let v = data.sample(px, py)?;
        let w = match weights {
            Some(wi) => wi.sample(px, py)?,
            None => [1.0; 3],
        };
        Some((v, w))
    };
    let h = half_length as i64;
    let mut lo = 0;
    while lo > -h && at(lo - 1).is_some() {
        lo -= 1;
    }
    let mut hi = -1;
    while hi < h && at(hi + 1).is_some() {
        hi += 1;
    }
    let mut p = Profile {
        start: lo,
        ..Profile::default()
    };
    for t in lo..=hi {
        let (v, w) = at(t).expect("checked");
        p.values.push(v);
        p.weights.push(w);
    }
    p
}

/// Peaks of the derivative magnitude along a profile, classified.
///
/// Peaks are local maxima of the Euclidean magnitude of the weighted
/// derivative, so that with color normalization a transition between two
/// channels the albedo suppresses is not drowned by the others. A peak must
/// clear the relative threshold in weighted units and the absolute floor in
/// raw derivative units. Its position is refined by a parabola and its code
/// is the nearest canonical signature of the weighted derivative there.
pub fn classify_boundaries(profile: &Profile, order: u8, params: &DecodeParams) -> Vec<BoundarySample> {
    let v = &profile.values;
    let n = v.len();
    if n < 3 {
        return Vec::new();
    }
    let norm = |p: [f32; 3]| ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) as f64).sqrt();
    let weighted: Vec<[f32; 3]> = v
        .iter()
        .zip(&profile.weights)
        .map(|(p, w)| [p[0] * w[0], p[1] * w[1], p[2] * w[2]])
        .collect();
    let mag: Vec<f64> = weighted.iter().map(|&p| norm(p)).collect();
    let peaks: Vec<usize> = (1..n - 1)
        .filter(|&i| mag[i] >= mag[i - 1] && mag[i] > mag[i + 1])
        .collect();
    if peaks.is_empty() {
        return Vec::new();
    }
    let mut strengths: Vec<f64> = peaks.iter().map(|&i| mag[i]).collect();
    strengths.sort_by(|a, b| a.total_cmp(b));
    let q90 = strengths[((strengths.len() - 1) as f64 * 0.9).round() as usize];
    peaks
        .into_iter()
        .filter(|&i| mag[i] > params.relative_strength * q90 && norm(v[i]) > params.min_strength)
        .map(|i| {
            let (a, b, c) = (mag[i - 1], mag[i], mag[i + 1]);
            let denom = a - 2.0 * b + c;
            let off = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            // Signature at the sub-pixel peak, linearly interpolated.
            let j = if off >= 0.0 { i + 1 } else { i - 1 };
            let f = off.abs() as f32;
            let sig: [f64; 3] = std::array::from_fn(|k| (weighted[i][k] * (1.0 - f) + weighted[j][k] * f) as f64);
            BoundarySample {
                position: (profile.start + i as i64) as f64 + off,
                code: classify_signature(sig, order, params.min_dot),
                strength: norm(v[i]) as f32,
                order,
            }
        })
        .collect()
}

/// Stripe color of a feature as seen from its right: the entered color of a
/// boundary, or the color of a stripe center.
fn right_color(code: FeatureCode) -> ColorLabel {
    match code {
        FeatureCode::Transition(t) => t.entered(),
        FeatureCode::Stripe(s) => s.middle(),
    }
}

/// Whether two consecutive classified features can follow each other.
fn consistent(a: FeatureCode, b: FeatureCode) -> bool {
    match (a, b) {
        (FeatureCode::Transition(p), FeatureCode::Transition(q)) => p.entered() == q.exited(),
        (FeatureCode::Stripe(p), FeatureCode::Stripe(q)) => p.middle() != q.middle(),
        _ => false,
    }
}

/// Maximal runs of consecutive, classified, mutually consistent features
/// with regular spacing, as index ranges into `samples`.
///
/// A run breaks at an unclassified sample, at a pair whose colors cannot be
/// adjacent (a boundary entering a color the next one does not exit, or two
/// equal stripe colors), and where one spacing exceeds a neighbouring one by
/// more than `max_spacing_ratio` (a missed feature).
pub fn segment_stripes(samples: &[BoundarySample], params: &DecodeParams) -> Vec<std::ops::Range<usize>> {
    let n = samples.len();
    let gap = |i: usize| samples[i + 1].position - samples[i].position;
    // link[i]: samples i and i+1 belong to one run.
    let link: Vec<bool> = (0..n.saturating_sub(1))
        .map(|i| {
            let (Some(a), Some(b)) = (samples[i].code, samples[i + 1].code) else {
                return false;
            };
            if !consistent(a, b) {
                return false;
            }
            let g = gap(i);
            let r = params.max_spacing_ratio;
            let irregular = |j: usize| {
                let h = gap(j);
                g > r * h || h > r * g
            };
            !((i > 0 && irregular(i - 1)) || (i + 2 < n && irregular(i + 1)))
        })
        .collect();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < n {
        if samples[i].code.is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < n && link[i] {
            i += 1;
        }
        runs.push(start..i + 1);
        i += 1;
    }
    runs
}

/// Plurality vote on a feature's identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureVote {
    /// Stripe coordinate of a boundary, or index of a stripe center.
    pub id: usize,
    pub votes: u8,
    pub cast: u8,
}

/// Decoding tables for one pattern.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub pattern: StripePattern,
    pub transitions: CodeTable,
}

impl Decoder {
    pub fn new(pattern: StripePattern) -> Result<Self, DecodeError> {
        let transitions = build_code_table(&pattern, 1)?;
        Ok(Self { pattern, transitions })
    }

    /// Features per decoding window: `k - 1` boundaries or `k` centers.
    pub fn window_features(&self, order: u8) -> usize {
        match order {
            1 => self.pattern.window_length() - 1,
            _ => self.pattern.window_length(),
        }
    }

    /// Pattern index of the first stripe of the window spanned by the
    /// consecutive features.
    fn lookup(&self, codes: &[FeatureCode]) -> Option<usize> {
        match codes.first()? {
            FeatureCode::Transition(_) => {
                let t: Vec<TransitionCode> = codes
                    .iter()
                    .map(|c| match c {
                        FeatureCode::Transition(t) => Some(*t),
                        FeatureCode::Stripe(_) => None,
                    })
                    .collect::<Option<_>>()?;
                self.transitions.lookup_transitions(&t)
            }
            FeatureCode::Stripe(_) => {
                let colors: Vec<ColorLabel> = codes.iter().map(|&c| right_color(c)).collect();
                self.pattern.window_lookup(&colors).ok().flatten()
            }
        }
    }

    /// Window votes for every feature of every run. Each length-window run
    /// of features matching the pattern votes the implied identity onto each
    /// of its features; a feature's identity is the unique plurality with at
    /// least `vote_min` votes.
    pub fn decode_windows(
        &self,
        samples: &[BoundarySample],
        runs: &[std::ops::Range<usize>],
        params: &DecodeParams,
    ) -> Vec<Option<FeatureVote>> {
        let mut out = vec![None; samples.len()];
        let Some(order) = samples.first().map(|s| s.order) else {
            return out;
        };
        let l = self.window_features(order);
        // Boundary j of a window starting at stripe s sits at coordinate
        // s + j + 1; center j is stripe s + j.
        let shift = usize::from(order == 1);
        for run in runs {
            let codes: Vec<FeatureCode> = samples[run.clone()].iter().map(|s| s.code.expect("runs are classified")).collect();
            if codes.len() < l {
                continue;
            }
            let mut ballots: Vec<Vec<usize>> = vec![Vec::new(); codes.len()];
            for w0 in 0..=codes.len() - l {
                if let Some(s) = self.lookup(&codes[w0..w0 + l]) {
                    for j in 0..l {
                        ballots[w0 + j].push(s + j + shift);
                    }
                }
            }
            for (j, b) in ballots.into_iter().enumerate() {
                out[run.start + j] = plurality(&b, params.vote_min);
            }
        }
        out
    }
}

fn plurality(ballots: &[usize], vote_min: usize) -> Option<FeatureVote> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &b in ballots {
        match counts.iter_mut().find(|(id, _)| *id == b) {
            Some(e) => e.1 += 1,
            None => counts.push((b, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let &(id, votes) = counts.first()?;
    if votes < vote_min || counts.get(1).is_some_and(|c| c.1 == votes) {
        return None;
    }
    Some(FeatureVote {
        id,
        votes: votes as u8,
        cast: ballots.len() as u8,
    })
}

/// Decoded identity of one pixel for one projector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedPixel {
    /// Index of the stripe containing the pixel.
    pub index: u16,
    /// Continuous stripe coordinate: `index` plus the fraction across it.
    pub coordinate: f32,
    pub votes: u8,
    pub cast: u8,
    pub color: ColorLabel,
}

/// Per-pixel stripe identities of one projector.
#[derive(Debug, Clone)]
pub struct DecodedMap {
    pub projector: usize,
    pub order: u8,
    pub pixels: Raster<Option<DecodedPixel>>,
}

/// Per-pixel stripe color labels.
pub type StripeSegmentation = Raster<Option<ColorLabel>>;

impl DecodedMap {
    pub fn decoded(&self) -> Mask {
        self.pixels.map(|p| p.is_some())
    }

    /// Continuous stripe coordinates; NaN where undecoded.
    pub fn coordinates(&self) -> ScalarImage {
        self.pixels.map(|p| p.map_or(f32::NAN, |d| d.coordinate))
    }

    pub fn segmentation(&self) -> StripeSegmentation {
        self.pixels.map(|p| p.map(|d| d.color))
    }

    pub fn count(&self) -> usize {
        self.pixels.data().iter().filter(|p| p.is_some()).count()
    }
}

/// Decodes the pixel at scan position zero from classified samples.
///
/// The pixel must lie between two consecutive features of one run, the
/// left one decoded. Its coordinate interpolates linearly between the two.
pub fn decode_scan(decoder: &Decoder, samples: &[BoundarySample], params: &DecodeParams) -> Option<DecodedPixel> {
    let a = samples.iter().rposition(|s| s.position <= 0.0)?;
    if a + 1 >= samples.len() {
        return None;
    }
    let runs = segment_stripes(samples, params);
    let run = runs.iter().find(|r| r.contains(&a))?;
    if !run.contains(&(a + 1)) {
        return None;
    }
    let votes = decoder.decode_windows(&samples[run.clone()], std::slice::from_ref(&(0..run.len())), params);
    let va = votes[a - run.start]?;
    if let Some(vb) = votes[a + 1 - run.start] {
        if vb.id != va.id + 1 {
            return None;
        }
    }
    let (ta, tb) = (samples[a].position, samples[a + 1].position);
    let frac = (-ta) / (tb - ta);
    let base = va.id as f64 + if samples[a].order == 2 { 0.5 } else { 0.0 };
    let coordinate = base + frac;
    if coordinate < 0.0 || coordinate >= decoder.pattern.len() as f64 {
        return None;
    }
    let index = coordinate.floor() as usize;
    Some(DecodedPixel {
        index: index as u16,
        coordinate: coordinate as f32,
        votes: va.votes,
        cast: va.cast,
        color: decoder.pattern.stripes()[index],
    })
}

/// Decodes every pixel of a separated derivative by scanning along its
/// local encoding direction.
///
/// `image` is the captured image, used for local color normalization when
/// `params.normalize_radius` is set.
pub fn decode_image(
    separated: &SeparatedDerivative,
    directions: &Raster<[f32; 2]>,
    image: Option<&RadianceImage>,
    decoder: &Decoder,
    params: &DecodeParams,
) -> Result<DecodedMap, DecodeError> {
    let order = separated.order;
    if !(1..=2).contains(&order) {
        return Err(DecodeError::Order(order));
    }
    let (w, h) = separated.data.dims();
    if directions.dims() != (w, h) {
        return Err(DecodeError::Size((w, h), directions.dims()));
    }
    let weights = match (params.normalize_radius, image) {
        (Some(r), Some(img)) => {
            if img.dims() != (w, h) {
                return Err(DecodeError::Size((w, h), img.dims()));
            }
            Some(normalization_weights(&local_average(img, r)?, params.normalize_floor))
        }
        _ => None,
    };
    let b = params.border;
    let rows: Vec<Vec<Option<DecodedPixel>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    if x < b || y < b || x + b >= w || y + b >= h || !separated.valid.get(x, y) {
                        return None;
                    }
                    let d = directions.get(x, y);
                    let profile = scan_profile(
                        &separated.data,
                        &separated.valid,
                        weights.as_ref(),
                        x as f64,
                        y as f64,
                        [d[0] as f64, d[1] as f64],
                        params.half_length,
                    );
                    let samples = classify_boundaries(&profile, order, params);
                    decode_scan(decoder, &samples, params)
                })
                .collect()
        })
        .collect();
    let map = DecodedMap {
        projector: separated.projector,
        order,
        pixels: Raster::from_vec(w, h, rows.into_iter().flatten().collect()),
    };
    Ok(continuity_filter(&map, directions, params.continuity_radius, params.continuity_support))
}

/// Drops decoded pixels that disagree with their neighbours along the
/// stripe.
///
/// The stripe coordinate is nearly constant along a stripe, so pixels up to
/// `radius` away along the local stripe tangent should carry a coordinate
/// within half a stripe. A pixel is kept when at least one such neighbour
/// agrees and the agreeing share of decoded neighbours reaches `support`.
pub fn continuity_filter(map: &DecodedMap, directions: &Raster<[f32; 2]>, radius: usize, support: f64) -> DecodedMap {
    if radius == 0 {
        return map.clone();
    }
    let (w, h) = map.pixels.dims();
    let r = radius as i64;
    let rows: Vec<Vec<Option<DecodedPixel>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let p = (*map.pixels.get(x, y))?;
                    let d = directions.get(x, y);
                    let t = [-d[1] as f64, d[0] as f64];
                    let (mut agree, mut decoded) = (0usize, 0usize);
                    for k in (-r..=r).filter(|&k| k != 0) {
                        let qx = (x as f64 + k as f64 * t[0]).round();
                        let qy = (y as f64 + k as f64 * t[1]).round();
                        if qx < 0.0 || qy < 0.0 || qx >= w as f64 || qy >= h as f64 {
                            continue;
                        }
                        if let Some(q) = map.pixels.get(qx as usize, qy as usize) {
                            decoded += 1;
                            agree += usize::from((q.coordinate - p.coordinate).abs() < 0.5);
                        }
                    }
                    (agree >= 1 && agree as f64 >= support * decoded as f64).then_some(p)
                })
                .collect()
        })
        .collect();
    DecodedMap {
        projector: map.projector,
        order: map.order,
        pixels: Raster::from_vec(w, h, rows.into_iter().flatten().collect()),
    }
}

/// Decoding quality against simulator ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    /// Correct over decoded pixels.
    pub accuracy: f64,
    /// Decoded over lit pixels.
    pub coverage: f64,
    pub decoded: usize,
    pub correct: usize,
    pub lit: usize,
}

/// Compares decoded coordinates with true stripe coordinates (NaN where
/// unlit). A decoded pixel is correct when its coordinate is within half a
/// stripe of the truth. Pixels in `exclude` and within `border` of the
/// image edge are ignored.
pub fn decode_accuracy(decoded: &DecodedMap, truth: &ScalarImage, exclude: Option<&Mask>, border: usize) -> DecodeStats {
    coordinate_accuracy(&decoded.coordinates(), truth, exclude, border)
}

/// [`decode_accuracy`] on a raster of decoded coordinates, NaN where
/// undecoded.
pub fn coordinate_accuracy(coords: &ScalarImage, truth: &ScalarImage, exclude: Option<&Mask>, border: usize) -> DecodeStats {
    let (w, h) = truth.dims();
    let (mut n_dec, mut n_ok, mut n_lit) = (0, 0, 0);
    for y in border..h.saturating_sub(border) {
        for x in border..w.saturating_sub(border) {
            if exclude.is_some_and(|m| *m.get(x, y)) {
                continue;
            }
            let t = *truth.get(x, y);
            if !t.is_finite() {
                continue;
            }
            n_lit += 1;
            let c = *coords.get(x, y);
            if c.is_finite() {
                n_dec += 1;
                if (c - t).abs() < 0.5 {
                    n_ok += 1;
                }
            }
        }
    }
    DecodeStats {
        accuracy: if n_dec > 0 { n_ok as f64 / n_dec as f64 } else { 0.0 },
        coverage: if n_lit > 0 { n_dec as f64 / n_lit as f64 } else { 0.0 },
        decoded: n_dec,
        correct: n_ok,
        lit: n_lit,
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector2;
    use proptest::prelude::*;

    use super::*;
    use crate::demux::{compute_gradients, separate, DirectionField};
    use crate::pattern::generate_pattern;
    use crate::synth::{superposed_stripes, SynthPattern};

    fn decoder() -> Decoder {
        Decoder::new(generate_pattern(7, 3).unwrap()).unwrap()
    }

    fn transition(a: char, b: char) -> TransitionCode {
        TransitionCode::between(ColorLabel::from_char(a).unwrap(), ColorLabel::from_char(b).unwrap()).unwrap()
    }

    fn boundary(position: f64, code: TransitionCode) -> BoundarySample {
        BoundarySample {
            position,
            code: Some(FeatureCode::Transition(code)),
            strength: 1.0,
            order: 1,
        }
    }

    /// Boundaries between stripes `s..s + len` of the pattern, 4 px apart.
    fn clean_boundaries(p: &StripePattern, s: usize, len: usize) -> Vec<BoundarySample> {
        p.stripes()[s..s + len]
            .windows(2)
            .enumerate()
            .map(|(j, w)| boundary(4.0 * j as f64, TransitionCode::between(w[0], w[1]).unwrap()))
            .collect()
    }

    fn votes(d: &Decoder, samples: &[BoundarySample], vote_min: usize) -> Vec<Option<usize>> {
        let params = DecodeParams {
            vote_min,
            ..DecodeParams::default()
        };
        let runs = segment_stripes(samples, &params);
        d.decode_windows(samples, &runs, &params).iter().map(|v| v.map(|v| v.id)).collect()
    }

    #[test]
    fn red_to_green_signature_classifies_with_unit_dot() {
        let v = [-1.0, 1.0, 0.0];
        assert_eq!(classify_signature(v, 1, 0.999), Some(FeatureCode::Transition(transition('R', 'G'))));
        // Scanning the other way negates the derivative and reverses the code.
        let r = [1.0, -1.0, 0.0];
        assert_eq!(classify_signature(r, 1, 0.999), Some(FeatureCode::Transition(transition('G', 'R'))));
        assert_eq!(classify_signature([1.0, 1.0, 1.0], 1, 0.8), None);
        assert_eq!(classify_signature([0.0; 3], 1, 0.0), None);
    }

    #[test]
    fn second_order_signature_names_the_middle_color() {
        // R, G, B: c0 - 2 c1 + c2 = (1, -2, 1).
        let c = classify_signature([1.0, -2.0, 1.0], 2, 0.999).unwrap();
        let FeatureCode::Stripe(s) = c else { panic!("expected a stripe code") };
        assert_eq!(s.middle(), ColorLabel::from_char('G').unwrap());
    }

    #[test]
    fn consecutive_boundaries_must_share_their_stripe() {
        let p = DecodeParams::default();
        let run = |a: TransitionCode, b: TransitionCode| segment_stripes(&[boundary(0.0, a), boundary(4.0, b)], &p);
        // +RG then +GB enclose a green stripe.
        assert_eq!(run(transition('R', 'G'), transition('G', 'B')), vec![0..2]);
        assert_eq!(right_color(FeatureCode::Transition(transition('R', 'G'))), ColorLabel::from_char('G').unwrap());
        // +RG then its reverse enclose a green stripe too.
        assert_eq!(run(transition('R', 'G'), transition('G', 'R')), vec![0..2]);
        // +RG twice cannot follow each other.
        assert_eq!(run(transition('R', 'G'), transition('R', 'G')), vec![0..1, 1..2]);
    }

    #[test]
    fn irregular_spacing_and_unclassified_samples_break_runs() {
        let p = DecodeParams::default();
        let mut s = vec![
            boundary(0.0, transition('R', 'G')),
            boundary(4.0, transition('G', 'B')),
            boundary(8.0, transition('B', 'R')),
            boundary(20.0, transition('R', 'G')),
        ];
        assert_eq!(segment_stripes(&s, &p), vec![0..2, 2..3, 3..4]);
        s[3].position = 12.0;
        s[1].code = None;
        assert_eq!(segment_stripes(&s, &p), vec![0..1, 2..4]);
    }

    #[test]
    fn clean_seven_stripe_run_decodes() {
        let d = decoder();
        for s in [0, 17, 100, d.pattern.len() - 7] {
            let samples = clean_boundaries(&d.pattern, s, 7);
            let ids = votes(&d, &samples, 1);
            let want: Vec<Option<usize>> = (0..6).map(|j| Some(s + j + 1)).collect();
            assert_eq!(ids, want, "start {s}");
            // One window gives one vote, below the default minimum.
            assert!(votes(&d, &samples, 2).iter().all(|v| v.is_none()));
        }
    }

    #[test]
    fn corrupted_stripe_leaves_other_windows_decodable() {
        let d = decoder();
        let s = 40;
        let mut samples = clean_boundaries(&d.pattern, s, 13);
        // Replace boundary 2 by a code entering a different color.
        let FeatureCode::Transition(t) = samples[2].code.unwrap() else { unreachable!() };
        let other = ColorLabel::ALL.into_iter().find(|&c| c != t.exited() && c != t.entered()).unwrap();
        samples[2].code = Some(FeatureCode::Transition(TransitionCode::between(t.exited(), other).unwrap()));
        let ids = votes(&d, &samples, 2);
        for (j, id) in ids.iter().enumerate() {
            if let Some(id) = id {
                assert_eq!(*id, s + j + 1, "boundary {j}");
            }
        }
        assert!(ids[4..11].iter().all(|v| v.is_some()), "{ids:?}");
    }

    #[test]
    fn shuffled_table_does_not_decode_the_pattern() {
        let d = decoder();
        // Same stripes, rotated: every window is valid but indexed elsewhere.
        // The circuit closes on itself: the last k - 1 stripes repeat the first.
        let mut stripes = d.pattern.stripes()[..d.pattern.len() - 6].to_vec();
        stripes.rotate_left(50);
        stripes.extend_from_within(..6);
        let shuffled = Decoder::new(StripePattern::new(stripes, 7, 4).unwrap()).unwrap();
        let mut right = 0;
        let mut total = 0;
        for s in (0..d.pattern.len() - 13).step_by(5) {
            let samples = clean_boundaries(&d.pattern, s, 13);
            for (j, id) in votes(&shuffled, &samples, 2).into_iter().enumerate() {
                total += 1;
                right += usize::from(id == Some(s + j + 1));
            }
        }
        assert!(total > 100);
        assert!((right as f64) < 0.05 * total as f64, "{right} / {total}");
    }

    #[test]
    fn decode_scan_interpolates_between_boundaries() {
        let d = decoder();
        let s = 60;
        let mut samples = clean_boundaries(&d.pattern, s, 13);
        for b in &mut samples {
            b.position -= 17.0;
        }
        // Position 0 lies one quarter of the way from boundary 4 to 5.
        let px = decode_scan(&d, &samples, &DecodeParams::default()).unwrap();
        assert!((px.coordinate as f64 - (s as f64 + 5.25)).abs() < 1e-6);
        assert_eq!(px.index as usize, s + 5);
        assert_eq!(px.color, d.pattern.stripes()[s + 5]);
    }

    #[test]
    fn accuracy_counts_decoded_lit_pixels_within_half_a_stripe() {
        let truth = Raster::from_vec(3, 2, vec![0.2, f32::NAN, 3.0, 5.0, 7.0, 9.0]);
        let coords = Raster::from_vec(3, 2, vec![0.6, 1.0, f32::NAN, 5.6, 7.1, 9.0]);
        let s = coordinate_accuracy(&coords, &truth, None, 0);
        assert_eq!((s.lit, s.decoded, s.correct), (5, 4, 3));
        assert_eq!(s.accuracy, 0.75);
        assert_eq!(s.coverage, 0.8);
        let skip = Raster::from_vec(3, 2, vec![false, false, false, true, false, false]);
        let s = coordinate_accuracy(&coords, &truth, Some(&skip), 0);
        assert_eq!((s.lit, s.decoded, s.correct), (4, 3, 3));
    }

    #[test]
    fn local_average_of_constant_image_is_constant() {
        let img = Raster::filled(9, 7, [2.0f32, 4.0, 8.0]);
        let avg = local_average(&img, 3).unwrap();
        assert!(avg.data().iter().all(|a| (a[0] - 2.0).abs() < 1e-5 && (a[2] - 8.0).abs() < 1e-5));
        let n = normalize_local_color(&img, 2, 1.0).unwrap();
        assert!(n.data().iter().all(|p| p.iter().all(|&v| (v - 1.0).abs() < 1e-5)));
        assert!(matches!(local_average(&img, 0), Err(DecodeError::Radius)));
    }

    fn decode_synthetic(angles: &[f64]) -> Vec<DecodeStats> {
        let (w, h) = (96, 96);
        let pats: Vec<SynthPattern> = angles
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut p = SynthPattern::new(a, 4.0);
                p.offset += 0.37 * i as f64;
                p
            })
            .collect();
        let img = superposed_stripes(w, h, &pats, 0.8);
        let g = compute_gradients(&img, 0.0).unwrap();
        let dirs: Vec<Vector2<f64>> = pats.iter().map(|p| p.direction()).collect();
        let field = DirectionField::constant(w, h, &dirs);
        let params = DecodeParams {
            min_strength: 0.5,
            ..DecodeParams::default()
        };
        let d = decoder();
        separate(&g, &field, 20.0)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let m = decode_image(s, &field.dirs[i], Some(&img), &d, &params).unwrap();
                let truth = Raster::from_fn(w, h, |x, y| pats[i].coordinate(x as f64, y as f64, w, h) as f32);
                decode_accuracy(&m, &truth, None, 8)
            })
            .collect()
    }

    #[test]
    fn superposed_patterns_decode_from_boundaries_and_centers() {
        for angles in [&[10.0, 80.0][..], &[0.0, 60.0, 120.0]] {
            for st in decode_synthetic(angles) {
                assert!(st.accuracy > 0.99, "{angles:?}: {st:?}");
                assert!(st.coverage > 0.9, "{angles:?}: {st:?}");
            }
        }
    }

    /// Boundary ids decoded by each single window starting at the feature.
    fn single_window(d: &Decoder, samples: &[BoundarySample]) -> Vec<Option<usize>> {
        let l = d.window_features(1);
        (0..samples.len())
            .map(|j| {
                let w = samples.get(j..j + l)?;
                let codes: Option<Vec<FeatureCode>> = w.iter().map(|s| s.code).collect();
                d.lookup(&codes?).map(|s| s + 1)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn decoded_neighbours_are_adjacent(s in 0usize..170, len in 7usize..28) {
            let d = decoder();
            let len = len.min(d.pattern.len() - s);
            prop_assume!(len >= 7);
            let ids = votes(&d, &clean_boundaries(&d.pattern, s, len), 1);
            for (j, w) in ids.windows(2).enumerate() {
                prop_assert_eq!(w[0].map(|i| i + 1), w[1], "boundary {}", j);
            }
        }

        #[test]
        fn voting_makes_fewer_errors_than_single_windows(seed in any::<u64>(), rate in 0.02f64..0.15) {
            use rand::{Rng, SeedableRng};
            let d = decoder();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (mut wrong_vote, mut wrong_single) = (0usize, 0usize);
            for _ in 0..40 {
                let s = rng.random_range(0..d.pattern.len() - 20);
                let mut samples = clean_boundaries(&d.pattern, s, 20);
                for b in &mut samples {
                    if rng.random_bool(rate) {
                        let t = TransitionCode::ALL[rng.random_range(0..6)];
                        b.code = Some(FeatureCode::Transition(t));
                    }
                }
                let truth = |j: usize| s + j + 1;
                wrong_vote += votes(&d, &samples, 2).iter().enumerate().filter(|(j, v)| v.is_some_and(|v| v != truth(*j))).count();
                wrong_single += single_window(&d, &samples).iter().enumerate().filter(|(j, v)| v.is_some_and(|v| v != truth(*j))).count();
            }
            prop_assert!(wrong_vote <= wrong_single, "vote {} single {}", wrong_vote, wrong_single);
        }
    }
}
