//! Triangulation of decoded stripe coordinates into range images, and
//! merging of several range images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::DecodedMap;
use crate::optics::{triangulate, OpticsError, Rig};
use crate::raster::{Mask, Raster, ScalarImage};

#[derive(Debug, thiserror::Error)]
pub enum RangeError {
    #[error("no range images to merge")]
    Empty,
    #[error("range images are on different grids: {0:?} vs {1:?}")]
    Grid((usize, usize), (usize, usize)),
    #[error("camera {0} is not in the rig")]
    Camera(usize),
    #[error("projector {0} is not in the rig")]
    Projector(usize),
    #[error("range image sizes do not match camera {camera}: {got:?}")]
    CameraSize { camera: usize, got: (usize, usize) },
    #[error("no jointly valid pixels")]
    NoOverlap,
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

/// Origin of a range image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `None` for merged or ground-truth ranges.
    pub projector: Option<usize>,
    pub camera: usize,
}

/// Camera-frame depth per pixel.
#[derive(Debug, Clone)]
pub struct RangeImage {
    /// Depth where valid, NaN elsewhere.
    pub depth: ScalarImage,
    pub valid: Mask,
    pub provenance: Provenance,
}

impl RangeImage {
    /// Range from a depth raster; non-finite and non-positive values are invalid.
    pub fn from_depth(depth: ScalarImage, provenance: Provenance) -> Self {
        let valid = depth.map(|d| d.is_finite() && *d > 0.0);
        let depth = Raster::from_vec(
            depth.width(),
            depth.height(),
            depth
                .data()
                .iter()
                .zip(valid.data())
                .map(|(&d, &v)| if v { d } else { f32::NAN })
                .collect(),
        );
        Self {
            depth,
            valid,
            provenance,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        self.valid.get(x, y).then(|| *self.depth.get(x, y))
    }

    /// Valid pixels over all pixels.
    pub fn coverage(&self) -> f64 {
        self.valid.count() as f64 / self.valid.len().max(1) as f64
    }
}

/// Triangulates every decoded pixel of one projector seen by one camera.
///
/// The pixel's ray meets the plane of its continuous stripe coordinate.
/// Triangulations below `min_angle_deg` leave holes.
pub fn reconstruct(decoded: &DecodedMap, rig: &Rig, camera: usize, min_angle_deg: f64) -> Result<RangeImage, RangeError> {
    let cam = rig.cameras.get(camera).ok_or(RangeError::Camera(camera))?;
    let proj = rig
        .projectors
        .get(decoded.projector)
        .ok_or(RangeError::Projector(decoded.projector))?;
    let (w, h) = decoded.pixels.dims();
    if (w, h) != (cam.width(), cam.height()) {
        return Err(RangeError::CameraSize { camera, got: (w, h) });
    }
    let depth: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let Some(d) = decoded.pixels.get(x, y) else {
                    return f32::NAN;
                };
                proj.stripe_plane(d.coordinate as f64)
                    .ok()
                    .and_then(|plane| triangulate(cam, x as f64, y as f64, &plane, min_angle_deg).ok())
                    .map_or(f32::NAN, |(_, z)| z as f32)
            })
        })
        .collect();
    Ok(RangeImage::from_depth(
        Raster::from_vec(w, h, depth),
        Provenance {
            projector: Some(decoded.projector),
            camera,
        },
    ))
}

/// Lower median: the element at `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &mut [f32]) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    Some(values[(values.len() - 1) / 2])
}

fn check_grid(ranges: &[&RangeImage]) -> Result<(usize, usize), RangeError> {
    let first = ranges.first().ok_or(RangeError::Empty)?.dims();
    for r in ranges {
        if r.dims() != first {
            return Err(RangeError::Grid(first, r.dims()));
        }
    }
    Ok(first)
}

fn merged(depth: Vec<f32>, w: usize, h: usize, camera: usize) -> RangeImage {
    RangeImage::from_depth(
        Raster::from_vec(w, h, depth),
        Provenance {
            projector: None,
            camera,
        },
    )
}

/// Per-pixel lower median of the valid values of co-registered ranges.
pub fn merge_median(ranges: &[&RangeImage]) -> Result<RangeImage, RangeError> {
    let (w, h) = check_grid(ranges)?;
    let depth: Vec<f32> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let mut v: Vec<f32> = ranges.iter().filter_map(|r| r.get(x, y)).collect();
            lower_median(&mut v).unwrap_or(f32::NAN)
        })
        .collect();
    Ok(merged(depth, w, h, ranges[0].provenance.camera))
}

/// Which neighbourhood set the windowed two-range merge takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetChoice {
    First,
    Second,
    Union,
}

/// Population variance, or `f64::MAX` for fewer than two values.
pub fn set_variance(values: &[f32]) -> f64 {
    if values.len() < 2 {
        return f64::MAX;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Selection between two neighbourhood sets: when the counts differ by more
/// than `count_gap`, the larger set; otherwise the smaller variance, with a
/// singleton's variance taken as the maximum value; equal variances take
/// the union. An empty set is never chosen.
pub fn select_set(a: &[f32], b: &[f32], count_gap: usize) -> Option<SetChoice> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return None,
        (false, true) => return Some(SetChoice::First),
        (true, false) => return Some(SetChoice::Second),
        _ => {}
    }
    if a.len().abs_diff(b.len()) > count_gap {
        return Some(if a.len() > b.len() { SetChoice::First } else { SetChoice::Second });
    }
    let (va, vb) = (set_variance(a), set_variance(b));
    Some(if va < vb {
        SetChoice::First
    } else if vb < va {
        SetChoice::Second
    } else {
        SetChoice::Union
    })
}

/// Valid values of the `(2 r + 1)` square around a pixel.
fn neighbourhood(r: &RangeImage, x: usize, y: usize, radius: usize) -> Vec<f32> {
    let (w, h) = r.dims();
    let mut out = Vec::with_capacity((2 * radius + 1).pow(2));
    for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
        for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
            if let Some(v) = r.get(xx, yy) {
                out.push(v);
            }
        }
    }
    out
}

/// Two-range merge over 3x3 neighbourhood sets: per pixel, the lower
/// median of the set chosen by [`select_set`]. Only pixels valid in at
/// least one input are written; holes of both stay holes.
pub fn merge_windowed_two(a: &RangeImage, b: &RangeImage, policy: &MergePolicy) -> Result<RangeImage, RangeError> {
    let (w, h) = check_grid(&[a, b])?;
    let radius = policy.window / 2;
    let depth: Vec<f32> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if !(*a.valid.get(x, y) || *b.valid.get(x, y)) {
                return f32::NAN;
            }
            let sa = neighbourhood(a, x, y, radius);
            let sb = neighbourhood(b, x, y, radius);
            let mut chosen = match select_set(&sa, &sb, policy.count_gap_threshold) {
                None => return f32::NAN,
                Some(SetChoice::First) => sa,
                Some(SetChoice::Second) => sb,
                Some(SetChoice::Union) => [sa, sb].concat(),
            };
            lower_median(&mut chosen).unwrap_or(f32::NAN)
        })
        .collect();
    Ok(merged(depth, w, h, a.provenance.camera))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    MedianOfN,
    WindowedTwoSet,
    /// Windowed two-set rule for exactly two ranges, median otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergePolicy {
    pub mode: MergeMode,
    /// Side of the neighbourhood square for the two-set rule.
    pub window: usize,
    pub count_gap_threshold: usize,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            mode: MergeMode::Auto,
            window: 3,
            count_gap_threshold: 3,
        }
    }
}

/// Merges co-registered ranges according to the policy. A single range
/// passes through unchanged.
pub fn merge(ranges: &[&RangeImage], policy: &MergePolicy) -> Result<RangeImage, RangeError> {
    match ranges {
        [] => Err(RangeError::Empty),
        [one] => Ok((*one).clone()),
        [a, b] if policy.mode != MergeMode::MedianOfN => merge_windowed_two(a, b, policy),
        _ if policy.mode == MergeMode::WindowedTwoSet => {
            // The two-set rule is defined for pairs; fold left.
            let mut acc = merge_windowed_two(ranges[0], ranges[1], policy)?;
            for r in &ranges[2..] {
                acc = merge_windowed_two(&acc, r, policy)?;
            }
            Ok(acc)
        }
        _ => merge_median(ranges),
    }
}

/// Removes small patches of depth-continuous pixels.
///
/// Valid pixels are grouped into 4-connected components whose neighbours
/// differ in depth by at most `max_step`; components with fewer than
/// `min_area` pixels are invalidated.
pub fn remove_speckles(range: &RangeImage, max_step: f32, min_area: usize) -> RangeImage {
    let (w, h) = range.dims();
    let mut label = vec![usize::MAX; w * h];
    let mut keep = vec![false; w * h];
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..w * h {
        if label[start] != usize::MAX || !range.valid.data()[start] {
            continue;
        }
        label[start] = start;
        stack.push(start);
        members.clear();
        while let Some(i) = stack.pop() {
            members.push(i);
            let (x, y) = (i % w, i / w);
            let z = range.depth.data()[i];
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbours.into_iter().flatten() {
                if label[j] == usize::MAX && range.valid.data()[j] && (range.depth.data()[j] - z).abs() <= max_step {
                    label[j] = start;
                    stack.push(j);
                }
            }
        }
        if members.len() >= min_area {
            for &i in &members {
                keep[i] = true;
            }
        }
    }
    let depth = range
        .depth
        .data()
        .iter()
        .zip(&keep)
        .map(|(&z, &k)| if k { z } else { f32::NAN })
        .collect();
    RangeImage::from_depth(Raster::from_vec(w, h, depth), range.provenance)
}

/// Invalidates pixels next to a depth discontinuity: any pixel with a
/// valid 8-neighbour more than `max_step` away in depth and, with
/// `at_holes`, any pixel with an invalid 8-neighbour. Pixels straddling an
/// occluding edge mix the stripes of both surfaces.
pub fn erode_discontinuities(range: &RangeImage, max_step: f32, at_holes: bool) -> RangeImage {
    let (w, h) = range.dims();
    let mut depth = range.depth.clone();
    for y in 0..h {
        for x in 0..w {
            let Some(z) = range.get(x, y) else { continue };
            let jump = (y.saturating_sub(1)..(y + 2).min(h))
                .flat_map(|v| (x.saturating_sub(1)..(x + 2).min(w)).map(move |u| (u, v)))
                .any(|(u, v)| range.get(u, v).map_or(at_holes, |q| (q - z).abs() > max_step));
            if jump {
                *depth.get_mut(x, y) = f32::NAN;
            }
        }
    }
    RangeImage::from_depth(depth, range.provenance)
}

/// Forward-warps a range into another camera of the rig, keeping the
/// nearest surface where several pixels land on one target pixel.
pub fn warp_to_camera(range: &RangeImage, rig: &Rig, target: usize) -> Result<RangeImage, RangeError> {
    let src_cam = range.provenance.camera;
    let src = rig.cameras.get(src_cam).ok_or(RangeError::Camera(src_cam))?;
    let dst = rig.cameras.get(target).ok_or(RangeError::Camera(target))?;
    let (w, h) = (dst.width(), dst.height());
    let mut zbuf = vec![f32::INFINITY; w * h];
    let (sw, sh) = range.dims();
    for y in 0..sh {
        for x in 0..sw {
            let Some(z) = range.get(x, y) else { continue };
            let p = src.point_at_depth(x as f64, y as f64, z as f64);
            let Some(uv) = dst.project(&p) else { continue };
            let (u, v) = (uv.x.round(), uv.y.round());
            if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                continue;
            }
            let i = v as usize * w + u as usize;
            let d = dst.depth_of(&p) as f32;
            if d > 0.0 && d < zbuf[i] {
                zbuf[i] = d;
            }
        }
    }
    Ok(RangeImage::from_depth(
        Raster::from_vec(w, h, zbuf.into_iter().map(|z| if z.is_finite() { z } else { f32::NAN }).collect()),
        Provenance {
            projector: range.provenance.projector,
            camera: target,
        },
    ))
}

/// Range errors against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rms: f64,
    pub mean_abs: f64,
    /// Jointly valid pixels over valid truth pixels.
    pub coverage: f64,
    /// Fraction of jointly valid pixels with error above 1% of the truth
    /// depth range.
    pub outlier_fraction: f64,
    pub overlap: usize,
    /// Truth depth range, max minus min.
    pub depth_range: f64,
}

/// Statistics over pixels valid in both `range` and `truth`, skipping
/// pixels in `exclude`.
pub fn error_metrics(range: &RangeImage, truth: &RangeImage, exclude: Option<&Mask>) -> Result<ErrorMetrics, RangeError> {
    check_grid(&[range, truth])?;
    let (w, h) = truth.dims();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut truth_n = 0usize;
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if exclude.is_some_and(|m| *m.get(x, y)) {
                continue;
            }
            let Some(t) = truth.get(x, y) else { continue };
            truth_n += 1;
            lo = lo.min(t as f64);
            hi = hi.max(t as f64);
            if let Some(r) = range.get(x, y) {
                pairs.push((r as f64, t as f64));
            }
        }
    }
    if pairs.is_empty() {
        return Err(RangeError::NoOverlap);
    }
    let n = pairs.len() as f64;
    let depth_range = hi - lo;
    let errs: Vec<f64> = pairs.iter().map(|(r, t)| r - t).collect();
    Ok(ErrorMetrics {
        rms: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mean_abs: errs.iter().map(|e| e.abs()).sum::<f64>() / n,
        coverage: pairs.len() as f64 / truth_n as f64,
        outlier_fraction: errs.iter().filter(|e| e.abs() > 0.01 * depth_range).count() as f64 / n,
        overlap: pairs.len(),
        depth_range,
    })
}
