//! End-to-end driver: simulation, separation, decoding, triangulation,
//! merging and evaluation against ground truth.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, PipelineParams};
use crate::decode::{decode_accuracy, decode_image, DecodeParams, DecodeStats, DecodedMap, Decoder};
use crate::demux::{
    compute_gradients_with, estimate_direction_field, nominal_depth, prior_directions, separate, DerivativeFilter,
    DirectionField,
};
use crate::error::{AtStage, PipelineError, Stage};
use crate::optics::Rig;
use crate::range::{error_metrics, erode_discontinuities, merge, remove_speckles, reconstruct as triangulate_pair, warp_to_camera, ErrorMetrics, Provenance, RangeImage};
use crate::raster::{RadianceImage, Raster, Rgb8Image};
use crate::scene::{add_noise, capture, render_all, GroundTruth, NoiseModel};

/// One simulated camera frame.
#[derive(Debug, Clone)]
pub struct Capture {
    pub camera: usize,
    pub image: Rgb8Image,
    pub truth: GroundTruth,
    pub clipped_fraction: f64,
}

/// Renders every camera of the experiment and captures it with the
/// configured exposure and noise. Camera `i` uses noise stream `i` of `seed`.
pub fn simulate(exp: &Experiment, seed: u64) -> Result<Vec<Capture>, PipelineError> {
    let cap = &exp.config.capture;
    let noise = cap.noise(seed).at(Stage::Simulate)?;
    Ok(render_all(&exp.scene, &exp.rig, &exp.config.render)
        .into_iter()
        .enumerate()
        .map(|(camera, out)| {
            let q = capture(&out.image, cap.exposure, &noise.for_frame(camera as u64));
            Capture {
                camera,
                image: q.image,
                truth: out.truth,
                clipped_fraction: q.clipped_fraction,
            }
        })
        .collect())
}

/// Noise deviation of one channel of a separated derivative, measured on a
/// flat patch carrying only sensor noise of deviation `sigma`.
pub fn separated_noise_sigma(
    sigma: f64,
    presmooth_sigma: f64,
    filter: DerivativeFilter,
    directions: &[Vector2<f64>],
) -> Result<f64, PipelineError> {
    if sigma <= 0.0 {
        return Ok(0.0);
    }
    const N: usize = 64;
    let flat = Raster::filled(N, N, [100.0f32; 3]);
    let noise = NoiseModel::new([sigma; 3], 0x5EED).at(Stage::Demux)?;
    let g = compute_gradients_with(&add_noise(&flat, &noise), presmooth_sigma, filter).at(Stage::Demux)?;
    let field = DirectionField::constant(N, N, directions);
    let seps = separate(&g, &field, 0.0).at(Stage::Demux)?;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for s in &seps {
        for (v, &ok) in s.data.data().iter().zip(s.valid.data()) {
            if ok {
                sum += v.iter().map(|&c| (c as f64).powi(2)).sum::<f64>();
                n += 3;
            }
        }
    }
    Ok((sum / n.max(1) as f64).sqrt())
}

/// Results of one projector-camera pair.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub projector: usize,
    pub camera: usize,
    pub decoded: DecodedMap,
    pub range: RangeImage,
}

#[derive(Debug, Clone)]
pub struct CameraResult {
    pub camera: usize,
    pub directions: DirectionField,
    pub pairs: Vec<PairResult>,
}

/// Separates, decodes and triangulates every projector seen by one camera.
///
/// `noise_sigma` is the sensor noise in gray levels; it sets the gradient
/// and feature thresholds when the parameters ask for noise-adaptive
/// thresholds.
pub fn reconstruct_camera(
    rig: &Rig,
    camera: usize,
    image: &RadianceImage,
    params: &PipelineParams,
    noise_sigma: f64,
) -> Result<CameraResult, PipelineError> {
    let dm = &params.demux;
    let cam = rig
        .cameras
        .get(camera)
        .ok_or_else(|| PipelineError::new(Stage::Demux, format!("camera {camera} is not in the rig")))?;
    if image.dims() != (cam.width(), cam.height()) {
        return Err(PipelineError::new(
            Stage::Demux,
            format!("image is {:?}, camera {camera} is {}x{}", image.dims(), cam.width(), cam.height()),
        ));
    }
    let depth = match dm.nominal_depth {
        Some(d) => d,
        None => nominal_depth(rig, camera).at(Stage::Demux)?,
    };
    let grad = compute_gradients_with(image, dm.presmooth_sigma, dm.filter).at(Stage::Demux)?;
    let prior = prior_directions(rig, camera, depth);
    let mut hist = dm.histogram.clone();
    if dm.noise_adaptive && noise_sigma > 0.0 {
        hist = hist.with_noise(noise_sigma, dm.presmooth_sigma, dm.filter);
    }
    let field = estimate_direction_field(&grad, &prior, &hist, dm.prior_tolerance_deg, dm.stride);
    let seps = separate(&grad, &field, dm.min_separation_deg).at(Stage::Demux)?;

    let mut dp: DecodeParams = params.decode.params.clone();
    if let Some(k) = params.decode.noise_floor_sigmas {
        let (cx, cy) = (cam.width() / 2, cam.height() / 2);
        let dirs: Vec<Vector2<f64>> = (0..field.count()).map(|i| prior.at(i, cx, cy)).collect();
        let sd = separated_noise_sigma(noise_sigma, dm.presmooth_sigma, dm.filter, &dirs)?;
        if sd > 0.0 {
            dp.min_strength = k * sd;
        }
    }
    let decoder = Decoder::new((*rig.projectors[0].pattern).clone()).at(Stage::Decode)?;
    let mut pairs = Vec::with_capacity(seps.len());
    for s in &seps {
        let decoded = decode_image(s, &field.dirs[s.projector], Some(image), &decoder, &dp).at(Stage::Decode)?;
        let mut range = triangulate_pair(&decoded, rig, camera, params.range.min_angle_deg).at(Stage::Range)?;
        if params.range.discontinuity_step > 0.0 {
            range = erode_discontinuities(&range, params.range.discontinuity_step as f32, true);
        }
        if params.range.speckle_min_area > 0 {
            range = remove_speckles(&range, params.range.speckle_max_step as f32, params.range.speckle_min_area);
        }
        pairs.push(PairResult {
            projector: s.projector,
            camera,
            decoded,
            range,
        });
    }
    Ok(CameraResult {
        camera,
        directions: field,
        pairs,
    })
}

/// Every camera's pairs and their merge on the reference camera grid.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub cameras: Vec<CameraResult>,
    pub merged: RangeImage,
}

impl Reconstruction {
    pub fn pairs(&self) -> impl Iterator<Item = &PairResult> {
        self.cameras.iter().flat_map(|c| c.pairs.iter())
    }
}

/// Merges ranges from any cameras on the grid of `reference`; ranges of
/// other cameras are forward-warped first.
pub fn merge_on_camera(
    rig: &Rig,
    ranges: &[&RangeImage],
    policy: &crate::range::MergePolicy,
    reference: usize,
) -> Result<RangeImage, PipelineError> {
    let warped: Vec<RangeImage> = ranges
        .iter()
        .map(|r| {
            if r.provenance.camera == reference {
                Ok((*r).clone())
            } else {
                warp_to_camera(r, rig, reference)
            }
        })
        .collect::<Result<_, _>>()
        .at(Stage::Merge)?;
    let refs: Vec<&RangeImage> = warped.iter().collect();
    let mut m = merge(&refs, policy).at(Stage::Merge)?;
    m.provenance = Provenance {
        projector: if refs.len() == 1 { refs[0].provenance.projector } else { None },
        camera: reference,
    };
    Ok(m)
}

/// Reconstructs from one image per camera of the rig.
pub fn reconstruct(
    rig: &Rig,
    images: &[RadianceImage],
    params: &PipelineParams,
    noise_sigma: f64,
) -> Result<Reconstruction, PipelineError> {
    if images.len() != rig.cameras.len() {
        return Err(PipelineError::new(
            Stage::Demux,
            format!("{} images for {} cameras", images.len(), rig.cameras.len()),
        ));
    }
    let cameras = images
        .iter()
        .enumerate()
        .map(|(c, img)| reconstruct_camera(rig, c, img, params, noise_sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let ranges: Vec<&RangeImage> = cameras.iter().flat_map(|c| c.pairs.iter().map(|p| &p.range)).collect();
    let mut merged = merge_on_camera(rig, &ranges, &params.range.merge, params.range.reference_camera)?;
    if params.range.discontinuity_step > 0.0 {
        merged = erode_discontinuities(&merged, params.range.discontinuity_step as f32, false);
    }
    Ok(Reconstruction { cameras, merged })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMetrics {
    pub projector: usize,
    pub camera: usize,
    pub decode: DecodeStats,
    /// Against the camera's own ground-truth depth.
    pub range: Option<ErrorMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub pairs: Vec<PairMetrics>,
    pub merged: Option<ErrorMetrics>,
}

/// Ground-truth depth of a capture as a range image.
pub fn truth_range(truth: &GroundTruth, camera: usize) -> RangeImage {
    RangeImage::from_depth(
        truth.depth.clone(),
        Provenance {
            projector: None,
            camera,
        },
    )
}

/// Decoding and range errors of a reconstruction; `truths[c]` belongs to
/// camera `c`.
pub fn evaluate(recon: &Reconstruction, truths: &[GroundTruth], border: usize) -> Result<Metrics, PipelineError> {
    let truth_ranges: Vec<RangeImage> = truths.iter().enumerate().map(|(c, t)| truth_range(t, c)).collect();
    let pairs = recon
        .pairs()
        .map(|p| {
            let t = truths
                .get(p.camera)
                .ok_or_else(|| PipelineError::new(Stage::Metrics, format!("no truth for camera {}", p.camera)))?;
            let stripe = t
                .stripe
                .get(p.projector)
                .ok_or_else(|| PipelineError::new(Stage::Metrics, format!("no truth for projector {}", p.projector)))?;
            Ok(PairMetrics {
                projector: p.projector,
                camera: p.camera,
                decode: decode_accuracy(&p.decoded, stripe, None, border),
                range: error_metrics(&p.range, &truth_ranges[p.camera], None).ok(),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let reference = recon.merged.provenance.camera;
    let merged = truth_ranges
        .get(reference)
        .and_then(|t| error_metrics(&recon.merged, t, None).ok());
    Ok(Metrics { pairs, merged })
}

/// Simulates, reconstructs and evaluates an experiment.
pub fn run_experiment(exp: &Experiment) -> Result<(Vec<Capture>, Reconstruction, Metrics), PipelineError> {
    let captures = simulate(exp, exp.config.seed)?;
    let images: Vec<RadianceImage> = captures.iter().map(|c| crate::scene::to_float(&c.image)).collect();
    let sigma = exp.config.capture.noise_sigma_rgb.iter().sum::<f64>() / 3.0;
    let recon = reconstruct(&exp.rig, &images, &exp.config.pipeline, sigma)?;
    let truths: Vec<GroundTruth> = captures.iter().map(|c| c.truth.clone()).collect();
    let metrics = evaluate(&recon, &truths, exp.config.pipeline.decode.params.border)?;
    Ok((captures, recon, metrics))
}
