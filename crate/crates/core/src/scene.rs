//! Lambertian scene renderer with superposed projector patterns, ambient
//! light, projector-side shadow maps, sensor noise and 8-bit quantization.
//!
//! Radiance per channel is `S * (sum_i g_i E_i + g_A A)` where `S` is the
//! albedo, `E_i` the color projected by projector `i`, `g_i = max(0, n . l_i)`
//! (zero when shadowed) and `A` the ambient color. There is no distance
//! falloff.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::optics::{PinholeModel, Ray, Rig};
use crate::raster::{gaussian_blur, Mask, RadianceImage, Raster, Rgb8Image, ScalarImage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("albedo channel {0} outside [0, 1]")]
    Albedo(f32),
    #[error("primitive {index}: {message}")]
    Primitive { index: usize, message: String },
    #[error("ambient light must be non-negative")]
    Ambient,
    #[error("noise sigma must be non-negative")]
    Sigma,
    #[error("exposure must be positive, got {0}")]
    Exposure(f64),
    #[error("camera index {0} out of range")]
    Camera(usize),
    #[error("no camera ray hits the scene")]
    Empty,
    #[error("noise measurement: {0}")]
    Measurement(String),
}

/// Surface reflectance as a function of world position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Constant { rgb: [f32; 3] },
    /// Tiles the world x-y plane with square cells, cycling through `colors`
    /// row by row with `columns` cells per row.
    Grid {
        origin: [f64; 2],
        cell: f64,
        columns: usize,
        colors: Vec<[f32; 3]>,
    },
}

impl Albedo {
    pub fn constant(rgb: [f32; 3]) -> Self {
        Albedo::Constant { rgb }
    }

    pub fn white() -> Self {
        Self::constant([1.0; 3])
    }

    pub fn at(&self, p: &Vector3<f64>) -> [f32; 3] {
        match self {
            Albedo::Constant { rgb } => *rgb,
            Albedo::Grid {
                origin,
                cell,
                columns,
                colors,
            } => {
                let ix = ((p.x - origin[0]) / cell).floor() as i64;
                let iy = ((p.y - origin[1]) / cell).floor() as i64;
                let c = *columns as i64;
                let idx = (iy * c + ix.rem_euclid(c)).rem_euclid(colors.len() as i64);
                colors[idx as usize]
            }
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let check = |rgb: &[f32; 3]| {
            rgb.iter()
                .find(|v| !(0.0..=1.0).contains(*v))
                .map_or(Ok(()), |&v| Err(SceneError::Albedo(v)))
        };
        match self {
            Albedo::Constant { rgb } => check(rgb),
            Albedo::Grid {
                colors,
                columns,
                cell,
                ..
            } => {
                if colors.is_empty() || *columns == 0 || *cell <= 0.0 {
                    return Err(SceneError::Primitive {
                        index: 0,
                        message: "grid albedo needs colors, columns > 0 and cell > 0".into(),
                    });
                }
                colors.iter().try_for_each(check)
            }
        }
    }
}

/// Gaussian bump of a height field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub sigma: [f64; 2],
}

/// Analytic scene primitive in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Infinite plane through `point`.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        albedo: Albedo,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: Albedo,
    },
    /// Surface `z = base_z - sum(bumps)` over the rectangle `x_range` by
    /// `y_range`; positive amplitudes rise toward `-z`.
    HeightField {
        base_z: f64,
        x_range: [f64; 2],
        y_range: [f64; 2],
        bumps: Vec<Bump>,
        /// Ray-marching step in world units.
        step: f64,
        albedo: Albedo,
    },
}

/// Ray-surface intersection.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    /// Unit normal facing the ray origin.
    pub normal: Vector3<f64>,
    pub albedo: [f32; 3],
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

const T_MIN: f64 = 1e-9;
const T_FAR: f64 = 1e3;

impl Primitive {
    pub fn albedo(&self) -> &Albedo {
        match self {
            Primitive::Plane { albedo, .. }
            | Primitive::Sphere { albedo, .. }
            | Primitive::HeightField { albedo, .. } => albedo,
        }
    }

    fn validate(&self, index: usize) -> Result<(), SceneError> {
        let err = |m: &str| SceneError::Primitive {
            index,
            message: m.to_string(),
        };
        match self {
            Primitive::Plane { normal, .. } if v3(normal).norm() < 1e-12 => {
                return Err(err("plane normal is zero"))
            }
            Primitive::Sphere { radius, .. } if *radius <= 0.0 => {
                return Err(err("sphere radius must be positive"))
            }
            Primitive::HeightField {
                step,
                x_range,
                y_range,
                bumps,
                ..
            } => {
                if *step <= 0.0 || x_range[0] >= x_range[1] || y_range[0] >= y_range[1] {
                    return Err(err("height field needs step > 0 and non-empty ranges"));
                }
                if bumps.iter().any(|b| b.sigma[0] <= 0.0 || b.sigma[1] <= 0.0) {
                    return Err(err("bump sigma must be positive"));
                }
            }
            _ => {}
        }
        self.albedo().validate().map_err(|e| match e {
            SceneError::Primitive { message, .. } => SceneError::Primitive { index, message },
            other => other,
        })
    }

    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let (t, normal) = match self {
            Primitive::Plane { point, normal, .. } => {
                let n = v3(normal).normalize();
                let denom = n.dot(&ray.direction);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(v3(point) - ray.origin)) / denom;
                (t, n)
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = ray.origin - v3(center);
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = if -b - sq > T_MIN { -b - sq } else { -b + sq };
                (t, (ray.at(t) - v3(center)) / *radius)
            }
            Primitive::HeightField { .. } => self.march_height_field(ray)?,
        };
        if !(t > T_MIN && t < T_FAR) {
            return None;
        }
        let point = ray.at(t);
        let normal = if normal.dot(&ray.direction) > 0.0 {
            -normal
        } else {
            normal
        };
        Some(Hit {
            t,
            point,
            normal,
            albedo: self.albedo().at(&point),
        })
    }

    fn march_height_field(&self, ray: &Ray) -> Option<(f64, Vector3<f64>)> {
        let Primitive::HeightField {
            base_z,
            x_range,
            y_range,
            bumps,
            step,
            ..
        } = self
        else {
            return None;
        };
        let height = |x: f64, y: f64| -> (f64, f64, f64) {
            let (mut h, mut hx, mut hy) = (0.0, 0.0, 0.0);
            for b in bumps {
                let dx = x - b.center[0];
                let dy = y - b.center[1];
                let e = b.amplitude
                    * (-(dx * dx) / (2.0 * b.sigma[0] * b.sigma[0])
                        - (dy * dy) / (2.0 * b.sigma[1] * b.sigma[1]))
                        .exp();
                h += e;
                hx -= e * dx / (b.sigma[0] * b.sigma[0]);
                hy -= e * dy / (b.sigma[1] * b.sigma[1]);
            }
            (h, hx, hy)
        };
        let inside =
            |p: &Vector3<f64>| (x_range[0]..=x_range[1]).contains(&p.x) && (y_range[0]..=y_range[1]).contains(&p.y);
        // Signed gap between the ray point and the surface below it.
        let gap = |t: f64| -> Option<f64> {
            let p = ray.at(t);
            inside(&p).then(|| base_z - height(p.x, p.y).0 - p.z)
        };
        let hmax: f64 = bumps.iter().map(|b| b.amplitude.max(0.0)).sum();
        let hmin: f64 = bumps.iter().map(|b| b.amplitude.min(0.0)).sum();
        let (zlo, zhi) = (base_z - hmax, base_z - hmin);
        let (d, o) = (ray.direction, ray.origin);
        let (t0, t1) = if d.z.abs() < 1e-12 {
            if o.z < zlo || o.z > zhi {
                return None;
            }
            (0.0, T_FAR)
        } else {
            let a = (zlo - o.z) / d.z;
            let b = (zhi - o.z) / d.z;
            (a.min(b).max(0.0), a.max(b).min(T_FAR))
        };
        if t0 >= t1 {
            return None;
        }
        let mut prev: Option<(f64, f64)> = None;
        let mut t = t0;
        loop {
            let cur = gap(t).map(|g| (t, g));
            if let (Some((ta, ga)), Some((tb, gb))) = (prev, cur) {
                if (ga > 0.0) != (gb > 0.0) {
                    let (mut lo, mut hi, glo) = (ta, tb, ga);
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        match gap(mid) {
                            Some(g) if (g > 0.0) == (glo > 0.0) => lo = mid,
                            _ => hi = mid,
                        }
                    }
                    let th = 0.5 * (lo + hi);
                    let p = ray.at(th);
                    let (_, hx, hy) = height(p.x, p.y);
                    return Some((th, Vector3::new(hx, hy, 1.0).normalize()));
                }
            }
            prev = cur;
            if t >= t1 {
                return None;
            }
            t = (t + step).min(t1);
        }
    }
}

/// Ambient illumination `g_A * A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbientLight {
    pub color: [f32; 3],
    pub shading_factor: f32,
}

impl Default for AmbientLight {
    fn default() -> Self {
        Self {
            color: [0.05; 3],
            shading_factor: 1.0,
        }
    }
}

impl AmbientLight {
    pub fn none() -> Self {
        Self {
            color: [0.0; 3],
            shading_factor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub ambient: AmbientLight,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>, ambient: AmbientLight) -> Result<Self, SceneError> {
        let s = Self { primitives, ambient };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.ambient.color.iter().any(|&c| c < 0.0) || self.ambient.shading_factor < 0.0 {
            return Err(SceneError::Ambient);
        }
        self.primitives
            .iter()
            .enumerate()
            .try_for_each(|(i, p)| p.validate(i))
    }

    /// Nearest intersection over all primitives.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(ray))
            .min_by(|a, b| a.t.total_cmp(&b.t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Samples per pixel along each axis.
    pub supersample: usize,
    /// Camera point-spread function, Gaussian sigma in pixels (0 disables).
    pub psf_sigma: f64,
    /// Relative depth tolerance of the projector shadow test.
    pub shadow_bias: f64,
    pub shadows: bool,
    /// Projectors to render; `None` renders all of them.
    pub projectors: Option<Vec<usize>>,
    pub ambient: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            supersample: 3,
            psf_sigma: 0.8,
            shadow_bias: 0.003,
            shadows: true,
            projectors: None,
            ambient: true,
        }
    }
}

/// Per-camera simulator ground truth, sampled at pixel centers.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Camera-frame depth; NaN for background.
    pub depth: ScalarImage,
    /// Continuous stripe coordinate per projector; NaN where unlit.
    pub stripe: Vec<ScalarImage>,
    pub albedo: RadianceImage,
}

impl GroundTruth {
    pub fn valid_depth(&self) -> Mask {
        self.depth.map(|d| d.is_finite())
    }

    pub fn lit(&self, projector: usize) -> Mask {
        self.stripe[projector].map(|s| s.is_finite())
    }

    /// Pixels within `band` pixels of an albedo change.
    pub fn albedo_edges(&self, band: usize) -> Mask {
        let (w, h) = self.albedo.dims();
        let edge = Raster::from_fn(w, h, |x, y| {
            let a = self.albedo.get(x, y);
            let differs = |xx: usize, yy: usize| {
                let b = self.albedo.get(xx, yy);
                (0..3).any(|c| (a[c] - b[c]).abs() > 1e-3)
            };
            (x + 1 < w && differs(x + 1, y)) || (y + 1 < h && differs(x, y + 1))
        });
        dilate(&edge, band)
    }
}

/// Square dilation of a mask by `radius` pixels.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    let (w, h) = mask.dims();
    let r = radius as isize;
    Raster::from_fn(w, h, |x, y| {
        for dy in -r..=r {
            for dx in -r..=r {
                let xx = x as isize + dx;
                let yy = y as isize + dy;
                if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h && *mask.get(xx as usize, yy as usize)
                {
                    return true;
                }
            }
        }
        false
    })
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: RadianceImage,
    pub truth: GroundTruth,
}

/// Projector-resolution depth buffer used for cast shadows.
struct ShadowMap {
    width: usize,
    height: usize,
    depth: Vec<f32>,
}

impl ShadowMap {
    fn build(scene: &Scene, device: &PinholeModel) -> Self {
        let (width, height) = (device.width(), device.height());
        let mut depth = vec![f32::INFINITY; width * height];
        depth.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
            for (x, d) in row.iter_mut().enumerate() {
                let ray = device.backproject_ray(x as f64, y as f64);
                if let Some(hit) = scene.intersect(&ray) {
                    *d = device.depth_of(&hit.point) as f32;
                }
            }
        });
        Self {
            width,
            height,
            depth,
        }
    }

    /// True when `point` is hidden behind the nearest surface seen by the
    /// device. Uses the largest depth of the 2x2 neighbourhood so grazing
    /// surfaces do not shadow themselves.
    fn occluded(&self, device: &PinholeModel, point: &Vector3<f64>, bias: f64) -> bool {
        let Some(p) = device.project(point) else {
            return true;
        };
        let x0 = p.x.floor().clamp(0.0, (self.width - 1) as f64) as usize;
        let y0 = p.y.floor().clamp(0.0, (self.height - 1) as f64) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let dmax = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
            .iter()
            .map(|&(x, y)| self.depth[y * self.width + x])
            .fold(f32::NEG_INFINITY, f32::max) as f64;
        device.depth_of(point) > dmax * (1.0 + bias)
    }
}

/// Renders every camera of the rig.
pub fn render_all(scene: &Scene, rig: &Rig, options: &RenderOptions) -> Vec<RenderOutput> {
    let maps = shadow_maps(scene, rig, options);
    (0..rig.cameras.len())
        .map(|c| render_with_maps(scene, rig, c, options, &maps))
        .collect()
}

/// Renders one camera: radiance image plus ground truth.
pub fn render(
    scene: &Scene,
    rig: &Rig,
    camera: usize,
    options: &RenderOptions,
) -> Result<RenderOutput, SceneError> {
    if camera >= rig.cameras.len() {
        return Err(SceneError::Camera(camera));
    }
    let maps = shadow_maps(scene, rig, options);
    Ok(render_with_maps(scene, rig, camera, options, &maps))
}

fn shadow_maps(scene: &Scene, rig: &Rig, options: &RenderOptions) -> Vec<Option<ShadowMap>> {
    rig.projectors
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let active = options.projectors.as_ref().is_none_or(|s| s.contains(&i));
            (options.shadows && active).then(|| ShadowMap::build(scene, &p.pinhole))
        })
        .collect()
}

struct Shade {
    radiance: [f32; 3],
    stripe: Vec<f32>,
}

fn shade(
    scene: &Scene,
    rig: &Rig,
    hit: &Hit,
    options: &RenderOptions,
    maps: &[Option<ShadowMap>],
) -> Shade {
    let mut light = [0.0f32; 3];
    let mut stripe = vec![f32::NAN; rig.projectors.len()];
    for (i, proj) in rig.projectors.iter().enumerate() {
        if !options.projectors.as_ref().is_none_or(|s| s.contains(&i)) {
            continue;
        }
        let Some(s) = proj.stripe_coordinate(&hit.point) else {
            continue;
        };
        let l = (proj.pinhole.center() - hit.point).normalize();
        let g = hit.normal.dot(&l);
        if g <= 0.0 {
            continue;
        }
        if let Some(map) = &maps[i] {
            if map.occluded(&proj.pinhole, &hit.point, options.shadow_bias) {
                continue;
            }
        }
        let e = proj.illumination(&hit.point);
        for c in 0..3 {
            light[c] += g as f32 * e[c];
        }
        stripe[i] = s as f32;
    }
    if options.ambient {
        for (c, l) in light.iter_mut().enumerate() {
            *l += scene.ambient.shading_factor * scene.ambient.color[c];
        }
    }
    Shade {
        radiance: [
            hit.albedo[0] * light[0],
            hit.albedo[1] * light[1],
            hit.albedo[2] * light[2],
        ],
        stripe,
    }
}

fn render_with_maps(
    scene: &Scene,
    rig: &Rig,
    camera: usize,
    options: &RenderOptions,
    maps: &[Option<ShadowMap>],
) -> RenderOutput {
    let cam = &rig.cameras[camera];
    let (w, h) = (cam.width(), cam.height());
    let n_proj = rig.projectors.len();
    let ss = options.supersample.max(1);
    let inv = 1.0 / (ss * ss) as f32;

    struct Px {
        rgb: [f32; 3],
        depth: f32,
        stripe: Vec<f32>,
        albedo: [f32; 3],
    }
    let rows: Vec<Vec<Px>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut rgb = [0.0f32; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5;
                            let v = y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5;
                            if let Some(hit) = scene.intersect(&cam.backproject_ray(u, v)) {
                                let s = shade(scene, rig, &hit, options, maps);
                                for c in 0..3 {
                                    rgb[c] += s.radiance[c] * inv;
                                }
                            }
                        }
                    }
                    match scene.intersect(&cam.backproject_ray(x as f64, y as f64)) {
                        Some(hit) => Px {
                            rgb,
                            depth: cam.depth_of(&hit.point) as f32,
                            stripe: shade(scene, rig, &hit, options, maps).stripe,
                            albedo: hit.albedo,
                        },
                        None => Px {
                            rgb,
                            depth: f32::NAN,
                            stripe: vec![f32::NAN; n_proj],
                            albedo: [0.0; 3],
                        },
                    }
                })
                .collect()
        })
        .collect();

    let px: Vec<Px> = rows.into_iter().flatten().collect();
    let image = Raster::from_vec(w, h, px.iter().map(|p| p.rgb).collect());
    let image = gaussian_blur(&image, options.psf_sigma);
    let truth = GroundTruth {
        depth: Raster::from_vec(w, h, px.iter().map(|p| p.depth).collect()),
        stripe: (0..n_proj)
            .map(|i| Raster::from_vec(w, h, px.iter().map(|p| p.stripe[i]).collect()))
            .collect(),
        albedo: Raster::from_vec(w, h, px.iter().map(|p| p.albedo).collect()),
    };
    RenderOutput { image, truth }
}

/// Per-channel Gaussian sensor noise in 8-bit gray levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_rgb: [f64; 3],
    pub seed: u64,
}

/// Measured temporal noise of the reference capture setup, gray levels.
pub const MEASURED_SIGMA_RGB: [f64; 3] = [1.8138, 1.2923, 1.6745];

impl NoiseModel {
    pub fn new(sigma_rgb: [f64; 3], seed: u64) -> Result<Self, SceneError> {
        if sigma_rgb.iter().any(|&s| !(s >= 0.0)) {
            return Err(SceneError::Sigma);
        }
        Ok(Self { sigma_rgb, seed })
    }

    pub fn measured(seed: u64) -> Self {
        Self {
            sigma_rgb: MEASURED_SIGMA_RGB,
            seed,
        }
    }

    pub fn none() -> Self {
        Self {
            sigma_rgb: [0.0; 3],
            seed: 0,
        }
    }

    /// Independent model for frame `i` of a stack.
    pub fn for_frame(&self, i: u64) -> Self {
        Self {
            seed: self.seed ^ (i.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..*self
        }
    }

    pub fn mean_sigma(&self) -> f64 {
        self.sigma_rgb.iter().sum::<f64>() / 3.0
    }
}

/// Multiplies every sample by `exposure` (radiance to gray levels).
pub fn expose(image: &RadianceImage, exposure: f64) -> RadianceImage {
    let e = exposure as f32;
    image.map(|p| [p[0] * e, p[1] * e, p[2] * e])
}

/// Adds zero-mean Gaussian noise; row `y` draws from its own stream of the
/// seeded generator, so results do not depend on thread scheduling.
pub fn add_noise(image: &RadianceImage, noise: &NoiseModel) -> RadianceImage {
    if noise.sigma_rgb.iter().all(|&s| s == 0.0) {
        return image.clone();
    }
    let dists: Vec<Option<Normal<f64>>> = noise
        .sigma_rgb
        .iter()
        .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("sigma checked")))
        .collect();
    let mut out = image.clone();
    let w = out.width();
    out.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(y as u64);
            for p in row.iter_mut() {
                for c in 0..3 {
                    if let Some(d) = &dists[c] {
                        p[c] += d.sample(&mut rng) as f32;
                    }
                }
            }
        });
    out
}

#[derive(Debug, Clone)]
pub struct Quantized {
    pub image: Rgb8Image,
    /// Fraction of pixels with at least one channel clamped.
    pub clipped_fraction: f64,
}

/// `clamp(round(exposure * I), 0, 255)` per channel.
pub fn quantize(image: &RadianceImage, exposure: f64) -> Result<Quantized, SceneError> {
    if !(exposure > 0.0) {
        return Err(SceneError::Exposure(exposure));
    }
    let mut clipped = 0usize;
    let data = image
        .data()
        .iter()
        .map(|p| {
            let mut out = [0u8; 3];
            let mut clip = false;
            for c in 0..3 {
                let v = (p[c] as f64 * exposure).round();
                clip |= !(0.0..=255.0).contains(&v);
                out[c] = v.clamp(0.0, 255.0) as u8;
            }
            clipped += clip as usize;
            out
        })
        .collect();
    Ok(Quantized {
        image: Raster::from_vec(image.width(), image.height(), data),
        clipped_fraction: clipped as f64 / image.len().max(1) as f64,
    })
}

/// Exposure, noise and quantization in sensor order.
pub fn capture(image: &RadianceImage, exposure: f64, noise: &NoiseModel) -> Quantized {
    let noisy = add_noise(&expose(image, exposure), noise);
    quantize(&noisy, 1.0).expect("unit exposure is valid")
}

/// 8-bit image as floating-point gray levels.
pub fn to_float(image: &Rgb8Image) -> RadianceImage {
    image.map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
}

/// Captures `frames` noisy 8-bit frames of one static radiance image,
/// frame `i` using noise stream `i`.
pub fn capture_stack(image: &RadianceImage, exposure: f64, noise: &NoiseModel, frames: usize) -> Vec<Rgb8Image> {
    (0..frames)
        .map(|i| capture(image, exposure, &noise.for_frame(i as u64)).image)
        .collect()
}

/// Spacetime noise of a stack of frames of a static scene, per channel.
///
/// Every pixel of the `size`x`size` window at `origin` contributes its
/// deviations about its own temporal mean; the unbiased variances are
/// pooled over the window. `quantization_step` applies Sheppard's
/// correction, subtracting `step^2 / 12` from the pooled variance; 0 skips
/// it.
pub fn measure_noise(
    frames: &[Rgb8Image],
    origin: [usize; 2],
    size: usize,
    quantization_step: f64,
) -> Result<[f64; 3], SceneError> {
    let err = |m: String| Err(SceneError::Measurement(m));
    let Some(first) = frames.first() else {
        return err("empty stack".into());
    };
    if frames.len() < 2 {
        return err("at least two frames are needed".into());
    }
    let (w, h) = first.dims();
    if frames.iter().any(|f| f.dims() != (w, h)) {
        return err("frames differ in size".into());
    }
    if size == 0 || origin[0] + size > w || origin[1] + size > h {
        return err(format!("window {size} at {origin:?} outside {w}x{h}"));
    }
    let n = frames.len() as f64;
    let mut ss = [0.0f64; 3];
    for y in origin[1]..origin[1] + size {
        for x in origin[0]..origin[0] + size {
            for c in 0..3 {
                let mean = frames.iter().map(|f| f.get(x, y)[c] as f64).sum::<f64>() / n;
                ss[c] += frames.iter().map(|f| (f.get(x, y)[c] as f64 - mean).powi(2)).sum::<f64>();
            }
        }
    }
    let dof = (size * size) as f64 * (n - 1.0);
    let correction = quantization_step * quantization_step / 12.0;
    Ok(ss.map(|s| (s / dof - correction).max(0.0).sqrt()))
}

/// Chromaticity `(r, g) = (R, G) / (R + G + B)` of the non-black pixels
/// selected by `mask`.
pub fn chromaticity_scatter(image: &Rgb8Image, mask: Option<&Mask>) -> Vec<(f64, f64)> {
    image
        .data()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m.data()[*i]))
        .filter_map(|(_, p)| {
            let sum = p[0] as f64 + p[1] as f64 + p[2] as f64;
            (sum > 0.0).then(|| (p[0] as f64 / sum, p[1] as f64 / sum))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::ProjectorModel;
    use crate::pattern::{generate_pattern, StripePattern};
    use crate::pattern::ColorLabel::*;
    use std::sync::Arc;

    fn camera(w: usize, h: usize) -> PinholeModel {
        PinholeModel::look_at(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, -1.0, 0.0),
            400.0,
            [w, h],
        )
        .unwrap()
    }

    fn projector(eye: [f64; 3], pattern: Arc<StripePattern>, roll: f64) -> ProjectorModel {
        let pin = PinholeModel::look_at(
            v3(&eye),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, -1.0, 0.0),
            400.0,
            [400, 400],
        )
        .unwrap();
        ProjectorModel::new(pin, roll, pattern)
    }

    fn plane_scene(z: f64) -> Scene {
        Scene::new(
            vec![Primitive::Plane {
                point: [0.0, 0.0, z],
                normal: [0.0, 0.0, -1.0],
                albedo: Albedo::white(),
            }],
            AmbientLight::none(),
        )
        .unwrap()
    }

    fn exact() -> RenderOptions {
        RenderOptions {
            supersample: 1,
            psf_sigma: 0.0,
            ..RenderOptions::default()
        }
    }

    #[test]
    fn single_projector_radiance_is_cosine_scaled() {
        // A two-stripe pattern is too short for a window of 7; use k=2.
        let pattern = Arc::new(StripePattern::new(vec![R, G, B, R, B, G, R], 2, 80).unwrap());
        let rig = Rig::new(
            vec![projector([-0.3, 0.0, 0.0], pattern, 0.0)],
            vec![camera(64, 48)],
            "m",
        )
        .unwrap();
        let out = render(&plane_scene(1.0), &rig, 0, &exact()).unwrap();
        let proj = &rig.projectors[0];
        for (x, y) in [(32, 24), (10, 5), (50, 40)] {
            let ray = rig.cameras[0].backproject_ray(x as f64, y as f64);
            let p = ray.at(1.0 / ray.direction.z);
            let l = (proj.pinhole.center() - p).normalize();
            let e = proj.illumination(&p);
            let got = out.image.get(x, y);
            for c in 0..3 {
                assert!((got[c] - e[c] * (-l.z) as f32).abs() < 1e-5);
            }
            assert!((out.truth.depth.get(x, y) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn superposition_is_linear_with_ambient_counted_once() {
        let pattern = Arc::new(generate_pattern(4, 3).unwrap().with_stripe_width(6).unwrap());
        let rig = Rig::new(
            vec![
                projector([-0.3, 0.0, 0.0], pattern.clone(), 0.0),
                projector([0.0, -0.3, 0.0], pattern, 90.0),
            ],
            vec![camera(48, 40)],
            "m",
        )
        .unwrap();
        let mut scene = plane_scene(1.0);
        scene.ambient = AmbientLight::default();
        let opts = RenderOptions::default();
        let both = render(&scene, &rig, 0, &opts).unwrap().image;
        let one = |i: usize, ambient: bool| {
            let o = RenderOptions {
                projectors: Some(vec![i]),
                ambient,
                ..opts.clone()
            };
            render(&scene, &rig, 0, &o).unwrap().image
        };
        let (a, b) = (one(0, true), one(1, false));
        for i in 0..both.len() {
            for c in 0..3 {
                let sum = a.data()[i][c] + b.data()[i][c];
                assert!((both.data()[i][c] - sum).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn back_facing_projector_contributes_nothing() {
        let pattern = Arc::new(generate_pattern(4, 3).unwrap());
        // Projector 1 sits behind the plane.
        let rig = Rig::new(
            vec![
                projector([-0.3, 0.0, 0.0], pattern.clone(), 0.0),
                projector([0.0, 0.3, 2.0], pattern, 0.0),
            ],
            vec![camera(32, 24)],
            "m",
        )
        .unwrap();
        let scene = plane_scene(1.0);
        let both = render(&scene, &rig, 0, &exact()).unwrap();
        let single = render(
            &scene,
            &rig,
            0,
            &RenderOptions {
                projectors: Some(vec![0]),
                ..exact()
            },
        )
        .unwrap();
        assert_eq!(both.image, single.image);
        assert!(both.truth.stripe[1].data().iter().all(|s| s.is_nan()));
    }

    #[test]
    fn cast_shadow_blocks_projector() {
        let pattern = Arc::new(generate_pattern(4, 3).unwrap().with_stripe_width(20).unwrap());
        let rig = Rig::new(
            vec![projector([-0.3, 0.0, 0.0], pattern, 0.0)],
            vec![camera(64, 48)],
            "m",
        )
        .unwrap();
        let mut scene = plane_scene(1.0);
        scene.primitives.push(Primitive::Sphere {
            center: [-0.15, 0.0, 0.5],
            radius: 0.05,
            albedo: Albedo::white(),
        });
        let out = render(&scene, &rig, 0, &exact()).unwrap();
        // The plane point on the projector ray through the sphere center is dark.
        let c = rig.projectors[0].pinhole.center();
        let dir = (Vector3::new(-0.15, 0.0, 0.5) - c).normalize();
        let p = c + dir * ((1.0 - c.z) / dir.z);
        let uv = rig.cameras[0].project(&p).unwrap();
        let (x, y) = (uv.x.round() as usize, uv.y.round() as usize);
        assert_eq!(*out.image.get(x, y), [0.0; 3]);
        assert!(out.truth.stripe[0].get(x, y).is_nan());
        assert!((out.truth.depth.get(x, y) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn height_field_matches_analytic_surface() {
        let hf = Primitive::HeightField {
            base_z: 1.0,
            x_range: [-0.5, 0.5],
            y_range: [-0.5, 0.5],
            bumps: vec![Bump {
                center: [0.0, 0.0],
                amplitude: 0.1,
                sigma: [0.1, 0.1],
            }],
            step: 0.002,
            albedo: Albedo::white(),
        };
        let cam = camera(64, 48);
        for (u, v) in [(32.0, 24.0), (20.0, 30.0)] {
            let ray = cam.backproject_ray(u, v);
            let hit = hf.intersect(&ray).unwrap();
            let p = hit.point;
            let h = 0.1 * (-(p.x * p.x + p.y * p.y) / 0.02).exp();
            assert!((p.z - (1.0 - h)).abs() < 1e-9);
            assert!(hit.normal.z < 0.0);
        }
    }

    #[test]
    fn grid_albedo_cycles_colors() {
        let a = Albedo::Grid {
            origin: [0.0, 0.0],
            cell: 1.0,
            columns: 3,
            colors: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]],
        };
        assert_eq!(a.at(&Vector3::new(0.5, 0.5, 0.0)), [1.0, 0.0, 0.0]);
        assert_eq!(a.at(&Vector3::new(2.5, 0.5, 0.0)), [0.0, 0.0, 1.0]);
        assert_eq!(a.at(&Vector3::new(0.5, 1.5, 0.0)), [1.0, 1.0, 0.0]);
        assert!(Albedo::constant([1.2, 0.0, 0.0]).validate().is_err());
    }

    #[test]
    fn noise_is_deterministic_and_zero_sigma_is_identity() {
        let img = RadianceImage::filled(16, 8, [100.0, 100.0, 100.0]);
        assert_eq!(add_noise(&img, &NoiseModel::none()), img);
        let n = NoiseModel::measured(7);
        assert_eq!(add_noise(&img, &n), add_noise(&img, &n));
        assert_ne!(add_noise(&img, &n), add_noise(&img, &n.for_frame(1)));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(single.install(|| add_noise(&img, &n)), add_noise(&img, &n));
    }

    #[test]
    fn stack_mean_converges_to_clean_image() {
        let img = RadianceImage::filled(8, 8, [120.0, 80.0, 40.0]);
        let n = NoiseModel::measured(3);
        let frames = 50;
        let mut mean = vec![[0.0f64; 3]; img.len()];
        for f in 0..frames {
            let noisy = add_noise(&img, &n.for_frame(f));
            for (m, p) in mean.iter_mut().zip(noisy.data()) {
                for c in 0..3 {
                    m[c] += p[c] as f64 / frames as f64;
                }
            }
        }
        for m in &mean {
            for c in 0..3 {
                let bound = 3.0 * n.sigma_rgb[c] / (frames as f64).sqrt();
                assert!((m[c] - img.data()[0][c] as f64).abs() < bound + 1e-3);
            }
        }
    }

    #[test]
    fn quantization_rounds_clamps_and_scales_linearly() {
        let img = RadianceImage::from_vec(3, 1, vec![[10.2, 0.0, -3.0], [60.0, 100.0, 127.4], [300.0, 1.0, 2.0]]);
        let q = quantize(&img, 1.0).unwrap();
        assert_eq!(q.image.data(), &[[10, 0, 0], [60, 100, 127], [255, 1, 2]]);
        assert!((q.clipped_fraction - 2.0 / 3.0).abs() < 1e-12);
        let q2 = quantize(&img, 2.0).unwrap();
        assert_eq!(q2.image.get(1, 0)[0], 120);
        assert_eq!(q2.image.get(1, 0)[1], 200);
        let dark = quantize(&img, 1e-9).unwrap();
        assert!(dark.image.data().iter().all(|p| *p == [0, 0, 0]));
        assert!(quantize(&img, 0.0).is_err());
    }

    #[test]
    fn noise_measurement_pools_temporal_variances() {
        // Pixel (0,0) red alternates 10/12: variance 2 over two frames.
        let a = Rgb8Image::from_vec(2, 1, vec![[10, 5, 5], [7, 7, 7]]);
        let b = Rgb8Image::from_vec(2, 1, vec![[12, 5, 5], [7, 7, 7]]);
        let s = measure_noise(&[a.clone(), b.clone()], [0, 0], 1, 0.0).unwrap();
        assert_eq!(s, [2f64.sqrt(), 0.0, 0.0]);
        // Sheppard's correction removes step^2 / 12.
        let s = measure_noise(&[a.clone(), b.clone()], [0, 0], 1, 1.0).unwrap();
        assert!((s[0] - (2.0f64 - 1.0 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        let c = Rgb8Image::from_vec(2, 2, vec![[0, 0, 0]; 4]);
        assert!(measure_noise(std::slice::from_ref(&a), [0, 0], 1, 0.0).is_err());
        assert!(measure_noise(&[a.clone(), c], [0, 0], 1, 0.0).is_err());
        assert!(measure_noise(&[a.clone(), b.clone()], [1, 0], 2, 0.0).is_err());
        assert!(measure_noise(&[], [0, 0], 1, 0.0).is_err());
    }

    #[test]
    fn noiseless_stack_measures_zero() {
        let img = RadianceImage::filled(9, 9, [0.5, 0.6, 0.7]);
        let stack = capture_stack(&img, 200.0, &NoiseModel::none(), 5);
        assert_eq!(measure_noise(&stack, [1, 1], 7, 1.0).unwrap(), [0.0; 3]);
    }

    #[test]
    fn chromaticity_points() {
        let img = Rgb8Image::from_vec(3, 1, vec![[200, 0, 0], [50, 50, 50], [0, 0, 0]]);
        let pts = chromaticity_scatter(&img, None);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], (1.0, 0.0));
        assert!((pts[1].0 - 1.0 / 3.0).abs() < 1e-12 && (pts[1].1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn superposed_primaries_fill_intermediate_chromaticities() {
        let pattern = Arc::new(generate_pattern(7, 3).unwrap().with_stripe_width(4).unwrap());
        let rig = Rig::new(
            vec![
                projector([-0.3, 0.0, 0.0], pattern.clone(), 0.0),
                projector([0.0, -0.3, 0.0], pattern, 90.0),
            ],
            vec![camera(120, 100)],
            "m",
        )
        .unwrap();
        let out = render(&plane_scene(1.0), &rig, 0, &RenderOptions::default()).unwrap();
        let q = quantize(&out.image, 120.0).unwrap();
        let pts = chromaticity_scatter(&q.image, None);
        // Mixtures land away from the three primary corners.
        let mixed = pts
            .iter()
            .filter(|(r, g)| {
                let b = 1.0 - r - g;
                r.max(*g).max(b) < 0.8
            })
            .count();
        assert!(mixed as f64 > 0.3 * pts.len() as f64, "{mixed} of {}", pts.len());
    }
}
