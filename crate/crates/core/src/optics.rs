//! Pinhole camera and projector geometry, stripe planes, and ray-plane
//! triangulation.
//!
//! Device frames follow the usual computer-vision convention: x right,
//! y down, z forward. A world point `X` maps to device coordinates
//! `R X + t`, and pixel `(u, v)` has its center at integer coordinates.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::pattern::StripePattern;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpticsError {
    #[error("rotation is not orthonormal with determinant +1 (residual {0:.3e})")]
    NotOrthonormal(f64),
    #[error("focal lengths must be positive, got ({0}, {1})")]
    BadFocal(f64, f64),
    #[error("image size must be nonzero")]
    EmptyImage,
    #[error("look-at target coincides with the eye or is parallel to up")]
    DegenerateLookAt,
    #[error("boundary index {index} outside 0..={count}")]
    BoundaryOutOfRange { index: f64, count: usize },
    #[error("ray meets plane at {angle_deg:.3} deg, below the {min_deg} deg threshold")]
    NearParallel { angle_deg: f64, min_deg: f64 },
    #[error("intersection lies behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("a rig needs {min}..={max} {what}, got {got}")]
    DeviceCount {
        what: &'static str,
        min: usize,
        max: usize,
        got: usize,
    },
}

/// Default minimum ray-plane angle accepted by triangulation.
pub const DEFAULT_MIN_ANGLE_DEG: f64 = 1.0;

/// Ideal pinhole device with no lens distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeModel {
    focal: [f64; 2],
    principal: [f64; 2],
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    image_size: [usize; 2],
}

/// World-frame ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// World plane `normal · X = offset` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

impl PinholeModel {
    pub fn new(
        focal: [f64; 2],
        principal: [f64; 2],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: [usize; 2],
    ) -> Result<Self, OpticsError> {
        if !(focal[0] > 0.0 && focal[1] > 0.0) {
            return Err(OpticsError::BadFocal(focal[0], focal[1]));
        }
        if image_size[0] == 0 || image_size[1] == 0 {
            return Err(OpticsError::EmptyImage);
        }
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if residual > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(OpticsError::NotOrthonormal(residual.max((det - 1.0).abs())));
        }
        Ok(Self {
            focal,
            principal,
            rotation,
            translation,
            image_size,
        })
    }

    /// Device at `eye` looking at `target`; `up` is the world direction that
    /// should appear toward the top of the image. The principal point is the
    /// image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        image_size: [usize; 2],
    ) -> Result<Self, OpticsError> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or(OpticsError::DegenerateLookAt)?;
        let x = (-up)
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or(OpticsError::DegenerateLookAt)?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let principal = [
            (image_size[0] as f64 - 1.0) / 2.0,
            (image_size[1] as f64 - 1.0) / 2.0,
        ];
        Self::new([focal, focal], principal, rotation, -rotation * eye, image_size)
    }

    pub fn focal(&self) -> [f64; 2] {
        self.focal
    }

    pub fn principal(&self) -> [f64; 2] {
        self.principal
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn image_size(&self) -> [usize; 2] {
        self.image_size
    }

    pub fn width(&self) -> usize {
        self.image_size[0]
    }

    pub fn height(&self) -> usize {
        self.image_size[1]
    }

    /// Center of projection in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis in world coordinates.
    pub fn axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn to_device(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Camera-frame depth (device z) of a world point.
    pub fn depth_of(&self, world: &Vector3<f64>) -> f64 {
        self.rotation.row(2).transpose().dot(world) + self.translation.z
    }

    /// Projects a world point; `None` when it is not in front of the device.
    pub fn project(&self, world: &Vector3<f64>) -> Option<Vector2<f64>> {
        let d = self.to_device(world);
        if d.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.focal[0] * d.x / d.z + self.principal[0],
            self.focal[1] * d.y / d.z + self.principal[1],
        ))
    }

    /// True when `(u, v)` lies inside the pixel-center hull of the image.
    pub fn in_image(&self, p: &Vector2<f64>) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x < self.image_size[0] as f64 - 0.5
            && p.y < self.image_size[1] as f64 - 0.5
    }

    /// World ray through pixel `(u, v)`.
    pub fn backproject_ray(&self, u: f64, v: f64) -> Ray {
        let dev = Vector3::new(
            (u - self.principal[0]) / self.focal[0],
            (v - self.principal[1]) / self.focal[1],
            1.0,
        );
        Ray {
            origin: self.center(),
            direction: (self.rotation.transpose() * dev).normalize(),
        }
    }

    /// World point on the ray through `(u, v)` at camera-frame depth `z`.
    pub fn point_at_depth(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let dev = Vector3::new(
            (u - self.principal[0]) / self.focal[0] * z,
            (v - self.principal[1]) / self.focal[1] * z,
            z,
        );
        self.rotation.transpose() * (dev - self.translation)
    }
}

/// Projector whose stripe pattern is rolled about its optical axis.
///
/// Roll 0 means stripes encode along the device x-axis: stripe `i` covers
/// the continuous stripe coordinate `[i, i+1)`, with the pattern centered
/// on the principal point.
#[derive(Debug, Clone)]
pub struct ProjectorModel {
    pub pinhole: PinholeModel,
    pub roll_deg: f64,
    pub pattern: Arc<StripePattern>,
    /// Radiance of a lit stripe; each primary is scaled by this value.
    pub intensity: f32,
}

impl ProjectorModel {
    pub fn new(pinhole: PinholeModel, roll_deg: f64, pattern: Arc<StripePattern>) -> Self {
        Self {
            pinhole,
            roll_deg,
            pattern,
            intensity: 1.0,
        }
    }

    /// Encoding direction in the projector image, `(cos roll, sin roll)`.
    pub fn encoding_direction(&self) -> Vector2<f64> {
        let r = self.roll_deg.to_radians();
        Vector2::new(r.cos(), r.sin())
    }

    fn stripe_width(&self) -> f64 {
        self.pattern.stripe_width_px() as f64
    }

    /// Continuous stripe coordinate of a projector pixel position.
    pub fn stripe_coordinate_px(&self, p: &Vector2<f64>) -> f64 {
        let e = self.encoding_direction();
        let [cx, cy] = self.pinhole.principal();
        ((p.x - cx) * e.x + (p.y - cy) * e.y) / self.stripe_width() + self.pattern.len() as f64 / 2.0
    }

    /// Stripe coordinate of a world point, if it lands inside both the
    /// projector image and the pattern.
    pub fn stripe_coordinate(&self, world: &Vector3<f64>) -> Option<f64> {
        let p = self.pinhole.project(world)?;
        if !self.pinhole.in_image(&p) {
            return None;
        }
        let s = self.stripe_coordinate_px(&p);
        (s >= 0.0 && s < self.pattern.len() as f64).then_some(s)
    }

    /// Projected radiance at a world point, ignoring occlusion and shading.
    pub fn illumination(&self, world: &Vector3<f64>) -> [f32; 3] {
        match self.stripe_coordinate(world) {
            Some(s) => {
                let c = self.pattern.stripes()[s as usize].rgb();
                [c[0] * self.intensity, c[1] * self.intensity, c[2] * self.intensity]
            }
            None => [0.0; 3],
        }
    }

    /// World plane through the projector center containing the stripe
    /// boundary at (possibly fractional) index `b`.
    pub fn stripe_plane(&self, b: f64) -> Result<Plane, OpticsError> {
        let n = self.pattern.len();
        if !(0.0..=n as f64).contains(&b) {
            return Err(OpticsError::BoundaryOutOfRange { index: b, count: n });
        }
        let e = self.encoding_direction();
        let [fx, fy] = self.pinhole.focal();
        let d = (b - n as f64 / 2.0) * self.stripe_width();
        let n_dev = Vector3::new(fx * e.x, fy * e.y, -d);
        let r = self.pinhole.rotation();
        let t = self.pinhole.translation();
        let len = n_dev.norm();
        Ok(Plane {
            normal: r.transpose() * n_dev / len,
            offset: -n_dev.dot(t) / len,
        })
    }
}

/// Intersects the camera ray through `(u, v)` with `plane`.
///
/// Returns the world point and its camera-frame depth. Rays meeting the
/// plane at less than `min_angle_deg` are rejected.
pub fn triangulate(
    camera: &PinholeModel,
    u: f64,
    v: f64,
    plane: &Plane,
    min_angle_deg: f64,
) -> Result<(Vector3<f64>, f64), OpticsError> {
    let ray = camera.backproject_ray(u, v);
    let cos = plane.normal.dot(&ray.direction);
    let angle_deg = cos.abs().clamp(0.0, 1.0).asin().to_degrees();
    if angle_deg < min_angle_deg {
        return Err(OpticsError::NearParallel {
            angle_deg,
            min_deg: min_angle_deg,
        });
    }
    let t = (plane.offset - plane.normal.dot(&ray.origin)) / cos;
    let point = ray.at(t);
    let depth = camera.depth_of(&point);
    if !(t > 0.0 && depth > 0.0) {
        return Err(OpticsError::BehindCamera(depth));
    }
    Ok((point, depth))
}

/// Calibrated projectors and cameras sharing one world frame.
#[derive(Debug, Clone)]
pub struct Rig {
    pub projectors: Vec<ProjectorModel>,
    pub cameras: Vec<PinholeModel>,
    pub world_units: String,
}

pub const MAX_PROJECTORS: usize = 3;
pub const MAX_CAMERAS: usize = 2;

impl Rig {
    pub fn new(
        projectors: Vec<ProjectorModel>,
        cameras: Vec<PinholeModel>,
        world_units: impl Into<String>,
    ) -> Result<Self, OpticsError> {
        if !(1..=MAX_PROJECTORS).contains(&projectors.len()) {
            return Err(OpticsError::DeviceCount {
                what: "projectors",
                min: 1,
                max: MAX_PROJECTORS,
                got: projectors.len(),
            });
        }
        if !(1..=MAX_CAMERAS).contains(&cameras.len()) {
            return Err(OpticsError::DeviceCount {
                what: "cameras",
                min: 1,
                max: MAX_CAMERAS,
                got: cameras.len(),
            });
        }
        Ok(Self {
            projectors,
            cameras,
            world_units: world_units.into(),
        })
    }

    /// Depth along the camera axis of the closest approach between the camera
    /// and projector optical axes; `None` for (near) parallel axes or when the
    /// closest point lies behind the camera.
    pub fn axes_crossing_depth(&self, camera: usize, projector: usize) -> Option<f64> {
        let c = &self.cameras[camera];
        let p = &self.projectors[projector].pinhole;
        let (o1, d1) = (c.center(), c.axis());
        let (o2, d2) = (p.center(), p.axis());
        let w = o1 - o2;
        let b = d1.dot(&d2);
        let denom = 1.0 - b * b;
        if denom < 1e-8 {
            return None;
        }
        let s = (b * d2.dot(&w) - d1.dot(&w)) / denom;
        (s > 0.0).then_some(s)
    }
}

/// Image-space gradient of a projector's stripe coordinate, seen by a camera
/// at pixel `(u, v)` on a fronto-parallel surface at camera depth `z`.
///
/// The result points toward increasing stripe index; its length is the
/// number of stripes per camera pixel. `None` when the projector does not
/// see the point.
pub fn stripe_gradient_at_depth(
    camera: &PinholeModel,
    projector: &ProjectorModel,
    u: f64,
    v: f64,
    z: f64,
) -> Option<Vector2<f64>> {
    let h = 0.5;
    let s = |du: f64, dv: f64| -> Option<f64> {
        let x = camera.point_at_depth(u + du, v + dv, z);
        let p = projector.pinhole.project(&x)?;
        Some(projector.stripe_coordinate_px(&p))
    };
    let gx = (s(h, 0.0)? - s(-h, 0.0)?) / (2.0 * h);
    let gy = (s(0.0, h)? - s(0.0, -h)?) / (2.0 * h);
    Some(Vector2::new(gx, gy))
}
