//! Reference experiments.
//!
//! The camera sits at the world origin looking along +z with world +y
//! pointing down the image. Each projector is offset from the camera along
//! its own encoding direction, so every projector-camera baseline lies
//! across that projector's stripes. Projector and camera focal lengths are
//! equal, which makes a 4-pixel projector stripe about 4 camera pixels wide
//! at any depth.

use crate::config::{
    CaptureConfig, DeviceConfig, ExperimentConfig, PatternConfig, PipelineParams, ProjectorConfig, RigConfig, Source,
};
use crate::scene::{AmbientLight, Albedo, Bump, Primitive, RenderOptions, Scene};

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 6] = ["double", "triple", "two_cups", "color_panel", "face_2x2", "venus"];

const UP: [f64; 3] = [0.0, -1.0, 0.0];

fn camera(eye: [f64; 3], target: [f64; 3], size: [usize; 2], focal: f64) -> DeviceConfig {
    DeviceConfig::LookAt {
        eye,
        target,
        up: UP,
        focal,
        image_size: size,
    }
}

/// Projector `baseline` away from the origin along `roll_deg`, aimed at
/// `target`.
fn projector(roll_deg: f64, baseline: f64, target: [f64; 3], focal: f64) -> ProjectorConfig {
    let r = roll_deg.to_radians();
    ProjectorConfig {
        device: DeviceConfig::LookAt {
            eye: [baseline * r.cos(), baseline * r.sin(), 0.0],
            target,
            up: UP,
            focal,
            image_size: [800, 800],
        },
        roll_deg,
        intensity: 1.0,
    }
}

fn rig(rolls: &[f64], baseline: f64, cameras: Vec<DeviceConfig>, focal: f64, target: [f64; 3]) -> RigConfig {
    RigConfig {
        pattern: PatternConfig::default(),
        projectors: rolls.iter().map(|&r| projector(r, baseline, target, focal)).collect(),
        cameras,
        world_units: "m".into(),
    }
}

fn plane(z: f64, albedo: Albedo) -> Primitive {
    Primitive::Plane {
        point: [0.0, 0.0, z],
        normal: [0.0, 0.0, -1.0],
        albedo,
    }
}

fn gray(v: f32) -> Albedo {
    Albedo::constant([v; 3])
}

fn experiment(name: &str, rig: RigConfig, primitives: Vec<Primitive>) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        rig: Source::Inline(rig),
        scene: Source::Inline(Scene {
            primitives,
            ambient: AmbientLight::default(),
        }),
        render: RenderOptions::default(),
        capture: CaptureConfig::default(),
        pipeline: PipelineParams::default(),
        seed: 7,
    }
}

/// Sphere in front of a plane, two projectors with perpendicular stripes,
/// one 640x480 camera.
pub fn double() -> ExperimentConfig {
    let target = [0.0, 0.0, 1.2];
    let cam = camera([0.0; 3], target, [640, 480], 800.0);
    experiment(
        "double",
        rig(&[0.0, 90.0], 0.35, vec![cam], 800.0, target),
        vec![
            plane(1.3, gray(0.9)),
            Primitive::Sphere {
                center: [0.0, 0.0, 1.05],
                radius: 0.2,
                albedo: gray(0.9),
            },
        ],
    )
}

/// The double scene lit by three projectors 60 degrees apart, 320x240.
pub fn triple() -> ExperimentConfig {
    let target = [0.0, 0.0, 1.2];
    let cam = camera([0.0; 3], target, [320, 240], 400.0);
    let mut e = double();
    e.name = "triple".into();
    e.rig = Source::Inline(rig(&[0.0, 60.0, 120.0], 0.35, vec![cam], 400.0, target));
    if let Source::Inline(s) = &mut e.scene {
        s.primitives[1] = Primitive::Sphere {
            center: [0.0, 0.0, 1.05],
            radius: 0.15,
            albedo: gray(0.9),
        };
    }
    e.pipeline.demux.presmooth_sigma = 0.5;
    e
}

/// Two spheres in front of a plane, lit from opposite sides so that each
/// projector leaves cast shadows the other one fills.
pub fn two_cups() -> ExperimentConfig {
    let target = [0.0, 0.0, 1.2];
    let cam = camera([0.0; 3], target, [320, 240], 400.0);
    let cup = |x: f64| Primitive::Sphere {
        center: [x, 0.0, 1.1],
        radius: 0.09,
        albedo: gray(0.9),
    };
    experiment(
        "two_cups",
        rig(&[135.0, 45.0], 0.4, vec![cam], 400.0, target),
        vec![plane(1.3, gray(0.9)), cup(-0.14), cup(0.14)],
    )
}

/// Plane with a grid of strongly colored cells: red, green, blue, cyan,
/// magenta and yellow. Unsaturated channels reflect 10%.
pub fn color_panel() -> ExperimentConfig {
    let target = [0.0, 0.0, 1.2];
    let cam = camera([0.0; 3], target, [320, 240], 400.0);
    let (lo, hi) = (0.1, 0.95);
    let colors = vec![
        [hi, lo, lo],
        [lo, hi, lo],
        [lo, lo, hi],
        [lo, hi, hi],
        [hi, lo, hi],
        [hi, hi, lo],
    ];
    experiment(
        "color_panel",
        rig(&[0.0, 90.0], 0.35, vec![cam], 400.0, target),
        vec![plane(
            1.2,
            Albedo::Grid {
                origin: [-0.3, -0.2],
                cell: 0.2,
                columns: 3,
                colors,
            },
        )],
    )
}

/// Face-like height field in front of a plane.
fn face(base_z: f64) -> Vec<Primitive> {
    let b = |center: [f64; 2], amplitude: f64, sigma: [f64; 2]| Bump {
        center,
        amplitude,
        sigma,
    };
    vec![
        plane(base_z + 0.1, gray(0.8)),
        Primitive::HeightField {
            base_z,
            x_range: [-0.2, 0.2],
            y_range: [-0.26, 0.26],
            bumps: vec![
                b([0.0, 0.0], 0.12, [0.11, 0.15]),
                b([0.0, 0.01], 0.035, [0.012, 0.035]),
                b([-0.045, -0.05], -0.015, [0.02, 0.012]),
                b([0.045, -0.05], -0.015, [0.02, 0.012]),
                b([0.0, -0.085], 0.012, [0.07, 0.015]),
                b([0.0, 0.075], 0.008, [0.03, 0.008]),
                b([0.0, 0.13], 0.015, [0.035, 0.025]),
            ],
            step: 0.002,
            albedo: gray(0.85),
        },
    ]
}

/// Face-like surface seen by two cameras under two projectors: four
/// triangulation pairs from one frame per camera.
pub fn face_2x2() -> ExperimentConfig {
    let target = [0.0, 0.0, 1.2];
    let cams = vec![
        camera([0.0; 3], target, [320, 240], 400.0),
        camera([-0.12, -0.06, 0.0], target, [320, 240], 400.0),
    ];
    experiment("face_2x2", rig(&[0.0, 90.0], 0.35, cams, 400.0, target), face(1.3))
}

/// Face-like surface under three projectors.
pub fn venus() -> ExperimentConfig {
    let target = [0.0, 0.0, 1.2];
    let cam = camera([0.0; 3], target, [320, 240], 400.0);
    let mut e = experiment("venus", rig(&[0.0, 60.0, 120.0], 0.35, vec![cam], 400.0, target), face(1.3));
    e.pipeline.demux.presmooth_sigma = 0.5;
    e
}

pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    Some(match name {
        "double" => double(),
        "triple" => triple(),
        "two_cups" => two_cups(),
        "color_panel" => color_panel(),
        "face_2x2" => face_2x2(),
        "venus" => venus(),
        _ => return None,
    })
}

/// Copy of an experiment with a smaller camera image, scaling the camera
/// focal length to keep the field of view. Projector stripes then appear
/// narrower, so the scale should stay close to one.
pub fn with_camera_scale(mut e: ExperimentConfig, scale: f64) -> ExperimentConfig {
    if let Source::Inline(r) = &mut e.rig {
        for c in &mut r.cameras {
            if let DeviceConfig::LookAt { focal, image_size, .. } = c {
                *focal *= scale;
                *image_size = image_size.map(|s| ((s as f64) * scale).round() as usize);
            }
        }
    }
    e
}
