//! Command-line driver: pattern generation, simulation, reconstruction,
//! merging, analysis and metrics.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mpsl::analysis::{
    chromaticity_csv, coverage_csv, fit_loss_parameter, separability_curve, separability_csv, CoverageAssumptions,
    PUBLISHED_TABLE,
};
use mpsl::config::{read_json, Experiment, ExperimentConfig};
use mpsl::decode::{coordinate_accuracy, DecodeStats};
use mpsl::error::{AtStage, PipelineError, Stage};
use mpsl::io;
use mpsl::pattern::{derivative_visualization, generate_pattern, rasterize_pattern};
use mpsl::pipeline::{evaluate, reconstruct, simulate, Metrics};
use mpsl::range::{error_metrics, merge, ErrorMetrics, MergeMode, MergePolicy, Provenance, RangeImage};
use mpsl::raster::{RadianceImage, Raster};
use mpsl::scenarios;
use mpsl::scene::{chromaticity_scatter, quantize, to_float, GroundTruth};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Parser)]
#[command(name = "mpsl", version, about = "Range imaging from simultaneous color stripe projectors")]
struct Cli {
    /// Overrides the experiment's noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Existing directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a stripe pattern and writes its text, raster and derivative
    /// visualization.
    Pattern(PatternArgs),
    /// Renders and captures every camera of an experiment with ground truth.
    Simulate(SimulateArgs),
    /// Separates, decodes, triangulates and merges; simulates first when no
    /// images are given.
    Reconstruct(Box<ReconstructArgs>),
    /// Merges range images that share one camera grid.
    Merge(MergeArgs),
    /// Coverage model, separability curve and chromaticity exports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Compares a range image, and optionally decoded stripes, with truth.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct PatternArgs {
    /// Window length.
    #[arg(long)]
    k: usize,
    /// Number of stripe colors.
    #[arg(long, default_value_t = 3)]
    colors: usize,
    /// Raster stripe width, pixels.
    #[arg(long, default_value_t = 4)]
    stripe_width: usize,
    /// Raster height, pixels.
    #[arg(long, default_value_t = 64)]
    height: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment JSON file.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(scenarios::NAMES))]
    scenario: Option<String>,
    /// Per-channel sensor noise, gray levels, as `r,g,b`.
    #[arg(long, value_delimiter = ',')]
    noise_sigma: Option<Vec<f64>>,
    /// Gray levels per unit radiance.
    #[arg(long)]
    exposure: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Median,
    Windowed,
}

#[derive(Args)]
struct MergePolicyArgs {
    /// Merge rule; `auto` uses the windowed two-set rule for two ranges and
    /// the median otherwise.
    #[arg(long)]
    merge_mode: Option<ModeArg>,
    /// Neighbourhood side of the two-set rule, pixels.
    #[arg(long)]
    merge_window: Option<usize>,
    /// Sample count gap above which the larger set wins.
    #[arg(long)]
    count_gap: Option<usize>,
}

impl MergePolicyArgs {
    fn apply(&self, p: &mut MergePolicy) {
        if let Some(m) = self.merge_mode {
            p.mode = match m {
                ModeArg::Auto => MergeMode::Auto,
                ModeArg::Median => MergeMode::MedianOfN,
                ModeArg::Windowed => MergeMode::WindowedTwoSet,
            };
        }
        if let Some(w) = self.merge_window {
            p.window = w;
        }
        if let Some(g) = self.count_gap {
            p.count_gap_threshold = g;
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// One captured PPM per camera, in rig order.
    #[arg(long, value_delimiter = ',')]
    images: Vec<PathBuf>,
    /// Directory holding `simulate` ground truth for the given images.
    #[arg(long, requires = "images")]
    truth: Option<PathBuf>,
    /// Gaussian pre-smoothing before differentiation, pixels.
    #[arg(long)]
    presmooth: Option<f64>,
    /// Spacing of direction estimates, pixels.
    #[arg(long)]
    stride: Option<usize>,
    /// Minimum plurality votes for a feature identity.
    #[arg(long)]
    vote_min: Option<usize>,
    /// Minimum normalized dot product with a code signature.
    #[arg(long)]
    min_dot: Option<f64>,
    /// Largest ratio of neighbouring feature spacings within one run.
    #[arg(long)]
    max_spacing_ratio: Option<f64>,
    /// Feature strength floor in noise deviations of the separated
    /// derivative.
    #[arg(long)]
    noise_floor_sigmas: Option<f64>,
    /// Radius of the local color normalization; 0 disables it.
    #[arg(long)]
    normalize_radius: Option<usize>,
    /// Stripe continuity check radius; 0 disables it.
    #[arg(long)]
    continuity_radius: Option<usize>,
    /// Smallest ray-plane angle accepted, degrees.
    #[arg(long)]
    min_angle: Option<f64>,
    /// Smallest surface patch kept, pixels; 0 disables speckle removal.
    #[arg(long)]
    speckle_min_area: Option<usize>,
    /// Depth step treated as an occluding edge, world units; 0 disables.
    #[arg(long)]
    discontinuity_step: Option<f64>,
    #[command(flatten)]
    merge: MergePolicyArgs,
}

#[derive(Args)]
struct MergeArgs {
    /// Range images (PFM) on one camera grid.
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "merged.pfm")]
    name: String,
    #[command(flatten)]
    policy: MergePolicyArgs,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Coverage table for one to four projectors and cameras.
    Coverage {
        /// Per-triangulation loss; fitted to the published table when absent.
        #[arg(long)]
        loss: Option<f64>,
        /// Largest accepted amount residual of the fit, points.
        #[arg(long, default_value_t = 1.0)]
        tolerance: f64,
    },
    /// Separated-derivative strength against derivative direction.
    Separability {
        #[arg(long)]
        phi1: f64,
        #[arg(long)]
        phi2: f64,
        #[arg(long, default_value_t = 1800)]
        samples: usize,
    },
    /// rg chromaticity of every pixel of an image.
    Chromaticity {
        #[arg(long)]
        image: PathBuf,
        /// PGM mask; nonzero pixels are kept.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MetricsArgs {
    /// Range image (PFM).
    #[arg(long)]
    range: PathBuf,
    /// True depth (PFM).
    #[arg(long)]
    truth: PathBuf,
    /// Decoded stripe coordinates (PFM).
    #[arg(long, requires = "stripe_truth")]
    stripe: Option<PathBuf>,
    /// True stripe coordinates (PFM).
    #[arg(long, requires = "stripe")]
    stripe_truth: Option<PathBuf>,
    /// Image border excluded from decode statistics, pixels.
    #[arg(long, default_value_t = 3)]
    border: usize,
}

#[derive(Serialize)]
struct FileMetrics {
    range: ErrorMetrics,
    decode: Option<DecodeStats>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                e.exit();
            }
            let msg = e.render().to_string();
            eprintln!("mpsl: {} stage: {}", Stage::Config, msg.trim_end().trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mpsl: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if !cli.out.is_dir() {
        return Err(PipelineError::new(
            Stage::Io,
            format!("output directory {} does not exist", cli.out.display()),
        ));
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().at(Stage::Config)?;
    }
    let out = cli.out.as_path();
    match &cli.command {
        Command::Pattern(a) => cmd_pattern(a, out),
        Command::Simulate(a) => cmd_simulate(a, cli.seed, out),
        Command::Reconstruct(a) => cmd_reconstruct(a, cli.seed, out),
        Command::Merge(a) => cmd_merge(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| PipelineError::new(Stage::Io, format!("{}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("metrics serialize") + "\n"
}

fn cmd_pattern(a: &PatternArgs, out: &Path) -> Result<()> {
    let p = generate_pattern(a.k, a.colors).at(Stage::Pattern)?;
    let img = rasterize_pattern(&p, p.len() * a.stripe_width, a.height, a.stripe_width).at(Stage::Pattern)?;
    let rgb = quantize(&img, 255.0).at(Stage::Pattern)?.image;
    let stem = format!("pattern_k{}", a.k);
    write_text(&out.join(format!("{stem}.txt")), &p.to_text())?;
    io::write_ppm(out.join(format!("{stem}.ppm")), &rgb).at(Stage::Io)?;
    io::write_ppm(out.join(format!("{stem}_derivative.ppm")), &derivative_visualization(&rgb)).at(Stage::Io)?;
    println!("{} stripes, {} windows of length {}", p.len(), p.num_windows(), p.window_length());
    Ok(())
}

fn load_experiment(a: &ExperimentArgs, seed: Option<u64>) -> Result<Experiment> {
    let (mut cfg, base): (ExperimentConfig, Option<&Path>) = match (&a.config, &a.scenario) {
        (Some(path), _) => (read_json(path).at(Stage::Config)?, path.parent()),
        (None, Some(name)) => (
            scenarios::by_name(name)
                .ok_or_else(|| PipelineError::new(Stage::Config, format!("unknown scenario {name}")))?,
            None,
        ),
        (None, None) => return Err(PipelineError::new(Stage::Config, "either --config or --scenario is required")),
    };
    if let Some(s) = &a.noise_sigma {
        let s: [f64; 3] = s.as_slice().try_into().map_err(|_| {
            PipelineError::new(Stage::Config, format!("--noise-sigma takes 3 values, got {}", s.len()))
        })?;
        cfg.capture.noise_sigma_rgb = s;
    }
    if let Some(e) = a.exposure {
        cfg.capture.exposure = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.build(base).at(Stage::Config)
}

fn cmd_simulate(a: &SimulateArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let exp = load_experiment(&a.experiment, seed)?;
    let caps = simulate(&exp, exp.config.seed)?;
    for c in &caps {
        write_capture(out, c.camera, &c.image, &c.truth)?;
        println!(
            "camera {}: {}x{}, {:.3}% clipped",
            c.camera,
            c.image.width(),
            c.image.height(),
            100.0 * c.clipped_fraction
        );
    }
    write_text(&out.join("experiment.json"), &(exp.config.to_json() + "\n"))
}

fn write_capture(out: &Path, camera: usize, image: &mpsl::raster::Rgb8Image, truth: &GroundTruth) -> Result<()> {
    io::write_ppm(out.join(format!("cam{camera}.ppm")), image).at(Stage::Io)?;
    io::write_pfm_gray(out.join(format!("cam{camera}_depth.pfm")), &truth.depth).at(Stage::Io)?;
    for (p, s) in truth.stripe.iter().enumerate() {
        io::write_pfm_gray(out.join(format!("cam{camera}_stripe_p{p}.pfm")), s).at(Stage::Io)?;
    }
    Ok(())
}

fn read_truth(dir: &Path, camera: usize, projectors: usize) -> Result<GroundTruth> {
    let depth = io::read_pfm_gray(dir.join(format!("cam{camera}_depth.pfm"))).at(Stage::Io)?;
    let stripe = (0..projectors)
        .map(|p| io::read_pfm_gray(dir.join(format!("cam{camera}_stripe_p{p}.pfm"))).at(Stage::Io))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = depth.dims();
    Ok(GroundTruth {
        depth,
        stripe,
        albedo: Raster::filled(w, h, [0.0; 3]),
    })
}

fn cmd_reconstruct(a: &ReconstructArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut exp = load_experiment(&a.experiment, seed)?;
    apply_overrides(a, &mut exp.config);
    let n_cams = exp.rig.cameras.len();
    let (images, truths): (Vec<RadianceImage>, Option<Vec<GroundTruth>>) = if a.images.is_empty() {
        let caps = simulate(&exp, exp.config.seed)?;
        let images = caps.iter().map(|c| to_float(&c.image)).collect();
        (images, Some(caps.into_iter().map(|c| c.truth).collect()))
    } else {
        if a.images.len() != n_cams {
            return Err(PipelineError::new(
                Stage::Config,
                format!("{} images for {} cameras", a.images.len(), n_cams),
            ));
        }
        let images = a
            .images
            .iter()
            .map(|p| io::read_ppm(p).map(|i| to_float(&i)).at(Stage::Io))
            .collect::<Result<Vec<_>>>()?;
        let truths = match &a.truth {
            Some(dir) => Some(
                (0..n_cams)
                    .map(|c| read_truth(dir, c, exp.rig.projectors.len()))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        (images, truths)
    };
    let sigma = exp.config.capture.noise_sigma_rgb.iter().sum::<f64>() / 3.0;
    let recon = reconstruct(&exp.rig, &images, &exp.config.pipeline, sigma)?;
    for p in recon.pairs() {
        let tag = format!("c{}_p{}", p.camera, p.projector);
        io::write_pfm_gray(out.join(format!("range_{tag}.pfm")), &p.range.depth).at(Stage::Io)?;
        io::write_pfm_gray(out.join(format!("stripe_{tag}.pfm")), &p.decoded.coordinates()).at(Stage::Io)?;
        println!("pair {tag}: {} decoded, range coverage {:.3}", p.decoded.count(), p.range.coverage());
    }
    io::write_pfm_gray(out.join("merged.pfm"), &recon.merged.depth).at(Stage::Io)?;
    println!("merged: coverage {:.3}", recon.merged.coverage());
    if let Some(t) = truths {
        let m: Metrics = evaluate(&recon, &t, exp.config.pipeline.decode.params.border)?;
        if let Some(e) = &m.merged {
            println!("merged: rms {:.5}, outliers {:.5}", e.rms, e.outlier_fraction);
        }
        write_text(&out.join("metrics.json"), &to_json(&m))?;
    }
    Ok(())
}

fn apply_overrides(a: &ReconstructArgs, cfg: &mut ExperimentConfig) {
    let p = &mut cfg.pipeline;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut p.demux.presmooth_sigma, a.presmooth);
    set(&mut p.decode.params.min_dot, a.min_dot);
    set(&mut p.decode.params.max_spacing_ratio, a.max_spacing_ratio);
    set(&mut p.range.min_angle_deg, a.min_angle);
    set(&mut p.range.discontinuity_step, a.discontinuity_step);
    if let Some(s) = a.stride {
        p.demux.stride = s;
    }
    if let Some(v) = a.vote_min {
        p.decode.params.vote_min = v;
    }
    if let Some(k) = a.noise_floor_sigmas {
        p.decode.noise_floor_sigmas = Some(k);
    }
    if let Some(r) = a.normalize_radius {
        p.decode.params.normalize_radius = (r > 0).then_some(r);
    }
    if let Some(r) = a.continuity_radius {
        p.decode.params.continuity_radius = r;
    }
    if let Some(n) = a.speckle_min_area {
        p.range.speckle_min_area = n;
    }
    a.merge.apply(&mut p.range.merge);
}

fn read_range(path: &Path, index: usize) -> Result<RangeImage> {
    let depth = io::read_pfm_gray(path).at(Stage::Io)?;
    Ok(RangeImage::from_depth(
        depth,
        Provenance {
            projector: Some(index),
            camera: 0,
        },
    ))
}

fn cmd_merge(a: &MergeArgs, out: &Path) -> Result<()> {
    let ranges = a
        .inputs
        .iter()
        .enumerate()
        .map(|(i, p)| read_range(p, i))
        .collect::<Result<Vec<_>>>()?;
    let mut policy = MergePolicy::default();
    a.policy.apply(&mut policy);
    let refs: Vec<&RangeImage> = ranges.iter().collect();
    let merged = merge(&refs, &policy).at(Stage::Merge)?;
    io::write_pfm_gray(out.join(&a.name), &merged.depth).at(Stage::Io)?;
    for (p, r) in a.inputs.iter().zip(&ranges) {
        println!("{}: coverage {:.3}", p.display(), r.coverage());
    }
    println!("merged: coverage {:.3}", merged.coverage());
    Ok(())
}

fn cmd_analyze(a: &AnalyzeCommand, out: &Path) -> Result<()> {
    match a {
        AnalyzeCommand::Coverage { loss, tolerance } => {
            let mut assumptions = CoverageAssumptions::default();
            match loss {
                Some(l) => assumptions.per_triangulation_loss = *l,
                None => {
                    let fit = fit_loss_parameter(&PUBLISHED_TABLE, &assumptions, *tolerance).at(Stage::Analyze)?;
                    println!("fitted loss {:.5}, sse {:.3}, residuals {:?}", fit.loss, fit.sse, fit.residuals);
                    assumptions.per_triangulation_loss = fit.loss;
                }
            }
            assumptions.validate().at(Stage::Analyze)?;
            let csv = coverage_csv(&assumptions).at(Stage::Analyze)?;
            print!("{csv}");
            write_text(&out.join("coverage.csv"), &csv)
        }
        AnalyzeCommand::Separability { phi1, phi2, samples } => {
            let curve = separability_curve(*phi1, *phi2, *samples).at(Stage::Analyze)?;
            let best = curve.iter().copied().fold((0.0, f64::NEG_INFINITY), |b, s| if s.1 > b.1 { s } else { b });
            println!("maximum {:.4} at {:.2} deg", best.1, best.0);
            write_text(&out.join("separability.csv"), &separability_csv(&curve))
        }
        AnalyzeCommand::Chromaticity { image, mask } => {
            let img = io::read_ppm(image).at(Stage::Io)?;
            let mask = mask.as_ref().map(|m| io::read_mask(m).at(Stage::Io)).transpose()?;
            let pts = chromaticity_scatter(&img, mask.as_ref());
            println!("{} points", pts.len());
            write_text(&out.join("chromaticity.csv"), &chromaticity_csv(&pts))
        }
    }
}

fn cmd_metrics(a: &MetricsArgs, out: &Path) -> Result<()> {
    let range = read_range(&a.range, 0)?;
    let truth = RangeImage::from_depth(io::read_pfm_gray(&a.truth).at(Stage::Io)?, range.provenance);
    let range_metrics = error_metrics(&range, &truth, None).at(Stage::Metrics)?;
    let decode = match (&a.stripe, &a.stripe_truth) {
        (Some(s), Some(t)) => {
            let s = io::read_pfm_gray(s).at(Stage::Io)?;
            let t = io::read_pfm_gray(t).at(Stage::Io)?;
            if s.dims() != t.dims() {
                return Err(PipelineError::new(
                    Stage::Metrics,
                    format!("stripe rasters are {:?} and {:?}", s.dims(), t.dims()),
                ));
            }
            Some(coordinate_accuracy(&s, &t, None, a.border))
        }
        _ => None,
    };
    let m = FileMetrics {
        range: range_metrics,
        decode,
    };
    let json = to_json(&m);
    print!("{json}");
    write_text(&out.join("metrics.json"), &json)
}
