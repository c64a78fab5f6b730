//! The `morphokit` command line.
//!
//! Exit codes: 0 on success, 1 when a command fails on its inputs, 2 on usage
//! errors. Every command writes a `<output>.manifest.json` run manifest next
//! to its primary output.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{MorphoError, Result};
use crate::field::{jacobian_det, resample, GridSpec, Transformation};
use crate::io::{
    read_image, read_manifest, read_mfld, write_image, write_manifest, write_pgm, write_scalar, write_transformation,
};
use crate::registration::{register, RegistrationOptions, Smoothing};
use crate::render::{render_grid, stats_report};
use crate::scenarios::{cohort_study, curl_effect, recovery, twist_study, CohortConfig, RecoveryConfig, TwistConfig};
use crate::synth::{
    make_family6_with, make_rotational_pair, make_test_image, make_twisted_volume, stack_slice_maps, FamilySpec,
    ImageKind, RotationalSpec, DEFAULT_MAX_ANGLE,
};
use crate::template::{build_fast, build_general, Cohort, TemplateOptions};
use crate::varcon::{average_transformations, solve, DescentDirection, DescentOptions, VarConProblem};

/// Comment written at the top of every map file.
pub const DIRECTION_NOTE: &str =
    "direction: resample(moving, phi)(x) = moving(phi(x)); maps template coordinates into the subject";

#[derive(Parser, Debug)]
#[command(name = "morphokit", version, about = "Jacobian/curl-based deformation tools")]
pub struct Cli {
    /// Upper bound on worker threads (default: MORPHOKIT_THREADS, else all cores).
    #[arg(long, global = true, env = "MORPHOKIT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic maps, images and volumes.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Build a map from a prescribed Jacobian and curl.
    Construct(ConstructArgs),
    /// Average maps through their Jacobians and curls.
    Average(AverageArgs),
    /// Register a moving image onto a fixed image.
    Register(RegisterArgs),
    /// Build a template from an image cohort.
    Template(TemplateArgs),
    /// Draw a map as a deformed grid.
    Render(RenderArgs),
    /// Jacobian, curl and displacement statistics of a map.
    Stats(StatsArgs),
    /// Run a named reference scenario end to end.
    Repro(ReproArgs),
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Opposite tapered rotations D1, D2.
    Pair {
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_ANGLE)]
        angle: f64,
        #[arg(long)]
        out_d1: PathBuf,
        #[arg(long)]
        out_d2: PathBuf,
    },
    /// Six maps whose Jacobians average to one and curls to zero.
    Family6 {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long, default_value_t = FamilySpec::default().amplitude)]
        amplitude: f64,
        #[arg(long, default_value_t = FamilySpec::default().max_strain)]
        max_strain: f64,
        /// Directory receiving D1.mfld .. D6.mfld and family.txt.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// A textured test image.
    Image {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Kind::Blobs)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// A volume of a rotating object and its slice-wise twisted copy.
    TwistedVolume {
        #[arg(long, default_value_t = 24)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        twist_max: f64,
        /// Directory receiving reference.txt, twisted.txt (PGM slice stacks)
        /// and slice_maps.mfld.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Rings,
    Blobs,
    Checker,
}

impl From<Kind> for ImageKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Rings => ImageKind::Rings,
            Kind::Blobs => ImageKind::Blobs,
            Kind::Checker => ImageKind::Checker,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Direction {
    Steepest,
    Cg,
}

#[derive(Args, Debug)]
pub struct DescentArgs {
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Initial step, as largest node movement in units of h.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub obj_tol: Option<f64>,
    #[arg(long)]
    pub jmin_guard: Option<f64>,
    #[arg(long, value_enum)]
    pub direction: Option<Direction>,
}

impl DescentArgs {
    fn resolve(&self) -> DescentOptions {
        let mut o = DescentOptions::default();
        if let Some(v) = self.max_steps {
            o.max_steps = v;
        }
        if let Some(v) = self.step {
            o.step = v;
        }
        if let Some(v) = self.obj_tol {
            o.obj_tol = v;
        }
        if let Some(v) = self.jmin_guard {
            o.jmin_guard = v;
        }
        if let Some(d) = self.direction {
            o.direction = match d {
                Direction::Steepest => DescentDirection::Steepest,
                Direction::Cg => DescentDirection::ConjugateGradient,
            };
        }
        o
    }
}

#[derive(Args, Debug)]
pub struct ConstructArgs {
    #[arg(long)]
    pub f0: PathBuf,
    #[arg(long)]
    pub g0: PathBuf,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub descent: DescentArgs,
}

#[derive(Args, Debug)]
pub struct AverageArgs {
    /// Map files to average (or a single .txt list of them).
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub descent: DescentArgs,
}

#[derive(Args, Debug)]
pub struct RegistrationArgs {
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub outer: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub ssd_tol: Option<f64>,
    #[arg(long)]
    pub reg_jmin_guard: Option<f64>,
    /// Use the one-solve displacement smoothing instead of control descent.
    #[arg(long)]
    pub sobolev: bool,
}

impl RegistrationArgs {
    fn resolve(&self, base: RegistrationOptions) -> RegistrationOptions {
        let mut o = base;
        if let Some(v) = self.levels {
            o.multires_levels = v;
        }
        if let Some(v) = self.outer {
            o.outer_max = v;
        }
        if let Some(v) = self.step {
            o.step = v;
        }
        if let Some(v) = self.ssd_tol {
            o.ssd_tol = v;
        }
        if let Some(v) = self.reg_jmin_guard {
            o.jmin_guard = v;
        }
        if self.sobolev {
            o.smoothing = Smoothing::Displacement;
        }
        o
    }
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    /// PGM image, or a .txt manifest of PGM slices for a volume.
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub out_phi: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the warped moving image.
    #[arg(long)]
    pub out_warped: Option<PathBuf>,
    #[command(flatten)]
    pub registration: RegistrationArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    General,
    Fast,
}

#[derive(Args, Debug)]
pub struct TemplateArgs {
    /// Text file with one image path per line.
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Zero-based index of the initial image.
    #[arg(long, default_value_t = 0)]
    pub init: usize,
    #[arg(long, default_value_t = 2)]
    pub passes: usize,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub registration: RegistrationArgs,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Example1,
    Example2,
    Example2Noisy,
    Example3,
    Example4,
    Example5,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    #[arg(value_enum)]
    pub scenario: Scenario,
    #[arg(long, default_value = "repro-out")]
    pub out_dir: PathBuf,
    /// Grid size (scenario default when omitted).
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise amplitude for example2-noisy, in units of h.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub descent: DescentArgs,
}

/// Everything needed to re-run a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub options: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub threads: usize,
    pub wall_time_s: f64,
}

struct Run {
    command: &'static str,
    options: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<u64>,
}

impl Run {
    fn new(command: &'static str, options: Value) -> Self {
        Run {
            command,
            options,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: Vec::new(),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").map_err(|e| MorphoError::Io(e).in_stage(format!("writing {}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| MorphoError::Io(e).in_stage(format!("creating {}", dir.display())))
}

fn read_map(path: &Path) -> Result<Transformation> {
    read_mfld(path)?
        .into_transformation()
        .map_err(|e| e.in_stage(format!("reading {}", path.display())))
}

fn save_map(path: &Path, t: &Transformation, run: &mut Run) -> Result<()> {
    write_transformation(path, t, &[DIRECTION_NOTE])?;
    run.outputs.push(path.to_path_buf());
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match pool.install(|| execute(cli.command, &argv, pool.current_num_threads())) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command, argv: &[String], threads: usize) -> Result<()> {
    let clock = Instant::now();
    let run = match command {
        Command::Synth(s) => synth(s)?,
        Command::Construct(a) => construct(a)?,
        Command::Average(a) => average(a)?,
        Command::Register(a) => register_cmd(a)?,
        Command::Template(a) => template(a)?,
        Command::Render(a) => render(a)?,
        Command::Stats(a) => stats(a)?,
        Command::Repro(a) => repro(a)?,
    };
    let Some(primary) = run.outputs.first() else {
        return Ok(());
    };
    let manifest = RunManifest {
        command: run.command.into(),
        argv: argv.to_vec(),
        options: run.options,
        inputs: run.inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: run.outputs.iter().map(|p| p.display().to_string()).collect(),
        seeds: run.seeds,
        version: env!("CARGO_PKG_VERSION").into(),
        threads,
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    let mut name = primary.clone().into_os_string();
    name.push(".manifest.json");
    write_json(Path::new(&name), &manifest)
}

fn synth(cmd: SynthCommand) -> Result<Run> {
    match cmd {
        SynthCommand::Pair { n, angle, out_d1, out_d2 } => {
            let grid = GridSpec::square(n)?;
            let spec = RotationalSpec::default_for(&grid).with_angle(angle);
            let (d1, d2) = make_rotational_pair(&grid, &spec)?;
            let mut run = Run::new("synth pair", to_json(&spec)?);
            save_map(&out_d1, &d1, &mut run)?;
            save_map(&out_d2, &d2, &mut run)?;
            Ok(run)
        }
        SynthCommand::Family6 { n, seed, amplitude, max_strain, out_dir } => {
            let spec = FamilySpec { amplitude, max_strain };
            let family = make_family6_with(&GridSpec::square(n)?, seed, &spec)?;
            ensure_dir(&out_dir)?;
            let mut run = Run::new("synth family6", json!({ "n": n, "family": spec }));
            run.seeds.push(seed);
            let list = out_dir.join("family.txt");
            run.outputs.push(list.clone());
            let mut names = Vec::new();
            for (k, d) in family.iter().enumerate() {
                let name = format!("D{}.mfld", k + 1);
                save_map(&out_dir.join(&name), d, &mut run)?;
                names.push(name);
            }
            write_manifest(&list, &names)?;
            Ok(run)
        }
        SynthCommand::Image { n, kind, seed, out } => {
            let img = make_test_image(&GridSpec::square(n)?, kind.into(), seed)?;
            write_pgm(&out, &img)?;
            let mut run = Run::new("synth image", json!({ "n": n, "kind": ImageKind::from(kind) }));
            run.seeds.push(seed);
            run.outputs.push(out);
            Ok(run)
        }
        SynthCommand::TwistedVolume { n, twist_max, out_dir } => {
            let vol = make_twisted_volume(n, twist_max)?;
            ensure_dir(&out_dir)?;
            let mut run = Run::new("synth twisted-volume", json!({ "n": n, "twist_max": twist_max }));
            let reference = out_dir.join("reference.txt");
            let twisted = out_dir.join("twisted.txt");
            write_image(&reference, &vol.reference)?;
            write_image(&twisted, &vol.twisted)?;
            run.outputs.push(reference);
            run.outputs.push(twisted);
            save_map(&out_dir.join("slice_maps.mfld"), &stack_slice_maps(&vol.slice_maps)?, &mut run)?;
            Ok(run)
        }
    }
}

fn construct(a: ConstructArgs) -> Result<Run> {
    let opts = a.descent.resolve();
    let f0 = read_mfld(&a.f0)?.into_scalar()?;
    let g0 = read_mfld(&a.g0)?.into_scalar()?;
    let problem = match &a.init {
        Some(p) => VarConProblem::with_init(f0, g0, read_map(p)?)?,
        None => VarConProblem::new(f0, g0)?,
    };
    let (t, report) = solve(&problem, &opts)?;
    let mut run = Run::new("construct", to_json(&opts)?);
    run.inputs.extend([a.f0, a.g0]);
    run.inputs.extend(a.init);
    save_map(&a.out, &t, &mut run)?;
    write_json(&a.report, &report)?;
    run.outputs.push(a.report);
    Ok(run)
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if let [single] = inputs {
        if single.extension().is_some_and(|e| e == "txt") {
            return read_manifest(single);
        }
    }
    Ok(inputs.to_vec())
}

fn average(a: AverageArgs) -> Result<Run> {
    let opts = a.descent.resolve();
    let paths = expand_inputs(&a.inputs)?;
    let maps = paths.iter().map(|p| read_map(p)).collect::<Result<Vec<_>>>()?;
    let (t, report) = average_transformations(&maps, a.weights.as_deref(), &opts)?;
    let mut run = Run::new("average", json!({ "descent": opts, "weights": a.weights }));
    run.inputs = paths;
    save_map(&a.out, &t, &mut run)?;
    write_json(&a.report, &report)?;
    run.outputs.push(a.report);
    Ok(run)
}

fn register_cmd(a: RegisterArgs) -> Result<Run> {
    let opts = a.registration.resolve(RegistrationOptions::default());
    let moving = read_image(&a.moving)?;
    let fixed = read_image(&a.fixed)?;
    let result = register(&moving, &fixed, &opts)?;
    let mut run = Run::new("register", to_json(&opts)?);
    run.inputs.extend([a.moving, a.fixed]);
    save_map(&a.out_phi, &result.phi, &mut run)?;
    write_json(&a.report, &result.report())?;
    run.outputs.push(a.report);
    if let Some(w) = a.out_warped {
        write_image(&w, &resample(&moving, &result.phi)?)?;
        run.outputs.push(w);
    }
    Ok(run)
}

fn template(a: TemplateArgs) -> Result<Run> {
    let opts = TemplateOptions {
        registration: a.registration.resolve(RegistrationOptions::default()),
        descent: DescentOptions::default(),
    };
    let paths = read_manifest(&a.cohort)?;
    let images = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    let labels = paths
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect();
    let cohort = Cohort::new(images, labels)?;
    let reference = a.reference.as_ref().map(|p| read_image(p)).transpose()?;
    let (img, report) = match a.mode {
        Mode::General => build_general(&cohort, a.init, a.passes, reference.as_ref(), &opts)?,
        Mode::Fast => build_fast(&cohort, a.init, reference.as_ref(), &opts)?,
    };
    let mut run = Run::new(
        "template",
        json!({ "mode": a.mode, "init": a.init, "passes": a.passes, "options": opts }),
    );
    run.inputs.push(a.cohort);
    run.inputs.extend(paths);
    run.inputs.extend(a.reference);
    write_image(&a.out, &img)?;
    run.outputs.push(a.out);
    write_json(&a.report, &report)?;
    run.outputs.push(a.report);
    Ok(run)
}

fn render(a: RenderArgs) -> Result<Run> {
    let t = read_map(&a.input)?;
    let img = render_grid(&t, a.stride)?;
    write_pgm(&a.out, &img)?;
    let mut run = Run::new("render", json!({ "stride": a.stride }));
    run.inputs.push(a.input);
    run.outputs.push(a.out);
    Ok(run)
}

fn stats(a: StatsArgs) -> Result<Run> {
    let t = read_map(&a.input)?;
    let report = stats_report(&t)?;
    let mut run = Run::new("stats", Value::Null);
    run.inputs.push(a.input);
    match a.out {
        Some(p) => {
            write_json(&p, &report)?;
            run.outputs.push(p);
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(run)
}

fn repro(a: ReproArgs) -> Result<Run> {
    ensure_dir(&a.out_dir)?;
    let dir = &a.out_dir;
    let report_path = dir.join("report.json");
    let mut run = Run::new("repro", Value::Null);
    run.outputs.push(report_path.clone());
    match a.scenario {
        Scenario::Example1 => {
            let s = curl_effect(a.n.unwrap_or(128))?;
            run.options = json!({ "scenario": a.scenario, "n": s.report.n });
            write_json(&report_path, &s.report)?;
            save_map(&dir.join("D1.mfld"), &s.d1, &mut run)?;
            save_map(&dir.join("D2.mfld"), &s.d2, &mut run)?;
            for (name, img) in [("image.pgm", &s.image), ("warped_D1.pgm", &s.warped1), ("warped_D2.pgm", &s.warped2)] {
                write_pgm(&dir.join(name), img)?;
                run.outputs.push(dir.join(name));
            }
            for (name, t) in [("grid_D1.pgm", &s.d1), ("grid_D2.pgm", &s.d2)] {
                write_pgm(&dir.join(name), &render_grid(t, 4)?)?;
                run.outputs.push(dir.join(name));
            }
            let j = jacobian_det(&s.d1);
            write_scalar(&dir.join("J_D1.mfld"), &j, &[])?;
            run.outputs.push(dir.join("J_D1.mfld"));
        }
        Scenario::Example2 | Scenario::Example2Noisy => {
            let mut cfg = RecoveryConfig {
                descent: a.descent.resolve(),
                seed: a.seed,
                ..RecoveryConfig::default()
            };
            if let Some(n) = a.n {
                cfg.n = n;
            }
            if matches!(a.scenario, Scenario::Example2Noisy) {
                cfg.noise = a.noise;
                run.seeds.push(a.seed);
            }
            run.options = json!({ "scenario": a.scenario, "config": cfg });
            let s = recovery(&cfg)?;
            write_json(&report_path, &s.report)?;
            save_map(&dir.join("start.mfld"), &s.start, &mut run)?;
            save_map(&dir.join("result.mfld"), &s.result, &mut run)?;
            save_map(&dir.join("target.mfld"), &s.target, &mut run)?;
            write_pgm(&dir.join("grid_result.pgm"), &render_grid(&s.result, 4)?)?;
            run.outputs.push(dir.join("grid_result.pgm"));
        }
        Scenario::Example3 | Scenario::Example4 => {
            let mut cfg = CohortConfig::default();
            if let Some(n) = a.n {
                cfg.n = n;
            }
            let general = matches!(a.scenario, Scenario::Example3);
            run.options = json!({ "scenario": a.scenario, "config": cfg });
            run.seeds.push(cfg.seed);
            let s = cohort_study(&cfg, general, !general)?;
            write_json(&report_path, &s.report)?;
            write_pgm(&dir.join("truth.pgm"), &s.truth)?;
            run.outputs.push(dir.join("truth.pgm"));
            let templates = if general { &s.general_templates } else { &s.fast_templates };
            for (k, (img, label)) in templates.iter().zip(s.cohort.labels()).enumerate() {
                let member = dir.join(format!("{label}.pgm"));
                write_pgm(&member, &s.cohort.images()[k])?;
                let name = dir.join(format!("template_from_{label}.pgm"));
                write_pgm(&name, img)?;
                run.outputs.extend([member, name]);
            }
        }
        Scenario::Example5 => {
            let mut cfg = TwistConfig::default();
            if let Some(n) = a.n {
                cfg.n = n;
            }
            run.options = json!({ "scenario": a.scenario, "config": cfg });
            let s = twist_study(&cfg)?;
            write_json(&report_path, &s.report)?;
            for (name, img) in [("reference.txt", &s.reference), ("twisted.txt", &s.twisted), ("recovered.txt", &s.recovered)] {
                write_image(&dir.join(name), img)?;
                run.outputs.push(dir.join(name));
            }
            save_map(&dir.join("phi.mfld"), &s.phi, &mut run)?;
            save_map(&dir.join("truth.mfld"), &s.truth, &mut run)?;
        }
    }
    Ok(run)
}
