use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::Value;

use untangle_core::dcd::Tolerances;
use untangle_core::mesh::{load_obj, save_obj, LoadOptions};
use untangle_core::sim::{run_scenario, SceneConfig};
use untangle_core::untangler::{untangle_with_observer, UntangleConfig, Untangler};
use untangle_core::TriangleMesh;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_BUDGET: u8 = 2;
const EXIT_NOT_CLEAN: u8 = 3;

#[derive(Parser)]
#[command(name = "untangle", version, about = "Detect and repair interpenetrating triangle meshes")]
struct Cli {
    /// Worker threads; 1 gives bitwise reproducible output
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count edge-face crossings between two meshes
    Detect(DetectArgs),
    /// Move vertices until the two meshes no longer cross
    Untangle(UntangleArgs),
    /// Run a scene and write OBJ frames plus a report
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Oriented {
    A,
    B,
    Both,
}

impl Oriented {
    fn flags(self) -> (bool, bool) {
        match self {
            Oriented::A => (true, false),
            Oriented::B => (false, true),
            Oriented::Both => (true, true),
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    mesh_a: PathBuf,
    mesh_b: PathBuf,
    /// Which mesh has a meaningful front side
    #[arg(long, value_enum, default_value = "b")]
    oriented: Oriented,
    /// Write one JSON record per crossing
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Also emit the penetration stencils built from the crossings
    #[arg(long)]
    dump_stencils: bool,
    /// Exit with status 3 unless no crossing is found
    #[arg(long)]
    expect_clean: bool,
}

#[derive(Args)]
struct UntangleArgs {
    mesh_a: PathBuf,
    mesh_b: PathBuf,
    #[arg(long, value_enum)]
    oriented: Option<Oriented>,
    /// Signed distance each stencil is pushed to (metres)
    #[arg(long, value_name = "METERS")]
    post_distance: Option<f64>,
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
    #[arg(long, value_name = "N")]
    diffusion_rings: Option<usize>,
    #[arg(long, value_name = "N")]
    diffusion_iters: Option<usize>,
    /// Write both meshes every K iterations
    #[arg(long, value_name = "K")]
    snapshot_every: Option<usize>,
    /// Halve corrections after three consecutive rises in the crossing count
    #[arg(long)]
    damping_guard: bool,
    /// Include per-phase wall-clock timings in the report
    #[arg(long)]
    timings: bool,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    scene: PathBuf,
    /// Number of output frames, including the initial one
    #[arg(long, value_name = "N")]
    frames: Option<usize>,
    /// Defaults to `<scene name>_frames`
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNTANGLE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Detect(args) => detect(&args),
        Command::Untangle(args) => untangle(&args),
        Command::Simulate(args) => simulate(&args),
    }
}

fn load_pair(a: &Path, b: &Path, oriented: Oriented) -> Result<(TriangleMesh, TriangleMesh)> {
    let (oa, ob) = oriented.flags();
    let load = |path: &Path, oriented: bool| {
        load_obj(path, &LoadOptions { oriented, ..LoadOptions::default() })
            .with_context(|| format!("reading {}", path.display()))
    };
    Ok((load(a, oa)?, load(b, ob)?))
}

fn record(kind: &str, mut value: Value) -> Value {
    if let Value::Object(map) = &mut value {
        map.insert("record".into(), Value::from(kind));
    }
    value
}

fn detect(args: &DetectArgs) -> Result<u8> {
    let (a, b) = load_pair(&args.mesh_a, &args.mesh_b, args.oriented)?;
    let untangler = Untangler::new(&a, &b)?;
    let hits = untangler.detect(&untangler.certification_directions(), &Tolerances::default());
    println!("{} intersections", hits.len());

    let mut records = Vec::new();
    if args.json.is_some() {
        for hit in &hits {
            records.push(record("intersection", serde_json::to_value(hit)?));
        }
    }
    if args.dump_stencils {
        for stencil in untangler.stencils(&hits)? {
            records.push(record("stencil", serde_json::to_value(stencil)?));
        }
    }
    if !records.is_empty() || args.json.is_some() {
        let mut out: Box<dyn Write> = match &args.json {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        };
        for r in &records {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out)?;
        }
        out.flush()?;
    }

    if args.expect_clean && !hits.is_empty() {
        return Ok(EXIT_NOT_CLEAN);
    }
    Ok(EXIT_OK)
}

/// Output stems, suffixed `_a`/`_b` when both inputs share one.
fn output_stems(a: &Path, b: &Path) -> [String; 2] {
    let stem = |p: &Path| p.file_stem().map_or_else(|| "mesh".to_owned(), |s| s.to_string_lossy().into_owned());
    let (sa, sb) = (stem(a), stem(b));
    if sa == sb {
        [format!("{sa}_a"), format!("{sb}_b")]
    } else {
        [sa, sb]
    }
}

fn untangle(args: &UntangleArgs) -> Result<u8> {
    let Some(oriented) = args.oriented else {
        bail!("no oriented mesh designated; pass --oriented a, b or both");
    };
    let (a, b) = load_pair(&args.mesh_a, &args.mesh_b, oriented)?;

    let mut config = UntangleConfig::default();
    if let Some(d) = args.post_distance {
        config.post_distance = d;
    }
    if let Some(n) = args.max_iters {
        config.max_iterations = n;
    }
    if let Some(n) = args.diffusion_rings {
        config.diffusion.rings = n;
    }
    if let Some(n) = args.diffusion_iters {
        config.diffusion.iterations = n;
    }
    config.damping_guard = args.damping_guard;
    if args.snapshot_every == Some(0) {
        bail!("--snapshot-every must be at least 1");
    }

    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let stems = output_stems(&args.mesh_a, &args.mesh_b);
    let mut snapshot_error = None;
    let (a_out, b_out, mut report) = untangle_with_observer(&a, &b, &config, |stats, positions| {
        let Some(k) = args.snapshot_every else { return };
        if (stats.iteration + 1) % k != 0 || snapshot_error.is_some() {
            return;
        }
        for ((mesh, p), stem) in [&a, &b].into_iter().zip(positions).zip(&stems) {
            let path = args.out_dir.join(format!("{stem}_iter{:04}.obj", stats.iteration + 1));
            let written = mesh
                .with_vertices(p.clone())
                .map_err(anyhow::Error::from)
                .and_then(|m| save_obj(&m, &path).map_err(anyhow::Error::from));
            if let Err(e) = written {
                snapshot_error = Some(e.context(format!("writing {}", path.display())));
                return;
            }
        }
    })?;
    if let Some(e) = snapshot_error {
        return Err(e);
    }

    for (mesh, stem) in [&a_out, &b_out].into_iter().zip(&stems) {
        let path = args.out_dir.join(format!("{stem}_out.obj"));
        save_obj(mesh, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    if !args.timings {
        report.timings = None;
    }
    let report_path = args.out_dir.join("report.json");
    let file = File::create(&report_path).with_context(|| format!("creating {}", report_path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &report)?;

    println!(
        "{:?} after {} iterations, {} intersections remaining",
        report.status, report.iterations, report.final_intersections
    );
    Ok(if report.is_resolved() { EXIT_OK } else { EXIT_BUDGET })
}

fn simulate(args: &SimulateArgs) -> Result<u8> {
    let mut scene = SceneConfig::load(&args.scene).with_context(|| format!("loading {}", args.scene.display()))?;
    if let Some(frames) = args.frames {
        if frames == 0 {
            bail!("--frames must be at least 1");
        }
        scene.steps = (frames - 1) * scene.output_interval;
    }
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_frames", scene.name)));
    info!("writing frames to {}", out_dir.display());
    let report = run_scenario(&scene, Some(&out_dir))?;

    let report_path = out_dir.join("report.json");
    let file = File::create(&report_path).with_context(|| format!("creating {}", report_path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &report)?;

    let last = report.frames.last().and_then(|f| f.crossings);
    println!(
        "{}: {} frames, {} collision calls ({} unresolved), final crossings {}",
        report.scene,
        report.frames.len(),
        report.collisions.len(),
        report.unresolved_calls,
        last.map_or_else(|| "n/a".to_owned(), |n| n.to_string())
    );
    Ok(EXIT_OK)
}
