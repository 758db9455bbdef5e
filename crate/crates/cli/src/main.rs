//! `meshflow` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O or file format, 2 topology (open or
//! non-spherical surfaces, empty organs), 3 configuration or shape mismatch,
//! 4 non-finite loss during fitting.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use meshflow::fitter::{self, FitConfig, FitTarget};
use meshflow::flowfield::write_stack;
use meshflow::losses::LossWeights;
use meshflow::mesh::{read_obj, write_obj, TriMesh};
use meshflow::metrics::{self, evaluate, Reference};
use meshflow::registration::{align_to_voxels, voxel_surface, AlignMode, AlignOptions};
use meshflow::volume::{build_template, marching_cubes, read_mvf, voxelize, write_mvf, GridKind};
use meshflow::{Error, Grid, Mesh};

#[derive(Parser)]
#[command(name = "meshflow", version, about = "Template-based mesh extraction by fitted flow fields")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MESHFLOW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rigid,
    Nonrigid,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an occupancy template from label volumes.
    Template {
        #[arg(required = true)]
        labels: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.30)]
        threshold: f64,
        #[arg(long, default_value_t = 20)]
        smooth_steps: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit a flow stack deforming a template onto a mesh or label volume.
    Fit {
        template: PathBuf,
        /// Target `.obj` mesh or `.mvf` label volume.
        target: PathBuf,
        /// key=value settings.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Dice, ASSD, HD99 and SIF of a predicted mesh as CSV.
    Metrics {
        pred: PathBuf,
        /// Reference `.mvf` labels or `.obj` mesh.
        reference: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV here.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Print a table instead of CSV.
        #[arg(long)]
        pretty: bool,
    },
    /// Align each organ of a mesh to a label volume.
    Register {
        mesh: PathBuf,
        seg: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Rigid)]
        mode: Mode,
        /// key=value registration settings.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the JSON summary here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Marching cubes on an MVF volume (every class of a label volume).
    Mc {
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iso: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Label the lattice of a reference volume by a closed mesh.
    Voxelize {
        mesh: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Parse(_) => 1,
            Error::TopologyError { .. }
            | Error::OpenSurface(_)
            | Error::EmptyOrgan(_)
            | Error::EmptySurface
            | Error::ZeroArea(_) => 2,
            Error::NonFiniteLoss(_) => 4,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure { code: 3, msg: msg.into() }
}

type CmdResult = Result<(), Failure>;

fn read_kv(path: &Path) -> Result<Vec<(String, String)>, Failure> {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    Ok(fitter::parse_key_values(&text)?)
}

fn is_mvf(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mvf"))
}

fn read_labels(p: &Path) -> Result<Grid, Failure> {
    let g: Grid = read_mvf(p)?;
    if g.kind() != GridKind::Label {
        return Err(config_err(format!("{} is not a label volume", p.display())));
    }
    Ok(g)
}

fn cmd_template(labels: &[PathBuf], threshold: f64, smooth_steps: usize, output: &Path) -> CmdResult {
    let grids = labels.iter().map(|p| read_labels(p)).collect::<Result<Vec<_>, _>>()?;
    let mesh: Mesh = build_template(&grids, threshold, smooth_steps)?;
    write_obj(output, &mesh)?;
    eprintln!(
        "template: {} organs, {} vertices, {} faces",
        mesh.organs().len(),
        mesh.num_vertices(),
        mesh.num_faces()
    );
    Ok(())
}

fn cmd_fit(template: &Path, target: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> CmdResult {
    let mut cfg = FitConfig::default();
    let mut weights = LossWeights::default();
    if let Some(c) = config {
        for (k, v) in read_kv(c)? {
            if !cfg.set(&k, &v)? && !fitter::set_loss_weight(&mut weights, &k, &v)? {
                return Err(config_err(format!("unknown config key {k}")));
            }
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let tpl: Mesh = read_obj(template)?;
    let tgt = if is_mvf(target) {
        FitTarget::Labels(read_labels(target)?)
    } else {
        FitTarget::Mesh(read_obj(target)?)
    };
    fs::create_dir_all(out).map_err(Error::from)?;
    let res = fitter::fit_with_checkpoints(&tpl, &tgt, &cfg, &weights, |it, st| {
        write_stack(out.join(format!("checkpoint_{it:06}")), st)
    })?;
    write_obj(out.join("fitted.obj"), &res.fitted)?;
    write_stack(out, &res.stack)?;
    fs::write(out.join("trace.csv"), fitter::trace_csv(&res.trace)).map_err(Error::from)?;
    eprintln!(
        "fit: {} iterations, best loss {:.6} at iteration {}{}",
        res.trace.len(),
        res.best_loss,
        res.best_iteration,
        if res.converged { ", converged" } else { "" }
    );
    res.check()?;
    if let FitTarget::Labels(g) = &tgt {
        let rep = evaluate(&res.fitted, Reference::Labels(g), cfg.target_samples, cfg.seed)?;
        let csv = rep.to_csv();
        fs::write(out.join("metrics.csv"), &csv).map_err(Error::from)?;
        print!("{csv}");
    }
    Ok(())
}

fn cmd_metrics(pred: &Path, reference: &Path, samples: usize, seed: u64, output: Option<&Path>, pretty: bool) -> CmdResult {
    let p: Mesh = read_obj(pred)?;
    let rep = if is_mvf(reference) {
        let g = read_labels(reference)?;
        evaluate(&p, Reference::Labels(&g), samples, seed)?
    } else {
        let m: Mesh = read_obj(reference)?;
        evaluate(&p, Reference::Mesh(&m), samples, seed)?
    };
    let csv = rep.to_csv();
    if let Some(o) = output {
        fs::write(o, &csv).map_err(Error::from)?;
    }
    if pretty {
        print!("{}", rep.pretty());
    } else {
        print!("{csv}");
    }
    Ok(())
}

fn parse<V: std::str::FromStr>(k: &str, v: &str) -> Result<V, Failure> {
    v.trim()
        .parse()
        .map_err(|_| config_err(format!("bad value {v:?} for {k}")))
}

fn align_options(mode: Mode, config: Option<&Path>, seed: u64) -> Result<AlignOptions, Failure> {
    let mut o = AlignOptions {
        mode: match mode {
            Mode::Rigid => AlignMode::Rigid,
            Mode::Nonrigid => AlignMode::Nonrigid,
        },
        seed,
        ..Default::default()
    };
    if let Some(c) = config {
        for (k, v) in read_kv(c)? {
            let p = &mut o.nricp;
            match k.as_str() {
                "n_samples" => o.n_samples = parse(&k, &v)?,
                "icp_max_iters" => o.icp_max_iters = parse(&k, &v)?,
                "icp_tol" => o.icp_tol = parse(&k, &v)?,
                "stiffness" => {
                    p.stiffness = v.split(',').map(|x| parse(&k, x)).collect::<Result<_, _>>()?;
                }
                "inner_iters" => p.inner_iters = parse(&k, &v)?,
                "distance_cap" => p.distance_cap = parse(&k, &v)?,
                "normal_angle_deg" => p.normal_angle_deg = parse(&k, &v)?,
                "gamma" => p.gamma = parse(&k, &v)?,
                "cg_tol" => p.cg_tol = parse(&k, &v)?,
                "cg_max_iters" => p.cg_max_iters = parse(&k, &v)?,
                _ => return Err(config_err(format!("unknown config key {k}"))),
            }
        }
    }
    o.nricp.validate()?;
    Ok(o)
}

fn organ_assd(mesh: &Mesh, seg: &Grid, n: usize, seed: u64) -> Result<Vec<f64>, Failure> {
    mesh.organs()
        .into_iter()
        .map(|o| {
            let surf = voxel_surface(seg, o)?;
            Ok(metrics::assd(&mesh.organ_submesh(o).0, &surf, n, seed)?)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_register(
    mesh: &Path,
    seg: &Path,
    mode: Mode,
    config: Option<&Path>,
    seed: u64,
    output: &Path,
    summary: Option<&Path>,
) -> CmdResult {
    let opts = align_options(mode, config, seed)?;
    let pred: Mesh = read_obj(mesh)?;
    let g = read_labels(seg)?;
    let before = organ_assd(&pred, &g, opts.n_samples, seed)?;
    let res = align_to_voxels(&pred, &g, &opts)?;
    let after = organ_assd(&res.mesh, &g, opts.n_samples, seed)?;
    write_obj(output, &res.mesh)?;
    let organs: Vec<_> = res
        .transforms
        .iter()
        .zip(before.iter().zip(&after))
        .map(|((o, tf), (b, a))| {
            json!({
                "organ": o,
                "assd_before": b,
                "assd_after": a,
                "rotation": tf.rotation,
                "translation": tf.translation,
                "angle_rad": tf.angle(),
            })
        })
        .collect();
    let doc = json!({
        "mode": match mode { Mode::Rigid => "rigid", Mode::Nonrigid => "nonrigid" },
        "sif_before": metrics::sif(&pred),
        "sif_after": metrics::sif(&res.mesh),
        "organs": organs,
    });
    let text = serde_json::to_string_pretty(&doc).expect("json value") + "\n";
    if let Some(s) = summary {
        fs::write(s, &text).map_err(Error::from)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_mc(input: &Path, iso: f64, output: &Path) -> CmdResult {
    let g: Grid = read_mvf(input)?;
    let mesh: Mesh = match g.kind() {
        GridKind::Label => {
            let parts = g
                .present_classes()?
                .into_iter()
                .map(|o| voxel_surface(&g, o))
                .collect::<Result<Vec<_>, _>>()?;
            if parts.is_empty() {
                return Err(Error::EmptySurface.into());
            }
            TriMesh::merge(&parts)
        }
        GridKind::Scalar => marching_cubes(&g, iso)?,
        _ => return Err(config_err("marching cubes needs a label or scalar volume")),
    };
    write_obj(output, &mesh)?;
    Ok(())
}

fn cmd_voxelize(mesh: &Path, reference: &Path, output: &Path) -> CmdResult {
    let m: Mesh = read_obj(mesh)?;
    let r: Grid = read_mvf(reference)?;
    write_mvf(output, &voxelize(&m, &r)?)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("--threads must be > 0"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(e.to_string()))?;
    }
    match cli.cmd {
        Cmd::Template {
            labels,
            threshold,
            smooth_steps,
            output,
        } => cmd_template(&labels, threshold, smooth_steps, &output),
        Cmd::Fit {
            template,
            target,
            config,
            seed,
            output,
        } => cmd_fit(&template, &target, config.as_deref(), seed, &output),
        Cmd::Metrics {
            pred,
            reference,
            samples,
            seed,
            output,
            pretty,
        } => cmd_metrics(&pred, &reference, samples, seed, output.as_deref(), pretty),
        Cmd::Register {
            mesh,
            seg,
            mode,
            config,
            seed,
            output,
            summary,
        } => cmd_register(&mesh, &seg, mode, config.as_deref(), seed, &output, summary.as_deref()),
        Cmd::Mc { input, iso, output } => cmd_mc(&input, iso, &output),
        Cmd::Voxelize {
            mesh,
            reference,
            output,
        } => cmd_voxelize(&mesh, &reference, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(3);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
