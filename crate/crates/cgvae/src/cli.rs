//! Command-line surface: data generation, mapping learning, training,
//! reconstruction, sampling, evaluation, gradient checking, and plots.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or input
//! format error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograin::{autograin_fit, AutoGrainConfig};
use crate::baselines::{train_linear, train_mlp, BaselineTrainOptions, LinearBackmap, MlpBackmap};
use crate::checkpoint::{self, TrainedModel};
use crate::config::RunConfig;
use crate::dataset::{gen_toy_trajectory, ToySpec, Trajectory};
use crate::error::{Error, Result};
use crate::evaluation::{backbone_dihedrals, evaluate_run, EvalOptions, MetricReport};
use crate::geometry::{
    read_mapping, write_mapping, CgMapping, Conformation, WeightMode,
};
use crate::graphs::{deduce_bond_graph, expand_multihop, Graph};
use crate::model::{CgvaeModel, FrameFeatures};
use crate::svg;
use crate::training::{self, sample as sample_model, train, EpochLog};
use crate::xyz::{read_xyz, write_xyz};

#[derive(Parser)]
#[command(name = "cgvae", version, about = "Generative backmapping of coarse-grained molecular conformations")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic conformer trajectory.
    GenData(GenDataArgs),
    /// Learn (or construct) a CG mapping and write a mapping file.
    LearnMapping(LearnMappingArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Deterministically reconstruct frames through a trained model.
    Reconstruct(InferArgs),
    /// Draw decoded samples from the prior for every frame.
    Sample(SampleArgs),
    /// Compute the metric report on test frames.
    Evaluate(EvaluateArgs),
    /// Validate analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Render SVG plots from loss logs, reports, or sample files.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Heavy-atom chain pattern, e.g. CCCCCCCCCC.
    #[arg(long, default_value = "CCCCCCCCCC")]
    pattern: String,
    /// Complete valences with hydrogens.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    hydrogens: bool,
    #[arg(long, default_value_t = 2000)]
    frames: usize,
    /// Temperature-like noise scale (0 freezes the ideal chain).
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnMappingArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    beads: usize,
    /// "autograin" (learned) or "contiguous" (index blocks).
    #[arg(long, default_value = "autograin")]
    method: String,
    /// Projection weights: "uniform" or "mass".
    #[arg(long, default_value = "uniform")]
    weights: String,
    /// Frames used to fit the assignment.
    #[arg(long, default_value_t = 1000)]
    fit_frames: usize,
    #[arg(long, default_value_t = 1500)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    map: PathBuf,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model kind override: cgvae, linear, or mlp.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame-parallel evaluation threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// What to plot: "loss", "metrics", or "dihedrals".
    kind: String,
    /// Input files (loss CSV, report text, or sample XYZ).
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Labels matching the inputs (metrics mode).
    #[arg(long)]
    label: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Run the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Config(_)
                | Error::Parse { .. }
                | Error::InvalidMapping(_)
                | Error::UnknownElement(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::LearnMapping(a) => learn_mapping(a),
        Command::Train(a) => run_train(a),
        Command::Reconstruct(a) => run_reconstruct(a),
        Command::Sample(a) => run_sample(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Plot(a) => run_plot(a),
    }
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::from_frames(read_xyz(path)?)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let spec = ToySpec::chain(&a.pattern, a.hydrogens, a.frames, a.noise, a.seed)?;
    let traj = gen_toy_trajectory(&spec)?;
    write_xyz(&traj.frames, &a.out)?;
    println!(
        "wrote {} frames of {} atoms ({} bonds) to {}",
        traj.frames.len(),
        traj.num_atoms(),
        traj.bonds.len(),
        a.out.display()
    );
    Ok(())
}

fn learn_mapping(a: LearnMappingArgs) -> Result<()> {
    let traj = load_trajectory(&a.traj)?;
    let mode = WeightMode::parse(&a.weights)?;
    let assignment = match a.method.as_str() {
        "contiguous" => CgMapping::contiguous(traj.num_atoms(), a.beads)?.assign().to_vec(),
        "autograin" => {
            let frames: Vec<Conformation> =
                traj.frames.iter().take(a.fit_frames).cloned().collect();
            let mut cfg = AutoGrainConfig::new(a.beads);
            cfg.epochs = a.epochs;
            cfg.seed = a.seed;
            let result = autograin_fit(&frames, &cfg)?;
            println!(
                "mapping loss {:.6} -> {:.6} over {} epochs",
                result.loss_history.first().unwrap_or(&f64::NAN),
                result.loss_history.last().unwrap_or(&f64::NAN),
                result.loss_history.len()
            );
            result.mapping.assign().to_vec()
        }
        other => {
            return Err(Error::Config(format!(
                "unknown mapping method '{}', expected autograin or contiguous",
                other
            )))
        }
    };
    let map = CgMapping::with_mode(assignment, a.beads, &traj.elements, mode)?;
    write_mapping(&map, &a.out)?;
    println!(
        "wrote mapping of {} atoms onto {} beads to {}",
        map.num_atoms(),
        map.num_beads(),
        a.out.display()
    );
    Ok(())
}

fn multihop_edges(traj: &Trajectory, hops: usize) -> Result<Vec<(usize, usize)>> {
    let first = traj
        .frames
        .first()
        .ok_or_else(|| Error::Config("trajectory has no frames".to_string()))?;
    let bond_graph = Graph::from_edges(traj.num_atoms(), &traj.bonds, &first.coords)?;
    expand_multihop(&bond_graph, hops)
}

fn write_loss_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,msd,graph,kl,lr\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.msd, row.graph, row.kl, row.lr
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = &a.model {
        cfg.model.kind = kind.clone();
    }
    if let Some(epochs) = a.epochs {
        cfg.training.epochs = epochs;
    }
    if let Some(seed) = a.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;

    let traj = load_trajectory(&a.traj)?;
    let map = read_mapping(&a.map)?;
    if map.num_atoms() != traj.num_atoms() {
        return Err(Error::Config(format!(
            "mapping covers {} atoms but the trajectory has {}",
            map.num_atoms(),
            traj.num_atoms()
        )));
    }
    let edges = multihop_edges(&traj, cfg.training.multihop)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let ck_path = a.out_dir.join("checkpoint.json");

    match cfg.model.kind.as_str() {
        "cgvae" => {
            let dims = cfg.model_dims(map.num_beads());
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
            let mut model = CgvaeModel::init(dims, &mut rng);
            let feats: Vec<FrameFeatures> = traj
                .frames
                .iter()
                .map(|f| FrameFeatures::build(f, &map, &dims))
                .collect::<Result<_>>()?;
            let opts = cfg.train_options()?;
            let log = train(&mut model, &feats, &edges, &opts)?;
            write_loss_csv(&log, &a.out_dir.join("loss.csv"))?;
            checkpoint::save(
                &TrainedModel::Cgvae(model),
                map.num_atoms(),
                map.num_beads(),
                &ck_path,
            )?;
            if let Some(last) = log.last() {
                println!(
                    "trained cgvae for {} epochs: msd {:.5}, graph {:.5}, kl {:.3}",
                    log.len(),
                    last.msd,
                    last.graph,
                    last.kl
                );
            }
        }
        kind => {
            let opts = BaselineTrainOptions {
                epochs: cfg.training.epochs,
                batch_size: cfg.training.batch_size,
                learning_rate: cfg.training.learning_rate,
                gamma: cfg.training.baseline_gamma,
                seed: cfg.training.seed,
            };
            let (model, log) = if kind == "linear" {
                let mut m = LinearBackmap::from_lift(&map);
                let log = train_linear(&mut m, &traj.frames, &map, &edges, &opts)?;
                (TrainedModel::Linear(m), log)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
                let mut m = MlpBackmap::init(&mut rng, map.num_atoms(), map.num_beads());
                let log = train_mlp(&mut m, &traj.frames, &map, &edges, &opts)?;
                (TrainedModel::Mlp(m), log)
            };
            let rows: Vec<EpochLog> = log
                .iter()
                .enumerate()
                .map(|(epoch, &(msd, graph))| EpochLog {
                    epoch,
                    msd,
                    graph,
                    kl: 0.0,
                    val: 0.0,
                    lr: opts.learning_rate,
                })
                .collect();
            write_loss_csv(&rows, &a.out_dir.join("loss.csv"))?;
            checkpoint::save(&model, map.num_atoms(), map.num_beads(), &ck_path)?;
            if let Some((msd, graph)) = log.last() {
                println!(
                    "trained {} for {} epochs: msd {:.5}, graph {:.5}",
                    kind,
                    log.len(),
                    msd,
                    graph
                );
            }
        }
    }
    println!("checkpoint written to {}", ck_path.display());
    Ok(())
}

fn load_model_for(traj: &Trajectory, map: &CgMapping, path: &Path) -> Result<TrainedModel> {
    let (model, n, nb) = checkpoint::load(path)?;
    if n != traj.num_atoms() || nb != map.num_beads() {
        return Err(Error::Config(format!(
            "checkpoint was trained for {} atoms / {} beads, got {} / {}",
            n,
            nb,
            traj.num_atoms(),
            map.num_beads()
        )));
    }
    Ok(model)
}

fn run_reconstruct(a: InferArgs) -> Result<()> {
    let traj = load_trajectory(&a.traj)?;
    let map = read_mapping(&a.map)?;
    let model = load_model_for(&traj, &map, &a.checkpoint)?;
    let mut out_frames = Vec::with_capacity(traj.frames.len());
    for conf in &traj.frames {
        let coords = match &model {
            TrainedModel::Cgvae(m) => {
                let feats = FrameFeatures::build(conf, &map, &m.dims)?;
                m.reconstruct(&feats)?.rows3()?
            }
            TrainedModel::Linear(m) => m.backmap(conf, &map)?,
            TrainedModel::Mlp(m) => m.backmap(conf, &map)?,
        };
        out_frames.push(Conformation::new(traj.elements.clone(), coords)?);
    }
    write_xyz(&out_frames, &a.out)?;
    println!("wrote {} reconstructed frames to {}", out_frames.len(), a.out.display());
    Ok(())
}

fn run_sample(a: SampleArgs) -> Result<()> {
    let traj = load_trajectory(&a.traj)?;
    let map = read_mapping(&a.map)?;
    let model = load_model_for(&traj, &map, &a.checkpoint)?;
    let mut out_frames = Vec::with_capacity(traj.frames.len() * a.count);
    for (fi, conf) in traj.frames.iter().enumerate() {
        match &model {
            TrainedModel::Cgvae(m) => {
                let feats = FrameFeatures::build(conf, &map, &m.dims)?;
                for draw in sample_model(m, &feats, a.count, a.seed.wrapping_add(fi as u64))? {
                    out_frames.push(Conformation::new(traj.elements.clone(), draw.rows3()?)?);
                }
            }
            TrainedModel::Linear(m) => {
                let coords = m.backmap(conf, &map)?;
                for _ in 0..a.count {
                    out_frames.push(Conformation::new(traj.elements.clone(), coords.clone())?);
                }
            }
            TrainedModel::Mlp(m) => {
                let coords = m.backmap(conf, &map)?;
                for _ in 0..a.count {
                    out_frames.push(Conformation::new(traj.elements.clone(), coords.clone())?);
                }
            }
        }
    }
    write_xyz(&out_frames, &a.out)?;
    println!(
        "wrote {} samples ({} per frame) to {}",
        out_frames.len(),
        a.count,
        a.out.display()
    );
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let traj = load_trajectory(&a.traj)?;
    let map = read_mapping(&a.map)?;
    let model = load_model_for(&traj, &map, &a.checkpoint)?;
    let opts = EvalOptions {
        samples: a.samples,
        seed: a.seed,
        folds: a.folds,
        threads: a.threads.max(1),
    };
    let report = evaluate_run(&model, &traj, &map, &opts)?;
    std::fs::write(&a.out, report.format_text())?;
    print!("{}", report.format_text());
    println!("report written to {}", a.out.display());
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = crate::gradcheck::run(a.seed)?;
    println!(
        "checked {} parameter scalars; worst leaf rel err {:.3e} at {}",
        report.scalars_checked, report.worst_rel_err, report.worst_name
    );
    if report.passed() {
        println!("gradcheck PASS (tolerance {:.0e})", report.tolerance);
        Ok(())
    } else {
        Err(Error::TrainingDiverged(format!(
            "gradient check failed: rel err {:.3e} at {} exceeds {:.0e}",
            report.worst_rel_err, report.worst_name, report.tolerance
        )))
    }
}

fn parse_loss_csv(path: &Path) -> Result<Vec<(f64, f64, f64, f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "expected epoch,msd,graph,kl,lr".to_string(),
            });
        }
        let mut vals = [0.0; 5];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad number '{}'", f),
            })?;
        }
        rows.push((vals[0], vals[1], vals[2], vals[3], vals[4]));
    }
    Ok(rows)
}

fn run_plot(a: PlotArgs) -> Result<()> {
    let svg_text = match a.kind.as_str() {
        "loss" => {
            let path = a.input.first().ok_or_else(|| {
                Error::Config("loss plot needs one --input CSV".to_string())
            })?;
            let rows = parse_loss_csv(path)?;
            let series = vec![
                ("msd".to_string(), rows.iter().map(|r| (r.0, r.1)).collect()),
                ("graph".to_string(), rows.iter().map(|r| (r.0, r.2)).collect()),
                ("kl".to_string(), rows.iter().map(|r| (r.0, r.3)).collect()),
            ];
            svg::line_chart(&series, "training loss", "epoch", "loss", true)
        }
        "metrics" => {
            let mut bars = Vec::new();
            for (i, path) in a.input.iter().enumerate() {
                let label = a
                    .label
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("run{}", i));
                let rows = MetricReport::parse_text(&std::fs::read_to_string(path)?)?;
                for (key, mean, stderr) in rows {
                    if key.starts_with("all_atom.") {
                        bars.push((
                            format!("{} {}", label, key.trim_start_matches("all_atom.")),
                            mean,
                            stderr,
                        ));
                    }
                }
            }
            svg::bar_chart(&bars, "all-atom metrics", "value")
        }
        "dihedrals" => {
            let path = a.input.first().ok_or_else(|| {
                Error::Config("dihedral plot needs one --input XYZ".to_string())
            })?;
            let frames = read_xyz(path)?;
            let mut points = Vec::new();
            for f in &frames {
                let angles = backbone_dihedrals(f);
                // adjacent torsion pairs, Ramachandran-style
                for w in angles.windows(2) {
                    points.push((w[0], w[1]));
                }
            }
            svg::dihedral_histogram(&points, 36, "backbone dihedral pairs")
        }
        other => {
            return Err(Error::Config(format!(
                "unknown plot kind '{}', expected loss, metrics, or dihedrals",
                other
            )))
        }
    };
    std::fs::write(&a.out, svg_text)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_exits_2() {
        assert_eq!(run(["cgvae", "frobnicate"]), 2);
    }

    #[test]
    fn missing_required_flag_exits_2() {
        assert_eq!(run(["cgvae", "gen-data"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["cgvae", "--help"]), 0);
    }

    #[test]
    fn bad_pattern_is_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("t.xyz");
        let code = run([
            "cgvae",
            "gen-data",
            "--pattern",
            "CC",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }
}
