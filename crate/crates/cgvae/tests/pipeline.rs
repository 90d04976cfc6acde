//! End-to-end command-line pipeline checks on a small system.

use std::path::{Path, PathBuf};

use cgvae::checkpoint;
use cgvae::cli;
use cgvae::config::RunConfig;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["cgvae"];
    argv.extend_from_slice(args);
    cli::run(argv)
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

fn write_small_dataset(ws: &Workspace) {
    assert_eq!(
        run(&[
            "gen-data",
            "--pattern",
            "CCCC",
            "--frames",
            "120",
            "--noise",
            "0.25",
            "--seed",
            "1",
            "--out",
            &ws.arg("traj.xyz"),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "learn-mapping",
            "--traj",
            &ws.arg("traj.xyz"),
            "--beads",
            "3",
            "--method",
            "contiguous",
            "--out",
            &ws.arg("map.txt"),
        ]),
        0
    );
}

#[test]
fn full_pipeline_runs() {
    let ws = Workspace::new();
    write_small_dataset(&ws);

    std::fs::write(
        ws.path("cfg.toml"),
        "[model]\nfeature_dim = 8\nrbf_dim = 4\nt_enc = 1\nt_prior = 1\nt_dec = 3\n\n[training]\nepochs = 3\nbatch_size = 16\n",
    )
    .unwrap();
    assert_eq!(
        run(&[
            "train",
            "--traj",
            &ws.arg("traj.xyz"),
            "--map",
            &ws.arg("map.txt"),
            "--config",
            &ws.arg("cfg.toml"),
            "--out-dir",
            &ws.arg("run"),
        ]),
        0
    );
    assert!(ws.path("run/checkpoint.json").exists());

    // loss log: header plus strictly increasing epochs, all finite
    let csv = std::fs::read_to_string(ws.path("run/loss.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "epoch,msd,graph,kl,lr");
    let mut last_epoch = -1i64;
    for row in &rows[1..] {
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        assert!(fields[0] as i64 > last_epoch);
        last_epoch = fields[0] as i64;
        assert!(fields.iter().all(|v| v.is_finite()));
    }

    assert_eq!(
        run(&[
            "reconstruct",
            "--traj",
            &ws.arg("traj.xyz"),
            "--map",
            &ws.arg("map.txt"),
            "--checkpoint",
            &ws.arg("run/checkpoint.json"),
            "--out",
            &ws.arg("recon.xyz"),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "sample",
            "--traj",
            &ws.arg("traj.xyz"),
            "--map",
            &ws.arg("map.txt"),
            "--checkpoint",
            &ws.arg("run/checkpoint.json"),
            "--count",
            "2",
            "--seed",
            "3",
            "--out",
            &ws.arg("samples.xyz"),
        ]),
        0
    );
    let samples = cgvae::xyz::read_xyz(&ws.path("samples.xyz")).unwrap();
    assert_eq!(samples.len(), 120 * 2);

    assert_eq!(
        run(&[
            "evaluate",
            "--traj",
            &ws.arg("traj.xyz"),
            "--map",
            &ws.arg("map.txt"),
            "--checkpoint",
            &ws.arg("run/checkpoint.json"),
            "--samples",
            "2",
            "--folds",
            "3",
            "--threads",
            "2",
            "--out",
            &ws.arg("report.txt"),
        ]),
        0
    );
    let report = std::fs::read_to_string(ws.path("report.txt")).unwrap();
    assert!(report.contains("all_atom.rmsd_recon"));
    assert!(report.contains("heavy_atom.valid_ratio"));

    // plots from the three kinds of inputs
    assert_eq!(
        run(&["plot", "loss", "--input", &ws.arg("run/loss.csv"), "--out", &ws.arg("loss.svg")]),
        0
    );
    assert_eq!(
        run(&[
            "plot",
            "metrics",
            "--input",
            &ws.arg("report.txt"),
            "--label",
            "cgvae",
            "--out",
            &ws.arg("metrics.svg"),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "plot",
            "dihedrals",
            "--input",
            &ws.arg("samples.xyz"),
            "--out",
            &ws.arg("rama.svg"),
        ]),
        0
    );
    for svg in ["loss.svg", "metrics.svg", "rama.svg"] {
        let text = std::fs::read_to_string(ws.path(svg)).unwrap();
        assert!(text.starts_with("<svg"), "{} is not an svg", svg);
    }
}

#[test]
fn zero_epoch_training_writes_initialization() {
    let ws = Workspace::new();
    write_small_dataset(&ws);
    std::fs::write(
        ws.path("cfg.toml"),
        "[model]\nfeature_dim = 8\nrbf_dim = 4\n\n[training]\nepochs = 0\nseed = 9\n",
    )
    .unwrap();
    assert_eq!(
        run(&[
            "train",
            "--traj",
            &ws.arg("traj.xyz"),
            "--map",
            &ws.arg("map.txt"),
            "--config",
            &ws.arg("cfg.toml"),
            "--out-dir",
            &ws.arg("run0"),
        ]),
        0
    );
    // the checkpoint must equal a fresh initialization at the same seed
    let (model, _, _) = checkpoint::load(&ws.path("run0/checkpoint.json")).unwrap();
    let checkpoint::TrainedModel::Cgvae(model) = model else {
        panic!("expected cgvae checkpoint");
    };
    use cgvae::nn::Params;
    use rand::SeedableRng;
    let cfg = RunConfig::parse(&std::fs::read_to_string(ws.path("cfg.toml")).unwrap()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let fresh = cgvae::model::CgvaeModel::init(cfg.model_dims(3), &mut rng);
    for ((na, a), (nb, b)) in fresh.named().iter().zip(model.named().iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.data(), b.data(), "parameter {} differs", na);
    }
}

#[test]
fn fixed_seed_runs_are_bit_reproducible() {
    let ws = Workspace::new();
    write_small_dataset(&ws);
    std::fs::write(
        ws.path("cfg.toml"),
        "[model]\nfeature_dim = 8\nrbf_dim = 4\nt_dec = 2\n\n[training]\nepochs = 2\nseed = 4\n",
    )
    .unwrap();
    for dir in ["runa", "runb"] {
        assert_eq!(
            run(&[
                "train",
                "--traj",
                &ws.arg("traj.xyz"),
                "--map",
                &ws.arg("map.txt"),
                "--config",
                &ws.arg("cfg.toml"),
                "--out-dir",
                &ws.arg(dir),
            ]),
            0
        );
    }
    let a = std::fs::read(ws.path("runa/checkpoint.json")).unwrap();
    let b = std::fs::read(ws.path("runb/checkpoint.json")).unwrap();
    assert_eq!(a, b, "checkpoints differ between identical runs");
    let a = std::fs::read(ws.path("runa/loss.csv")).unwrap();
    let b = std::fs::read(ws.path("runb/loss.csv")).unwrap();
    assert_eq!(a, b, "loss logs differ between identical runs");

    // gen-data with one seed is reproducible too
    for out in ["t1.xyz", "t2.xyz"] {
        assert_eq!(
            run(&[
                "gen-data", "--pattern", "CCCC", "--frames", "10", "--noise", "0.2", "--seed",
                "77", "--out", &ws.arg(out),
            ]),
            0
        );
    }
    assert_eq!(
        std::fs::read(ws.path("t1.xyz")).unwrap(),
        std::fs::read(ws.path("t2.xyz")).unwrap()
    );
}

#[test]
fn config_errors_exit_2_runtime_errors_exit_1() {
    let ws = Workspace::new();
    // malformed mapping file
    std::fs::write(ws.path("bad_map.txt"), "0 0\n").unwrap();
    std::fs::write(ws.path("t.xyz"), "1\nframe=0\nC 0 0 0\n").unwrap();
    let code = run(&[
        "train",
        "--traj",
        &ws.arg("t.xyz"),
        "--map",
        &ws.arg("bad_map.txt"),
        "--out-dir",
        &ws.arg("r"),
    ]);
    assert_eq!(code, 2);

    // config with unknown key
    std::fs::write(ws.path("cfg.toml"), "[training]\nepoks = 3\n").unwrap();
    write_small_dataset(&ws);
    let code = run(&[
        "train",
        "--traj",
        &ws.arg("traj.xyz"),
        "--map",
        &ws.arg("map.txt"),
        "--config",
        &ws.arg("cfg.toml"),
        "--out-dir",
        &ws.arg("r2"),
    ]);
    assert_eq!(code, 2);

    // missing checkpoint file is a runtime failure
    let code = run(&[
        "reconstruct",
        "--traj",
        &ws.arg("traj.xyz"),
        "--map",
        &ws.arg("map.txt"),
        "--checkpoint",
        &ws.arg("nope.json"),
        "--out",
        &ws.arg("r.xyz"),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn gradcheck_command_passes() {
    assert_eq!(run(&["gradcheck", "--seed", "7"]), 0);
}

#[test]
fn config_round_trip_normalizes() {
    let text = "[training]\nepochs = 11\n[model]\nfeature_dim = 12\n";
    let cfg = RunConfig::parse(text).unwrap();
    let normalized = cfg.to_toml();
    let reparsed = RunConfig::parse(&normalized).unwrap();
    assert_eq!(cfg, reparsed);
    assert_eq!(normalized, reparsed.to_toml());
}
