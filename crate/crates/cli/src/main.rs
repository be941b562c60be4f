//! `fovpred`: command-line driver for the map-prediction pipeline.
//!
//! Stages compose as `genmap -> dataset -> train -> eval`; `run` chains
//! all of them over the full architecture-by-expansion grid. Every output
//! path lives under `--out` (default: the current directory).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fovpred::config::{PipelineConfig, DATASET_ROOT_ENV};
use fovpred::dataset::{build_dataset, Dataset, EpisodeJob, Expansion, Split, MANIFEST_FILE};
use fovpred::eval::{evaluate_pairs, report_csv, report_table, triptych, SsimMode, SsimReport};
use fovpred::exec::Exec;
use fovpred::grid::{read_grid, read_pgm, write_grid, write_pgm, DEFAULT_RESOLUTION};
use fovpred::models::ModelKind;
use fovpred::sim::{follow_path, integrate_scan_into, write_trajectory_csv, CONTROL_DT};
use fovpred::train::{predict, train_feedforward, train_gan, Checkpoint};
use fovpred::{Cell, OccGrid, Point2};

#[derive(Parser)]
#[command(
    name = "fovpred",
    version,
    about = "Predict occupancy beyond a LIDAR field of view"
)]
struct Cli {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base directory for every output.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the base seed and every training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured dataset root.
    #[arg(long, global = true, env = DATASET_ROOT_ENV)]
    dataset_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth maps and their waypoint paths.
    Genmap,
    /// Drive one episode and write its trajectory log and estimated map.
    Simulate {
        #[arg(long, default_value_t = 0)]
        episode: u32,
    },
    /// Simulate every episode and write the paired dataset.
    Dataset,
    /// Train one model, or the whole grid with --matrix.
    Train(Select),
    /// Predict the expanded window for one input crop.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input crop (PGM; a `.meta` sidecar, if present, supplies its origin).
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the checkpoint's expansion.
        #[arg(long)]
        expansion: Option<Expansion>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score checkpoints on the test split and write the report.
    Eval {
        #[command(flatten)]
        select: Select,
        /// Score the network output before ternarization.
        #[arg(long)]
        raw: bool,
    },
    /// genmap, dataset, train --matrix and eval --matrix in sequence.
    Run,
}

#[derive(Args, Clone)]
struct Select {
    #[arg(long, default_value = "unet_ff")]
    arch: ModelKind,
    #[arg(long, default_value = "1.10")]
    expansion: Expansion,
    /// Every architecture at every configured expansion.
    #[arg(long)]
    matrix: bool,
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
    dataset_root: PathBuf,
    exec: Exec,
}

impl Ctx {
    fn maps_dir(&self) -> PathBuf {
        self.out.join("maps")
    }

    fn checkpoint_path(&self, kind: ModelKind, e: Expansion) -> PathBuf {
        self.out
            .join(&self.cfg.train.checkpoint_dir)
            .join(format!("{kind}_{}.ckpt", e.percent()))
    }

    fn discriminator_path(&self, e: Expansion) -> PathBuf {
        self.out
            .join(&self.cfg.train.checkpoint_dir)
            .join(format!("gan_{}.disc.ckpt", e.percent()))
    }

    fn reports_dir(&self) -> PathBuf {
        self.out.join(&self.cfg.eval.out_dir)
    }

    fn grid(&self, select: &Select) -> Vec<(ModelKind, Expansion)> {
        if select.matrix {
            ModelKind::ALL
                .iter()
                .flat_map(|&k| self.cfg.dataset.expansions.iter().map(move |&e| (k, e)))
                .collect()
        } else {
            vec![(select.arch, select.expansion)]
        }
    }
}

fn map_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("map_{id:03}.pgm"))
}

fn waypoint_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("map_{id:03}.waypoints.csv"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_genmap(ctx: &Ctx) -> Result<()> {
    let dir = ctx.maps_dir();
    create_dir(&dir)?;
    for job in ctx.cfg.episode_jobs(ctx.exec)? {
        write_grid(&map_path(&dir, job.id), &job.gt)?;
        let mut text = String::from("x,y\n");
        for p in &job.waypoints {
            text.push_str(&format!("{:?},{:?}\n", p.x, p.y));
        }
        let path = waypoint_path(&dir, job.id);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("wrote {} maps to {}", ctx.cfg.maps.count, dir.display());
    Ok(())
}

fn read_waypoints(path: &Path) -> Result<Vec<Point2>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some("x,y") {
        bail!("{}: missing `x,y` header", path.display());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| anyhow!("{}:{}: expected x,y", path.display(), i + 2))?;
            Ok(Point2::new(
                x.parse()
                    .with_context(|| format!("{}:{}", path.display(), i + 2))?,
                y.parse()
                    .with_context(|| format!("{}:{}", path.display(), i + 2))?,
            ))
        })
        .collect()
}

fn load_job(ctx: &Ctx, id: u32) -> Result<EpisodeJob> {
    let dir = ctx.maps_dir();
    let gt =
        read_grid(&map_path(&dir, id)).with_context(|| format!("map {id} (run genmap first)"))?;
    let waypoints = read_waypoints(&waypoint_path(&dir, id))?;
    Ok(EpisodeJob { id, gt, waypoints })
}

fn cmd_simulate(ctx: &Ctx, episode: u32) -> Result<()> {
    let job = load_job(ctx, episode)?;
    let traj = follow_path(
        &job.gt,
        &job.waypoints,
        &ctx.cfg.lidar,
        &ctx.cfg.pursuit,
        CONTROL_DT,
    )?;
    let mut est = job.gt.blank_like(Cell::Unknown);
    for t in &traj {
        integrate_scan_into(&mut est, &t.state, &t.scan, &ctx.cfg.lidar)?;
    }
    let dir = ctx.out.join("episodes");
    create_dir(&dir)?;
    let log = dir.join(format!("episode_{episode:03}.csv"));
    let file = fs::File::create(&log).with_context(|| format!("creating {}", log.display()))?;
    let mut w = BufWriter::new(file);
    write_trajectory_csv(&mut w, &traj)?;
    w.flush()?;
    write_grid(
        &dir.join(format!("episode_{episode:03}_estimate.pgm")),
        &est,
    )?;
    eprintln!(
        "episode {episode}: {} steps, log {}",
        traj.len(),
        log.display()
    );
    Ok(())
}

fn cmd_dataset(ctx: &Ctx) -> Result<()> {
    let root = &ctx.dataset_root;
    if root.exists() {
        if root.join(MANIFEST_FILE).exists() {
            fs::remove_dir_all(root)
                .with_context(|| format!("clearing previous dataset {}", root.display()))?;
        } else if fs::read_dir(root)?.next().is_some() {
            bail!(
                "{} exists, is not empty and holds no dataset manifest",
                root.display()
            );
        }
    }
    let jobs = (0..ctx.cfg.maps.count)
        .map(|id| load_job(ctx, id))
        .collect::<Result<Vec<_>>>()?;
    let d = &ctx.cfg.dataset;
    let manifest = build_dataset(
        ctx.exec,
        &jobs,
        &ctx.cfg.lidar,
        &ctx.cfg.pursuit,
        &d.expansions,
        &d.test_episodes,
        root,
    )?;
    eprintln!(
        "dataset {}: {} train / {} test samples",
        root.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Test)
    );
    Ok(())
}

fn train_one(ctx: &Ctx, data: &Dataset, kind: ModelKind, e: Expansion) -> Result<()> {
    let cfg = ctx.cfg.train_config_for(kind, e);
    let spec = cfg.generator_spec(kind)?;
    let path = ctx.checkpoint_path(kind, e);
    create_dir(path.parent().unwrap())?;
    let ckpt = if kind == ModelKind::Gan {
        let (gen, disc) = train_gan(&spec, &cfg.discriminator_spec()?, data, &cfg)?;
        disc.save(&ctx.discriminator_path(e))?;
        gen
    } else {
        train_feedforward(&spec, data, &cfg)?
    };
    ckpt.save(&path)?;
    let last = ckpt.loss_history.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "{kind} {e}: {} epochs, final loss {last:.5} -> {}",
        cfg.epochs,
        path.display()
    );
    Ok(())
}

fn cmd_train(ctx: &Ctx, select: &Select) -> Result<()> {
    let data = Dataset::open(&ctx.dataset_root)?;
    for (kind, e) in ctx.grid(select) {
        train_one(ctx, &data, kind, e).with_context(|| format!("{kind} at {e}"))?;
    }
    Ok(())
}

fn cmd_predict(ckpt: &Path, input: &Path, e: Option<Expansion>, output: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt)?;
    let grid = if input.with_extension("meta").exists() {
        read_grid(input)?
    } else {
        let (px, w, h) = read_pgm(input)?;
        OccGrid::decode_image_with(&px, w, h, DEFAULT_RESOLUTION, Point2::default())?
    };
    let pred = predict(&ckpt, &grid, e.unwrap_or(ckpt.expansion))?;
    write_grid(output, &pred)?;
    Ok(())
}

fn cmd_eval(ctx: &Ctx, select: &Select, raw: bool) -> Result<()> {
    let data = Dataset::open(&ctx.dataset_root)?;
    let mode = if raw || ctx.cfg.eval.raw {
        SsimMode::Raw
    } else {
        SsimMode::Ternarized
    };
    let dir = ctx.reports_dir();
    create_dir(&dir)?;
    let mut reports: Vec<SsimReport> = Vec::new();
    for (kind, e) in ctx.grid(select) {
        let path = ctx.checkpoint_path(kind, e);
        if select.matrix && !path.exists() {
            eprintln!("no checkpoint for {kind} at {e}, leaving the cell empty");
            continue;
        }
        let ckpt = Checkpoint::load(&path)?;
        let pairs = data.pairs(Split::Test, e)?;
        let report = evaluate_pairs(ctx.exec, &ckpt, &pairs, e, mode)
            .with_context(|| format!("{kind} at {e}"))?;
        for (i, (input, truth)) in pairs.iter().take(ctx.cfg.eval.triptychs).enumerate() {
            let pred = predict(&ckpt, input, e)?;
            let (px, w, h) = triptych(input, &pred, truth);
            write_pgm(
                &dir.join(format!("triptych_{kind}_{}_{i}.pgm", e.percent())),
                &px,
                w,
                h,
            )?;
        }
        reports.push(report);
    }
    let table = report_table(&reports);
    for (name, text) in [("ssim.txt", &table), ("ssim.csv", &report_csv(&reports))] {
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table}");
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        for t in [
            &mut cfg.train.unet_ff,
            &mut cfg.train.resnet_ff,
            &mut cfg.train.gan,
        ] {
            t.seed = s;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli).context("config")?;
    let env = cli
        .dataset_root
        .as_ref()
        .map(|p| p.to_string_lossy().into_owned());
    let ctx = Ctx {
        dataset_root: cfg.dataset_root(&cli.out, env.as_deref()),
        cfg,
        out: cli.out.clone(),
        exec: Exec::default(),
    };
    let all = Select {
        arch: ModelKind::UnetFf,
        expansion: Expansion::REPORTED[0],
        matrix: true,
    };
    match &cli.command {
        Command::Genmap => cmd_genmap(&ctx).context("genmap"),
        Command::Simulate { episode } => cmd_simulate(&ctx, *episode).context("simulate"),
        Command::Dataset => cmd_dataset(&ctx).context("dataset"),
        Command::Train(s) => cmd_train(&ctx, s).context("train"),
        Command::Predict {
            checkpoint,
            input,
            expansion,
            output,
        } => cmd_predict(checkpoint, input, *expansion, output).context("predict"),
        Command::Eval { select, raw } => cmd_eval(&ctx, select, *raw).context("eval"),
        Command::Run => {
            cmd_genmap(&ctx).context("genmap")?;
            cmd_dataset(&ctx).context("dataset")?;
            cmd_train(&ctx, &all).context("train")?;
            cmd_eval(&ctx, &all, false).context("eval")
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
