//! Experiment configuration and the command implementations behind the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Cursor};
use crate::data::{quantize, DatasetManifest, PairedDataset};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::kv::{self, Fields};
use crate::loss::mse;
use crate::model::{Architecture, GeneratorStack};
use crate::objectives::{GeneratorObjective, LossWeights};
use crate::param::AdamConfig;
use crate::rng::SeededRng;
use crate::trainer::{
    evaluate, ganglw_train_with_sink, glw_baseline_with_sink, joint_train_baseline_with_sink,
    EpochRecord, FinetuneLoss, StageConfig, StageLoss,
};

pub const SEED_ENV: &str = "GASCA_SEED";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.gsca";
pub const GRID_FILE: &str = "grid.pgm";
pub const METRICS_HEADER: &str = "regime,seed,stage,epoch,L_D,L_G,train_mse,val_mse,wall_ms";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Ganglw,
    Glw,
    Joint,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Ganglw => "ganglw",
            Regime::Glw => "glw",
            Regime::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "ganglw" => Ok(Regime::Ganglw),
            "glw" => Ok(Regime::Glw),
            "joint" => Ok(Regime::Joint),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub regime: Regime,
    pub m_stages: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub stage: StageConfig,
    pub arch: Architecture,
    pub grid_rows: usize,
    /// Writes real timings to `wall_ms`; off by default so that repeated runs
    /// produce byte-identical metrics.
    pub record_wall_clock: bool,
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn parse_enum<T>(f: &mut Fields, key: &str, default: T, table: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    match f.take_str(key) {
        None => Ok(default),
        Some(v) => table
            .iter()
            .find(|(name, _)| *name == v)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<_> = table.iter().map(|(n, _)| *n).collect();
                bad(key, format!("`{v}` is not one of {}", names.join(", ")))
            }),
    }
}

const OBJECTIVES: [(&str, GeneratorObjective); 2] = [
    ("saturating", GeneratorObjective::Saturating),
    ("non_saturating", GeneratorObjective::NonSaturating),
];
const STAGE_LOSSES: [(&str, StageLoss); 2] = [
    ("combined", StageLoss::Combined),
    ("adversarial_only", StageLoss::AdversarialOnly),
];
const FINETUNE_LOSSES: [(&str, FinetuneLoss); 2] = [
    ("combined", FinetuneLoss::Combined),
    ("reconstruction_only", FinetuneLoss::ReconstructionOnly),
];

fn name_of<T: PartialEq>(table: &[(&'static str, T)], v: &T) -> &'static str {
    table.iter().find(|(_, t)| t == v).unwrap().0
}

impl ExperimentConfig {
    /// Parses a flat `key=value` config. Relative paths resolve against
    /// `base_dir`. Unknown keys are rejected.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut f = Fields::new(kv::parse(text)?);
        let d = StageConfig::default();
        let da = Architecture::default();
        let manifest = base_dir.join(f.require_str("manifest")?);
        let regime = match f.take_str("regime") {
            None => Regime::Ganglw,
            Some(v) => v
                .parse()
                .map_err(|_| bad("regime", format!("`{v}` is not one of ganglw, glw, joint")))?,
        };
        let m_stages: usize = f.take_or("m_stages", 2)?;
        if m_stages == 0 {
            return Err(bad("m_stages", "must be at least 1"));
        }
        let seed = f.take_or("seed", 0u64)?;
        let output_dir = base_dir.join(f.take_str("output_dir").unwrap_or_else(|| "out".into()));

        let weights = LossWeights {
            lambda_rec: f.take_or("lambda_rec", d.weights.lambda_rec)?,
            lambda_adv: f.take_or("lambda_adv", d.weights.lambda_adv)?,
        };
        weights
            .validate()
            .map_err(|e| bad("lambda_rec", e.to_string()))?;
        let adam = AdamConfig {
            lr: f.take_or("lr", d.adam.lr)?,
            beta1: f.take_or("beta1", d.adam.beta1)?,
            beta2: f.take_or("beta2", d.adam.beta2)?,
            eps: f.take_or("adam_eps", d.adam.eps)?,
        };
        adam.validate().map_err(|e| bad("lr", e.to_string()))?;
        let stage = StageConfig {
            epochs_stage: f.take_or("epochs_stage", d.epochs_stage)?,
            epochs_finetune_g: f.take_or("epochs_finetune_g", d.epochs_finetune_g)?,
            epochs_finetune_d: f.take_or("epochs_finetune_d", d.epochs_finetune_d)?,
            batch_size: f.take_or("batch_size", d.batch_size)?,
            weights,
            adam,
            d_steps_per_g_step: f.take_or("d_steps_per_g_step", d.d_steps_per_g_step)?,
            generator_objective: parse_enum(
                &mut f,
                "generator_objective",
                d.generator_objective,
                &OBJECTIVES,
            )?,
            stage_loss: parse_enum(&mut f, "stage_loss", d.stage_loss, &STAGE_LOSSES)?,
            finetune_loss: parse_enum(&mut f, "finetune_loss", d.finetune_loss, &FINETUNE_LOSSES)?,
        };
        if stage.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1"));
        }
        if stage.d_steps_per_g_step == 0 {
            return Err(bad("d_steps_per_g_step", "must be at least 1"));
        }

        let stage_channels = match f.take_str("stage_channels") {
            None => da.stage_channels.clone(),
            Some(v) => v
                .split(',')
                .map(|c| c.trim().parse::<usize>().ok().filter(|&c| c > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    bad(
                        "stage_channels",
                        format!("`{v}` is not a list of positive integers"),
                    )
                })?,
        };
        if stage_channels.len() < m_stages {
            return Err(bad(
                "stage_channels",
                format!("{} entries for {m_stages} stages", stage_channels.len()),
            ));
        }
        let arch = Architecture {
            stage_channels,
            kernel_size: f.take_or("kernel_size", da.kernel_size)?,
            stride: f.take_or("stride", da.stride)?,
            padding: f.take_or("padding", da.padding)?,
            alpha: f.take_or("leaky_alpha", da.alpha)?,
            allow_overcomplete: f.take_or("allow_overcomplete", da.allow_overcomplete)?,
        };
        if arch.kernel_size == 0 || arch.stride == 0 {
            return Err(bad(
                "kernel_size",
                "kernel_size and stride must be positive",
            ));
        }
        if !(arch.alpha > 0.0 && arch.alpha < 1.0) {
            return Err(bad("leaky_alpha", "must lie in (0, 1)"));
        }
        let grid_rows = f.take_or("grid_rows", 5usize)?;
        if grid_rows == 0 {
            return Err(bad("grid_rows", "must be at least 1"));
        }
        let record_wall_clock = f.take_or("record_wall_clock", false)?;
        f.finish()?;
        Ok(Self {
            manifest,
            regime,
            m_stages,
            seed,
            output_dir,
            stage,
            arch,
            grid_rows,
            record_wall_clock,
        })
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsutil::read(path)?)
            .map_err(|_| Error::invalid(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies `GASCA_SEED` when set (environment wins over the file).
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| bad(SEED_ENV, format!("`{v}` is not a u64")))?;
        }
        Ok(())
    }

    /// Canonical, fully resolved `key=value` form.
    pub fn canonical_text(&self) -> String {
        let s = &self.stage;
        let a = &self.arch;
        let channels: Vec<String> = a.stage_channels.iter().map(usize::to_string).collect();
        let mut out = String::new();
        let _ = write!(
            out,
            "manifest={}\nregime={}\nm_stages={}\nseed={}\noutput_dir={}\n\
             epochs_stage={}\nepochs_finetune_g={}\nepochs_finetune_d={}\nbatch_size={}\n\
             lambda_rec={}\nlambda_adv={}\nlr={}\nbeta1={}\nbeta2={}\nadam_eps={}\n\
             d_steps_per_g_step={}\ngenerator_objective={}\nstage_loss={}\nfinetune_loss={}\n\
             stage_channels={}\nkernel_size={}\nstride={}\npadding={}\nleaky_alpha={}\n\
             allow_overcomplete={}\ngrid_rows={}\nrecord_wall_clock={}\n",
            self.manifest.display(),
            self.regime.name(),
            self.m_stages,
            self.seed,
            self.output_dir.display(),
            s.epochs_stage,
            s.epochs_finetune_g,
            s.epochs_finetune_d,
            s.batch_size,
            s.weights.lambda_rec,
            s.weights.lambda_adv,
            s.adam.lr,
            s.adam.beta1,
            s.adam.beta2,
            s.adam.eps,
            s.d_steps_per_g_step,
            name_of(&OBJECTIVES, &s.generator_objective),
            name_of(&STAGE_LOSSES, &s.stage_loss),
            name_of(&FINETUNE_LOSSES, &s.finetune_loss),
            channels.join(","),
            a.kernel_size,
            a.stride,
            a.padding,
            a.alpha,
            a.allow_overcomplete,
            self.grid_rows,
            self.record_wall_clock,
        );
        out
    }

    /// First eight bytes (little-endian) of the SHA-256 of the canonical text.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// One `metrics.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub regime: Regime,
    pub seed: u64,
    pub stage: usize,
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.regime.name(),
            self.seed,
            self.stage,
            self.epoch,
            self.loss_d,
            self.loss_g,
            self.train_mse,
            self.val_mse,
            self.wall_ms
        )
    }
}

/// Collects epoch records as metrics rows. The CSV has no phase column, so
/// epochs are numbered consecutively within a stage across its training
/// and fine-tuning phases.
struct CsvSink {
    regime: Regime,
    seed: u64,
    wall_clock: bool,
    last: std::time::Instant,
    stage_epochs: Vec<(usize, usize)>,
    rows: Vec<MetricsRow>,
}

impl CsvSink {
    fn new(regime: Regime, seed: u64, wall_clock: bool) -> Self {
        Self {
            regime,
            seed,
            wall_clock,
            last: std::time::Instant::now(),
            stage_epochs: Vec::new(),
            rows: Vec::new(),
        }
    }
}

impl crate::trainer::MetricsSink for CsvSink {
    fn record(&mut self, r: &EpochRecord) {
        let epoch = match self.stage_epochs.iter_mut().find(|(s, _)| *s == r.stage) {
            Some((_, n)) => {
                *n += 1;
                *n - 1
            }
            None => {
                self.stage_epochs.push((r.stage, 1));
                0
            }
        };
        let now = std::time::Instant::now();
        let wall_ms = if self.wall_clock {
            now.duration_since(self.last).as_millis() as u64
        } else {
            0
        };
        self.last = now;
        self.rows.push(MetricsRow {
            regime: self.regime,
            seed: self.seed,
            stage: r.stage,
            epoch,
            loss_d: r.loss_d,
            loss_g: r.loss_g,
            train_mse: r.train_mse,
            val_mse: r.val_mse,
            wall_ms,
        });
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Two-row binary PGM: the first `rows` validation inputs on top, their
/// reconstructions below. Only channel 0 is drawn.
pub fn grid_pgm(g: &GeneratorStack, ds: &PairedDataset, rows: usize) -> Result<Vec<u8>> {
    if rows == 0 || rows > ds.len() {
        return Err(Error::invalid(format!(
            "grid needs 1..={} samples, asked for {rows}",
            ds.len()
        )));
    }
    let idx: Vec<usize> = (0..rows).collect();
    let (inputs, _) = ds.batch(&idx)?;
    let recon = g.reconstruct(&inputs)?;
    let (_, c, h, w) = inputs.dims4("grid")?;
    let (width, height) = (rows * w, 2 * h);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let plane = c * h * w;
    for src in [&inputs, &recon] {
        for y in 0..h {
            for tile in 0..rows {
                let base = tile * plane + y * w;
                out.extend(src.data()[base..base + w].iter().map(|&v| quantize(v)));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub final_val_mse: f64,
    pub checkpoint: Checkpoint,
}

/// Runs the configured regime and writes `metrics.csv`, `checkpoint.gsca`
/// and `grid.pgm` into the output directory. Nothing is written on failure.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let manifest = DatasetManifest::load_file(&cfg.manifest)?;
    let (train, val) = manifest.load_split()?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut sink = CsvSink::new(cfg.regime, cfg.seed, cfg.record_wall_clock);
    let (g, d, report) = match cfg.regime {
        Regime::Ganglw | Regime::Glw => {
            let run = if cfg.regime == Regime::Ganglw {
                ganglw_train_with_sink
            } else {
                glw_baseline_with_sink
            };
            let out = run(
                cfg.m_stages,
                &cfg.arch,
                &train,
                &val,
                &cfg.stage,
                &mut rng,
                &mut sink,
            )?;
            (out.generator, out.discriminator, out.report)
        }
        Regime::Joint => joint_train_baseline_with_sink(
            cfg.m_stages,
            &cfg.arch,
            &train,
            &val,
            &cfg.stage,
            &mut rng,
            &mut sink,
        )?,
    };
    let final_val_mse = report.final_val_mse.unwrap_or(evaluate(&g, &val)?);
    let grid = grid_pgm(&g, &val, cfg.grid_rows.min(val.len()))?;
    let checkpoint = Checkpoint {
        generator: g,
        discriminator: d,
        cursor: Cursor {
            stage: cfg.m_stages as u32,
            epoch: 0,
        },
        rng: rng.state(),
        config_hash: cfg.hash(),
    };

    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    fsutil::write_atomic(
        &cfg.output_dir.join(METRICS_FILE),
        metrics_csv(&sink.rows).as_bytes(),
    )?;
    save_checkpoint(&cfg.output_dir.join(CHECKPOINT_FILE), &checkpoint)?;
    fsutil::write_atomic(&cfg.output_dir.join(GRID_FILE), &grid)?;
    Ok(RunSummary {
        rows: sink.rows,
        final_val_mse,
        checkpoint,
    })
}

/// `(validation MSE of the checkpoint's generator, MSE(x_phi, x_mu))` over
/// the manifest's validation split.
pub fn evaluate_checkpoint(ckpt_path: &Path, manifest_path: &Path) -> Result<(f64, f64)> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let (_, val) = DatasetManifest::load_file(manifest_path)?.load_split()?;
    Ok((
        evaluate(&ckpt.generator, &val)?,
        mse(val.inputs(), val.targets())?,
    ))
}

pub fn eval_line(val_mse: f64, input_mse: f64) -> String {
    format!("val_mse={val_mse} input_mse={input_mse}")
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingAborted { .. } | Error::NonFinite { .. } => EXIT_TRAINING,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn report_error(e: &Error) {
    let line = e.to_string().replace('\n', " ");
    eprintln!("error: {line}");
}

/// `run <config>`.
pub fn cmd_run(config_path: &Path) -> i32 {
    let cfg = ExperimentConfig::load_file(config_path).and_then(|mut c| {
        c.apply_env()?;
        Ok(c)
    });
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            report_error(&e);
            return EXIT_CONFIG;
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            println!(
                "regime={} seed={} final_val_mse={}",
                cfg.regime.name(),
                cfg.seed,
                summary.final_val_mse
            );
            EXIT_OK
        }
        Err(e) => {
            report_error(&e);
            exit_code(&e)
        }
    }
}

/// `eval <ckpt> <manifest>`.
pub fn cmd_eval(ckpt_path: &Path, manifest_path: &Path) -> i32 {
    match evaluate_checkpoint(ckpt_path, manifest_path) {
        Ok((v, i)) => {
            println!("{}", eval_line(v, i));
            EXIT_OK
        }
        Err(e) => {
            report_error(&e);
            EXIT_CONFIG
        }
    }
}

/// `grid <ckpt> <manifest> <out.pgm> --rows N`.
pub fn render_grid(ckpt_path: &Path, manifest_path: &Path, out_path: &Path, rows: usize) -> i32 {
    let bytes = load_checkpoint(ckpt_path).and_then(|ckpt| {
        let (_, val) = DatasetManifest::load_file(manifest_path)?.load_split()?;
        grid_pgm(&ckpt.generator, &val, rows)
    });
    match bytes.and_then(|b| fsutil::write_atomic(out_path, &b)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report_error(&e);
            exit_code(&e)
        }
    }
}
