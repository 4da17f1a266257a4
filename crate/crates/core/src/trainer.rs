//! Layer-wise adversarial training.
//!
//! [`ganglw_train`] grows the generator and discriminator one stage at a
//! time. After each new stage is stacked, the whole generator is fine-tuned
//! on raw pixels (discriminator frozen) and the whole discriminator is then
//! fine-tuned to separate the generator's reconstructions from the targets.
//! [`glw_baseline`] skips both fine-tunes; [`joint_train_baseline`] trains
//! the full architecture end to end with the same generator-update budget.

use std::time::Instant;

use crate::checkpoint::{Checkpoint, Cursor};
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::loss::mse;
use crate::model::{
    DiscriminatorStack, GeneratorStack, Sequential, ShallowAutoencoder, ShallowDiscriminator,
    StageFactory,
};
use crate::objectives::{
    combined_generator_loss, discriminator_loss, generator_adversarial_loss, GeneratorObjective,
    LossWeights,
};
use crate::param::{adam_step, AdamConfig};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Generator objective used during per-stage training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StageLoss {
    /// Weighted reconstruction + adversarial loss.
    #[default]
    Combined,
    /// Adversarial term only (unit weight).
    AdversarialOnly,
}

/// Generator objective used when fine-tuning the whole generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FinetuneLoss {
    #[default]
    Combined,
    /// Reconstruction term only (unit weight); the discriminator is unused.
    ReconstructionOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub epochs_stage: usize,
    pub epochs_finetune_g: usize,
    pub epochs_finetune_d: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub d_steps_per_g_step: usize,
    pub generator_objective: GeneratorObjective,
    pub stage_loss: StageLoss,
    pub finetune_loss: FinetuneLoss,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            epochs_stage: 5,
            epochs_finetune_g: 5,
            epochs_finetune_d: 5,
            batch_size: 16,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            d_steps_per_g_step: 1,
            generator_objective: GeneratorObjective::Saturating,
            stage_loss: StageLoss::Combined,
            finetune_loss: FinetuneLoss::Combined,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::invalid("d_steps_per_g_step must be at least 1"));
        }
        self.weights.validate()?;
        self.adam.validate()
    }

    fn stage_weights(&self) -> LossWeights {
        match self.stage_loss {
            StageLoss::Combined => self.weights,
            StageLoss::AdversarialOnly => LossWeights {
                lambda_rec: 0.0,
                lambda_adv: 1.0,
            },
        }
    }

    fn finetune_weights(&self) -> LossWeights {
        match self.finetune_loss {
            FinetuneLoss::Combined => self.weights,
            FinetuneLoss::ReconstructionOnly => LossWeights {
                lambda_rec: 1.0,
                lambda_adv: 0.0,
            },
        }
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Epochs of joint training that match the generator-update count of a
    /// layer-wise run with `m_stages` stages.
    pub fn matched_joint_epochs(&self, m_stages: usize) -> usize {
        self.epochs_stage * m_stages + self.epochs_finetune_g * m_stages.saturating_sub(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Stage,
    FinetuneG,
    FinetuneD,
    Joint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    pub stage: usize,
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    /// Discriminator accuracy at threshold 0.5 (discriminator fine-tuning only).
    pub accuracy: Option<f64>,
}

impl EpochRecord {
    fn bits(&self) -> impl Iterator<Item = u64> + '_ {
        [self.loss_d, self.loss_g, self.train_mse, self.val_mse]
            .into_iter()
            .chain(self.accuracy)
            .map(f64::to_bits)
    }
}

/// Receives epoch records as they are produced.
pub trait MetricsSink {
    fn record(&mut self, record: &EpochRecord);
}

pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &EpochRecord) {}
}

impl<F: FnMut(&EpochRecord)> MetricsSink for F {
    fn record(&mut self, record: &EpochRecord) {
        self(record)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub g_updates: u64,
    pub d_updates: u64,
    /// Wall-clock milliseconds per `(stage, phase)`; excluded from
    /// [`TrainReport::same_trajectory`].
    pub wall_ms: Vec<(usize, Phase, u64)>,
    pub initial_train_mse: Option<f64>,
    pub initial_val_mse: Option<f64>,
    pub final_val_mse: Option<f64>,
    pub final_accuracy: Option<f64>,
}

impl TrainReport {
    fn absorb(&mut self, other: TrainReport) {
        self.records.extend(other.records);
        self.g_updates += other.g_updates;
        self.d_updates += other.d_updates;
        self.wall_ms.extend(other.wall_ms);
        if other.final_val_mse.is_some() {
            self.final_val_mse = other.final_val_mse;
        }
        if other.final_accuracy.is_some() {
            self.final_accuracy = other.final_accuracy;
        }
    }

    /// Bit-level equality of everything except wall-clock timings.
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        let opt = |v: Option<f64>| v.map(f64::to_bits);
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                (a.phase, a.stage, a.epoch, a.accuracy.is_some())
                    == (b.phase, b.stage, b.epoch, b.accuracy.is_some())
                    && a.bits().eq(b.bits())
            })
            && (self.g_updates, self.d_updates) == (other.g_updates, other.d_updates)
            && opt(self.initial_train_mse) == opt(other.initial_train_mse)
            && opt(self.initial_val_mse) == opt(other.initial_val_mse)
            && opt(self.final_val_mse) == opt(other.final_val_mse)
            && opt(self.final_accuracy) == opt(other.final_accuracy)
    }
}

/// Mean squared reconstruction error of `net` over a whole dataset.
pub fn evaluate<N: Sequential + ?Sized>(net: &N, ds: &PairedDataset) -> Result<f64> {
    mse(&net.forward(ds.inputs())?, ds.targets())
}

struct Ctx<'a> {
    cfg: &'a StageConfig,
    rng: &'a mut SeededRng,
    sink: &'a mut dyn MetricsSink,
}

fn abort(stage: usize, epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { context } => Error::TrainingAborted {
            stage,
            epoch,
            reason: format!("non-finite value in {context}"),
        },
        other => other,
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            context: what.to_string(),
        })
    }
}

fn check_pair_shapes<G: Sequential + ?Sized>(g: &G, ds: &PairedDataset) -> Result<()> {
    let expected = g
        .input_shape()
        .ok_or_else(|| Error::invalid("generator has no stages"))?;
    if ds.item_shape() != expected {
        return Err(Error::shape("dataset", expected, ds.item_shape()));
    }
    Ok(())
}

/// One discriminator update on a batch; returns the pre-update loss.
fn discriminator_step<G, D>(
    g: &G,
    d: &mut D,
    x_phi: &Tensor,
    x_mu: &Tensor,
    adam: &AdamConfig,
) -> Result<f64>
where
    G: Sequential + ?Sized,
    D: Sequential + ?Sized,
{
    let y = g.forward(x_phi)?;
    let real = d.forward_taped(x_mu)?;
    let fake = d.forward_taped(&y)?;
    let loss = discriminator_loss(real.output(), fake.output())?;
    d.backward(&real, &loss.grad_real)?;
    d.backward(&fake, &loss.grad_fake)?;
    adam_step(&mut d.params_mut(), adam)?;
    finite(loss.value, "discriminator loss")
}

/// One generator update through a frozen discriminator; returns
/// `(discriminator loss, generator loss)` measured before the update.
fn generator_step<G, D>(
    g: &mut G,
    d: &mut D,
    x_phi: &Tensor,
    x_mu: &Tensor,
    weights: &LossWeights,
    cfg: &StageConfig,
) -> Result<(f64, f64)>
where
    G: Sequential + ?Sized,
    D: Sequential + ?Sized,
{
    let gt = g.forward_taped(x_phi)?;
    let y = gt.output();
    let fake = d.forward_taped(y)?;
    let d_real = d.forward(x_mu)?;
    let ld = discriminator_loss(&d_real, fake.output())?.value;
    let loss = combined_generator_loss(y, x_mu, fake.output(), weights, cfg.generator_objective)?;
    let mut grad = loss.grad_y;
    if weights.lambda_adv != 0.0 {
        let through_d = d.backward(&fake, &loss.grad_fake)?;
        d.zero_grads();
        grad.add_assign(&through_d)?;
    }
    g.backward(&gt, &grad)?;
    adam_step(&mut g.params_mut(), &cfg.adam)?;
    Ok((
        finite(ld, "discriminator loss")?,
        finite(loss.value, "generator loss")?,
    ))
}

#[allow(clippy::too_many_arguments)]
fn adversarial_phase<G, D>(
    g: &mut G,
    d: &mut D,
    train: &PairedDataset,
    val: &PairedDataset,
    epochs: usize,
    start_epoch: usize,
    phase: Phase,
    stage: usize,
    update_d: bool,
    weights: LossWeights,
    ctx: &mut Ctx<'_>,
) -> Result<TrainReport>
where
    G: Sequential + ?Sized,
    D: Sequential + ?Sized,
{
    check_pair_shapes(g, train)?;
    check_pair_shapes(g, val)?;
    let started = Instant::now();
    let mut report = TrainReport {
        initial_train_mse: Some(evaluate(g, train)?),
        initial_val_mse: Some(evaluate(g, val)?),
        ..TrainReport::default()
    };
    if start_epoch == 0 && epochs > 0 {
        g.reset_optimizer();
        if update_d {
            d.reset_optimizer();
        }
    }
    let cfg = ctx.cfg;
    for epoch in start_epoch..epochs {
        let order = ctx.rng.permutation(train.len());
        let (mut sum_d, mut n_d, mut sum_g, mut n_g) = (0.0, 0usize, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x_phi, x_mu) = train.batch(chunk)?;
            if update_d {
                for _ in 0..cfg.d_steps_per_g_step {
                    sum_d += discriminator_step(g, d, &x_phi, &x_mu, &cfg.adam)
                        .map_err(abort(stage, epoch))?;
                    n_d += 1;
                    report.d_updates += 1;
                }
            }
            let (ld, lg) =
                generator_step(g, d, &x_phi, &x_mu, &weights, cfg).map_err(abort(stage, epoch))?;
            if !update_d {
                sum_d += ld;
                n_d += 1;
            }
            sum_g += lg;
            n_g += 1;
            report.g_updates += 1;
        }
        let train_mse = evaluate(g, train)?;
        let val_mse = evaluate(g, val)?;
        let record = EpochRecord {
            phase,
            stage,
            epoch,
            loss_d: sum_d / n_d as f64,
            loss_g: sum_g / n_g as f64,
            train_mse,
            val_mse,
            accuracy: None,
        };
        if !record.bits().all(|b| f64::from_bits(b).is_finite()) {
            return Err(Error::TrainingAborted {
                stage,
                epoch,
                reason: "non-finite epoch metrics".into(),
            });
        }
        ctx.sink.record(&record);
        report.records.push(record);
    }
    report.final_val_mse = Some(evaluate(g, val)?);
    report
        .wall_ms
        .push((stage, phase, started.elapsed().as_millis() as u64));
    Ok(report)
}

/// Per-stage joint training of a shallow autoencoder and its discriminator.
pub fn train_shallow_pair(
    g_k: ShallowAutoencoder,
    d_k: ShallowDiscriminator,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
) -> Result<(ShallowAutoencoder, ShallowDiscriminator, TrainReport)> {
    train_shallow_pair_from(g_k, d_k, train, val, cfg, rng, 0)
}

/// [`train_shallow_pair`] resumed after `start_epoch` completed epochs. The
/// models (including optimizer state) and `rng` must be those saved at that
/// epoch boundary.
pub fn train_shallow_pair_from(
    mut g_k: ShallowAutoencoder,
    mut d_k: ShallowDiscriminator,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
    start_epoch: usize,
) -> Result<(ShallowAutoencoder, ShallowDiscriminator, TrainReport)> {
    let mut ctx = Ctx {
        cfg,
        rng,
        sink: &mut NullSink,
    };
    let report = stage_pair(&mut g_k, &mut d_k, train, val, start_epoch, &mut ctx)?;
    Ok((g_k, d_k, report))
}

fn stage_pair(
    g_k: &mut ShallowAutoencoder,
    d_k: &mut ShallowDiscriminator,
    train: &PairedDataset,
    val: &PairedDataset,
    start_epoch: usize,
    ctx: &mut Ctx<'_>,
) -> Result<TrainReport> {
    ctx.cfg.validate()?;
    let stage = g_k.stage();
    adversarial_phase(
        g_k,
        d_k,
        train,
        val,
        ctx.cfg.epochs_stage,
        start_epoch,
        Phase::Stage,
        stage,
        true,
        ctx.cfg.stage_weights(),
        ctx,
    )
}

/// Passes both sides of every pair through the generator's encoders.
pub fn encode_dataset(g: &GeneratorStack, ds: &PairedDataset) -> Result<PairedDataset> {
    PairedDataset::from_codes(g.encode(ds.inputs())?, g.encode(ds.targets())?, ds.split())
}

/// End-to-end fine-tuning of every generator stage on raw pairs against a
/// frozen discriminator.
pub fn fine_tune_generator(
    g: GeneratorStack,
    d: &DiscriminatorStack,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
) -> Result<(GeneratorStack, TrainReport)> {
    let mut ctx = Ctx {
        cfg,
        rng,
        sink: &mut NullSink,
    };
    finetune_g(g, d, train, val, &mut ctx)
}

fn finetune_g(
    mut g: GeneratorStack,
    d: &DiscriminatorStack,
    train: &PairedDataset,
    val: &PairedDataset,
    ctx: &mut Ctx<'_>,
) -> Result<(GeneratorStack, TrainReport)> {
    ctx.cfg.validate()?;
    let mut frozen = d.clone();
    let stage = g.depth();
    let report = adversarial_phase(
        &mut g,
        &mut frozen,
        train,
        val,
        ctx.cfg.epochs_finetune_g,
        0,
        Phase::FinetuneG,
        stage,
        false,
        ctx.cfg.finetune_weights(),
        ctx,
    )?;
    Ok((g, report))
}

fn accuracy(d: &DiscriminatorStack, fakes: &Tensor, reals: &Tensor) -> Result<(f64, Tensor)> {
    let p_fake = d.forward(fakes)?;
    let p_real = d.forward(reals)?;
    let correct = p_real.data().iter().filter(|&&p| p >= 0.5).count()
        + p_fake.data().iter().filter(|&&p| p < 0.5).count();
    Ok((
        correct as f64 / (p_fake.len() + p_real.len()) as f64,
        p_fake,
    ))
}

/// Trains the discriminator to rate `targets` as 1 and `reconstructions` as 0.
pub fn fine_tune_discriminator(
    d: DiscriminatorStack,
    reconstructions: &Tensor,
    targets: &Tensor,
    cfg: &StageConfig,
    rng: &mut SeededRng,
) -> Result<(DiscriminatorStack, TrainReport)> {
    let mut ctx = Ctx {
        cfg,
        rng,
        sink: &mut NullSink,
    };
    finetune_d(d, reconstructions, targets, None, &mut ctx)
}

/// `val_mse` of each record is `val_mse` when given, otherwise the MSE of the
/// reconstructions it was trained on (the generator is fixed meanwhile).
fn finetune_d(
    mut d: DiscriminatorStack,
    reconstructions: &Tensor,
    targets: &Tensor,
    val_mse: Option<f64>,
    ctx: &mut Ctx<'_>,
) -> Result<(DiscriminatorStack, TrainReport)> {
    let cfg = ctx.cfg;
    cfg.validate()?;
    reconstructions.expect_same_shape("fine_tune_discriminator", targets)?;
    d.check_input(targets)?;
    let started = Instant::now();
    let stage = d.depth();
    let rec_mse = mse(reconstructions, targets)?;
    let mut report = TrainReport::default();
    if cfg.epochs_finetune_d > 0 {
        d.reset_optimizer();
    }
    let n = targets.batch();
    for epoch in 0..cfg.epochs_finetune_d {
        let order = ctx.rng.permutation(n);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let fake_x = reconstructions.select(chunk)?;
            let real_x = targets.select(chunk)?;
            let real = d.forward_taped(&real_x)?;
            let fake = d.forward_taped(&fake_x)?;
            let loss = discriminator_loss(real.output(), fake.output())?;
            d.backward(&real, &loss.grad_real)?;
            d.backward(&fake, &loss.grad_fake)?;
            adam_step(&mut d.params_mut(), &cfg.adam).map_err(abort(stage, epoch))?;
            sum += finite(loss.value, "discriminator loss").map_err(abort(stage, epoch))?;
            count += 1;
            report.d_updates += 1;
        }
        let (acc, p_fake) = accuracy(&d, reconstructions, targets)?;
        let loss_g = generator_adversarial_loss(&p_fake, cfg.generator_objective)?.value;
        let record = EpochRecord {
            phase: Phase::FinetuneD,
            stage,
            epoch,
            loss_d: sum / count as f64,
            loss_g,
            train_mse: rec_mse,
            val_mse: val_mse.unwrap_or(rec_mse),
            accuracy: Some(acc),
        };
        if !record.bits().all(|b| f64::from_bits(b).is_finite()) {
            return Err(Error::TrainingAborted {
                stage,
                epoch,
                reason: "non-finite epoch metrics".into(),
            });
        }
        ctx.sink.record(&record);
        report.records.push(record);
    }
    report.final_accuracy = Some(accuracy(&d, reconstructions, targets)?.0);
    report.wall_ms.push((
        stage,
        Phase::FinetuneD,
        started.elapsed().as_millis() as u64,
    ));
    Ok((d, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    StageTrain(usize),
    StackG(usize),
    StackD(usize),
    EncodeDataset(usize),
    FinetuneG,
    ReconstructTrainset,
    FinetuneD,
}

impl std::fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TraceEvent::StageTrain(k) => write!(f, "stage_train {k}"),
            TraceEvent::StackG(k) => write!(f, "stack_g {k}"),
            TraceEvent::StackD(k) => write!(f, "stack_d {k}"),
            TraceEvent::EncodeDataset(k) => write!(f, "encode_dataset {k}"),
            TraceEvent::FinetuneG => f.write_str("finetune_g"),
            TraceEvent::ReconstructTrainset => f.write_str("reconstruct_trainset"),
            TraceEvent::FinetuneD => f.write_str("finetune_d"),
        }
    }
}

/// Resumable state of a layer-wise run. Each call to
/// [`LayerwiseTrainer::step_stage`] executes one stage of the algorithm.
pub struct LayerwiseTrainer<'f> {
    factory: &'f dyn StageFactory,
    cfg: StageConfig,
    fine_tune: bool,
    generator: GeneratorStack,
    discriminator: DiscriminatorStack,
    rng: SeededRng,
    trace: Vec<TraceEvent>,
    report: TrainReport,
}

impl<'f> LayerwiseTrainer<'f> {
    /// `fine_tune = false` gives plain greedy layer-wise training.
    pub fn new(
        factory: &'f dyn StageFactory,
        cfg: StageConfig,
        fine_tune: bool,
        rng: SeededRng,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            factory,
            cfg,
            fine_tune,
            generator: GeneratorStack::new(),
            discriminator: DiscriminatorStack::new(),
            rng,
            trace: Vec::new(),
            report: TrainReport::default(),
        })
    }

    /// Continues from a stage-boundary checkpoint. Trace and report start
    /// empty at the resumption point.
    pub fn from_checkpoint(
        factory: &'f dyn StageFactory,
        cfg: StageConfig,
        fine_tune: bool,
        ckpt: Checkpoint,
    ) -> Result<Self> {
        if ckpt.cursor.epoch != 0 {
            return Err(Error::invalid(
                "layer-wise runs resume only at stage boundaries (epoch cursor must be 0)",
            ));
        }
        if ckpt.cursor.stage as usize != ckpt.generator.depth()
            || ckpt.generator.depth() != ckpt.discriminator.depth()
        {
            return Err(Error::invalid(
                "checkpoint cursor does not match stack depths",
            ));
        }
        let mut t = Self::new(
            factory,
            cfg,
            fine_tune,
            crate::rng::SeededRng::from_state(ckpt.rng),
        )?;
        t.generator = ckpt.generator;
        t.discriminator = ckpt.discriminator;
        Ok(t)
    }

    pub fn completed_stages(&self) -> usize {
        self.generator.depth()
    }

    pub fn checkpoint(&self, config_hash: u64) -> Checkpoint {
        Checkpoint {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            cursor: Cursor {
                stage: self.completed_stages() as u32,
                epoch: 0,
            },
            rng: self.rng.state(),
            config_hash,
        }
    }

    pub fn generator(&self) -> &GeneratorStack {
        &self.generator
    }

    pub fn discriminator(&self) -> &DiscriminatorStack {
        &self.discriminator
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    /// Trains, stacks and (optionally) fine-tunes the next stage.
    pub fn step_stage(
        &mut self,
        train: &PairedDataset,
        val: &PairedDataset,
        sink: &mut dyn MetricsSink,
    ) -> Result<()> {
        let k = self.completed_stages() + 1;
        let mut ctx = Ctx {
            cfg: &self.cfg,
            rng: &mut self.rng,
            sink,
        };
        let with_stage = |e: Error| match e {
            e @ Error::TrainingAborted { .. } => e,
            other => Error::invalid(format!("stage {k}: {other}")),
        };
        if k == 1 {
            let shape = train.item_shape();
            let mut g1 = self.factory.autoencoder(1, shape, ctx.rng)?;
            let mut d1 = self.factory.discriminator(1, shape, ctx.rng)?;
            self.trace.push(TraceEvent::StageTrain(1));
            let r = stage_pair(&mut g1, &mut d1, train, val, 0, &mut ctx).map_err(with_stage)?;
            self.report.absorb(r);
            self.generator.push(g1)?;
            self.trace.push(TraceEvent::StackG(1));
            self.discriminator.push(d1)?;
            self.trace.push(TraceEvent::StackD(1));
            return Ok(());
        }

        self.trace.push(TraceEvent::EncodeDataset(k));
        let code_train = encode_dataset(&self.generator, train)?;
        let code_val = encode_dataset(&self.generator, val)?;
        let shape = code_train.item_shape();
        let mut gk = self.factory.autoencoder(k, shape, ctx.rng)?;
        let mut dk = self.factory.discriminator(k, shape, ctx.rng)?;
        self.trace.push(TraceEvent::StageTrain(k));
        let r = stage_pair(&mut gk, &mut dk, &code_train, &code_val, 0, &mut ctx)
            .map_err(with_stage)?;
        self.report.absorb(r);
        self.generator.push(gk).map_err(with_stage)?;
        self.trace.push(TraceEvent::StackG(k));
        self.discriminator.push(dk).map_err(with_stage)?;
        self.trace.push(TraceEvent::StackD(k));

        if self.fine_tune {
            self.trace.push(TraceEvent::FinetuneG);
            let g = std::mem::take(&mut self.generator);
            let (g, r) =
                finetune_g(g, &self.discriminator, train, val, &mut ctx).map_err(with_stage)?;
            self.generator = g;
            self.report.absorb(r);

            self.trace.push(TraceEvent::ReconstructTrainset);
            let recon = self.generator.reconstruct(train.inputs())?;
            let val_mse = evaluate(&self.generator, val)?;

            self.trace.push(TraceEvent::FinetuneD);
            let d = std::mem::take(&mut self.discriminator);
            let (d, r) = finetune_d(d, &recon, train.targets(), Some(val_mse), &mut ctx)
                .map_err(with_stage)?;
            self.discriminator = d;
            self.report.absorb(r);
        }
        Ok(())
    }

    /// Final stacks, report (with raw-pixel validation MSE and discriminator
    /// accuracy on the final reconstructions) and trace.
    pub fn finish(
        mut self,
        train: &PairedDataset,
        val: &PairedDataset,
    ) -> Result<(
        GeneratorStack,
        DiscriminatorStack,
        TrainReport,
        Vec<TraceEvent>,
        SeededRng,
    )> {
        self.report.final_val_mse = Some(evaluate(&self.generator, val)?);
        let recon = self.generator.reconstruct(train.inputs())?;
        self.report.final_accuracy =
            Some(accuracy(&self.discriminator, &recon, train.targets())?.0);
        Ok((
            self.generator,
            self.discriminator,
            self.report,
            self.trace,
            self.rng,
        ))
    }
}

pub struct LayerwiseOutcome {
    pub generator: GeneratorStack,
    pub discriminator: DiscriminatorStack,
    pub report: TrainReport,
    pub trace: Vec<TraceEvent>,
}

#[allow(clippy::too_many_arguments)]
fn layerwise(
    m_stages: usize,
    factory: &dyn StageFactory,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
    fine_tune: bool,
    sink: &mut dyn MetricsSink,
) -> Result<LayerwiseOutcome> {
    if m_stages == 0 {
        return Err(Error::invalid("m_stages must be at least 1"));
    }
    let mut t = LayerwiseTrainer::new(factory, cfg.clone(), fine_tune, rng.clone())?;
    for _ in 0..m_stages {
        t.step_stage(train, val, sink)?;
    }
    let (generator, discriminator, report, trace, rng_out) = t.finish(train, val)?;
    *rng = rng_out;
    Ok(LayerwiseOutcome {
        generator,
        discriminator,
        report,
        trace,
    })
}

/// Gradual greedy layer-wise adversarial training with per-stage fine-tuning.
pub fn ganglw_train(
    m_stages: usize,
    factory: &dyn StageFactory,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
) -> Result<LayerwiseOutcome> {
    ganglw_train_with_sink(m_stages, factory, train, val, cfg, rng, &mut NullSink)
}

pub fn ganglw_train_with_sink(
    m_stages: usize,
    factory: &dyn StageFactory,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
    sink: &mut dyn MetricsSink,
) -> Result<LayerwiseOutcome> {
    layerwise(m_stages, factory, train, val, cfg, rng, true, sink)
}

/// Classic greedy layer-wise training: no fine-tuning after stacking.
pub fn glw_baseline(
    m_stages: usize,
    factory: &dyn StageFactory,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
) -> Result<LayerwiseOutcome> {
    glw_baseline_with_sink(m_stages, factory, train, val, cfg, rng, &mut NullSink)
}

pub fn glw_baseline_with_sink(
    m_stages: usize,
    factory: &dyn StageFactory,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
    sink: &mut dyn MetricsSink,
) -> Result<LayerwiseOutcome> {
    layerwise(m_stages, factory, train, val, cfg, rng, false, sink)
}

/// The full `m_stages` architecture, built with the same factory calls
/// layer-wise training makes, trained end to end from scratch for
/// [`StageConfig::matched_joint_epochs`] epochs.
pub fn joint_train_baseline(
    m_stages: usize,
    factory: &dyn StageFactory,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
) -> Result<(GeneratorStack, DiscriminatorStack, TrainReport)> {
    joint_train_baseline_with_sink(m_stages, factory, train, val, cfg, rng, &mut NullSink)
}

pub fn joint_train_baseline_with_sink(
    m_stages: usize,
    factory: &dyn StageFactory,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &StageConfig,
    rng: &mut SeededRng,
    sink: &mut dyn MetricsSink,
) -> Result<(GeneratorStack, DiscriminatorStack, TrainReport)> {
    if m_stages == 0 {
        return Err(Error::invalid("m_stages must be at least 1"));
    }
    cfg.validate()?;
    let mut g = GeneratorStack::new();
    let mut d = DiscriminatorStack::new();
    let mut shape = train.item_shape().to_vec();
    for k in 1..=m_stages {
        let gk = factory.autoencoder(k, &shape, rng)?;
        let dk = factory.discriminator(k, &shape, rng)?;
        shape = gk.code_shape().to_vec();
        g.push(gk)?;
        d.push(dk)?;
    }
    let mut ctx = Ctx { cfg, rng, sink };
    let mut report = adversarial_phase(
        &mut g,
        &mut d,
        train,
        val,
        cfg.matched_joint_epochs(m_stages),
        0,
        Phase::Joint,
        m_stages,
        true,
        cfg.stage_weights(),
        &mut ctx,
    )?;
    let recon = g.reconstruct(train.inputs())?;
    report.final_accuracy = Some(accuracy(&d, &recon, train.targets())?.0);
    Ok((g, d, report))
}
