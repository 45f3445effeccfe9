//! Base-session training, incremental finetuning and the session pipeline.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::contrast::{scl_loss_with_grad, ContrastQueue};
use crate::data::{make_views, AugConfig, FscilDataset, Sample};
use crate::error::{ensure, Error, Result};
use crate::fantasy::FantasySet;
use crate::image::{Image, ImageBatch};
use crate::inference::{accuracy, predict_batch, variant_features};
use crate::metrics::{separation_report, SeparationOptions, SeparationReport};
use crate::network::{momentum_update_layers, Architecture, EncoderConfig, Gradients, ModelPair, ProjectorCache, Sgd, Tape, PROJECTOR};
use crate::objective::{cross_entropy_with_grad, total_loss, AblationToggles, LossWeights};
use crate::rng::{stream, tag};
use crate::tensor::Matrix;

pub use crate::prototypes::{compute_prototypes, extend_classifier, PrototypeBank, PrototypeKey, SessionPrototypes};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    /// `None` means `base_lr / 10`.
    pub incremental_lr: Option<f64>,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub base_epochs: usize,
    pub incremental_epochs: usize,
    pub trainable_layers: Vec<String>,
    /// Set from the experiment seed rather than read from configuration.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
    /// Keep the queue untouched while finetuning.
    pub freeze_queue_during_finetune: bool,
    /// Recompute prototypes of earlier sessions after each finetune.
    pub recompute_old_prototypes: bool,
    /// L2-normalize features before averaging them into prototypes.
    pub normalize_prototype_features: bool,
    /// Scale of the cosine logits used as the finetuning classifier.
    pub finetune_logit_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            base_lr: 0.1,
            incremental_lr: None,
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            base_epochs: 30,
            incremental_epochs: 10,
            trainable_layers: vec!["block4".to_string(), PROJECTOR.to_string()],
            seed: 0,
            freeze_queue_during_finetune: false,
            recompute_old_prototypes: false,
            normalize_prototype_features: false,
            finetune_logit_scale: 16.0,
        }
    }
}

impl TrainConfig {
    pub fn incremental_lr(&self) -> f64 {
        self.incremental_lr.unwrap_or(self.base_lr / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, InvalidConfig, "batch_size must be at least 1");
        ensure!(self.base_lr > 0.0 && self.base_lr.is_finite(), InvalidConfig, "base_lr must be positive");
        ensure!(self.incremental_lr() > 0.0 && self.incremental_lr().is_finite(), InvalidConfig, "incremental_lr must be positive");
        ensure!((0.0..1.0).contains(&self.sgd_momentum), InvalidConfig, "sgd_momentum must lie in [0, 1)");
        ensure!(self.weight_decay >= 0.0, InvalidConfig, "weight_decay must be non-negative");
        ensure!(self.incremental_epochs >= 1, InvalidConfig, "incremental_epochs must be at least 1");
        ensure!(self.finetune_logit_scale > 0.0, InvalidConfig, "finetune_logit_scale must be positive");
        Ok(())
    }
}

/// Queue, key encoder and view settings of the contrastive branch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ContrastSettings {
    pub queue_len: usize,
    pub encoder_momentum: f64,
    pub n_local: usize,
    pub overlap_threshold: f64,
    pub aug: AugConfig,
}

impl Default for ContrastSettings {
    fn default() -> Self {
        Self { queue_len: 4096, encoder_momentum: 0.999, n_local: 2, overlap_threshold: 0.3, aug: AugConfig::default() }
    }
}

/// Losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub global: f64,
    pub local: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLoss>,
    pub view_fallbacks: usize,
}

/// Classification head used by a training step.
enum Head<'a> {
    /// The linear classifier over base virtual classes.
    Linear,
    /// Scaled cosine logits against fixed unit prototypes; `index` maps
    /// `(class, variant)` to the prototype row.
    Prototypes { protos: &'a Matrix<f64>, index: &'a BTreeMap<(usize, usize), usize>, scale: f64 },
}

struct StepCtx<'a> {
    fantasy: &'a FantasySet,
    weights: &'a LossWeights,
    contrast: &'a ContrastSettings,
    seed: u64,
    view_tag: u64,
    trainable: &'a [bool],
    /// Key-encoder layers refreshed by the momentum update.
    key_layers: Option<&'a [String]>,
    enqueue: bool,
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * step as f64 / total as f64))
}

fn to_f32(m: &Matrix<f64>) -> Matrix<f32> {
    m.to_f32()
}

/// Scaled cosine logits and, given their gradient, the feature gradient.
fn cosine_head(features: &Matrix<f32>, protos: &Matrix<f64>, scale: f64) -> (Matrix<f64>, Vec<f64>) {
    let n = features.rows();
    let mut logits = Matrix::zeros(n, protos.rows());
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let f: Vec<f64> = features.row(i).iter().map(|&v| v as f64).collect();
        let norm = libm::sqrt(crate::tensor::norm_sq(&f));
        norms.push(norm);
        if norm == 0.0 {
            continue;
        }
        for (j, w) in protos.iter_rows().enumerate() {
            logits.set(i, j, scale * crate::tensor::dot(&f, w) / norm);
        }
    }
    (logits, norms)
}

fn cosine_head_backward(
    features: &Matrix<f32>,
    protos: &Matrix<f64>,
    scale: f64,
    norms: &[f64],
    logits: &Matrix<f64>,
    grad_logits: &Matrix<f64>,
) -> Matrix<f64> {
    let d = features.cols();
    let mut out = Matrix::zeros(features.rows(), d);
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        let g = grad_logits.row(i);
        let mut acc = vec![0.0; d];
        let mut radial = 0.0;
        for (j, w) in protos.iter_rows().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(w) {
                *a += g[j] * wv;
            }
            radial += g[j] * logits.get(i, j) / scale;
        }
        let row = out.row_mut(i);
        for ((o, a), &f) in row.iter_mut().zip(&acc).zip(features.row(i)) {
            *o = scale * (a / norm - radial * f as f64 / (norm * norm));
        }
    }
    out
}

/// One optimizer step over `batch` (dataset index, sample).
#[allow(clippy::too_many_arguments)]
fn train_step(
    pair: &mut ModelPair,
    queue: &mut ContrastQueue,
    sgd: &mut Sgd,
    ctx: &StepCtx<'_>,
    head: &Head<'_>,
    batch: &[(usize, &Sample)],
    epoch: usize,
    step: usize,
    lr: f64,
) -> Result<(StepLoss, usize)> {
    let m_count = ctx.fantasy.len();
    let b = batch.len();
    let n_local = ctx.contrast.n_local;
    let w = ctx.weights;
    let use_global = w.alpha > 0.0;
    let use_local = w.beta > 0.0 && n_local > 0;
    let use_contrast = use_global || use_local;

    let mut queries: Vec<Image> = Vec::with_capacity(m_count * b);
    let mut keys: Vec<Image> = Vec::with_capacity(m_count * b);
    let mut locals: Vec<Image> = Vec::with_capacity(m_count * b * n_local);
    let mut labels = Vec::with_capacity(m_count * b);
    let mut fallbacks = 0;
    for (m, t) in ctx.fantasy.transforms().iter().enumerate() {
        for &(id, s) in batch {
            let img = t.apply(&s.image)?;
            let mut rng = stream(ctx.seed, &[ctx.view_tag, epoch as u64, id as u64, m as u64]);
            let bundle =
                make_views(&img, &ctx.contrast.aug, if use_local { n_local } else { 0 }, ctx.contrast.overlap_threshold, &mut rng)?;
            fallbacks += bundle.fallbacks;
            queries.push(bundle.query.image);
            keys.push(bundle.key.image);
            locals.extend(bundle.locals.into_iter().map(|l| l.into_query_view().image));
            labels.push((s.label, m));
        }
    }

    let net = pair.network.clone();
    let mut grads = Gradients::zeros_like(&pair.query);
    let mut tape = Tape::default();
    let qbatch = ImageBatch::from_images(queries.iter())?;
    let fq = net.encode(&pair.query, &qbatch, Some(&mut tape))?;

    let (ce, mut gf) = match head {
        Head::Linear => {
            let virt: Vec<usize> = labels.iter().map(|&(y, m)| y * m_count + m).collect();
            let logits = net.classify(&pair.query, &fq)?.to_f64();
            let (ce, g) = cross_entropy_with_grad(&logits, &virt)?;
            let gf = net.classify_backward(&pair.query, &fq, &to_f32(&g), &mut grads.values, ctx.trainable);
            (ce, gf)
        }
        Head::Prototypes { protos, index, scale } => {
            let targets = labels
                .iter()
                .map(|&(y, m)| {
                    index
                        .get(&(y, m))
                        .copied()
                        .ok_or_else(|| Error::InvalidState(alloc::format!("no prototype for class {y}, variant {m}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let (logits, norms) = cosine_head(&fq, protos, *scale);
            let (ce, g) = cross_entropy_with_grad(&logits, &targets)?;
            (ce, to_f32(&cosine_head_backward(&fq, protos, *scale, &norms, &logits, &g)))
        }
    };

    let mut global = 0.0;
    let mut local = 0.0;
    let mut key_emb = None;
    let virt: Vec<usize> = labels.iter().map(|&(y, m)| y * m_count + m).collect();
    if use_contrast {
        let kbatch = ImageBatch::from_images(keys.iter())?;
        let zk = pair.key_embed(&kbatch)?.to_f64();
        if use_global {
            let mut cache = ProjectorCache::default();
            let zq = net.project(&pair.query, &fq, Some(&mut cache))?.to_f64();
            let own: Vec<usize> = (0..zq.rows()).collect();
            let (l, mut g) = scl_loss_with_grad(&zq, &zk, &own, &virt, w.tau, queue)?;
            global = l;
            g.as_mut_slice().iter_mut().for_each(|v| *v *= w.alpha);
            let gproj = net.project_backward(&pair.query, &cache, &to_f32(&g), &mut grads.values, ctx.trainable);
            for (a, v) in gf.as_mut_slice().iter_mut().zip(gproj.as_slice()) {
                *a += v;
            }
        }
        if use_local {
            let lbatch = ImageBatch::from_images(locals.iter())?;
            let mut ltape = Tape::default();
            let fl = net.encode(&pair.query, &lbatch, Some(&mut ltape))?;
            let mut cache = ProjectorCache::default();
            let zl = net.project(&pair.query, &fl, Some(&mut cache))?.to_f64();
            let own: Vec<usize> = (0..zl.rows()).map(|r| r / n_local).collect();
            let (l, mut g) = scl_loss_with_grad(&zl, &zk, &own, &virt, w.tau, queue)?;
            local = l;
            g.as_mut_slice().iter_mut().for_each(|v| *v *= w.beta);
            let gfl = net.project_backward(&pair.query, &cache, &to_f32(&g), &mut grads.values, ctx.trainable);
            net.encode_backward(&pair.query, &ltape, &gfl, &mut grads.values, ctx.trainable);
        }
        key_emb = Some(zk);
    }
    let total = total_loss(ce, global, local, w).map_err(|e| match e {
        Error::Divergence { value, .. } => Error::Divergence { value, step: Some(step) },
        other => other,
    })?;
    net.encode_backward(&pair.query, &tape, &gf, &mut grads.values, ctx.trainable);
    if !grads.all_finite() {
        return Err(Error::Divergence { value: f64::NAN, step: Some(step) });
    }

    sgd.step(&mut pair.query, &grads, lr as f32, ctx.trainable);
    let m = pair.momentum;
    match ctx.key_layers {
        None => momentum_update_layers(pair, m, |_| true)?,
        Some(layers) => momentum_update_layers(pair, m, |l| layers.iter().any(|x| x == l))?,
    }
    if let (Some(zk), true) = (key_emb, ctx.enqueue) {
        queue.enqueue(&zk, &virt)?;
    }
    Ok((StepLoss { epoch, step, total, ce, global, local }, fallbacks))
}

fn shuffled(n: usize, seed: u64, tag: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[tag, epoch as u64]));
    idx
}

fn check_queue(queue: &ContrastQueue, rows: usize, weights: &LossWeights) -> Result<()> {
    if weights.alpha > 0.0 || weights.beta > 0.0 {
        ensure!(queue.capacity() >= rows, InvalidConfig, "queue length {} is smaller than the {rows} keys of one batch", queue.capacity());
    }
    Ok(())
}

/// Trains the query network on the base session and keeps the key network
/// and queue in step. `samples` pairs each sample with its dataset index,
/// which keys its augmentation stream.
pub fn train_base(
    pair: &mut ModelPair,
    queue: &mut ContrastQueue,
    samples: &[(usize, &Sample)],
    fantasy: &FantasySet,
    weights: &LossWeights,
    contrast: &ContrastSettings,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    weights.validate()?;
    ensure!(!samples.is_empty(), InvalidData, "base session has no samples");
    ensure!(
        fantasy.len() == pair.network.config().num_transforms,
        InvalidConfig,
        "fantasy set has {} transforms, network expects {}",
        fantasy.len(),
        pair.network.config().num_transforms
    );
    let c0 = pair.network.config().num_base_classes;
    ensure!(samples.iter().all(|(_, s)| s.label < c0), InvalidData, "base samples must have labels below {c0}");
    let bs = config.batch_size.min(samples.len());
    check_queue(queue, bs * fantasy.len(), weights)?;

    let trainable = vec![true; pair.query.len()];
    let mut sgd = Sgd::new(&pair.query, config.sgd_momentum as f32, config.weight_decay as f32);
    let ctx = StepCtx {
        fantasy,
        weights,
        contrast,
        seed: config.seed,
        view_tag: tag::VIEWS,
        trainable: &trainable,
        key_layers: None,
        enqueue: true,
    };
    let steps_per_epoch = samples.len().div_ceil(bs);
    let total_steps = steps_per_epoch * config.base_epochs;
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..config.base_epochs {
        let order = shuffled(samples.len(), config.seed, tag::SHUFFLE, epoch);
        for chunk in order.chunks(bs) {
            let batch: Vec<(usize, &Sample)> = chunk.iter().map(|&i| samples[i]).collect();
            let lr = cosine_lr(config.base_lr, step, total_steps);
            let (loss, fb) = train_step(pair, queue, &mut sgd, &ctx, &Head::Linear, &batch, epoch, step, lr)?;
            log::trace!("base epoch {epoch} step {step}: loss {:.5}", loss.total);
            log.steps.push(loss);
            log.view_fallbacks += fb;
            step += 1;
        }
    }
    Ok(log)
}

/// Finetunes `trainable_layers` on the few shots of session `session`.
///
/// Classification uses scaled cosine logits against the prototypes already
/// in `bank` plus provisional prototypes of the new classes; the contrastive
/// terms run against the carried-over queue. An empty layer list skips
/// finetuning.
#[allow(clippy::too_many_arguments)]
pub fn finetune_incremental(
    pair: &mut ModelPair,
    queue: &mut ContrastQueue,
    samples: &[(usize, &Sample)],
    session: usize,
    bank: &PrototypeBank,
    fantasy: &FantasySet,
    weights: &LossWeights,
    contrast: &ContrastSettings,
    config: &TrainConfig,
) -> Result<TrainLog> {
    ensure!(session >= 1, InvalidInput, "finetuning applies to incremental sessions only");
    config.validate()?;
    weights.validate()?;
    if config.trainable_layers.is_empty() {
        log::warn!("no trainable layers configured; finetuning of session {session} skipped");
        return Ok(TrainLog::default());
    }
    pair.network.check_layer_names(&config.trainable_layers)?;
    ensure!(!samples.is_empty(), InvalidData, "session {session} has no samples");
    ensure!(
        fantasy.len() == bank.num_transforms(),
        InvalidConfig,
        "fantasy set has {} transforms, bank {}",
        fantasy.len(),
        bank.num_transforms()
    );
    let bs = config.batch_size.min(samples.len());
    check_queue(queue, bs * fantasy.len(), weights)?;

    let mut classes: Vec<usize> = samples.iter().map(|(_, s)| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let refs: Vec<&Sample> = samples.iter().map(|(_, s)| *s).collect();
    let provisional =
        compute_prototypes(&pair.network, &pair.query, &refs, &classes, session, fantasy, config.normalize_prototype_features)?;
    let mut head_bank = bank.clone();
    head_bank.extend(provisional)?;
    let mut index = BTreeMap::new();
    let mut rows = Vec::with_capacity(head_bank.len());
    for (k, v) in head_bank.entries() {
        index.insert((k.class, k.variant), rows.len());
        let n = libm::sqrt(crate::tensor::norm_sq(v));
        rows.push(if n > 0.0 { v.iter().map(|x| x / n).collect::<Vec<f64>>() } else { v.to_vec() });
    }
    let protos = Matrix::from_rows(&rows)?;
    let head = Head::Prototypes { protos: &protos, index: &index, scale: config.finetune_logit_scale };

    let trainable = pair.network.trainable_mask(&pair.query, &config.trainable_layers);
    let mut sgd = Sgd::new(&pair.query, config.sgd_momentum as f32, config.weight_decay as f32);
    let seed = crate::rng::derive_seed(config.seed, &[session as u64]);
    let ctx = StepCtx {
        fantasy,
        weights,
        contrast,
        seed,
        view_tag: tag::FINETUNE_VIEWS,
        trainable: &trainable,
        key_layers: Some(&config.trainable_layers),
        enqueue: !config.freeze_queue_during_finetune,
    };
    let steps_per_epoch = samples.len().div_ceil(bs);
    let total_steps = steps_per_epoch * config.incremental_epochs;
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..config.incremental_epochs {
        let order = shuffled(samples.len(), seed, tag::FINETUNE_SHUFFLE, epoch);
        for chunk in order.chunks(bs) {
            let batch: Vec<(usize, &Sample)> = chunk.iter().map(|&i| samples[i]).collect();
            let lr = cosine_lr(config.incremental_lr(), step, total_steps);
            let (loss, fb) = train_step(pair, queue, &mut sgd, &ctx, &head, &batch, epoch, step, lr)?;
            log.steps.push(loss);
            log.view_fallbacks += fb;
            step += 1;
        }
    }
    Ok(log)
}

/// Encoder dimensions of an experiment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EncoderSettings {
    pub architecture: Architecture,
    pub projection_dim: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self { architecture: Architecture::default(), projection_dim: 32 }
    }
}

/// Everything the session pipeline needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct FscilSetup {
    pub fantasy: FantasySet,
    pub weights: LossWeights,
    pub contrast: ContrastSettings,
    pub train: TrainConfig,
    pub encoder: EncoderSettings,
    pub separation: SeparationOptions,
}

impl FscilSetup {
    /// Applies ablation toggles to fantasy set, loss weights, local crops and
    /// trainable layers.
    pub fn with_ablation(mut self, toggles: AblationToggles) -> Self {
        let r = toggles.resolve(self.weights, &self.fantasy, self.contrast.n_local, &self.train.trainable_layers);
        self.weights = r.weights;
        self.fantasy = r.fantasy;
        self.contrast.n_local = r.n_local;
        self.train.trainable_layers = r.trainable_layers;
        self
    }
}

/// One row of the per-session predictions export.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictionRecord {
    pub sample: usize,
    pub label: usize,
    pub predicted: usize,
    pub score: f64,
}

/// Evaluation of one session.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionRecord {
    pub session: usize,
    pub num_classes: usize,
    pub num_test: usize,
    pub accuracy: f64,
    pub base_accuracy: f64,
    pub novel_accuracy: Option<f64>,
    pub train_steps: usize,
    pub final_loss: Option<f64>,
    pub separation: SeparationReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Result of a full base + incremental run.
#[derive(Debug, Clone)]
pub struct FscilRun {
    pub sessions: Vec<SessionRecord>,
    pub pair: ModelPair,
    pub queue: ContrastQueue,
    pub bank: PrototypeBank,
}

impl FscilRun {
    pub fn accuracies(&self) -> Vec<f64> {
        self.sessions.iter().map(|s| s.accuracy).collect()
    }
}

/// Accuracies (percent), separation metrics and per-sample predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEvaluation {
    pub accuracy: f64,
    pub base_accuracy: f64,
    pub novel_accuracy: Option<f64>,
    pub separation: SeparationReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Evaluates the bank on the test samples of all classes seen up to `session`.
pub fn evaluate_session(
    dataset: &FscilDataset,
    session: usize,
    pair: &ModelPair,
    bank: &PrototypeBank,
    fantasy: &FantasySet,
    opts: SeparationOptions,
) -> Result<SessionEvaluation> {
    let idx = dataset.test_indices_up_to(session);
    ensure!(!idx.is_empty(), InvalidData, "no test samples for session {session}");
    let images: Vec<&Image> = idx.iter().map(|&i| &dataset.test[i].image).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| dataset.test[i].label).collect();
    let preds = predict_batch(&images, fantasy, &pair.network, &pair.query, bank)?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let acc = accuracy(&predicted, &labels)?;
    let base: Vec<usize> = dataset.sessions[0].class_ids.clone();
    let split = |want_base: bool| -> Option<f64> {
        let (p, l): (Vec<usize>, Vec<usize>) =
            predicted.iter().zip(&labels).filter(|(_, y)| base.contains(y) == want_base).map(|(p, y)| (*p, *y)).unzip();
        accuracy(&p, &l).ok()
    };
    let base_acc = split(true).unwrap_or(0.0);
    let novel_acc = if session > 0 { split(false) } else { None };

    let feats = variant_features(&pair.network, &pair.query, &images, &FantasySet::identity())?.remove(0);
    let protos: BTreeMap<usize, Vec<f64>> = bank.subset(0).into_iter().map(|((_, c), w)| (c, w.to_vec())).collect();
    let novel: Vec<usize> = dataset.sessions[1..=session].iter().flat_map(|s| s.class_ids.iter().copied()).collect();
    let report = separation_report(&feats, &labels, &protos, &base, &novel, opts)?;
    let records = idx
        .iter()
        .zip(&labels)
        .zip(&preds)
        .map(|((&i, &y), p)| PredictionRecord { sample: i, label: y, predicted: p.class, score: p.score })
        .collect();
    Ok(SessionEvaluation { accuracy: acc, base_accuracy: base_acc, novel_accuracy: novel_acc, separation: report, predictions: records })
}

/// Session-by-session driver. After an error the model, queue and bank hold
/// the last state reached before the failing optimizer step.
pub struct FscilRunner<'a> {
    dataset: &'a FscilDataset,
    setup: &'a FscilSetup,
    pub pair: ModelPair,
    pub queue: ContrastQueue,
    pub bank: PrototypeBank,
    pub sessions: Vec<SessionRecord>,
}

impl<'a> FscilRunner<'a> {
    pub fn new(dataset: &'a FscilDataset, setup: &'a FscilSetup) -> Result<Self> {
        let fantasy = &setup.fantasy;
        let c0 = dataset.sessions[0].ways();
        let config = EncoderConfig {
            architecture: setup.encoder.architecture.clone(),
            projection_dim: setup.encoder.projection_dim,
            num_base_classes: c0,
            num_transforms: fantasy.len(),
        };
        let pair = ModelPair::new(config, setup.contrast.encoder_momentum, crate::rng::derive_seed(setup.train.seed, &[tag::INIT]))?;
        pair.network.check_layer_names(&setup.train.trainable_layers)?;
        let queue = ContrastQueue::new(setup.contrast.queue_len, setup.encoder.projection_dim)?;
        let bank = PrototypeBank::new(fantasy.len(), pair.network.feature_dim());
        Ok(Self { dataset, setup, pair, queue, bank, sessions: Vec::new() })
    }

    /// Index of the next session to run.
    pub fn next_session(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_done(&self) -> bool {
        self.sessions.len() == self.dataset.sessions.len()
    }

    /// Trains or finetunes, extends the bank and evaluates the next session.
    pub fn run_session(&mut self) -> Result<(&SessionRecord, TrainLog)> {
        let (dataset, setup) = (self.dataset, self.setup);
        let t = self.next_session();
        ensure!(t < dataset.sessions.len(), InvalidState, "all {} sessions already ran", dataset.sessions.len());
        let spec = &dataset.sessions[t];
        let fantasy = &setup.fantasy;
        let samples: Vec<(usize, &Sample)> = dataset.session_train[t].iter().map(|&i| (i, &dataset.train[i])).collect();
        let log = if t == 0 {
            train_base(&mut self.pair, &mut self.queue, &samples, fantasy, &setup.weights, &setup.contrast, &setup.train)?
        } else {
            finetune_incremental(
                &mut self.pair,
                &mut self.queue,
                &samples,
                t,
                &self.bank,
                fantasy,
                &setup.weights,
                &setup.contrast,
                &setup.train,
            )?
        };
        let refs: Vec<&Sample> = samples.iter().map(|(_, s)| *s).collect();
        let normalize = setup.train.normalize_prototype_features;
        let protos = compute_prototypes(&self.pair.network, &self.pair.query, &refs, &spec.class_ids, t, fantasy, normalize)?;
        if t > 0 && setup.train.recompute_old_prototypes && !setup.train.trainable_layers.is_empty() {
            for old in &dataset.sessions[..t] {
                let old_refs: Vec<&Sample> = dataset.session_train[old.index].iter().map(|&i| &dataset.train[i]).collect();
                self.bank.replace_session(compute_prototypes(
                    &self.pair.network,
                    &self.pair.query,
                    &old_refs,
                    &old.class_ids,
                    old.index,
                    fantasy,
                    normalize,
                )?)?;
            }
        }
        self.bank.extend(protos)?;
        let SessionEvaluation { accuracy: acc, base_accuracy: base_acc, novel_accuracy: novel_acc, separation, predictions } =
            evaluate_session(dataset, t, &self.pair, &self.bank, fantasy, setup.separation)?;
        let record = SessionRecord {
            session: t,
            num_classes: dataset.seen_classes(t).len(),
            num_test: predictions.len(),
            accuracy: acc,
            base_accuracy: base_acc,
            novel_accuracy: novel_acc,
            train_steps: log.steps.len(),
            final_loss: log.steps.last().map(|s| s.total),
            separation,
            predictions,
        };
        log::info!("session {t}: accuracy {acc:.2}% over {} classes", record.num_classes);
        self.sessions.push(record);
        Ok((self.sessions.last().expect("just pushed"), log))
    }

    pub fn finish(self) -> FscilRun {
        FscilRun { sessions: self.sessions, pair: self.pair, queue: self.queue, bank: self.bank }
    }
}

/// Runs every session of `dataset`: base training, per-session finetuning,
/// prototype extension and evaluation.
pub fn run_fscil(dataset: &FscilDataset, setup: &FscilSetup) -> Result<FscilRun> {
    let mut runner = FscilRunner::new(dataset, setup)?;
    while !runner.is_done() {
        runner.run_session()?;
    }
    Ok(runner.finish())
}
