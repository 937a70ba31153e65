use std::time::Instant;

use numgrad::{sgd_step, Gradients, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, BatchItem};
use crate::corpus::{CorpusBundle, Profile, TrainingPair};
use crate::error::{Error, Result};
use crate::model::{predict_position, AnchorMode, Checkpoint, ModelConfig, ModelParams};
use crate::vocab::{TokenId, Vocab, UNK};

/// How per-item gradients in a batch are combined before clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradReduction {
    /// Gradient of the summed batch loss.
    Sum,
    /// Summed gradient divided by the batch size.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_init: f64,
    /// Per-epoch multiplicative decay: `lr = lr_init · decay^epoch`.
    pub decay: f64,
    pub batch_size: usize,
    /// Weight on the detector loss.
    pub alpha: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub seed: u64,
    /// Global L2 norm bound on the update direction.
    pub grad_clip: f64,
    pub grad_reduction: GradReduction,
    /// Epochs without validation improvement before a stage stops.
    pub patience: usize,
    pub anchor_mode: AnchorMode,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub attn_dim: usize,
    pub tie_value_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 0.5,
            decay: 0.99,
            batch_size: 16,
            alpha: 1.0,
            stage1_epochs: 5,
            stage2_epochs: 20,
            seed: 42,
            grad_clip: 5.0,
            grad_reduction: GradReduction::Mean,
            patience: 5,
            anchor_mode: AnchorMode::Detected,
            emb_dim: 32,
            hidden_dim: 64,
            num_layers: 1,
            attn_dim: 32,
            tie_value_embeddings: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0) {
            return Err(Error::Config("lr_init must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("decay must lie in (0, 1]".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, num_keys: usize, max_len: usize) -> ModelConfig {
        ModelConfig {
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            attn_dim: self.attn_dim,
            vocab_size,
            num_keys,
            max_len,
            p_z_threshold: 0.5,
            tie_value_embeddings: self.tie_value_embeddings,
        }
    }
}

/// Summed losses over some items.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTotals {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub items: usize,
    pub l1_tokens: usize,
}

impl LossTotals {
    fn add(&mut self, other: LossTotals) {
        self.l1 += other.l1;
        self.l2 += other.l2;
        self.total += other.total;
        self.items += other.items;
        self.l1_tokens += other.l1_tokens;
    }

    pub fn mean_l1(&self) -> f64 {
        self.l1 / self.items.max(1) as f64
    }

    pub fn mean_l2(&self) -> f64 {
        self.l2 / self.items.max(1) as f64
    }

    pub fn mean_total(&self) -> f64 {
        self.total / self.items.max(1) as f64
    }

    pub fn l1_per_token(&self) -> f64 {
        self.l1 / self.l1_tokens.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    /// Global epoch index across both stages; drives the learning rate.
    pub epoch: usize,
    pub lr: f64,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub l1_per_token: f64,
    pub valid_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Per stage, the epoch whose parameters were kept.
    pub best_epochs: Vec<Option<usize>>,
    pub stopped_early: Vec<bool>,
    pub wall_time_secs: f64,
}

/// SGD over [`BatchItem`]s with seeded shuffling, decay and clipping.
pub struct Trainer {
    pub params: ModelParams,
    config: TrainConfig,
    profile_values: Vec<TokenId>,
    rng: ChaCha8Rng,
    epoch: usize,
    grads: Gradients,
}

impl Trainer {
    pub fn new(params: ModelParams, profile_values: Vec<TokenId>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let grads = Gradients::for_store(&params.store);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_7a41);
        Ok(Trainer {
            params,
            config,
            profile_values,
            rng,
            epoch: 0,
            grads,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Learning rate of the next epoch.
    pub fn lr(&self) -> f64 {
        self.config.lr_init * self.config.decay.powi(self.epoch as i32)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn profile_values(&self) -> &[TokenId] {
        &self.profile_values
    }

    /// One SGD update on `batch`: `θ ← θ − lr · clip(∇L)`.
    pub fn step(&mut self, batch: &[BatchItem], lr: f64) -> Result<LossTotals> {
        self.grads.zero();
        let totals = {
            let mut tape = Tape::new(&self.params.store);
            let loss = total_loss(&mut tape, &self.params, batch, &self.profile_values, self.config.alpha)?;
            tape.backward(loss.total, &mut self.grads)?;
            LossTotals {
                l1: loss.l1,
                l2: loss.l2,
                total: tape.scalar(loss.total)?,
                items: batch.len(),
                l1_tokens: batch.iter().map(BatchItem::l1_tokens).sum(),
            }
        };
        if !self.grads.all_finite() {
            return Err(Error::Domain("non-finite gradient".into()));
        }
        if self.config.grad_reduction == GradReduction::Mean {
            self.grads.scale(1.0 / batch.len().max(1) as f64);
        }
        self.grads.clip_global_norm(self.config.grad_clip);
        sgd_step(&mut self.params.store, &self.grads, lr);
        Ok(totals)
    }

    /// Shuffles `items` into batches and runs one epoch at the current learning rate.
    pub fn train_epoch(&mut self, items: &[BatchItem]) -> Result<LossTotals> {
        let lr = self.lr();
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut self.rng);
        let mut totals = LossTotals::default();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<BatchItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            totals.add(self.step(&batch, lr)?);
        }
        self.epoch += 1;
        Ok(totals)
    }

    /// Losses without updating anything.
    pub fn evaluate(&self, items: &[BatchItem]) -> Result<LossTotals> {
        let mut totals = LossTotals::default();
        for chunk in items.chunks(self.config.batch_size) {
            let mut tape = Tape::new(&self.params.store);
            let loss = total_loss(&mut tape, &self.params, chunk, &self.profile_values, self.config.alpha)?;
            totals.add(LossTotals {
                l1: loss.l1,
                l2: loss.l2,
                total: tape.scalar(loss.total)?,
                items: chunk.len(),
                l1_tokens: chunk.iter().map(BatchItem::l1_tokens).sum(),
            });
        }
        Ok(totals)
    }
}

/// Uniform 1-based anchor for every item.
pub fn assign_random_anchors(items: &mut [BatchItem], rng: &mut impl Rng) {
    for item in items {
        item.pair.position_label = Some(rng.gen_range(1..=item.pair.response.len()));
    }
}

/// Anchor at the response token closest to the profile value of the item's key.
pub fn assign_detected_anchors(items: &mut [BatchItem], params: &ModelParams, profile_values: &[TokenId]) -> Result<()> {
    for item in items {
        let key = item
            .pair
            .key_label
            .ok_or_else(|| Error::Contract("profile-related pair has no key label".into()))?;
        let value = *profile_values
            .get(key)
            .ok_or_else(|| Error::Contract(format!("key label {key} outside the profile")))?;
        item.pair.position_label = Some(predict_position(params, &item.pair.response, value)?);
    }
    Ok(())
}

/// Token ids of the profile values, in key order, checked against the corpus keys.
pub fn profile_value_ids(profile: &Profile, keys: &[String], vocab: &Vocab) -> Result<Vec<TokenId>> {
    if profile.keys().ne(keys.iter().map(String::as_str)) {
        return Err(Error::Config(format!(
            "profile keys {:?} do not match model keys {:?}",
            profile.keys().collect::<Vec<_>>(),
            keys
        )));
    }
    Ok(profile.values().map(|v| vocab.id_or_unk(v)).collect())
}

struct EarlyStop {
    patience: usize,
    best: Option<(f64, usize, ModelParams)>,
    since_best: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        EarlyStop { patience, best: None, since_best: 0 }
    }

    /// Records a validation loss; returns true when the stage should stop.
    fn observe(&mut self, loss: f64, epoch: usize, params: &ModelParams) -> bool {
        match &self.best {
            Some((b, _, _)) if loss >= *b => {
                self.since_best += 1;
            }
            _ => {
                self.best = Some((loss, epoch, params.clone()));
                self.since_best = 0;
            }
        }
        self.since_best >= self.patience
    }
}

/// Full schedule. Stage 1: general and bidirectional decoders on `d_c` with
/// random anchors. Stage 2: bidirectional decoder and key selector on `d_pr`
/// (anchors per `config.anchor_mode`) plus the gate on `d_pb`.
pub fn train_two_stage(bundle: &CorpusBundle, profile: &Profile, config: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    train_two_stage_with(bundle, profile, config, |_, _| Ok(()))
}

/// [`train_two_stage`] with a hook called after every epoch.
pub fn train_two_stage_with<F>(
    bundle: &CorpusBundle,
    profile: &Profile,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Checkpoint, TrainReport)>
where
    F: FnMut(&EpochRecord, &ModelParams) -> Result<()>,
{
    config.validate()?;
    let started = Instant::now();
    let keys: Vec<String> = bundle.meta.keys.iter().map(|k| k.name.clone()).collect();
    let profile_values = profile_value_ids(profile, &keys, &bundle.vocab)?;
    if let Some(i) = profile_values.iter().position(|&v| v == UNK) {
        return Err(Error::Config(format!(
            "profile value {:?} is not in the vocabulary",
            profile.value_at(i)
        )));
    }
    let need = |name: &str, split: &[crate::corpus::Record], epochs: usize| {
        if epochs > 0 && split.is_empty() {
            Err(Error::Config(format!("split {name} is empty")))
        } else {
            Ok(())
        }
    };
    need("d_c", &bundle.d_c, config.stage1_epochs)?;
    need("d_pr", &bundle.d_pr, config.stage2_epochs)?;
    need("d_pb", &bundle.d_pb, config.stage2_epochs)?;

    let model_config = config.model_config(bundle.vocab.len(), keys.len(), bundle.meta.max_len);
    let params = ModelParams::init(&model_config, config.seed)?;
    let mut trainer = Trainer::new(params, profile_values.clone(), config.clone())?;
    let mut report = TrainReport::default();
    let mut valid_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0a11_da7e);

    let wrap = |pairs: Vec<TrainingPair>, f: fn(TrainingPair) -> BatchItem| pairs.into_iter().map(f).collect::<Vec<_>>();

    // Stage 1.
    let mut stage1 = wrap(bundle.encode(&bundle.d_c)?, BatchItem::general_bidirectional);
    let mut valid1 = wrap(bundle.encode(&bundle.valid)?, BatchItem::general_bidirectional);
    assign_random_anchors(&mut valid1, &mut valid_rng);
    run_stage(
        1,
        config.stage1_epochs,
        &mut trainer,
        &mut report,
        &mut on_epoch,
        |trainer| {
            let mut rng = trainer.rng.clone();
            assign_random_anchors(&mut stage1, &mut rng);
            trainer.rng = rng;
            Ok(stage1.clone())
        },
        |_| Ok(valid1.clone()),
    )?;

    // Stage 2.
    let d_pr = wrap(bundle.encode(&bundle.d_pr)?, BatchItem::profile_related);
    let d_pb = wrap(bundle.encode(&bundle.d_pb)?, BatchItem::profile_binary);
    let valid_pairs: Vec<TrainingPair> = bundle
        .encode(&bundle.valid)?
        .into_iter()
        .filter(|p| p.z_label == Some(true) && p.key_label.is_some())
        .collect();
    let mut valid2 = wrap(valid_pairs, BatchItem::profile_related);
    // Generation loss only: validation tracks L1.
    if config.anchor_mode == AnchorMode::Random {
        assign_random_anchors(&mut valid2, &mut valid_rng);
    }
    let mode = config.anchor_mode;
    run_stage(
        2,
        config.stage2_epochs,
        &mut trainer,
        &mut report,
        &mut on_epoch,
        |trainer| {
            let mut related = d_pr.clone();
            match mode {
                AnchorMode::Detected => assign_detected_anchors(&mut related, &trainer.params, &profile_values)?,
                AnchorMode::Random => assign_random_anchors(&mut related, &mut trainer.rng),
            }
            related.extend(d_pb.iter().cloned());
            Ok(related)
        },
        |trainer| {
            let mut v = valid2.clone();
            if mode == AnchorMode::Detected {
                assign_detected_anchors(&mut v, &trainer.params, &profile_values)?;
            }
            for item in &mut v {
                item.key = false;
            }
            Ok(v)
        },
    )?;

    report.wall_time_secs = started.elapsed().as_secs_f64();
    let checkpoint = Checkpoint {
        params: trainer.params,
        vocab: bundle.vocab.clone(),
        keys,
        anchor_mode: config.anchor_mode,
    };
    Ok((checkpoint, report))
}

#[allow(clippy::too_many_arguments)]
fn run_stage<F, T, V>(
    stage: u8,
    epochs: usize,
    trainer: &mut Trainer,
    report: &mut TrainReport,
    on_epoch: &mut F,
    mut train_items: T,
    mut valid_items: V,
) -> Result<()>
where
    F: FnMut(&EpochRecord, &ModelParams) -> Result<()>,
    T: FnMut(&mut Trainer) -> Result<Vec<BatchItem>>,
    V: FnMut(&Trainer) -> Result<Vec<BatchItem>>,
{
    let mut stop = EarlyStop::new(trainer.config.patience.max(1));
    let mut stopped = false;
    for _ in 0..epochs {
        let items = train_items(trainer)?;
        let lr = trainer.lr();
        let epoch = trainer.epochs_done();
        let totals = trainer.train_epoch(&items)?;
        let valid = valid_items(trainer)?;
        let valid_l1 = if valid.is_empty() {
            None
        } else {
            Some(trainer.evaluate(&valid)?.mean_l1())
        };
        let record = EpochRecord {
            stage,
            epoch,
            lr,
            l1: totals.mean_l1(),
            l2: totals.mean_l2(),
            total: totals.mean_total(),
            l1_per_token: totals.l1_per_token(),
            valid_l1,
        };
        log::info!(
            "stage {stage} epoch {epoch}: lr {lr:.4} L1 {:.4} L2 {:.4} valid L1 {:?}",
            record.l1,
            record.l2,
            record.valid_l1
        );
        on_epoch(&record, &trainer.params)?;
        report.epochs.push(record);
        if let Some(v) = valid_l1 {
            if stop.observe(v, epoch, &trainer.params) {
                stopped = true;
                break;
            }
        }
    }
    let best_epoch = match stop.best {
        Some((_, epoch, params)) => {
            trainer.params = params;
            Some(epoch)
        }
        None => None,
    };
    report.best_epochs.push(best_epoch);
    report.stopped_early.push(stopped);
    Ok(())
}
