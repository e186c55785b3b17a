//! Multitask training loop, learning-rate schedule, greedy decoding and
//! exact-match evaluation.

use std::fmt;
use std::str::FromStr;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, InflectionExample, Lexicon, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Batch, Model, ModelConfig, Parameters};
use crate::noise::{NoiseSpec, NoisedPair, Noiser};

/// Named bundles of model and optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Baseline,
    Tiny,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Baseline => "baseline",
            Preset::Tiny => "tiny",
        }
    }

    pub fn model_config(self, vocab_size: usize) -> ModelConfig {
        match self {
            Preset::Paper | Preset::Baseline => ModelConfig::paper(vocab_size),
            Preset::Tiny => ModelConfig::tiny(vocab_size),
        }
    }

    pub fn train_config(self, seed: u64) -> TrainConfig {
        let config = match self {
            Preset::Paper => TrainConfig::paper(),
            Preset::Baseline => TrainConfig::baseline(),
            Preset::Tiny => TrainConfig::tiny(),
        };
        TrainConfig { seed, ..config }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "baseline" => Ok(Preset::Baseline),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    /// Evaluations without dev improvement before stopping; `None` runs
    /// every epoch.
    pub patience: Option<usize>,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            lr_peak: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            warmup_steps: 4000,
            batch_size: 400,
            max_epochs: 800,
            eval_every: 16,
            patience: None,
            max_steps: None,
            seed: 0,
        }
    }

    pub fn baseline() -> Self {
        TrainConfig {
            batch_size: 100,
            max_epochs: 10_000,
            patience: Some(400),
            ..Self::paper()
        }
    }

    pub fn tiny() -> Self {
        TrainConfig {
            lr_peak: 2e-3,
            warmup_steps: 300,
            batch_size: 50,
            max_epochs: 300,
            eval_every: 5,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.lr_peak > 0.0
            && self.warmup_steps > 0
            && self.batch_size > 0
            && self.eval_every > 0
            && self.patience != Some(0)
            && self.max_steps != Some(0);
        if !positive {
            return Err(Error::Config("training settings must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

/// Inverse square root schedule with linear warmup; `step` starts at 1.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let step = step.max(1) as f64;
    let warmup = config.warmup_steps as f64;
    config.lr_peak * (step / warmup).min((warmup / step).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Supervised,
    Auxiliary,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingInstance {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    pub task: Task,
}

fn target_ids(word: &str, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids: Vec<u32> = word.chars().map(|c| vocab.char_id(c)).collect();
    ids.push(Vocabulary::EOS);
    ids
}

/// `BOS lemma-chars EOS` with the given marker ids before `EOS`.
fn source_ids(chars: impl IntoIterator<Item = u32>, markers: impl IntoIterator<Item = u32>) -> Vec<u32> {
    let mut ids = vec![Vocabulary::BOS];
    ids.extend(chars);
    ids.extend(markers);
    ids.push(Vocabulary::EOS);
    ids
}

/// Encoder input for an inflection query: `BOS lemma tags EOS`.
pub fn inflection_source(example: &InflectionExample, vocab: &Vocabulary) -> Vec<u32> {
    source_ids(
        example.lemma().chars().map(|c| vocab.char_id(c)),
        example.tags().iter().map(|t| vocab.tag_id(t)),
    )
}

impl TrainingInstance {
    pub fn supervised(example: &InflectionExample, vocab: &Vocabulary) -> Self {
        TrainingInstance {
            source: inflection_source(example, vocab),
            target: target_ids(example.target(), vocab),
            task: Task::Supervised,
        }
    }

    pub fn auxiliary(pair: &NoisedPair, vocab: &Vocabulary) -> Self {
        TrainingInstance {
            source: source_ids(pair.source_ids(vocab), [Vocabulary::TASK]),
            target: target_ids(&pair.target, vocab),
            task: Task::Auxiliary,
        }
    }

    fn fits(&self, max_len: usize) -> bool {
        self.source.len() <= max_len && self.target.len() <= max_len
    }
}

/// Shuffles both instance sets jointly and cuts them into batches of
/// `batch_size`; the last batch may be smaller.
pub fn build_epoch_batches<R: Rng + ?Sized>(
    supervised: &[TrainingInstance],
    auxiliary: &[TrainingInstance],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<TrainingInstance>> {
    let mut all: Vec<TrainingInstance> = supervised.iter().chain(auxiliary).cloned().collect();
    all.shuffle(rng);
    all.chunks(batch_size.max(1)).map(<[_]>::to_vec).collect()
}

fn to_batch(instances: &[TrainingInstance]) -> Batch {
    Batch {
        sources: instances.iter().map(|i| i.source.clone()).collect(),
        targets: instances.iter().map(|i| i.target.clone()).collect(),
    }
}

const PURPOSE_SHUFFLE: u64 = 1;
const PURPOSE_NOISE: u64 = 2;
const PURPOSE_DROPOUT: u64 = 3;
const PURPOSE_INIT: u64 = 4;

/// Generator for model initialization under `seed`.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, PURPOSE_INIT, 0, 0)
}

/// An independent generator for `(seed, purpose, a, b)`.
pub fn stream_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for x in [a, b] {
        h ^= x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    }
    rng.set_stream(h);
    rng
}

/// Greedy output for one source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub text: String,
    /// Set when the length cap was reached before `EOS`.
    pub truncated: bool,
}

const DECODE_CHUNK: usize = 64;

/// Greedy decoding of one source with an explicit output cap.
pub fn greedy_decode(model: &Model, vocab: &Vocabulary, source: &[u32], max_len_out: usize) -> Result<Prediction> {
    let out = model.greedy_decode_with(&[source.to_vec()], |_| max_len_out)?;
    Ok(Prediction {
        text: vocab.decode_chars(&out[0].ids),
        truncated: !out[0].finished,
    })
}

/// Greedy predictions for every example, in order, with the default cap.
pub fn predict(model: &Model, vocab: &Vocabulary, dataset: &Dataset) -> Result<Vec<Prediction>> {
    let sources: Vec<Vec<u32>> = dataset.iter().map(|e| inflection_source(e, vocab)).collect();
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(DECODE_CHUNK) {
        for d in model.greedy_decode(chunk)? {
            out.push(Prediction {
                text: vocab.decode_chars(&d.ids),
                truncated: !d.finished,
            });
        }
    }
    Ok(out)
}

/// Fraction of exact matches between predictions and gold targets.
pub fn accuracy(predictions: &[Prediction], dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    if predictions.len() != dataset.len() {
        return Err(Error::Alignment(format!(
            "{} predictions for {} examples",
            predictions.len(),
            dataset.len()
        )));
    }
    let hits = predictions.iter().zip(dataset).filter(|(p, e)| p.text == e.target()).count();
    Ok(hits as f64 / dataset.len() as f64)
}

pub fn evaluate(model: &Model, vocab: &Vocabulary, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    accuracy(&predict(model, vocab, dataset)?, dataset)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub epoch: usize,
    pub step: usize,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub step: usize,
    /// Token-weighted mean training loss of the epoch.
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    Patience,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub evaluations: Vec<Evaluation>,
    /// Index into `evaluations` of the retained model; `None` means the
    /// initial parameters were kept.
    pub best: Option<usize>,
    pub best_dev_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub loss_curve: Vec<EpochLoss>,
    pub epochs: usize,
    pub steps: usize,
    pub stop: StopReason,
    pub skipped_overlength: usize,
}

/// Data for one training run. `lexicon` may be empty, in which case no
/// auxiliary instances are produced.
#[derive(Clone, Copy, Debug)]
pub struct TrainInputs<'a> {
    pub supervised: &'a Dataset,
    pub lexicon: &'a Lexicon,
    pub dev: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

struct Adam {
    m: Parameters<f32>,
    v: Parameters<f32>,
    t: i32,
}

impl Adam {
    fn new(config: &ModelConfig) -> Self {
        Adam {
            m: Parameters::zeros(config),
            v: Parameters::zeros(config),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Parameters<f32>, grads: &mut Parameters<f32>, lr: f64, c: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let bias1 = 1.0 - c.beta1.powi(self.t);
        let bias2 = 1.0 - c.beta2.powi(self.t);
        let step = (lr * bias2.sqrt() / bias1) as f32;
        let eps = (c.adam_eps * bias2.sqrt()) as f32;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors_mut())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
                g[i] = 0.0;
            }
        }
    }
}

/// Trains `model` in place and leaves it holding the best-dev parameters.
///
/// Auxiliary instances are re-noised from the lexicon every epoch. With no
/// `noise` spec the lexicon is ignored.
pub fn train(
    model: &mut Model,
    vocab: &Vocabulary,
    inputs: TrainInputs<'_>,
    noise: Option<&NoiseSpec>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if model.config().vocab_size != vocab.len() {
        return Err(Error::Config("model and vocabulary sizes differ".into()));
    }
    let max_len = model.config().max_len;
    let mut skipped = 0;
    let supervised: Vec<TrainingInstance> = inputs
        .supervised
        .iter()
        .map(|e| TrainingInstance::supervised(e, vocab))
        .filter(|i| i.fits(max_len) || {
            skipped += 1;
            false
        })
        .collect();
    let noiser = match noise {
        Some(spec) if !inputs.lexicon.is_empty() => Some(Noiser::new(*spec, vocab)?),
        _ => None,
    };
    if supervised.is_empty() && noiser.is_none() {
        return Err(Error::Empty("no training instances".into()));
    }

    let mut best_params = model.params().clone();
    let mut report = TrainReport {
        evaluations: Vec::new(),
        best: None,
        best_dev_accuracy: None,
        test_accuracy: None,
        loss_curve: Vec::new(),
        epochs: 0,
        steps: 0,
        stop: StopReason::MaxEpochs,
        skipped_overlength: 0,
    };
    let mut adam = Adam::new(model.config());
    let mut grads = Parameters::zeros(model.config());
    let mut dropout_rng = stream_rng(config.seed, PURPOSE_DROPOUT, 0, 0);
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let mut auxiliary = Vec::new();
        if let Some(noiser) = &noiser {
            for (i, entry) in inputs.lexicon.iter().enumerate() {
                let mut rng = stream_rng(config.seed, PURPOSE_NOISE, epoch as u64, i as u64);
                let inst = TrainingInstance::auxiliary(&noiser.noise(entry, &mut rng)?, vocab);
                if inst.fits(max_len) {
                    auxiliary.push(inst);
                } else if epoch == 1 {
                    skipped += 1;
                }
            }
        }
        let mut shuffle = stream_rng(config.seed, PURPOSE_SHUFFLE, epoch as u64, 0);
        let batches = build_epoch_batches(&supervised, &auxiliary, config.batch_size, &mut shuffle);

        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        let mut capped = false;
        for (b, instances) in batches.iter().enumerate() {
            let batch = to_batch(instances);
            let loss = model.loss_and_grads(&batch, Some(&mut dropout_rng), &mut grads)?;
            let step = report.steps + 1;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged(format!(
                    "loss {loss} at epoch {epoch}, batch {b}, step {step}, lr {:.3e}; last dev accuracy {:?}",
                    lr_at(step, config),
                    report.evaluations.last().map(|e| e.dev_accuracy)
                )));
            }
            adam.step(model.params_mut(), &mut grads, lr_at(step, config), config);
            report.steps = step;
            loss_sum += loss * batch.target_tokens() as f64;
            tokens += batch.target_tokens();
            if config.max_steps.is_some_and(|m| step >= m) {
                capped = true;
                break;
            }
        }
        let loss = loss_sum / tokens.max(1) as f64;
        report.epochs = epoch;
        report.loss_curve.push(EpochLoss {
            epoch,
            step: report.steps,
            loss,
        });
        debug!("epoch {epoch} step {} loss {loss:.4}", report.steps);

        let last = capped || epoch == config.max_epochs;
        if epoch % config.eval_every == 0 || last {
            let dev_accuracy = if inputs.dev.is_empty() {
                0.0
            } else {
                evaluate(model, vocab, inputs.dev)?
            };
            info!("epoch {epoch} step {} loss {loss:.4} dev {dev_accuracy:.4}", report.steps);
            report.evaluations.push(Evaluation {
                epoch,
                step: report.steps,
                dev_accuracy,
            });
            if report.best_dev_accuracy.is_none_or(|b| dev_accuracy > b) {
                report.best = Some(report.evaluations.len() - 1);
                report.best_dev_accuracy = Some(dev_accuracy);
                best_params = model.params().clone();
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience.is_some_and(|p| since_best >= p) {
                    report.stop = StopReason::Patience;
                    break;
                }
            }
        }
        if capped {
            report.stop = StopReason::MaxSteps;
            break;
        }
    }

    *model.params_mut() = best_params;
    if skipped > 0 {
        warn!("skipped {skipped} instances longer than {max_len} positions");
    }
    report.skipped_overlength = skipped;
    if let Some(test) = inputs.test.filter(|t| !t.is_empty()) {
        report.test_accuracy = Some(evaluate(model, vocab, test)?);
    }
    Ok(report)
}
