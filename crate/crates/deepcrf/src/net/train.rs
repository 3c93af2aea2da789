//! Two-stage training: supervised contrastive pre-training of the extractor
//! and projection head, then cross-entropy fine-tuning with the classifier.
//! Both stages use Adam with decoupled weight decay and early stopping on the
//! validation loss (patience in epochs, best checkpoint restored).

use std::time::Instant;

use autodiff::{adam_step, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::config::TrainSection;
use crate::net::{ce_loss, encode_input, supcon_loss, DeepCrf, InputEncoding};
use crate::signal::CsiRecord;
use crate::spectrum::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub tau: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 512,
            patience: 10,
            tau: 0.07,
            max_epochs: 200,
            seed: 42,
        }
    }
}

impl From<&TrainSection> for TrainConfig {
    fn from(s: &TrainSection) -> Self {
        TrainConfig {
            learning_rate: s.learning_rate,
            weight_decay: s.weight_decay,
            batch_size: s.batch_size,
            patience: s.patience,
            tau: s.tau,
            max_epochs: s.max_epochs,
            seed: s.seed,
        }
    }
}

/// Records pre-encoded for training, with device ids mapped to dense class
/// indices (sorted device order).
pub struct EncodedDataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    /// Class index -> device id.
    pub classes: Vec<u16>,
}

const INPUT_LEN: usize = 2 * crate::spectrum::NUM_SUBCARRIERS;

impl EncodedDataset {
    pub fn from_records(records: &[CsiRecord], encoding: InputEncoding) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Train("empty dataset".into()));
        }
        let mut classes: Vec<u16> = records.iter().map(|r| r.device_id).collect();
        classes.sort_unstable();
        classes.dedup();
        let mut inputs = Vec::with_capacity(records.len() * INPUT_LEN);
        let mut labels = Vec::with_capacity(records.len());
        for rec in records {
            inputs.extend_from_slice(encode_input(&rec.csi, encoding).data());
            labels.push(classes.binary_search(&rec.device_id).expect("present"));
        }
        Ok(EncodedDataset {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * INPUT_LEN);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.inputs[i * INPUT_LEN..(i + 1) * INPUT_LEN]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(vec![indices.len(), 1, 2, 52], data).expect("sized"),
            labels,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    /// Structured-text epoch log.
    pub fn log_text(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_loss\telapsed_s\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.elapsed_s
            ));
        }
        s.push_str(&format!(
            "best\t{}\t{:.6}\n",
            self.best_epoch, self.best_val_loss
        ));
        s
    }
}

/// Class-balanced batches: classes are cycled two samples at a time, so every
/// class present in a batch contributes at least a pair. Leftover singletons
/// are dropped for the epoch.
fn balanced_batches(
    labels: &[usize],
    indices: &[usize],
    num_classes: usize,
    batch_size: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<Vec<usize>> {
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in indices {
        queues[labels[i]].push(i);
    }
    if let Some(rng) = rng {
        for q in queues.iter_mut() {
            q.shuffle(rng);
        }
    }
    let mut cursors = vec![0usize; num_classes];
    let mut batches = Vec::new();
    let mut current = Vec::with_capacity(batch_size);
    loop {
        let mut advanced = false;
        for c in 0..num_classes {
            if queues[c].len() - cursors[c] >= 2 {
                current.push(queues[c][cursors[c]]);
                current.push(queues[c][cursors[c] + 1]);
                cursors[c] += 2;
                advanced = true;
                if current.len() + 1 >= batch_size {
                    batches.push(std::mem::take(&mut current));
                }
            }
        }
        if !advanced {
            break;
        }
    }
    if current.len() >= 2 {
        batches.push(current);
    }
    batches
}

fn plain_batches(
    indices: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);
    shuffled.chunks(batch_size).map(|c| c.to_vec()).collect()
}

enum Stage {
    SupCon,
    CrossEntropy,
}

struct Trainer<'a> {
    net: &'a mut DeepCrf,
    data: &'a EncodedDataset,
    cfg: &'a TrainConfig,
    trainable: Vec<bool>,
}

impl<'a> Trainer<'a> {
    fn new(net: &'a mut DeepCrf, data: &'a EncodedDataset, cfg: &'a TrainConfig, freeze_extractor: bool, stage: &Stage) -> Self {
        let trainable: Vec<bool> = net
            .params()
            .iter()
            .map(|(name, _)| {
                let head_ok = match stage {
                    Stage::SupCon => !name.starts_with("classifier."),
                    Stage::CrossEntropy => !name.starts_with("projection."),
                };
                let body_ok = !(freeze_extractor && name.starts_with("extractor."));
                head_ok && body_ok
            })
            .collect();
        Trainer {
            net,
            data,
            cfg,
            trainable,
        }
    }

    fn loss_for_batch(&self, indices: &[usize], stage: &Stage, with_grad: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
        let (input, labels) = self.data.batch(indices);
        let mut g = Graph::new();
        let trainable = &self.trainable;
        let bound = if with_grad {
            let mut flags = trainable.iter();
            self.net.bind(&mut g, |_| *flags.next().expect("parallel order"))
        } else {
            self.net.bind(&mut g, |_| false)
        };
        let input = g.constant(input);
        let r = self.net.forward_embed(&mut g, &bound, input)?;
        let loss = match stage {
            Stage::SupCon => {
                let z = self.net.forward_project(&mut g, &bound, r)?;
                supcon_loss(&mut g, z, &labels, self.cfg.tau)?
            }
            Stage::CrossEntropy => {
                let probs = self.net.forward_classify(&mut g, &bound, r)?;
                ce_loss(&mut g, probs, &labels)?
            }
        };
        let value = g.value(loss).scalar_value();
        if !with_grad {
            return Ok((value, None));
        }
        g.backward(loss)?;
        let grads: Vec<Tensor> = bound
            .iter()
            .zip(self.trainable.iter())
            .filter(|(_, &t)| t)
            .map(|(&v, _)| {
                let shape = g.value(v).shape().to_vec();
                match g.grad(v) {
                    Some(grad) => Tensor::new(shape, grad.to_vec()).expect("same shape"),
                    None => Tensor::zeros(shape),
                }
            })
            .collect();
        Ok((value, Some(grads)))
    }

    fn run(
        &mut self,
        stage: Stage,
        train_idx: &[usize],
        val_idx: &[usize],
    ) -> Result<TrainReport> {
        let mut optimizer = AdamState::new(self.cfg.learning_rate, self.cfg.weight_decay);
        let mut best: Option<(f64, Vec<(String, Tensor)>, usize)> = None;
        let mut epochs = Vec::new();
        let mut stale = 0usize;

        for epoch in 1..=self.cfg.max_epochs {
            let started = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, 0xe0 + epoch as u64));
            let batches = match stage {
                Stage::SupCon => balanced_batches(
                    self.data.labels(),
                    train_idx,
                    self.data.num_classes(),
                    self.cfg.batch_size,
                    Some(&mut rng),
                ),
                Stage::CrossEntropy => plain_batches(train_idx, self.cfg.batch_size, &mut rng),
            };
            if batches.is_empty() {
                return Err(Error::Train("no usable training batches".into()));
            }
            let mut train_loss = 0.0;
            for batch in &batches {
                let (value, grads) = self.loss_for_batch(batch, &stage, true)?;
                train_loss += value;
                let grads = grads.expect("with_grad");
                let mut tensors: Vec<Tensor> = self
                    .net
                    .params()
                    .iter()
                    .zip(self.trainable.iter())
                    .filter(|(_, &t)| t)
                    .map(|((_, t), _)| t.clone())
                    .collect();
                adam_step(&mut tensors, &grads, &mut optimizer)?;
                let mut it = tensors.into_iter();
                let trainable = &self.trainable;
                for (slot, &t) in self.net.params_mut().iter_mut().zip(trainable.iter()) {
                    if t {
                        slot.1 = it.next().expect("same count");
                    }
                }
            }
            train_loss /= batches.len() as f64;

            let val_loss = self.validation_loss(&stage, val_idx)?;
            epochs.push(EpochStats {
                epoch,
                train_loss,
                val_loss,
                elapsed_s: started.elapsed().as_secs_f64(),
            });

            let improved = best.as_ref().map(|(b, _, _)| val_loss < *b).unwrap_or(true);
            if improved {
                best = Some((val_loss, self.net.params().to_vec(), epoch));
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.patience {
                    break;
                }
            }
        }

        let (best_val_loss, best_params, best_epoch) =
            best.ok_or_else(|| Error::Train("no epochs ran".into()))?;
        self.net.set_params(&best_params)?;
        Ok(TrainReport {
            epochs,
            best_epoch,
            best_val_loss,
        })
    }

    fn validation_loss(&self, stage: &Stage, val_idx: &[usize]) -> Result<f64> {
        let batches = match stage {
            Stage::SupCon => balanced_batches(
                self.data.labels(),
                val_idx,
                self.data.num_classes(),
                self.cfg.batch_size,
                None,
            ),
            Stage::CrossEntropy => val_idx
                .chunks(self.cfg.batch_size)
                .map(|c| c.to_vec())
                .collect(),
        };
        if batches.is_empty() {
            return Err(Error::Train("validation set yields no usable batches".into()));
        }
        let mut total = 0.0;
        for batch in &batches {
            let (value, _) = self.loss_for_batch(batch, stage, false)?;
            total += value;
        }
        Ok(total / batches.len() as f64)
    }
}

fn require_pairs_per_class(data: &EncodedDataset, train_idx: &[usize]) -> Result<()> {
    let mut counts = vec![0usize; data.num_classes()];
    for &i in train_idx {
        counts[data.labels()[i]] += 1;
    }
    if let Some((class, _)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
        return Err(Error::Train(format!(
            "device {} has fewer than 2 training samples",
            data.classes[class]
        )));
    }
    Ok(())
}

/// Stage 1: supervised contrastive training of extractor + projection head.
pub fn train_stage1(
    net: &mut DeepCrf,
    data: &EncodedDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    require_pairs_per_class(data, train_idx)?;
    Trainer::new(net, data, cfg, false, &Stage::SupCon).run(Stage::SupCon, train_idx, val_idx)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Stage2Options {
    /// Keep the extractor fixed and train only the classifier.
    pub freeze_extractor: bool,
}

/// Stage 2: cross-entropy training of classifier (+ extractor fine-tuning
/// unless frozen). Initialize the extractor from a stage-1 checkpoint with
/// [`DeepCrf::load_extractor`] first, or skip that for the from-scratch arm.
pub fn train_stage2(
    net: &mut DeepCrf,
    data: &EncodedDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    options: Stage2Options,
) -> Result<TrainReport> {
    let stage = Stage::CrossEntropy;
    Trainer::new(net, data, cfg, options.freeze_extractor, &stage).run(
        stage,
        train_idx,
        val_idx,
    )
}
