//! Small image classifier trained with cross-entropy, Adam and a
//! reduce-on-plateau learning-rate schedule.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{classical_augment, ClassicalOp};
use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::data::image::{ImageBuffer, ImageGeometry};
use crate::data::manifest::Provenance;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Conv2dLayer, DenseLayer};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const CLF_FORMAT: &str = "latentaug-clf-v1";
const KERNEL: usize = 3;
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    SmallCnn,
    Mlp,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::SmallCnn => "small-cnn",
            Architecture::Mlp => "mlp",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-cnn" => Ok(Architecture::SmallCnn),
            "mlp" => Ok(Architecture::Mlp),
            _ => Err(Error::Contract(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub arch: Architecture,
    /// Output channels of the stride-2 convolutions (small-cnn only).
    pub conv_channels: Vec<usize>,
    /// Widths of the hidden dense layers before the output layer.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
    /// Classical augmentations drawn on the fly; empty disables them.
    pub classical_ops: Vec<ClassicalOp>,
    /// Whether synthetic training images are also augmented.
    pub augment_synthetic: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::SmallCnn,
            conv_channels: vec![8, 16],
            hidden: vec![32],
            epochs: 150,
            batch_size: 24,
            lr: 5e-4,
            patience: 10,
            factor: 10.0,
            threshold: 1e-4,
            classical_ops: Vec::new(),
            augment_synthetic: false,
        }
    }
}

/// Reduce-on-plateau state: the learning rate is divided by `factor` once
/// `patience` consecutive epochs fail to beat the best loss by more than
/// `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: f64,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, threshold: f64) -> Result<Self> {
        if !(lr > 0.0 && factor > 1.0 && threshold >= 0.0 && patience > 0) {
            return Err(Error::Contract(format!(
                "invalid plateau schedule lr={lr} patience={patience} factor={factor} threshold={threshold}"
            )));
        }
        Ok(Self {
            lr,
            best: f64::INFINITY,
            epochs_since_improvement: 0,
            patience,
            factor,
            threshold,
        })
    }

    /// Records one validation loss; returns true when the rate was reduced.
    pub fn step(&mut self, val_loss: f64) -> Result<bool> {
        if !val_loss.is_finite() {
            return Err(Error::Contract(format!(
                "validation loss {val_loss} is not finite"
            )));
        }
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.epochs_since_improvement = 0;
            return Ok(false);
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            self.lr /= self.factor;
            self.epochs_since_improvement = 0;
            return Ok(true);
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub arch: Architecture,
    pub num_classes: usize,
    pub geometry: ImageGeometry,
    pub convs: Vec<Conv2dLayer>,
    pub dense: Vec<DenseLayer>,
}

/// A training or evaluation image with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageBuffer,
    pub label: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Planar `N × C × H × W` batch from interleaved images, rescaled to [−1, 1].
pub fn images_to_input(images: &[&ImageBuffer]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("no images".into()))?;
    let g = first.geometry();
    let plane = g.width * g.height;
    let mut data = vec![0.0; images.len() * g.pixels()];
    for (n, img) in images.iter().enumerate() {
        if img.geometry() != g {
            return Err(Error::dim(format!(
                "mixed geometries {g} and {}",
                img.geometry()
            )));
        }
        let base = n * g.pixels();
        for (p, px) in img.pixels.chunks(g.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[base + c * plane + p] = 2.0 * v - 1.0;
            }
        }
    }
    Tensor::new(vec![images.len(), g.channels, g.height, g.width], data)
}

/// Mean of `logsumexp(row) − row[label]` and the number of correct argmaxes.
fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, usize) {
    let classes = logits.shape()[1];
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        loss += max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - row[label];
        correct += usize::from(argmax(row) == label);
    }
    (loss / labels.len() as f64, correct)
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    pub fn new(
        geometry: ImageGeometry,
        num_classes: usize,
        config: &ClassifierConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Contract(
                "a classifier needs at least 2 classes".into(),
            ));
        }
        let mut convs = Vec::new();
        let mut features = geometry.pixels();
        if config.arch == Architecture::SmallCnn {
            let (mut ch, mut h, mut w) = (geometry.channels, geometry.height, geometry.width);
            for &out in &config.conv_channels {
                let layer = Conv2dLayer::init(ch, out, KERNEL, 2, rng)?;
                (h, w) = layer.output_hw(h, w);
                ch = out;
                convs.push(layer);
            }
            features = ch * h * w;
        }
        let mut widths = vec![features];
        widths.extend_from_slice(&config.hidden);
        widths.push(num_classes);
        let dense = widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            arch: config.arch,
            num_classes,
            geometry,
            convs,
            dense,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.convs
            .iter()
            .flat_map(Conv2dLayer::params)
            .chain(self.dense.iter().flat_map(DenseLayer::params))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let convs = self.convs.iter_mut().flat_map(|l| l.params_mut());
        convs
            .chain(self.dense.iter_mut().flat_map(|l| l.params_mut()))
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let g = self.geometry;
        if x.shape()[1..] != [g.channels, g.height, g.width] {
            return Err(Error::dim(format!(
                "classifier expects {g} images, got input {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Logits for an `N × C × H × W` input.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.shape()[0];
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.map(|v| v.max(0.0));
        }
        let mut h = h.reshape(&[n, h.len() / n])?;
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Parameter vars bound in `params` order and the logits var.
    pub fn logits_tape(&self, tape: &mut Tape, x: Var) -> Result<(Vec<Var>, Var)> {
        self.check_input(tape.value(x))?;
        let n = tape.value(x).shape()[0];
        let mut vars = Vec::new();
        let mut h = x;
        for conv in &self.convs {
            let b = conv.bind(tape);
            vars.extend(b.vars());
            let a = conv.forward_tape(tape, b, h)?;
            h = tape.relu(a)?;
        }
        let flat = tape.value(h).len() / n;
        h = tape.reshape(h, &[n, flat])?;
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            let b = layer.bind(tape);
            vars.extend(b.vars());
            h = layer.forward_tape(tape, b, h)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok((vars, h))
    }

    /// Class probabilities, one row per image.
    pub fn predict(&self, images: &[ImageBuffer]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(images.len() * self.num_classes);
        for chunk in images.chunks(PREDICT_CHUNK) {
            let refs: Vec<&ImageBuffer> = chunk.iter().collect();
            let probs = self.logits(&images_to_input(&refs)?)?.softmax_rows()?;
            out.extend_from_slice(probs.data());
        }
        Tensor::new(vec![images.len(), self.num_classes], out)
    }

    pub fn predict_labels(&self, images: &[ImageBuffer]) -> Result<Vec<usize>> {
        let probs = self.predict(images)?;
        Ok((0..images.len()).map(|i| argmax(probs.row(i))).collect())
    }

    /// Mean cross-entropy and accuracy on labelled samples.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<(f64, f64)> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("no samples to evaluate".into()));
        }
        let mut loss = 0.0;
        let mut correct = 0;
        for chunk in samples.chunks(PREDICT_CHUNK) {
            let refs: Vec<&ImageBuffer> = chunk.iter().map(|s| &s.image).collect();
            let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
            let logits = self.logits(&images_to_input(&refs)?)?;
            let (l, c) = cross_entropy(&logits, &labels);
            loss += l * chunk.len() as f64;
            correct += c;
        }
        let n = samples.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let list = |v: Vec<usize>| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut ckpt = Checkpoint::new(CLF_FORMAT)
            .with_meta("arch", self.arch)
            .with_meta("num_classes", self.num_classes)
            .with_meta("image", self.geometry)
            .with_meta(
                "conv_channels",
                list(self.convs.iter().map(Conv2dLayer::out_channels).collect()),
            )
            .with_meta("hidden", list(self.hidden()));
        for (i, c) in self.convs.iter().enumerate() {
            ckpt.push_tensor(format!("conv{i}.weight"), &c.kernels);
            ckpt.push_tensor(format!("conv{i}.bias"), &c.bias);
        }
        for (i, d) in self.dense.iter().enumerate() {
            ckpt.push_tensor(format!("dense{i}.weight"), &d.weights);
            ckpt.push_tensor(format!("dense{i}.bias"), &d.bias);
        }
        ckpt
    }

    fn hidden(&self) -> Vec<usize> {
        let n = self.dense.len();
        self.dense[..n - 1]
            .iter()
            .map(DenseLayer::out_dim)
            .collect()
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.version != CLF_FORMAT {
            return Err(Error::Version {
                expected: CLF_FORMAT.into(),
                found: ckpt.version,
            });
        }
        let list = |key: &str| -> Result<Vec<usize>> {
            let raw = ckpt.meta(key)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Data(format!("bad `{key}` entry {v:?}")))
                })
                .collect()
        };
        let config = ClassifierConfig {
            arch: ckpt.meta("arch")?.parse()?,
            conv_channels: list("conv_channels")?,
            hidden: list("hidden")?,
            ..ClassifierConfig::default()
        };
        let geometry: ImageGeometry = ckpt.meta("image")?.parse()?;
        let num_classes = ckpt.meta_parse("num_classes")?;
        let mut model = Self::new(
            geometry,
            num_classes,
            &config,
            &mut RngStream::new(0, "checkpoint-shape"),
        )?;
        let names: Vec<String> = (0..model.convs.len())
            .map(|i| format!("conv{i}"))
            .chain((0..model.dense.len()).map(|i| format!("dense{i}")))
            .flat_map(|n| [format!("{n}.weight"), format!("{n}.bias")])
            .collect();
        let mut cursor = ckpt.take_tensors();
        for (name, param) in names.iter().zip(model.params_mut()) {
            let shape = param.shape().to_vec();
            *param = cursor.next(name, &shape)?;
        }
        cursor.finish()?;
        Ok(model)
    }

    /// The model as it will be after a save/load cycle (f32 parameters).
    pub fn quantized(&self) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::decode(
            &self.to_checkpoint().encode(),
            CLF_FORMAT,
        )?)
    }
}

pub fn save_checkpoint(model: &ClassifierModel, path: &Path) -> Result<()> {
    model.to_checkpoint().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierModel> {
    ClassifierModel::from_checkpoint(Checkpoint::load(path, CLF_FORMAT)?)
}

fn check_samples(samples: &[Sample], what: &str, num_classes: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "the {what} split is empty"
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
        return Err(Error::Data(format!(
            "{what} label {} out of range for {num_classes} classes",
            s.label
        )));
    }
    Ok(())
}

/// Trains on `train`, monitoring `val` after every epoch. The returned
/// model carries the parameters of the epoch with the lowest validation
/// loss.
pub fn train_classifier(
    train: &[Sample],
    val: &[Sample],
    num_classes: usize,
    config: &ClassifierConfig,
    rng: &mut RngStream,
) -> Result<(ClassifierModel, Vec<EpochRecord>)> {
    check_samples(train, "train", num_classes)?;
    check_samples(val, "validation", num_classes)?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Contract(
            "epochs and batch size must be positive".into(),
        ));
    }
    let geometry = train[0].image.geometry();
    let mut model = ClassifierModel::new(geometry, num_classes, config, rng)?;
    let mut scheduler =
        PlateauScheduler::new(config.lr, config.patience, config.factor, config.threshold)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ClassifierModel)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        let lr = scheduler.lr;
        adam.set_lr(lr);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut augmented = Vec::new();
            let mut refs: Vec<&ImageBuffer> = Vec::with_capacity(chunk.len());
            let mut ops = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train[i];
                let eligible = !config.classical_ops.is_empty()
                    && (s.provenance == Provenance::Real || config.augment_synthetic);
                // Index 0 keeps the image as is.
                let k = if eligible {
                    rng.below(config.classical_ops.len() + 1)
                } else {
                    0
                };
                ops.push(k);
                if k > 0 {
                    augmented.push(classical_augment(&s.image, config.classical_ops[k - 1])?);
                }
            }
            let mut aug_iter = augmented.iter();
            for (&i, &k) in chunk.iter().zip(&ops) {
                refs.push(if k > 0 {
                    aug_iter.next().unwrap()
                } else {
                    &train[i].image
                });
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();

            let mut tape = Tape::new();
            let x = tape.constant(images_to_input(&refs)?);
            let (vars, logits) = model.logits_tape(&mut tape, x)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let grads = tape.backward(loss)?;
            loss_sum += tape.value(loss).item()? * chunk.len() as f64;
            let grad_refs: Vec<&Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            adam_step(&mut model.params_mut(), &grad_refs, &mut adam)?;
        }
        let (val_loss, val_acc) = model.evaluate(val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_acc,
            lr,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
        scheduler.step(val_loss)?;
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok((model, history))
}
