//! Class-specific variational autoencoder.
//!
//! The encoder is an MLP over flattened images ending in two heads, the
//! latent mean and the latent log-variance. The decoder mirrors it and
//! ends in a sigmoid, so reconstructions are per-pixel Bernoulli means.
//! The training loss is the negative ELBO with unit KL weight:
//!
//! ```text
//! loss = mean_batch( Σᵢ −[xᵢ ln x̂ᵢ + (1−xᵢ) ln(1−x̂ᵢ)] )
//!      + mean_batch( ½ Σⱼ (μⱼ² + σⱼ² − 1 − ln σⱼ²) )
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::data::image::{ImageBuffer, ImageGeometry};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, BoundDense, DenseLayer};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const VAE_FORMAT: &str = "latentaug-vae-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder uses them in reverse.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for VaeConfig {
    /// Latent size, epoch budget and learning rate of the reference setup.
    fn default() -> Self {
        Self {
            latent_dim: 256,
            hidden: vec![512, 256],
            epochs: 1000,
            lr: 1e-4,
            batch_size: 24,
        }
    }
}

impl VaeConfig {
    /// Small setting that trains in well under a minute per class.
    pub fn desk() -> Self {
        Self {
            latent_dim: 32,
            epochs: 300,
            lr: 1e-3,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Encoder statistics, noise draw and resulting latent code for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub eps: Tensor,
    pub z: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub class_label: usize,
    pub latent_dim: usize,
    pub geometry: ImageGeometry,
    pub encoder: Vec<DenseLayer>,
    pub mu_head: DenseLayer,
    pub logvar_head: DenseLayer,
    pub decoder: Vec<DenseLayer>,
    pub output: DenseLayer,
}

/// Tape handles for every VAE parameter.
#[derive(Debug, Clone)]
pub struct BoundVae {
    encoder: Vec<BoundDense>,
    mu_head: BoundDense,
    logvar_head: BoundDense,
    decoder: Vec<BoundDense>,
    output: BoundDense,
}

impl BoundVae {
    /// Parameter vars in the order of [`VaeModel::params_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head])
            .chain(&self.decoder)
            .chain([&self.output])
            .flat_map(BoundDense::vars)
            .collect()
    }
}

fn relu(x: Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

impl VaeModel {
    pub fn new(
        class_label: usize,
        geometry: ImageGeometry,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        if latent_dim == 0 || hidden.contains(&0) {
            return Err(Error::Contract("VAE widths must be positive".into()));
        }
        let pixels = geometry.pixels();
        let mut widths = vec![pixels];
        widths.extend_from_slice(hidden);
        let encoder = widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        let last = *widths.last().unwrap();
        let mu_head = DenseLayer::init(last, latent_dim, rng)?;
        let logvar_head = DenseLayer::init(last, latent_dim, rng)?;
        let mut dec_widths = vec![latent_dim];
        dec_widths.extend(hidden.iter().rev());
        let decoder = dec_widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        let output = DenseLayer::init(*dec_widths.last().unwrap(), pixels, rng)?;
        Ok(Self {
            class_label,
            latent_dim,
            geometry,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
        })
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.encoder.iter().map(DenseLayer::out_dim).collect()
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head])
            .chain(&self.decoder)
            .chain([&self.output])
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head])
            .chain(self.decoder.iter_mut())
            .chain([&mut self.output])
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().flat_map(DenseLayer::params).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.geometry.pixels() {
            return Err(Error::dim(format!(
                "VAE for {} images expects batch×{}, got {:?}",
                self.geometry,
                self.geometry.pixels(),
                x.shape()
            )));
        }
        if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("VAE inputs must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.rank() != 2 || z.shape()[1] != self.latent_dim {
            return Err(Error::dim(format!(
                "expected batch×{} latent codes, got {:?}",
                self.latent_dim,
                z.shape()
            )));
        }
        Ok(())
    }

    /// Latent mean and log-variance for a batch of flattened images.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_images(x)?;
        let mut h = x.clone();
        for layer in &self.encoder {
            h = relu(layer.forward(&h)?);
        }
        Ok((self.mu_head.forward(&h)?, self.logvar_head.forward(&h)?))
    }

    /// Bernoulli means in (0, 1) for a batch of latent codes.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let mut h = z.clone();
        for layer in &self.decoder {
            h = relu(layer.forward(&h)?);
        }
        Ok(self.output.forward(&h)?.map(crate::tensor::sigmoid))
    }

    /// Encodes, draws standard-normal noise from `rng` and reparameterizes.
    pub fn sample_latent(&self, x: &Tensor, rng: &mut RngStream) -> Result<LatentSample> {
        let (mu, logvar) = self.encode(x)?;
        let eps = standard_normal(mu.shape(), rng);
        let z = reparameterize(&mu, &logvar, &eps)?;
        Ok(LatentSample { mu, logvar, eps, z })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundVae {
        BoundVae {
            encoder: self.encoder.iter().map(|l| l.bind(tape)).collect(),
            mu_head: self.mu_head.bind(tape),
            logvar_head: self.logvar_head.bind(tape),
            decoder: self.decoder.iter().map(|l| l.bind(tape)).collect(),
            output: self.output.bind(tape),
        }
    }

    pub fn encode_tape(&self, tape: &mut Tape, b: &BoundVae, x: Var) -> Result<(Var, Var)> {
        self.check_images(tape.value(x))?;
        let mut h = x;
        for (layer, bound) in self.encoder.iter().zip(&b.encoder) {
            let a = layer.forward_tape(tape, *bound, h)?;
            h = tape.relu(a)?;
        }
        let mu = self.mu_head.forward_tape(tape, b.mu_head, h)?;
        let logvar = self.logvar_head.forward_tape(tape, b.logvar_head, h)?;
        Ok((mu, logvar))
    }

    pub fn decode_tape(&self, tape: &mut Tape, b: &BoundVae, z: Var) -> Result<Var> {
        self.check_latent(tape.value(z))?;
        let mut h = z;
        for (layer, bound) in self.decoder.iter().zip(&b.decoder) {
            let a = layer.forward_tape(tape, *bound, h)?;
            h = tape.relu(a)?;
        }
        let logits = self.output.forward_tape(tape, b.output, h)?;
        tape.sigmoid(logits)
    }

    /// Full stochastic pass on a tape; returns (total, reconstruction, kl).
    pub fn loss_tape(
        &self,
        tape: &mut Tape,
        b: &BoundVae,
        x: Var,
        eps: Var,
    ) -> Result<(Var, Var, Var)> {
        let (mu, logvar) = self.encode_tape(tape, b, x)?;
        let z = reparameterize_tape(tape, mu, logvar, eps)?;
        let x_hat = self.decode_tape(tape, b, z)?;
        elbo_tape(tape, x, x_hat, mu, logvar)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let hidden: Vec<String> = self.hidden().iter().map(usize::to_string).collect();
        let mut ckpt = Checkpoint::new(VAE_FORMAT)
            .with_meta("class_label", self.class_label)
            .with_meta("latent_dim", self.latent_dim)
            .with_meta("image", self.geometry)
            .with_meta("hidden", hidden.join(","));
        for (name, layer) in self.named_layers() {
            ckpt.push_tensor(format!("{name}.weight"), &layer.weights);
            ckpt.push_tensor(format!("{name}.bias"), &layer.bias);
        }
        ckpt
    }

    fn named_layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder{i}"), l));
        }
        out.push(("mu".to_string(), &self.mu_head));
        out.push(("logvar".to_string(), &self.logvar_head));
        for (i, l) in self.decoder.iter().enumerate() {
            out.push((format!("decoder{i}"), l));
        }
        out.push(("output".to_string(), &self.output));
        out
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.version != VAE_FORMAT {
            return Err(Error::Version {
                expected: VAE_FORMAT.into(),
                found: ckpt.version,
            });
        }
        let class_label: usize = ckpt.meta_parse("class_label")?;
        let latent_dim: usize = ckpt.meta_parse("latent_dim")?;
        let geometry: ImageGeometry = ckpt.meta("image")?.parse()?;
        let hidden: Vec<usize> = ckpt
            .meta("hidden")?
            .split(',')
            .map(|h| {
                h.parse()
                    .map_err(|_| Error::Data(format!("bad hidden width {h:?}")))
            })
            .collect::<Result<_>>()?;
        // Rebuild the architecture, then overwrite every parameter.
        let mut model = Self::new(
            class_label,
            geometry,
            latent_dim,
            &hidden,
            &mut RngStream::new(0, "checkpoint-shape"),
        )?;
        let names: Vec<String> = model.named_layers().into_iter().map(|(n, _)| n).collect();
        let mut cursor = ckpt.take_tensors();
        for (name, param) in names
            .iter()
            .flat_map(|n| [format!("{n}.weight"), format!("{n}.bias")])
            .zip(model.params_mut())
        {
            let shape = param.shape().to_vec();
            *param = cursor.next(&name, &shape)?;
        }
        cursor.finish()?;
        Ok(model)
    }

    /// The model as it will be after a save/load cycle (f32 parameters).
    pub fn quantized(&self) -> Result<Self> {
        let bytes = self.to_checkpoint().encode();
        Self::from_checkpoint(Checkpoint::decode(&bytes, VAE_FORMAT)?)
    }
}

pub fn save_checkpoint(model: &VaeModel, path: &Path) -> Result<()> {
    model.to_checkpoint().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<VaeModel> {
    VaeModel::from_checkpoint(Checkpoint::load(path, VAE_FORMAT)?)
}

pub(crate) fn standard_normal(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.normal()).collect())
}

/// `z = μ + exp(½ · logvar) ⊙ ε`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (m, l, e) = (
        tape.constant(mu.clone()),
        tape.constant(logvar.clone()),
        tape.constant(eps.clone()),
    );
    let z = reparameterize_tape(&mut tape, m, l, e)?;
    Ok(tape.value(z).clone())
}

pub fn reparameterize_tape(tape: &mut Tape, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let shapes = [mu, logvar, eps].map(|v| tape.value(v).shape().to_vec());
    if shapes[0] != shapes[1] || shapes[0] != shapes[2] {
        return Err(Error::dim(format!(
            "reparameterize needs equal shapes, got {:?}",
            shapes
        )));
    }
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Negative ELBO terms on a tape; inputs are batch-major.
pub fn elbo_tape(
    tape: &mut Tape,
    x: Var,
    x_hat: Var,
    mu: Var,
    logvar: Var,
) -> Result<(Var, Var, Var)> {
    let recon = tape.binary_cross_entropy(x, x_hat)?;
    let kl = kl_tape(tape, mu, logvar)?;
    let total = tape.add(recon, kl)?;
    Ok((total, recon, kl))
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))` summed over latent
/// dimensions and averaged over the batch.
pub fn kl_tape(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    if tape.value(mu).shape() != tape.value(logvar).shape() {
        return Err(Error::dim("mu and logvar shapes differ"));
    }
    let batch = tape.value(mu).shape()[0] as f64;
    let mu2 = tape.square(mu)?;
    let var = tape.exp(logvar)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0)?;
    let s = tape.sum(c)?;
    tape.scale(s, 0.5 / batch)
}

/// [`kl_tape`] for a single posterior given as two vectors.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() || mu.is_empty() {
        return Err(Error::dim(
            "mu and logvar must be non-empty and equally long",
        ));
    }
    let mut tape = Tape::new();
    let m = tape.constant(Tensor::new(vec![1, mu.len()], mu.to_vec())?);
    let l = tape.constant(Tensor::new(vec![1, logvar.len()], logvar.to_vec())?);
    let kl = kl_tape(&mut tape, m, l)?;
    tape.value(kl).item()
}

/// Negative ELBO for given reconstructions and posterior statistics.
pub fn elbo_loss(
    x: &Tensor,
    x_hat: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
) -> Result<LossBreakdown> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim(format!(
            "x {:?} and x_hat {:?} differ",
            x.shape(),
            x_hat.shape()
        )));
    }
    let as_batch = |t: &Tensor| -> Result<Tensor> {
        if t.rank() == 1 {
            t.reshape(&[1, t.len()])
        } else {
            Ok(t.clone())
        }
    };
    let mut tape = Tape::new();
    let xv = tape.constant(as_batch(x)?);
    let xh = tape.constant(as_batch(x_hat)?);
    let m = tape.constant(as_batch(mu)?);
    let l = tape.constant(as_batch(logvar)?);
    let (total, recon, kl) = elbo_tape(&mut tape, xv, xh, m, l)?;
    Ok(LossBreakdown {
        total: tape.value(total).item()?,
        reconstruction: tape.value(recon).item()?,
        kl: tape.value(kl).item()?,
    })
}

/// Stacks equally sized images into a batch×pixels tensor.
pub fn images_to_batch(images: &[&ImageBuffer]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("no images to batch".into()))?;
    let geometry = first.geometry();
    let mut data = Vec::with_capacity(images.len() * geometry.pixels());
    for img in images {
        if img.geometry() != geometry {
            return Err(Error::dim(format!(
                "mixed image geometries {} and {}",
                geometry,
                img.geometry()
            )));
        }
        data.extend_from_slice(&img.pixels);
    }
    Tensor::new(vec![images.len(), geometry.pixels()], data)
}

/// Trains one VAE on the images of a single class.
///
/// Every epoch shuffles the images, walks them in mini-batches (the last
/// partial batch is kept), draws fresh noise per batch and takes one Adam
/// step per batch. Returns the model and the sample-weighted mean loss of
/// every epoch.
pub fn train_class_vae(
    images: &[ImageBuffer],
    class_label: usize,
    config: &VaeConfig,
    rng: &mut RngStream,
) -> Result<(VaeModel, Vec<LossBreakdown>)> {
    if images.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "class {class_label} has {} images; a VAE needs at least 2",
            images.len()
        )));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Contract(
            "epochs and batch size must be positive".into(),
        ));
    }
    let refs: Vec<&ImageBuffer> = images.iter().collect();
    let data = images_to_batch(&refs)?;
    let geometry = images[0].geometry();
    let pixels = geometry.pixels();
    let mut model = VaeModel::new(
        class_label,
        geometry,
        config.latent_dim,
        &config.hidden,
        rng,
    )?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();

    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut sums = [0.0; 3];
        for chunk in order.chunks(config.batch_size) {
            let mut xb = Vec::with_capacity(chunk.len() * pixels);
            for &i in chunk {
                xb.extend_from_slice(data.row(i));
            }
            let xb = Tensor::from_parts(vec![chunk.len(), pixels], xb);
            let eps = standard_normal(&[chunk.len(), config.latent_dim], rng);

            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let x = tape.constant(xb);
            let e = tape.constant(eps);
            let (total, recon, kl) = model.loss_tape(&mut tape, &bound, x, e)?;
            let grads = tape.backward(total)?;
            let w = chunk.len() as f64;
            sums[0] += w * tape.value(total).item()?;
            sums[1] += w * tape.value(recon).item()?;
            sums[2] += w * tape.value(kl).item()?;

            let grad_refs: Vec<&Tensor> = bound.vars().into_iter().map(|v| grads.wrt(v)).collect();
            adam_step(&mut model.params_mut(), &grad_refs, &mut adam)?;
        }
        let n = images.len() as f64;
        history.push(LossBreakdown {
            total: sums[0] / n,
            reconstruction: sums[1] / n,
            kl: sums[2] / n,
        });
    }
    Ok((model, history))
}
