//! Dense and convolutional layers, Glorot initialization and Adam.

use crate::autodiff::{Tape, Var};
use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Glorot-uniform weights: `U(−s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
///
/// Rank-2 shapes are `out × in`; rank-4 shapes are `out × in × kh × kw`
/// and count the receptive field in both fans.
pub fn init_params(shape: &[usize], rng: &mut RngStream) -> Result<Tensor> {
    let (fan_in, fan_out) = match *shape {
        [n] => (n, n),
        [out, inp] => (inp, out),
        [out, inp, kh, kw] => (inp * kh * kw, out * kh * kw),
        _ => return Err(Error::dim(format!("no fan convention for shape {shape:?}"))),
    };
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-s, s)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Biases start at zero.
pub fn init_bias(len: usize) -> Tensor {
    Tensor::zeros(&[len])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// A layer's parameters placed on a tape as tracked leaves.
#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weights: Var,
    pub bias: Var,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::dim(format!(
                "dense weights {:?} and bias {:?} are inconsistent",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut RngStream) -> Result<Self> {
        Self::new(init_params(&[outputs, inputs], rng)?, init_bias(outputs))
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    /// `x · Wᵀ + b` for `x` shaped batch × in.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        x.linear(&self.weights, &self.bias)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.in_dim() {
            return Err(Error::dim(format!(
                "dense layer expects batch×{}, got {shape:?}",
                self.in_dim()
            )));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDense {
        BoundDense {
            weights: tape.leaf(self.weights.clone().tracked()),
            bias: tape.leaf(self.bias.clone().tracked()),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, bound: BoundDense, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        tape.linear(x, bound.weights, bound.bias)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weights, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weights, &self.bias]
    }
}

impl BoundDense {
    pub fn vars(&self) -> [Var; 2] {
        [self.weights, self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    pub kernels: Var,
    pub bias: Var,
}

impl BoundConv {
    pub fn vars(&self) -> [Var; 2] {
        [self.kernels, self.bias]
    }
}

impl Conv2dLayer {
    pub fn new(kernels: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        let ks = kernels.shape();
        if ks.len() != 4 || bias.shape() != [ks[0]] {
            return Err(Error::dim(format!(
                "conv kernels {ks:?} and bias {:?} are inconsistent",
                bias.shape()
            )));
        }
        if ks[2].is_multiple_of(2) || ks[3].is_multiple_of(2) {
            return Err(Error::dim("conv kernel extents must be odd"));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::dim(format!("stride {stride} not in {{1, 2}}")));
        }
        Ok(Self {
            kernels,
            bias,
            stride,
        })
    }

    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Self::new(
            init_params(&[out_ch, in_ch, kernel, kernel], rng)?,
            init_bias(out_ch),
            stride,
        )
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let geom = ConvGeometry::new(x, &self.kernels, &self.bias, self.stride)?;
        let (out, _) = conv::conv2d_forward(x, &self.kernels, &self.bias, &geom);
        Ok(out)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundConv {
        BoundConv {
            kernels: tape.leaf(self.kernels.clone().tracked()),
            bias: tape.leaf(self.bias.clone().tracked()),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, bound: BoundConv, x: Var) -> Result<Var> {
        tape.conv2d(x, bound.kernels, bound.bias, self.stride)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.kernels, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.kernels, &self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for an ordered parameter list. Moments are allocated on
/// the first step to mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "parameter {:?} and gradient {:?} differ",
                p.shape(),
                g.shape()
            )));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len()
        || state
            .m
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.shape() != p.shape())
    {
        return Err(Error::dim("optimizer state does not match parameters"));
    }

    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for (((pi, &gi), mi), vi) in pd
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_many;

    #[test]
    fn dense_examples() {
        let id = DenseLayer::new(Tensor::identity(2), init_bias(2)).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(id.forward(&x).unwrap().data(), &[1.0, 2.0]);

        let l = DenseLayer::new(
            Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            Tensor::vector(vec![1.0]).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(l.forward(&x).unwrap().data(), &[6.0]);

        let bad = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(l.forward(&bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_identity_kernel() {
        let layer = Conv2dLayer::new(Tensor::ones(&[1, 1, 1, 1]), init_bias(1), 1).unwrap();
        let data: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let x = Tensor::new(vec![1, 1, 4, 5], data).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_all_ones_on_constant_image() {
        let c = 0.7;
        let layer = Conv2dLayer::new(Tensor::ones(&[1, 1, 3, 3]), init_bias(1), 1).unwrap();
        let x = Tensor::full(&[1, 1, 5, 5], c);
        let y = layer.forward(&x).unwrap();
        // interior pixel (2, 2)
        assert!((y.data()[2 * 5 + 2] - 9.0 * c).abs() < 1e-12);
        // corners see a 2×2 window
        assert!((y.data()[0] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv_output_dims_and_errors() {
        let mut rng = RngStream::new(1, "conv");
        let layer = Conv2dLayer::init(2, 3, 3, 2, &mut rng).unwrap();
        let x = Tensor::full(&[2, 2, 7, 8], 0.5);
        assert_eq!(layer.forward(&x).unwrap().shape(), &[2, 3, 4, 4]);
        let wrong = Tensor::full(&[1, 3, 7, 8], 0.5);
        assert!(matches!(layer.forward(&wrong), Err(Error::Dimension(_))));
        assert!(Conv2dLayer::new(Tensor::ones(&[1, 1, 3, 3]), init_bias(1), 3).is_err());
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(5, "conv-grad");
        for stride in [1, 2] {
            let layer = Conv2dLayer::init(2, 3, 3, stride, &mut rng).unwrap();
            let x: Vec<f64> = (0..2 * 2 * 4 * 4)
                .map(|_| rng.uniform_range(-1.0, 1.0))
                .collect();
            let x = Tensor::new(vec![2, 2, 4, 4], x).unwrap();
            let mut bias = layer.bias.clone();
            bias.data_mut().iter_mut().for_each(|b| *b = rng.normal());
            let err = grad_check_many(
                |t, v| {
                    let y = t.conv2d(v[0], v[1], v[2], stride)?;
                    let y = t.square(y)?;
                    t.sum(y)
                },
                &[x, layer.kernels.clone(), bias],
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "stride {stride}: {err}");
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(&[16, 8], &mut RngStream::new(42, "w")).unwrap();
        let b = init_params(&[16, 8], &mut RngStream::new(42, "w")).unwrap();
        assert_eq!(a, b);
        let s = (6.0f64 / 24.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= s));
        assert!(init_bias(5).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_mean_is_within_three_sigma() {
        let w = init_params(&[100, 100], &mut RngStream::new(3, "stat")).unwrap();
        let n = w.len() as f64;
        let s = (6.0f64 / 200.0).sqrt();
        let sigma_of_mean = s / 3f64.sqrt() / n.sqrt();
        let mean = w.sum() / n;
        assert!(mean.abs() < 3.0 * sigma_of_mean, "mean {mean}");
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut state = AdamState::new(AdamConfig::with_lr(0.1));
        for _ in 0..50 {
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step, 50);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let mut state = AdamState::new(AdamConfig::with_lr(0.1));
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert!((1.0 - p.data()[0] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut state = AdamState::new(AdamConfig::default());
        assert!(matches!(
            adam_step(&mut [&mut p], &[&g], &mut state),
            Err(Error::Dimension(_))
        ));
    }
}
