//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves whose tensor has
//! `grad_tracked` set are differentiable; everything computed from them is
//! tracked as well. [`Tape::backward`] walks the nodes in reverse insertion
//! order, which is a valid reverse topological order because a node can
//! only reference nodes created before it.

use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, ElementwiseOp, ReduceOp, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: ElementwiseOp,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Unary {
        kind: ElementwiseOp,
        a: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    AddScalar {
        a: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reduce {
        kind: ReduceOp,
        a: Var,
        axis: Option<usize>,
    },
    Reshape {
        a: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    BinaryCrossEntropy {
        target: Var,
        pred: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Clamp applied to predictions before taking logarithms in
/// [`Tape::binary_cross_entropy`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, panicking if the var was not a tracked leaf.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v).expect("no gradient recorded for this var")
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn add_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Sums a gradient shaped like `[.., n]` down to the length-`n` bias.
fn sum_to_bias(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for row in g.chunks(n) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, tracked: bool) -> Var {
        value.set_grad_tracked(tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Adds a leaf; it is differentiable iff `value.grad_tracked()`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let tracked = value.grad_tracked();
        self.push(value, Op::Leaf, tracked)
    }

    /// Adds a non-differentiable leaf regardless of the tensor's flag.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let av = self.value(a);
        if kind.is_binary() {
            let b = b.ok_or_else(|| Error::Contract(format!("{kind:?} needs two operands")))?;
            let bv = self.value(b);
            let broadcast = av.shape() != bv.shape();
            let out = av.elementwise(kind, Some(bv))?;
            let tracked = self.tracked(a) || self.tracked(b);
            Ok(self.push(
                out,
                Op::Binary {
                    kind,
                    a,
                    b,
                    broadcast,
                },
                tracked,
            ))
        } else {
            if b.is_some() {
                return Err(Error::Contract(format!("{kind:?} is unary")));
            }
            let out = av.elementwise(kind, None)?;
            let tracked = self.tracked(a);
            Ok(self.push(out, Op::Unary { kind, a }, tracked))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, a, Some(b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Neg, a, None)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Exp, a, None)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Log, a, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sigmoid, a, None)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Relu, a, None)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Square, a, None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c)?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Scale { a, c }, tracked))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).add_scalar(c)?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::AddScalar { a }, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul { a, b }, tracked))
    }

    /// `x · wᵀ + b` for `x` batch×in, `w` out×in, `b` out.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = self.value(x).linear(self.value(w), self.value(b))?;
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        Ok(self.push(out, Op::Linear { x, w, b }, tracked))
    }

    pub fn reduce(&mut self, kind: ReduceOp, a: Var, axis: Option<usize>) -> Result<Var> {
        let out = self.value(a).reduce(kind, axis)?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Reduce { kind, a, axis }, tracked))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, None)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Reshape { a }, tracked))
    }

    /// Zero-padded cross-correlation of `x` (batch×ch×h×w) with `k`
    /// (out×ch×kh×kw) plus per-channel bias `b`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.value(x), self.value(k), self.value(b), stride)?;
        let (out, cols) = conv::conv2d_forward(self.value(x), self.value(k), self.value(b), &geom);
        let tracked = self.tracked(x) || self.tracked(k) || self.tracked(b);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                cols,
            },
            tracked,
        ))
    }

    /// Mean over the batch of `−ln softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "logits {:?} do not match {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let classes = lv.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            softmax_in_place(row);
        }
        loss /= labels.len() as f64;
        let tracked = self.tracked(logits);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, tracked))
    }

    /// Bernoulli negative log-likelihood summed over features and averaged
    /// over the batch (first axis). Predictions are clamped to
    /// `[BCE_CLAMP, 1 − BCE_CLAMP]`; the clamp passes no gradient.
    pub fn binary_cross_entropy(&mut self, target: Var, pred: Var) -> Result<Var> {
        let (t, p) = (self.value(target), self.value(pred));
        if t.shape() != p.shape() {
            return Err(Error::dim(format!(
                "target {:?} and prediction {:?} differ",
                t.shape(),
                p.shape()
            )));
        }
        let batch = p.shape()[0] as f64;
        let loss: f64 = t
            .data()
            .iter()
            .zip(p.data())
            .map(|(&x, &q)| {
                let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(x * q.ln() + (1.0 - x) * (1.0 - q).ln())
            })
            .sum::<f64>()
            / batch;
        if !loss.is_finite() {
            return Err(Error::Domain("binary cross-entropy is not finite".into()));
        }
        let tracked = self.tracked(target) || self.tracked(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BinaryCrossEntropy { target, pred },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Every tracked leaf receives a
    /// gradient, zero when it does not reach the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        acc[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = acc[idx].take() else { continue };
            self.propagate(node, &g, &mut acc);
        }
        let grads = self
            .nodes
            .iter()
            .zip(acc)
            .map(|(node, g)| match (&node.op, node.tracked) {
                (Op::Leaf, true) => Some(Tensor::from_parts(
                    node.value.shape().to_vec(),
                    g.unwrap_or_else(|| vec![0.0; node.value.len()]),
                )),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], acc: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let ga: Vec<f64> = match kind {
                        ElementwiseOp::Mul if *broadcast => {
                            let n = bv.len();
                            g.iter()
                                .enumerate()
                                .map(|(i, &gi)| gi * bv.data()[i % n])
                                .collect()
                        }
                        ElementwiseOp::Mul => {
                            g.iter().zip(bv.data()).map(|(&gi, &bi)| gi * bi).collect()
                        }
                        _ => g.to_vec(),
                    };
                    add_owned(&mut acc[a.0], ga);
                }
                if self.tracked(*b) {
                    let full: Vec<f64> = match kind {
                        ElementwiseOp::Add => g.to_vec(),
                        ElementwiseOp::Sub => g.iter().map(|v| -v).collect(),
                        _ => g.iter().zip(av.data()).map(|(&gi, &ai)| gi * ai).collect(),
                    };
                    let gb = if *broadcast {
                        sum_to_bias(&full, bv.len())
                    } else {
                        full
                    };
                    add_owned(&mut acc[b.0], gb);
                }
            }
            Op::Unary { kind, a } => {
                if !self.tracked(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let ga: Vec<f64> = match kind {
                    ElementwiseOp::Neg => g.iter().map(|v| -v).collect(),
                    ElementwiseOp::Exp => g.iter().zip(y).map(|(gi, yi)| gi * yi).collect(),
                    ElementwiseOp::Log => g.iter().zip(x).map(|(gi, xi)| gi / xi).collect(),
                    ElementwiseOp::Sigmoid => g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| gi * yi * (1.0 - yi))
                        .collect(),
                    // Subgradient 0 at the kink.
                    ElementwiseOp::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect(),
                    ElementwiseOp::Square => {
                        g.iter().zip(x).map(|(gi, xi)| 2.0 * xi * gi).collect()
                    }
                    ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul => unreachable!(),
                };
                add_owned(&mut acc[a.0], ga);
            }
            Op::Scale { a, c } => {
                if self.tracked(*a) {
                    add_owned(&mut acc[a.0], g.iter().map(|v| v * c).collect());
                }
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                if self.tracked(*a) {
                    add_into(&mut acc[a.0], g);
                }
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let gt = Tensor::from_parts(node.value.shape().to_vec(), g.to_vec());
                if self.tracked(*a) {
                    let ga = gt.matmul_t(bv).expect("shapes fixed at forward time");
                    add_owned(&mut acc[a.0], ga.into_data());
                }
                if self.tracked(*b) {
                    let gb = av.t_matmul(&gt).expect("shapes fixed at forward time");
                    add_owned(&mut acc[b.0], gb.into_data());
                }
            }
            Op::Linear { x, w, b } => {
                let gt = Tensor::from_parts(node.value.shape().to_vec(), g.to_vec());
                if self.tracked(*x) {
                    let gx = gt
                        .matmul(self.value(*w))
                        .expect("shapes fixed at forward time");
                    add_owned(&mut acc[x.0], gx.into_data());
                }
                if self.tracked(*w) {
                    let gw = gt
                        .t_matmul(self.value(*x))
                        .expect("shapes fixed at forward time");
                    add_owned(&mut acc[w.0], gw.into_data());
                }
                if self.tracked(*b) {
                    add_owned(&mut acc[b.0], sum_to_bias(g, self.value(*b).len()));
                }
            }
            Op::Reduce { kind, a, axis } => {
                if !self.tracked(*a) {
                    return;
                }
                let av = self.value(*a);
                let ga: Vec<f64> = match axis {
                    None => {
                        let s = match kind {
                            ReduceOp::Sum => g[0],
                            ReduceOp::Mean => g[0] / av.len() as f64,
                        };
                        vec![s; av.len()]
                    }
                    Some(ax) => {
                        let (outer, len, inner) = av.axis_split(*ax).expect("axis checked");
                        let div = match kind {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => len as f64,
                        };
                        let mut out = vec![0.0; av.len()];
                        for o in 0..outer {
                            for k in 0..len {
                                for i in 0..inner {
                                    out[(o * len + k) * inner + i] = g[o * inner + i] / div;
                                }
                            }
                        }
                        out
                    }
                };
                add_owned(&mut acc[a.0], ga);
            }
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                cols,
            } => {
                let (gx, gk, gb) = conv::conv2d_backward(g, self.value(*k), cols, geom);
                if self.tracked(*x) {
                    add_owned(&mut acc[x.0], gx);
                }
                if self.tracked(*k) {
                    add_owned(&mut acc[k.0], gk);
                }
                if self.tracked(*b) {
                    add_owned(&mut acc[b.0], gb);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if !self.tracked(*logits) {
                    return;
                }
                let classes = probs.len() / labels.len();
                let scale = g[0] / labels.len() as f64;
                let mut ga: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    ga[i * classes + l] -= scale;
                }
                add_owned(&mut acc[logits.0], ga);
            }
            Op::BinaryCrossEntropy { target, pred } => {
                let (t, p) = (self.value(*target), self.value(*pred));
                let scale = g[0] / p.shape()[0] as f64;
                let clamp = |q: f64| q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                if self.tracked(*pred) {
                    let gp = t
                        .data()
                        .iter()
                        .zip(p.data())
                        .map(|(&x, &q)| {
                            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&q) {
                                0.0
                            } else {
                                scale * ((1.0 - x) / (1.0 - q) - x / q)
                            }
                        })
                        .collect();
                    add_owned(&mut acc[pred.0], gp);
                }
                if self.tracked(*target) {
                    let gt = p
                        .data()
                        .iter()
                        .map(|&q| {
                            let q = clamp(q);
                            scale * ((1.0 - q).ln() - q.ln())
                        })
                        .collect();
                    add_owned(&mut acc[target.0], gt);
                }
            }
        }
    }
}

/// Largest component-wise `|analytic − numeric| / max(1, |analytic|)` for a
/// scalar function of one tensor, using central differences with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Contract(
            "finite-difference step must be positive".into(),
        ));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone().tracked())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe[ti].data()[i];
            probe[ti].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[ti].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
