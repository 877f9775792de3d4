//! im2col-based 2-D cross-correlation kernels shared by the tape and the
//! eager inference path.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(x: &Tensor, kernels: &Tensor, bias: &Tensor, stride: usize) -> Result<Self> {
        let (xs, ks) = (x.shape(), kernels.shape());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects rank-4 input and kernels, got {xs:?} and {ks:?}"
            )));
        }
        if xs[1] != ks[1] {
            return Err(Error::dim(format!(
                "conv2d channel mismatch: input has {}, kernels expect {}",
                xs[1], ks[1]
            )));
        }
        if bias.shape() != [ks[0]] {
            return Err(Error::dim(format!(
                "conv2d bias {:?} does not match {} output channels",
                bias.shape(),
                ks[0]
            )));
        }
        let (kh, kw) = (ks[2], ks[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim("conv2d kernels must have odd extents"));
        }
        if xs[2] < kh || xs[3] < kw {
            return Err(Error::dim("conv2d input smaller than kernel"));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be positive"));
        }
        Ok(Self {
            batch: xs[0],
            in_ch: xs[1],
            height: xs[2],
            width: xs[3],
            out_ch: ks[0],
            kh,
            kw,
            stride,
            out_h: (xs[2] - 1) / stride + 1,
            out_w: (xs[3] - 1) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h, self.out_w]
    }

    fn in_sample(&self) -> usize {
        self.in_ch * self.height * self.width
    }

    /// Source pixel index within one sample for patch row `r` at output
    /// position `p`, or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, r: usize, p: usize) -> Option<usize> {
        let c = r / (self.kh * self.kw);
        let i = (r / self.kw) % self.kh;
        let j = r % self.kw;
        let (oy, ox) = (p / self.out_w, p % self.out_w);
        let y = (oy * self.stride + i) as isize - ((self.kh - 1) / 2) as isize;
        let x = (ox * self.stride + j) as isize - ((self.kw - 1) / 2) as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some((c * self.height + y as usize) * self.width + x as usize)
        }
    }
}

/// Forward pass. Returns the output and the per-sample column buffers
/// (batch × patch_len × positions) needed for the backward pass.
pub(crate) fn conv2d_forward(
    x: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
) -> (Tensor, Vec<f64>) {
    let (pl, pos) = (g.patch_len(), g.positions());
    let mut cols = vec![0.0; g.batch * pl * pos];
    let mut out = vec![0.0; g.batch * g.out_ch * pos];
    for n in 0..g.batch {
        let xs = &x.data()[n * g.in_sample()..(n + 1) * g.in_sample()];
        let col = &mut cols[n * pl * pos..(n + 1) * pl * pos];
        for r in 0..pl {
            for p in 0..pos {
                if let Some(s) = g.source(r, p) {
                    col[r * pos + p] = xs[s];
                }
            }
        }
        let o = &mut out[n * g.out_ch * pos..(n + 1) * g.out_ch * pos];
        for (oc, chunk) in o.chunks_mut(pos).enumerate() {
            chunk.fill(bias.data()[oc]);
        }
        gemm(g.out_ch, pl, pos, kernels.data(), false, col, false, o, 1.0);
    }
    (Tensor::from_parts(g.out_shape(), out), cols)
}

/// Gradients with respect to input, kernels and bias.
pub(crate) fn conv2d_backward(
    grad_out: &[f64],
    kernels: &Tensor,
    cols: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (pl, pos) = (g.patch_len(), g.positions());
    let mut gx = vec![0.0; g.batch * g.in_sample()];
    let mut gk = vec![0.0; kernels.len()];
    let mut gb = vec![0.0; g.out_ch];
    let mut gcol = vec![0.0; pl * pos];
    for n in 0..g.batch {
        let go = &grad_out[n * g.out_ch * pos..(n + 1) * g.out_ch * pos];
        for (oc, chunk) in go.chunks(pos).enumerate() {
            gb[oc] += chunk.iter().sum::<f64>();
        }
        let col = &cols[n * pl * pos..(n + 1) * pl * pos];
        gemm(g.out_ch, pos, pl, go, false, col, true, &mut gk, 1.0);
        gemm(
            pl,
            g.out_ch,
            pos,
            kernels.data(),
            true,
            go,
            false,
            &mut gcol,
            0.0,
        );
        let gxs = &mut gx[n * g.in_sample()..(n + 1) * g.in_sample()];
        for r in 0..pl {
            for p in 0..pos {
                if let Some(s) = g.source(r, p) {
                    gxs[s] += gcol[r * pos + p];
                }
            }
        }
    }
    (gx, gk, gb)
}
