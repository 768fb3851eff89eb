//! Fused kernels for the sequence layers: dilated 1-D convolution and
//! channel-axis layer normalisation, both on `[batch, channels, time]`.

use super::{gemm, MatView, Result, Scalar, Tensor, TensorError};

/// Geometry of one non-causal dilated convolution.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    kernel: usize,
    dilation: usize,
    len: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }

    fn rows(&self) -> usize {
        self.in_ch * self.kernel
    }

    fn cols(&self) -> usize {
        self.batch * self.len
    }

    /// Source time index for output position `t` and tap `k`, if inside the signal.
    #[inline]
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        let s = (t + k * self.dilation).checked_sub(self.pad())?;
        (s < self.len).then_some(s)
    }
}

/// Unrolls `x` into a `[in_ch * kernel, batch * len]` matrix, zero-padded.
fn im2col<S: Scalar>(x: &[S], g: &ConvGeom) -> Vec<S> {
    let cols = g.cols();
    let mut col = vec![S::zero(); g.rows() * cols];
    for c in 0..g.in_ch {
        for k in 0..g.kernel {
            let row = &mut col[(c * g.kernel + k) * cols..(c * g.kernel + k + 1) * cols];
            let shift = k as isize * g.dilation as isize - g.pad() as isize;
            for b in 0..g.batch {
                let src = &x[(b * g.in_ch + c) * g.len..(b * g.in_ch + c + 1) * g.len];
                let dst = &mut row[b * g.len..(b + 1) * g.len];
                let lo = (-shift).clamp(0, g.len as isize) as usize;
                let hi = (g.len as isize - shift).clamp(0, g.len as isize) as usize;
                if lo < hi {
                    let s0 = (lo as isize + shift) as usize;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
    col
}

/// Scatter-adds a column gradient back onto `[batch, in_ch, len]`.
fn col2im<S: Scalar>(col: &[S], g: &ConvGeom) -> Vec<S> {
    let cols = g.cols();
    let mut dx = vec![S::zero(); g.batch * g.in_ch * g.len];
    for c in 0..g.in_ch {
        for k in 0..g.kernel {
            let row = &col[(c * g.kernel + k) * cols..(c * g.kernel + k + 1) * cols];
            for b in 0..g.batch {
                let dst = &mut dx[(b * g.in_ch + c) * g.len..(b * g.in_ch + c + 1) * g.len];
                let src = &row[b * g.len..(b + 1) * g.len];
                for t in 0..g.len {
                    if let Some(s) = g.source(t, k) {
                        dst[s] += src[t];
                    }
                }
            }
        }
    }
    dx
}

/// `[out_ch, batch*len]` -> `[batch, out_ch, len]`.
fn channel_major_to_batch_major<S: Scalar>(y: &[S], batch: usize, ch: usize, len: usize) -> Vec<S> {
    let mut out = vec![S::zero(); y.len()];
    for c in 0..ch {
        for b in 0..batch {
            out[(b * ch + c) * len..(b * ch + c + 1) * len]
                .copy_from_slice(&y[c * batch * len + b * len..c * batch * len + (b + 1) * len]);
        }
    }
    out
}

fn batch_major_to_channel_major<S: Scalar>(y: &[S], batch: usize, ch: usize, len: usize) -> Vec<S> {
    let mut out = vec![S::zero(); y.len()];
    for b in 0..batch {
        for c in 0..ch {
            out[c * batch * len + b * len..c * batch * len + (b + 1) * len]
                .copy_from_slice(&y[(b * ch + c) * len..(b * ch + c + 1) * len]);
        }
    }
    out
}

impl<S: Scalar> Tensor<S> {
    /// Non-causal dilated convolution with symmetric zero padding of
    /// `(kernel - 1) * dilation / 2` samples on each end.
    ///
    /// `self`: `[batch, in_ch, len]`, `weight`: `[out_ch, in_ch, kernel]`,
    /// `bias`: `[out_ch]`. The output keeps the time extent `len`.
    pub fn conv1d(&self, weight: &Tensor<S>, bias: &Tensor<S>, dilation: usize) -> Result<Tensor<S>> {
        let (batch, in_ch, len) = match *self.shape() {
            [b, c, t] => (b, c, t),
            _ => {
                return Err(TensorError::Shape {
                    op: "conv1d",
                    lhs: self.shape().to_vec(),
                    rhs: weight.shape().to_vec(),
                })
            }
        };
        let (out_ch, kernel) = match *weight.shape() {
            [o, i, k] if i == in_ch => (o, k),
            _ => {
                return Err(TensorError::Shape {
                    op: "conv1d",
                    lhs: self.shape().to_vec(),
                    rhs: weight.shape().to_vec(),
                })
            }
        };
        if bias.shape() != [out_ch] {
            return Err(TensorError::Shape {
                op: "conv1d bias",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        if kernel % 2 == 0 || dilation == 0 {
            return Err(TensorError::Contract(format!(
                "conv1d needs an odd kernel and positive dilation, got k={kernel}, d={dilation}"
            )));
        }
        let geom = ConvGeom {
            batch,
            in_ch,
            kernel,
            dilation,
            len,
        };
        let wv = MatView::row_major(out_ch, geom.rows());
        let colv = MatView::row_major(geom.rows(), geom.cols());
        let yv = MatView::row_major(out_ch, geom.cols());

        let col = im2col(self.data(), &geom);
        let mut y = vec![S::zero(); out_ch * geom.cols()];
        for (o, row) in y.chunks_mut(geom.cols()).enumerate() {
            row.fill(bias.data()[o]);
        }
        gemm(weight.data(), wv, &col, colv, S::one(), &mut y, yv);
        drop(col);
        let out = channel_major_to_batch_major(&y, batch, out_ch, len);

        let (x, w) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            vec![batch, out_ch, len],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g, needs| {
                let gy = batch_major_to_channel_major(g, batch, out_ch, len);
                let gw = needs[1].then(|| {
                    let col = im2col(x.data(), &geom);
                    let mut gw = vec![S::zero(); out_ch * geom.rows()];
                    gemm(&gy, yv, &col, colv.t(), S::zero(), &mut gw, wv);
                    gw
                });
                let gb = needs[2].then(|| gy.chunks(geom.cols()).map(|r| r.iter().copied().sum()).collect());
                let gx = needs[0].then(|| {
                    let mut gcol = vec![S::zero(); geom.rows() * geom.cols()];
                    gemm(w.data(), wv.t(), &gy, yv, S::zero(), &mut gcol, colv);
                    col2im(&gcol, &geom)
                });
                vec![gx, gw, gb]
            },
        ))
    }

    /// Normalises every `(batch, t)` slice across the channel axis, then
    /// applies per-channel `gamma` and `beta`.
    pub fn layer_norm_channels(&self, gamma: &Tensor<S>, beta: &Tensor<S>, eps: S) -> Result<Tensor<S>> {
        let (batch, ch, len) = match *self.shape() {
            [b, c, t] if gamma.shape() == [c] && beta.shape() == [c] => (b, c, t),
            _ => {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: self.shape().to_vec(),
                    rhs: gamma.shape().to_vec(),
                })
            }
        };
        let n = S::from_usize(ch).expect("channel count fits");
        let x = self.data();
        let mut xhat = vec![S::zero(); x.len()];
        let mut inv_std = vec![S::zero(); batch * len];
        let mut mean = vec![S::zero(); len];
        let mut var = vec![S::zero(); len];
        for b in 0..batch {
            let base = b * ch * len;
            mean.fill(S::zero());
            var.fill(S::zero());
            for c in 0..ch {
                let row = &x[base + c * len..base + (c + 1) * len];
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            for c in 0..ch {
                let row = &x[base + c * len..base + (c + 1) * len];
                for ((v, &m), &xv) in var.iter_mut().zip(&mean).zip(row) {
                    let d = xv - m;
                    *v += d * d;
                }
            }
            let istd = &mut inv_std[b * len..(b + 1) * len];
            for (i, &v) in istd.iter_mut().zip(&var) {
                *i = S::one() / (v / n + eps).sqrt();
            }
            for c in 0..ch {
                let off = base + c * len;
                for t in 0..len {
                    xhat[off + t] = (x[off + t] - mean[t]) * istd[t];
                }
            }
        }
        let mut out = vec![S::zero(); x.len()];
        for b in 0..batch {
            for c in 0..ch {
                let off = (b * ch + c) * len;
                let (gm, bt) = (gamma.data()[c], beta.data()[c]);
                for t in 0..len {
                    out[off + t] = gm * xhat[off + t] + bt;
                }
            }
        }
        let gamma_c = gamma.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, needs| {
                let mut dgamma = vec![S::zero(); ch];
                let mut dbeta = vec![S::zero(); ch];
                for b in 0..batch {
                    for c in 0..ch {
                        let off = (b * ch + c) * len;
                        for t in 0..len {
                            dgamma[c] += g[off + t] * xhat[off + t];
                            dbeta[c] += g[off + t];
                        }
                    }
                }
                let dx = needs[0].then(|| {
                    let mut dx = vec![S::zero(); g.len()];
                    let mut sum_d = vec![S::zero(); len];
                    let mut sum_dx = vec![S::zero(); len];
                    for b in 0..batch {
                        sum_d.fill(S::zero());
                        sum_dx.fill(S::zero());
                        for c in 0..ch {
                            let off = (b * ch + c) * len;
                            let gm = gamma_c.data()[c];
                            for t in 0..len {
                                let d = g[off + t] * gm;
                                sum_d[t] += d;
                                sum_dx[t] += d * xhat[off + t];
                            }
                        }
                        for c in 0..ch {
                            let off = (b * ch + c) * len;
                            let gm = gamma_c.data()[c];
                            for t in 0..len {
                                let d = g[off + t] * gm;
                                dx[off + t] = inv_std[b * len + t] / n
                                    * (n * d - sum_d[t] - xhat[off + t] * sum_dx[t]);
                            }
                        }
                    }
                    dx
                });
                vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
            },
        ))
    }
}
