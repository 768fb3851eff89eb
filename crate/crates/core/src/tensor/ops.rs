use super::{gemm, numel, MatView, Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<(Broadcast, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Broadcast::Same, a.shape().to_vec()))
    } else if b.numel() == 1 {
        Ok((Broadcast::RhsScalar, a.shape().to_vec()))
    } else if a.numel() == 1 {
        Ok((Broadcast::LhsScalar, b.shape().to_vec()))
    } else {
        Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn zip_map<S: Scalar>(mode: Broadcast, a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    match mode {
        Broadcast::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::RhsScalar => a.iter().map(|&x| f(x, b[0])).collect(),
        Broadcast::LhsScalar => b.iter().map(|&y| f(a[0], y)).collect(),
    }
}

/// Reduces a full-size gradient back to the extent of a broadcast operand.
fn reduce_to<S: Scalar>(full: Vec<S>, scalar_side: bool) -> Vec<S> {
    if scalar_side {
        vec![full.into_iter().sum()]
    } else {
        full
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (mode, shape) = broadcast("add", self, other)?;
        let data = zip_map(mode, self.data(), other.data(), |x, y| x + y);
        Ok(Tensor::from_op(shape, data, vec![self.clone(), other.clone()], move |g, needs| {
            let ga = needs[0].then(|| reduce_to(g.to_vec(), matches!(mode, Broadcast::LhsScalar)));
            let gb = needs[1].then(|| reduce_to(g.to_vec(), matches!(mode, Broadcast::RhsScalar)));
            vec![ga, gb]
        }))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (mode, shape) = broadcast("sub", self, other)?;
        let data = zip_map(mode, self.data(), other.data(), |x, y| x - y);
        Ok(Tensor::from_op(shape, data, vec![self.clone(), other.clone()], move |g, needs| {
            let ga = needs[0].then(|| reduce_to(g.to_vec(), matches!(mode, Broadcast::LhsScalar)));
            let gb = needs[1].then(|| reduce_to(g.iter().map(|&v| -v).collect(), matches!(mode, Broadcast::RhsScalar)));
            vec![ga, gb]
        }))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (mode, shape) = broadcast("mul", self, other)?;
        let data = zip_map(mode, self.data(), other.data(), |x, y| x * y);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(shape, data, vec![self.clone(), other.clone()], move |g, needs| {
            let ga = needs[0].then(|| {
                let full = match mode {
                    Broadcast::RhsScalar => g.iter().map(|&v| v * b.data()[0]).collect(),
                    _ => zip_map(Broadcast::Same, g, &broadcast_data(b.data(), g.len()), |x, y| x * y),
                };
                reduce_to(full, matches!(mode, Broadcast::LhsScalar))
            });
            let gb = needs[1].then(|| {
                let full = match mode {
                    Broadcast::LhsScalar => g.iter().map(|&v| v * a.data()[0]).collect(),
                    _ => zip_map(Broadcast::Same, g, &broadcast_data(a.data(), g.len()), |x, y| x * y),
                };
                reduce_to(full, matches!(mode, Broadcast::RhsScalar))
            });
            vec![ga, gb]
        }))
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], |g, _| vec![Some(g.to_vec())])
    }

    pub fn mul_scalar(&self, c: S) -> Tensor<S> {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|&v| v * c).collect())]
        })
    }

    pub fn neg(&self) -> Tensor<S> {
        self.mul_scalar(-S::one())
    }

    pub fn relu(&self) -> Tensor<S> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x > S::zero() || x.is_nan() { x } else { S::zero() })
            .collect();
        let x = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            let gx = g
                .iter()
                .zip(x.data())
                .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| sigmoid(x)).collect();
        let y = data.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            let gx = g.iter().zip(&y).map(|(&g, &y)| g * y * (S::one() - y)).collect();
            vec![Some(gx)]
        })
    }

    /// Natural logarithm; every element must be strictly positive.
    pub fn log(&self) -> Result<Tensor<S>> {
        if let Some(bad) = self.data().iter().find(|&&x| x <= S::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let data = self.data().iter().map(|&x| x.ln()).collect();
        let x = self.clone();
        Ok(Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().zip(x.data()).map(|(&g, &x)| g / x).collect())]
        }))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    /// NaN stays NaN.
    pub fn clamp(&self, lo: S, hi: S) -> Tensor<S> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x.is_nan() { x } else { x.max(lo).min(hi) })
            .collect();
        let x = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            let gx = g
                .iter()
                .zip(x.data())
                .map(|(&g, &x)| if x >= lo && x <= hi { g } else { S::zero() })
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn abs(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&x| x.abs()).collect();
        let x = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().zip(x.data()).map(|(&g, &x)| g * x.signum()).collect())]
        })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<S> {
        let total: S = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(Vec::new(), vec![total], vec![self.clone()], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = S::from_usize(self.numel()).expect("length fits");
        self.sum().mul_scalar(S::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(shape.to_vec(), self.data().to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => {
                return Err(TensorError::Shape {
                    op: "matmul",
                    lhs: self.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                })
            }
        };
        let av = MatView::row_major(m, k);
        let bv = MatView::row_major(k, n);
        let cv = MatView::row_major(m, n);
        let mut out = vec![S::zero(); m * n];
        gemm(self.data(), av, other.data(), bv, S::zero(), &mut out, cv);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(vec![m, n], out, vec![self.clone(), other.clone()], move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![S::zero(); m * k];
                gemm(g, cv, b.data(), bv.t(), S::zero(), &mut ga, av);
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![S::zero(); k * n];
                gemm(a.data(), av.t(), g, cv, S::zero(), &mut gb, bv);
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::Contract(format!("concat axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let same_rank = p.shape().len() == rank;
            let others_match = same_rank
                && (0..rank).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !others_match {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Ok(Tensor::from_op(shape, data, parts.to_vec(), move |g, needs| {
            let mut out = Vec::with_capacity(extents.len());
            let mut offset = 0;
            for (i, &e) in extents.iter().enumerate() {
                if needs[i] {
                    let mut gp = Vec::with_capacity(outer * e * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        gp.extend_from_slice(&g[base..base + e * inner]);
                    }
                    out.push(Some(gp));
                } else {
                    out.push(None);
                }
                offset += e;
            }
            out
        }))
    }
}

fn broadcast_data<S: Scalar>(d: &[S], len: usize) -> std::borrow::Cow<'_, [S]> {
    if d.len() == len {
        std::borrow::Cow::Borrowed(d)
    } else {
        std::borrow::Cow::Owned(vec![d[0]; len])
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    // Split by sign so exp never overflows.
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
