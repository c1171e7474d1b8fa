use super::{gemm, Op, Real, Tensor};

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

fn map<T: Real>(x: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    x.iter().map(|&v| f(v)).collect()
}

struct AddOp;
impl<T: Real> Op<T> for AddOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

struct SubOp;
impl<T: Real> Op<T> for SubOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(map(g, |v| -v))]
    }
}

struct MulOp;
impl<T: Real> Op<T> for MulOp {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let a = inputs[0].data();
        let b = inputs[1].data();
        let ga = inputs[0]
            .requires_grad()
            .then(|| g.iter().zip(b.iter()).map(|(&g, &b)| g * b).collect());
        let gb = inputs[1]
            .requires_grad()
            .then(|| g.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect());
        vec![ga, gb]
    }
}

struct ScaleOp<T>(T);
impl<T: Real> Op<T> for ScaleOp<T> {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(map(g, |v| v * self.0))]
    }
}

struct ShiftOp;
impl<T: Real> Op<T> for ShiftOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

struct AddBiasOp;
impl<T: Real> Op<T> for AddBiasOp {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let c = inputs[1].len();
        let gb = inputs[1].requires_grad().then(|| {
            let mut gb = vec![T::zero(); c];
            for row in g.chunks_exact(c) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            gb
        });
        let gx = inputs[0].requires_grad().then(|| g.to_vec());
        vec![gx, gb]
    }
}

struct ReluOp;
impl<T: Real> Op<T> for ReluOp {
    fn backward(&self, _: &[Tensor<T>], out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let gx = g
            .iter()
            .zip(out)
            .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(gx)]
    }
}

struct LeakyReluOp<T>(T);
impl<T: Real> Op<T> for LeakyReluOp<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let gx = g
            .iter()
            .zip(x.iter())
            .map(|(&g, &x)| if x > T::zero() { g } else { g * self.0 })
            .collect();
        vec![Some(gx)]
    }
}

struct TanhOp;
impl<T: Real> Op<T> for TanhOp {
    fn backward(&self, _: &[Tensor<T>], out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let gx = g.iter().zip(out).map(|(&g, &y)| g * (T::one() - y * y)).collect();
        vec![Some(gx)]
    }
}

struct MatMulOp {
    m: usize,
    k: usize,
    n: usize,
}
impl<T: Real> Op<T> for MatMulOp {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = inputs[0].requires_grad().then(|| {
            let b = inputs[1].data();
            let mut ga = vec![T::zero(); m * k];
            gemm(m, n, k, g, false, &b, true, &mut ga, T::zero());
            ga
        });
        let gb = inputs[1].requires_grad().then(|| {
            let a = inputs[0].data();
            let mut gb = vec![T::zero(); k * n];
            gemm(k, m, n, &a, true, g, false, &mut gb, T::zero());
            gb
        });
        vec![ga, gb]
    }
}

struct ReshapeOp;
impl<T: Real> Op<T> for ReshapeOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

struct ConcatLastOp {
    ca: usize,
    cb: usize,
}
impl<T: Real> Op<T> for ConcatLastOp {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (ca, cb) = (self.ca, self.cb);
        let rows = g.len() / (ca + cb);
        let mut ga = Vec::with_capacity(rows * ca);
        let mut gb = Vec::with_capacity(rows * cb);
        for row in g.chunks_exact(ca + cb) {
            ga.extend_from_slice(&row[..ca]);
            gb.extend_from_slice(&row[ca..]);
        }
        vec![
            inputs[0].requires_grad().then_some(ga),
            inputs[1].requires_grad().then_some(gb),
        ]
    }
}

struct SumOp;
impl<T: Real> Op<T> for SumOp {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0]; inputs[0].len()])]
    }
}

struct MeanOp;
impl<T: Real> Op<T> for MeanOp {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = inputs[0].len();
        vec![Some(vec![g[0] / T::from_usize(n).unwrap(); n])]
    }
}

struct SoftmaxOp {
    cols: usize,
}
impl<T: Real> Op<T> for SoftmaxOp {
    fn backward(&self, _: &[Tensor<T>], out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); g.len()];
        for ((gr, yr), dst) in g
            .chunks_exact(self.cols)
            .zip(out.chunks_exact(self.cols))
            .zip(gx.chunks_exact_mut(self.cols))
        {
            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
            for ((d, &gv), &y) in dst.iter_mut().zip(gr).zip(yr) {
                *d = y * (gv - dot);
            }
        }
        vec![Some(gx)]
    }
}

struct NllClippedOp<T> {
    labels: Vec<usize>,
    cols: usize,
    floor: T,
}
impl<T: Real> Op<T> for NllClippedOp<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let p = inputs[0].data();
        let n = T::from_usize(self.labels.len()).unwrap();
        let mut gx = vec![T::zero(); p.len()];
        for (i, &y) in self.labels.iter().enumerate() {
            let idx = i * self.cols + y;
            let v = p[idx];
            // The clip is flat outside [floor, 1].
            if v > self.floor && v <= T::one() {
                gx[idx] = -g[0] / (n * v);
            }
        }
        vec![Some(gx)]
    }
}

struct MseConstOp<T>(T);
impl<T: Real> Op<T> for MseConstOp<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let n = T::from_usize(x.len()).unwrap();
        let two = T::from_f64(2.0).unwrap();
        vec![Some(map(&x, |v| g[0] * two * (v - self.0) / n))]
    }
}

struct AbsDiffMeanOp;
impl<T: Real> Op<T> for AbsDiffMeanOp {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let a = inputs[0].data();
        let b = inputs[1].data();
        let n = T::from_usize(a.len()).unwrap();
        let sign: Vec<T> = a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| {
                if x > y {
                    g[0] / n
                } else if x < y {
                    -g[0] / n
                } else {
                    T::zero()
                }
            })
            .collect();
        let gb = inputs[1].requires_grad().then(|| map(&sign, |v| -v));
        vec![inputs[0].requires_grad().then_some(sign), gb]
    }
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "add");
        let v = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone(), other.clone()], AddOp)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "sub");
        let v = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone(), other.clone()], SubOp)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "mul");
        let v = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a * b).collect();
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone(), other.clone()], MulOp)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let v = map(&self.data(), |x| x * c);
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone()], ScaleOp(c))
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let v = map(&self.data(), |x| x + c);
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone()], ShiftOp)
    }

    /// Adds a per-channel bias broadcast over every leading dimension.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Tensor<T> {
        let c = *self.shape().last().expect("add_bias on a scalar");
        assert_eq!(bias.shape(), [c], "add_bias: bias must match the last dimension");
        let b = bias.data();
        let mut v = self.to_vec();
        for row in v.chunks_exact_mut(c) {
            for (x, &bv) in row.iter_mut().zip(b.iter()) {
                *x += bv;
            }
        }
        drop(b);
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone(), bias.clone()], AddBiasOp)
    }

    pub fn relu(&self) -> Tensor<T> {
        let v = map(&self.data(), |x| x.max(T::zero()));
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone()], ReluOp)
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        let v = map(&self.data(), |x| if x > T::zero() { x } else { x * slope });
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone()], LeakyReluOp(slope))
    }

    pub fn tanh(&self) -> Tensor<T> {
        let v = map(&self.data(), T::tanh);
        Tensor::from_op(v, self.shape().to_vec(), vec![self.clone()], TanhOp)
    }

    /// `(m×k) · (k×n)`.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert!(self.rank() == 2 && other.rank() == 2, "matmul expects matrices");
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        assert_eq!(other.shape()[0], k, "matmul: inner dimensions differ");
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data(), false, &other.data(), false, &mut out, T::zero());
        Tensor::from_op(out, vec![m, n], vec![self.clone(), other.clone()], MatMulOp { m, k, n })
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(shape.iter().product::<usize>(), self.len(), "reshape: element count");
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], ReshapeOp)
    }

    /// Flattens everything but the leading (batch) dimension.
    pub fn flatten(&self) -> Tensor<T> {
        let b = self.shape()[0];
        self.reshape(&[b, self.len() / b])
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat_last(&self, other: &Tensor<T>) -> Tensor<T> {
        let (sa, sb) = (self.shape(), other.shape());
        assert_eq!(sa.len(), sb.len(), "concat_last: rank mismatch");
        assert_eq!(sa[..sa.len() - 1], sb[..sb.len() - 1], "concat_last: leading dims differ");
        let ca = *sa.last().unwrap();
        let cb = *sb.last().unwrap();
        let a = self.data();
        let b = other.data();
        let mut v = Vec::with_capacity(a.len() + b.len());
        for (ra, rb) in a.chunks_exact(ca).zip(b.chunks_exact(cb)) {
            v.extend_from_slice(ra);
            v.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        drop((a, b));
        Tensor::from_op(v, shape, vec![self.clone(), other.clone()], ConcatLastOp { ca, cb })
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], SumOp)
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize(self.len()).unwrap();
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![s / n], vec![], vec![self.clone()], MeanOp)
    }

    /// Row-wise softmax over the last dimension of a matrix.
    pub fn softmax(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "softmax expects (batch, classes)");
        let cols = self.shape()[1];
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for (xr, yr) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
            let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (y, &v) in yr.iter_mut().zip(xr) {
                *y = (v - m).exp();
                z += *y;
            }
            for y in yr.iter_mut() {
                *y = *y / z;
            }
        }
        drop(x);
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], SoftmaxOp { cols })
    }

    /// Mean negative log-probability of `labels`, with probabilities clipped
    /// to `[floor, 1]` before the logarithm.
    pub fn nll_clipped(&self, labels: &[usize], floor: T) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "nll expects (batch, classes)");
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        assert_eq!(labels.len(), rows, "nll: one label per row");
        let p = self.data();
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < cols, "label {y} out of range for {cols} classes");
            // `max`/`min` would turn NaN into the floor and hide divergence.
            let v = p[i * cols + y];
            let v = if v.is_nan() { v } else { v.max(floor).min(T::one()) };
            total += -v.ln();
        }
        drop(p);
        let loss = total / T::from_usize(rows).unwrap();
        Tensor::from_op(
            vec![loss],
            vec![],
            vec![self.clone()],
            NllClippedOp { labels: labels.to_vec(), cols, floor },
        )
    }

    /// `mean((x - target)^2)`.
    pub fn mse_to(&self, target: T) -> Tensor<T> {
        let n = T::from_usize(self.len()).unwrap();
        let s: T = self.data().iter().map(|&v| (v - target) * (v - target)).sum();
        Tensor::from_op(vec![s / n], vec![], vec![self.clone()], MseConstOp(target))
    }

    /// `mean(|a - b|)`.
    pub fn abs_diff_mean(&self, other: &Tensor<T>) -> Tensor<T> {
        same_shape(self, other, "abs_diff_mean");
        let n = T::from_usize(self.len()).unwrap();
        let s: T = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| (a - b).abs()).sum();
        Tensor::from_op(
            vec![s / n],
            vec![],
            vec![self.clone(), other.clone()],
            AbsDiffMeanOp,
        )
    }
}
