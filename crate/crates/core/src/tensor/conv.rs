use super::{gemm, Op, Real, Tensor};

/// Geometry of a 2D convolution or pooling window over an NHWC tensor.
#[derive(Debug, Clone, Copy)]
struct Window {
    batch: usize,
    in_h: usize,
    in_w: usize,
    channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn new(shape: &[usize], kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        assert_eq!(shape.len(), 4, "expected an NHWC tensor, got shape {shape:?}");
        assert!(stride >= 1, "stride must be positive");
        let (batch, in_h, in_w, channels) = (shape[0], shape[1], shape[2], shape[3]);
        assert!(
            in_h + 2 * pad >= kh && in_w + 2 * pad >= kw,
            "window {kh}x{kw} larger than padded input {in_h}x{in_w}"
        );
        let out_h = (in_h + 2 * pad - kh) / stride + 1;
        let out_w = (in_w + 2 * pad - kw) / stride + 1;
        Window { batch, in_h, in_w, channels, kh, kw, stride, pad, out_h, out_w }
    }

    fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.channels
    }

    /// Visits every (output row, kernel tap, input offset) triple; taps that
    /// fall into the zero padding are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let c = self.channels;
        for b in 0..self.batch {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = (b * self.out_h + oy) * self.out_w + ox;
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            let src = ((b * self.in_h + iy as usize) * self.in_w + ix as usize) * c;
                            f(row, (ky * self.kw + kx) * c, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let k = self.patch();
        let c = self.channels;
        let mut cols = vec![T::zero(); self.rows() * k];
        self.for_each_tap(|row, tap, src| {
            cols[row * k + tap..row * k + tap + c].copy_from_slice(&x[src..src + c]);
        });
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let k = self.patch();
        let c = self.channels;
        let mut x = vec![T::zero(); self.batch * self.in_h * self.in_w * c];
        self.for_each_tap(|row, tap, src| {
            let from = &cols[row * k + tap..row * k + tap + c];
            for (d, &v) in x[src..src + c].iter_mut().zip(from) {
                *d += v;
            }
        });
        x
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

struct Conv2dOp<T> {
    win: Window,
    out_channels: usize,
    /// im2col matrix of the input; empty for pointwise convolutions, which
    /// read the input directly.
    cols: Vec<T>,
}

impl<T: Real> Op<T> for Conv2dOp<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (m, k, n) = (self.win.rows(), self.win.patch(), self.out_channels);
        let gw = inputs[1].requires_grad().then(|| {
            let mut gw = vec![T::zero(); k * n];
            if self.win.is_pointwise() {
                gemm(k, m, n, &inputs[0].data(), true, g, false, &mut gw, T::zero());
            } else {
                gemm(k, m, n, &self.cols, true, g, false, &mut gw, T::zero());
            }
            gw
        });
        let gx = inputs[0].requires_grad().then(|| {
            let w = inputs[1].data();
            let mut gcols = vec![T::zero(); m * k];
            gemm(m, n, k, g, false, &w, true, &mut gcols, T::zero());
            if self.win.is_pointwise() {
                gcols
            } else {
                self.win.col2im(&gcols)
            }
        });
        vec![gx, gw]
    }
}

struct AvgPoolOp {
    win: Window,
}

impl<T: Real> Op<T> for AvgPoolOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let w = &self.win;
        let c = w.channels;
        let scale = T::one() / T::from_usize(w.kh * w.kw).unwrap();
        let mut gx = vec![T::zero(); w.batch * w.in_h * w.in_w * c];
        w.for_each_tap(|row, _, src| {
            for (d, &v) in gx[src..src + c].iter_mut().zip(&g[row * c..row * c + c]) {
                *d += v * scale;
            }
        });
        vec![Some(gx)]
    }
}

struct MaxPoolOp {
    in_len: usize,
    argmax: Vec<usize>,
}

impl<T: Real> Op<T> for MaxPoolOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); self.in_len];
        for (&src, &v) in self.argmax.iter().zip(g) {
            gx[src] += v;
        }
        vec![Some(gx)]
    }
}

impl<T: Real> Tensor<T> {
    /// 2D convolution of an NHWC input with a `(kh, kw, in, out)` kernel.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
        let ws = weight.shape();
        assert_eq!(ws.len(), 4, "conv2d kernel must be (kh, kw, in, out)");
        let win = Window::new(self.shape(), ws[0], ws[1], stride, pad);
        assert_eq!(ws[2], win.channels, "conv2d: kernel expects {} input channels", ws[2]);
        let out_channels = ws[3];
        let (m, k, n) = (win.rows(), win.patch(), out_channels);
        let mut out = vec![T::zero(); m * n];
        let cols = if win.is_pointwise() {
            gemm(m, k, n, &self.data(), false, &weight.data(), false, &mut out, T::zero());
            Vec::new()
        } else {
            let cols = win.im2col(&self.data());
            gemm(m, k, n, &cols, false, &weight.data(), false, &mut out, T::zero());
            cols
        };
        let shape = vec![win.batch, win.out_h, win.out_w, out_channels];
        Tensor::from_op(
            out,
            shape,
            vec![self.clone(), weight.clone()],
            Conv2dOp { win, out_channels, cols },
        )
    }

    /// Average pooling with a square `size` window and equal stride.
    pub fn avg_pool2d(&self, size: usize) -> Tensor<T> {
        let win = Window::new(self.shape(), size, size, size, 0);
        let c = win.channels;
        let scale = T::one() / T::from_usize(size * size).unwrap();
        let mut out = vec![T::zero(); win.rows() * c];
        {
            let x = self.data();
            win.for_each_tap(|row, _, src| {
                for (d, &v) in out[row * c..row * c + c].iter_mut().zip(&x[src..src + c]) {
                    *d += v * scale;
                }
            });
        }
        let shape = vec![win.batch, win.out_h, win.out_w, c];
        Tensor::from_op(out, shape, vec![self.clone()], AvgPoolOp { win })
    }

    /// Max pooling with a square `size` window and equal stride.
    pub fn max_pool2d(&self, size: usize) -> Tensor<T> {
        let win = Window::new(self.shape(), size, size, size, 0);
        let c = win.channels;
        let mut out = vec![T::neg_infinity(); win.rows() * c];
        let mut argmax = vec![0usize; win.rows() * c];
        {
            let x = self.data();
            win.for_each_tap(|row, _, src| {
                for ch in 0..c {
                    let v = x[src + ch];
                    if v > out[row * c + ch] {
                        out[row * c + ch] = v;
                        argmax[row * c + ch] = src + ch;
                    }
                }
            });
        }
        let shape = vec![win.batch, win.out_h, win.out_w, c];
        let in_len = self.len();
        Tensor::from_op(out, shape, vec![self.clone()], MaxPoolOp { in_len, argmax })
    }
}
