//! Minimal CHW tensors and layers with explicit backward passes.

use rand::Rng;

use crate::image::ImageTensor;

/// A single C×H×W activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_image(image: &ImageTensor) -> Self {
        let (h, w, c) = image.shape();
        let mut t = Self::zeros(c, h, w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    t.data[(ch * h + y) * w + x] = image.get(y, x, ch);
                }
            }
        }
        t
    }

    pub fn to_image(&self) -> ImageTensor {
        ImageTensor::from_fn(self.h, self.w, self.c, |y, x, ch| {
            self.data[(ch * self.h + y) * self.w + x]
        })
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }
}

/// Convolution whose stored weights are unit scale; the effective kernel is
/// `gain * weight` with `gain = sqrt(6 / fan_in)`, so optimizer steps are
/// relative to the initialization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub gain: f64,
    /// `[out_c][in_c][kernel][kernel]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_c * kernel * kernel) as f64;
        let weight = (0..out_c * in_c * kernel * kernel)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            gain: (6.0 / fan_in).sqrt(),
            weight,
            bias: vec![0.0; out_c],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output rows `oy` whose receptive row `oy*stride + k - pad` is inside `0..n`.
    fn valid_range(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let k = k as isize;
        // smallest oy with oy*s + k - p >= 0
        let lo = ((p - k).max(0) + s - 1) / s;
        // largest oy with oy*s + k - p <= n-1
        let hi_num = n as isize - 1 + p - k;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s).min(out as isize - 1);
        if hi < lo {
            return (0, 0);
        }
        (lo as usize, hi as usize + 1)
    }

    fn ranges(&self, k: usize, n: usize, out: usize) -> Vec<(usize, usize)> {
        (0..k).map(|t| self.valid_range(t, n, out)).collect()
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = (self.out_size(x.h), self.out_size(x.w));
        let mut out = Tensor3::zeros(self.out_c, oh, ow);
        let k = self.kernel;
        let s = self.stride;
        let yr = self.ranges(k, x.h, oh);
        let xr = self.ranges(k, x.w, ow);
        for oc in 0..self.out_c {
            let plane = &mut out.data[oc * oh * ow..(oc + 1) * oh * ow];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_c {
                let xs = &x.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
                for ky in 0..k {
                    let (y_lo, y_hi) = yr[ky];
                    for kx in 0..k {
                        let wv = self.gain * self.weight[((oc * self.in_c + ic) * k + ky) * k + kx];
                        let (x_lo, x_hi) = xr[kx];
                        if x_lo >= x_hi {
                            continue;
                        }
                        let ix0 = x_lo * s + kx - self.pad;
                        for oy in y_lo..y_hi {
                            let iy = oy * s + ky - self.pad;
                            let row = &xs[iy * x.w..(iy + 1) * x.w];
                            let orow = &mut plane[oy * ow + x_lo..oy * ow + x_hi];
                            if s == 1 {
                                for (o, v) in orow.iter_mut().zip(&row[ix0..]) {
                                    *o += wv * v;
                                }
                            } else {
                                for (o, v) in orow.iter_mut().zip(row[ix0..].iter().step_by(s)) {
                                    *o += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `d loss / d x`.
    pub fn backward(&self, x: &Tensor3, dy: &Tensor3, grad: &mut Conv2d) -> Tensor3 {
        let (oh, ow) = (dy.h, dy.w);
        let k = self.kernel;
        let s = self.stride;
        let yr = self.ranges(k, x.h, oh);
        let xr = self.ranges(k, x.w, ow);
        let mut dx = x.same_shape();
        for oc in 0..self.out_c {
            let dys = &dy.data[oc * oh * ow..(oc + 1) * oh * ow];
            grad.bias[oc] += dys.iter().sum::<f64>();
            for ic in 0..self.in_c {
                let base = ic * x.h * x.w;
                let xs = &x.data[base..base + x.h * x.w];
                let dxs = &mut dx.data[base..base + x.h * x.w];
                for ky in 0..k {
                    let (y_lo, y_hi) = yr[ky];
                    for kx in 0..k {
                        let widx = ((oc * self.in_c + ic) * k + ky) * k + kx;
                        let wv = self.gain * self.weight[widx];
                        let (x_lo, x_hi) = xr[kx];
                        if x_lo >= x_hi {
                            continue;
                        }
                        let ix0 = x_lo * s + kx - self.pad;
                        let mut gw = 0.0;
                        for oy in y_lo..y_hi {
                            let iy = oy * s + ky - self.pad;
                            let drow = &dys[oy * ow + x_lo..oy * ow + x_hi];
                            let xrow = &xs[iy * x.w + ix0..(iy + 1) * x.w];
                            let dxrow = &mut dxs[iy * x.w + ix0..(iy + 1) * x.w];
                            if s == 1 {
                                for ((d, xv), dxv) in drow.iter().zip(xrow).zip(dxrow.iter_mut()) {
                                    gw += d * xv;
                                    *dxv += wv * d;
                                }
                            } else {
                                for ((d, xv), dxv) in drow
                                    .iter()
                                    .zip(xrow.iter().step_by(s))
                                    .zip(dxrow.iter_mut().step_by(s))
                                {
                                    gw += d * xv;
                                    *dxv += wv * d;
                                }
                            }
                        }
                        grad.weight[widx] += self.gain * gw;
                    }
                }
            }
        }
        dx
    }
}

pub fn upsample2x(x: &Tensor3) -> Tensor3 {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor3::zeros(x.c, h2, w2);
    for c in 0..x.c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out.data[(c * h2 + y) * w2 + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward(dy: &Tensor3) -> Tensor3 {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor3::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for y in 0..dy.h {
            for xx in 0..dy.w {
                dx.data[(c * h + y / 2) * w + xx / 2] += dy.data[(c * dy.h + y) * dy.w + xx];
            }
        }
    }
    dx
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
        ..*x
    }
}

/// `pre` is the SiLU input.
pub fn silu_backward(pre: &Tensor3, dy: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: pre
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| {
                let s = sigmoid(v);
                g * s * (1.0 + v * (1.0 - s))
            })
            .collect(),
        ..*pre
    }
}

pub fn sigmoid_map(x: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: x.data.iter().map(|&v| sigmoid(v)).collect(),
        ..*x
    }
}

/// `out` is the sigmoid output.
pub fn sigmoid_backward(out: &Tensor3, dy: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: out
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
        ..*out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of a strided, zero-padded convolution.
    fn naive_conv(conv: &Conv2d, x: &Tensor3) -> Tensor3 {
        let (oh, ow) = (conv.out_size(x.h), conv.out_size(x.w));
        let mut out = Tensor3::zeros(conv.out_c, oh, ow);
        for oc in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[oc];
                    for ic in 0..conv.in_c {
                        for ky in 0..conv.kernel {
                            for kx in 0..conv.kernel {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += conv.gain
                                    * conv.weight
                                        [((oc * conv.in_c + ic) * conv.kernel + ky) * conv.kernel + kx]
                                    * x.data[(ic * x.h + iy as usize) * x.w + ix as usize];
                            }
                        }
                    }
                    out.data[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor3 {
        Tensor3 {
            c,
            h,
            w,
            data: (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s, p, n) in [(4, 2, 1, 8), (3, 1, 1, 5), (3, 2, 0, 7), (1, 1, 0, 3)] {
            let conv = Conv2d::new(3, 4, k, s, p, &mut rng);
            let x = random_tensor(3, n, n, &mut rng);
            let fast = conv.forward(&x);
            let slow = naive_conv(&conv, &x);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 4, 2, 1, &mut rng);
        conv.bias = vec![0.3, -0.1, 0.2];
        let x = random_tensor(2, 6, 6, &mut rng);
        let dy = random_tensor(3, 3, 3, &mut rng);
        let loss = |c: &Conv2d, x: &Tensor3| -> f64 {
            c.forward(x).data.iter().zip(&dy.data).map(|(a, b)| a * b).sum()
        };
        let mut grad = conv.zeros_like();
        let dx = conv.backward(&x, &dy, &mut grad);
        let h = 1e-5;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
        for i in 0..conv.weight.len() {
            let mut cp = conv.clone();
            cp.weight[i] += h;
            let mut cm = conv.clone();
            cm.weight[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.weight[i]).abs() < 1e-7);
        }
        for i in 0..conv.bias.len() {
            let mut cp = conv.clone();
            cp.bias[i] += h;
            let mut cm = conv.clone();
            cm.bias[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.bias[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(2, 3, 4, &mut rng);
        let dy = random_tensor(2, 6, 8, &mut rng);
        let lhs: f64 = upsample2x(&x).data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&upsample2x_backward(&dy).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn image_roundtrip() {
        let img = ImageTensor::from_fn(4, 5, 3, |y, x, c| (y * 100 + x * 10 + c) as f64);
        assert_eq!(Tensor3::from_image(&img).to_image(), img);
    }
}
