use alloc::string::String;

use super::param::{join, Param, Parameterized, SeededInit};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor4;

/// 2-D convolution over NCHW tensors with square kernels and channel groups.
///
/// `groups == in_channels == out_channels` gives a depthwise convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// `(out, in / groups, k, k)`
    pub weight: Param,
    pub bias: Param,
}

/// Range of output columns whose input column `o·s + k − p` is in `[0, w)`.
#[inline]
fn valid_range(out: usize, input: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if input + pad > k {
        (input + pad - k).div_ceil(stride).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        gain: f64,
        init: &mut SeededInit,
    ) -> Self {
        assert!(in_channels.is_multiple_of(groups) && out_channels.is_multiple_of(groups));
        let ipg = in_channels / groups;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            weight: init.fan_in(&[out_channels, ipg, kernel, kernel], ipg * kernel * kernel, gain),
            bias: Param::zeros(&[out_channels]),
        }
    }

    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.c != self.in_channels {
            return Err(shape_err(
                alloc::format!("{} input channels", self.in_channels),
                x.c,
            ));
        }
        if x.h + 2 * self.padding < self.kernel || x.w + 2 * self.padding < self.kernel {
            return Err(shape_err(
                alloc::format!("spatial >= {}", self.kernel),
                alloc::format!("{}x{}", x.h, x.w),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (oh_n, ow_n) = (self.out_size(x.h), self.out_size(x.w));
        let ipg = self.in_channels / self.groups;
        let opg = self.out_channels / self.groups;
        let mut y = Tensor4::zeros(x.n, self.out_channels, oh_n, ow_n);
        for n in 0..x.n {
            for oc in 0..self.out_channels {
                let g = oc / opg;
                let out = y.plane_mut(n, oc);
                out.iter_mut().for_each(|v| *v = self.bias.value[oc]);
                for icl in 0..ipg {
                    let xin = x.plane(n, g * ipg + icl);
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = valid_range(oh_n, x.h, s, kh, p);
                        for kw in 0..k {
                            let wv = self.weight.value[((oc * ipg + icl) * k + kh) * k + kw];
                            let (ow_lo, ow_hi) = valid_range(ow_n, x.w, s, kw, p);
                            for oh in oh_lo..oh_hi {
                                let ih = oh * s + kh - p;
                                let orow = &mut out[oh * ow_n..(oh + 1) * ow_n];
                                let irow = &xin[ih * x.w..(ih + 1) * x.w];
                                if s == 1 {
                                    let off = ow_lo + kw - p;
                                    for (o, i) in orow[ow_lo..ow_hi]
                                        .iter_mut()
                                        .zip(&irow[off..off + (ow_hi - ow_lo)])
                                    {
                                        *o += wv * i;
                                    }
                                } else {
                                    for ow in ow_lo..ow_hi {
                                        orow[ow] += wv * irow[ow * s + kw - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulate weight/bias gradients and return `dL/dx`.
    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Tensor4 {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (oh_n, ow_n) = (dy.h, dy.w);
        let ipg = self.in_channels / self.groups;
        let opg = self.out_channels / self.groups;
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        for n in 0..x.n {
            for oc in 0..self.out_channels {
                let g = oc / opg;
                let gout = dy.plane(n, oc);
                self.bias.grad[oc] += gout.iter().sum::<f64>();
                for icl in 0..ipg {
                    let ic = g * ipg + icl;
                    let xin = x.plane(n, ic);
                    let dxin = dx.plane_mut(n, ic);
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = valid_range(oh_n, x.h, s, kh, p);
                        for kw in 0..k {
                            let widx = ((oc * ipg + icl) * k + kh) * k + kw;
                            let wv = self.weight.value[widx];
                            let (ow_lo, ow_hi) = valid_range(ow_n, x.w, s, kw, p);
                            let mut dw = 0.0;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * s + kh - p;
                                let grow = &gout[oh * ow_n..(oh + 1) * ow_n];
                                let base = ih * x.w;
                                for ow in ow_lo..ow_hi {
                                    let iw = base + ow * s + kw - p;
                                    dw += grow[ow] * xin[iw];
                                    dxin[iw] += wv * grow[ow];
                                }
                            }
                            self.weight.grad[widx] += dw;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv2d {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Direct definition of a grouped cross-correlation, no range tricks.
    fn naive(conv: &Conv2d, x: &Tensor4) -> Tensor4 {
        let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
        let (oh_n, ow_n) = (conv.out_size(x.h), conv.out_size(x.w));
        let ipg = conv.in_channels / conv.groups;
        let opg = conv.out_channels / conv.groups;
        let mut y = Tensor4::zeros(x.n, conv.out_channels, oh_n, ow_n);
        for n in 0..x.n {
            for oc in 0..conv.out_channels {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let mut acc = conv.bias.value[oc];
                        for icl in 0..ipg {
                            let ic = (oc / opg) * ipg + icl;
                            for kh in 0..k {
                                for kw in 0..k {
                                    let ih = (oh * s + kh) as isize - p as isize;
                                    let iw = (ow * s + kw) as isize - p as isize;
                                    if ih < 0 || iw < 0 || ih >= x.h as isize || iw >= x.w as isize {
                                        continue;
                                    }
                                    acc += conv.weight.value[((oc * ipg + icl) * k + kh) * k + kw]
                                        * x.at(n, ic, ih as usize, iw as usize);
                                }
                            }
                        }
                        let i = y.idx(n, oc, oh, ow);
                        y.data[i] = acc;
                    }
                }
            }
        }
        y
    }

    fn random_input(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        let mut init = SeededInit::new(seed);
        let p = init.uniform(&[n * c * h * w], -1.0, 1.0);
        Tensor4::from_vec(n, c, h, w, p.value).unwrap()
    }

    #[test]
    fn matches_naive_over_configurations() {
        for &(ic, oc, k, s, p, g, h, w) in &[
            (3, 4, 3, 2, 1, 1, 9, 8),
            (4, 4, 3, 1, 1, 4, 7, 7),
            (4, 6, 1, 1, 0, 1, 5, 5),
            (6, 6, 3, 2, 1, 6, 6, 5),
            (2, 2, 5, 1, 0, 2, 5, 5),
        ] {
            let mut init = SeededInit::new(7);
            let mut conv = Conv2d::new(ic, oc, k, s, p, g, 1.0, &mut init);
            conv.bias = init.uniform(&[oc], -0.5, 0.5);
            let x = random_input(3, 2, ic, h, w);
            let fast = conv.forward(&x).unwrap();
            let slow = naive(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut init = SeededInit::new(11);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, 1, 1.0, &mut init);
        let x = random_input(5, 1, 2, 5, 5);
        let y = conv.forward(&x).unwrap();
        let proj = random_input(9, y.n, y.c, y.h, y.w);
        let dx = conv.backward(&x, &proj);
        let loss = |x: &Tensor4| -> f64 {
            let y = conv.forward(x).unwrap();
            y.data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-3;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((num - dx.data[i]).abs() < 1e-8, "i={i} {num} {}", dx.data[i]);
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut init = SeededInit::new(1);
        let conv = Conv2d::new(3, 4, 3, 1, 1, 1, 1.0, &mut init);
        let x = Tensor4::from_vec(1, 2, 3, 3, vec![0.0; 18]).unwrap();
        assert!(conv.forward(&x).is_err());
    }
}
