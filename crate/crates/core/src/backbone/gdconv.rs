use alloc::format;
use alloc::string::String;

use crate::error::{shape_err, Result};
use crate::nn::{join, Linear, Param, Parameterized, SeededInit};
use crate::tensor::{dot, Matrix, Tensor4};

/// Global depthwise convolution: one `h × w` kernel per channel covering the
/// whole map, followed by a linear projection to the embedding width.
#[derive(Debug, Clone)]
pub struct GdConv {
    pub channels: usize,
    pub kernel: usize,
    /// `(c, 1, k, k)`
    pub weight: Param,
    pub bias: Param,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct GdConvCache {
    input: Tensor4,
    pooled: Matrix,
}

impl GdConv {
    pub fn new(channels: usize, kernel: usize, embedding: usize, init: &mut SeededInit) -> Self {
        Self {
            channels,
            kernel,
            weight: init.fan_in(&[channels, 1, kernel, kernel], kernel * kernel, 1.0),
            bias: Param::zeros(&[channels]),
            proj: Linear::new(channels, embedding, 1.0, init),
        }
    }

    /// Depthwise stage only: `(n, c)` with one value per channel.
    pub fn depthwise(&self, x: &Tensor4) -> Result<Matrix> {
        if x.c != self.channels || x.h != self.kernel || x.w != self.kernel {
            return Err(shape_err(
                format!("(n, {}, {k}, {k})", self.channels, k = self.kernel),
                format!("{:?}", x.shape()),
            ));
        }
        let k2 = self.kernel * self.kernel;
        let mut out = Matrix::zeros(x.n, x.c);
        for b in 0..x.n {
            for ch in 0..x.c {
                out.data[b * x.c + ch] = self.bias.value[ch] + dot(&self.weight.value[ch * k2..(ch + 1) * k2], x.plane(b, ch));
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Matrix> {
        self.proj.forward(&self.depthwise(x)?)
    }

    pub fn forward_train(&self, x: &Tensor4) -> Result<(Matrix, GdConvCache)> {
        let pooled = self.depthwise(x)?;
        let y = self.proj.forward(&pooled)?;
        Ok((
            y,
            GdConvCache {
                input: x.clone(),
                pooled,
            },
        ))
    }

    pub fn backward(&mut self, cache: &GdConvCache, dy: &Matrix) -> Tensor4 {
        let dpooled = self.proj.backward(&cache.pooled, dy);
        let x = &cache.input;
        let k2 = self.kernel * self.kernel;
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        for b in 0..x.n {
            for ch in 0..x.c {
                let g = dpooled.data[b * x.c + ch];
                self.bias.grad[ch] += g;
                let wslice = &self.weight.value[ch * k2..(ch + 1) * k2];
                let gw = &mut self.weight.grad[ch * k2..(ch + 1) * k2];
                for ((gwi, &xi), (dxi, &wi)) in gw
                    .iter_mut()
                    .zip(x.plane(b, ch))
                    .zip(dx.plane_mut(b, ch).iter_mut().zip(wslice))
                {
                    *gwi += g * xi;
                    *dxi += g * wi;
                }
            }
        }
        dx
    }
}

impl Parameterized for GdConv {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
        self.proj.visit_params(&join(prefix, "proj"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
        self.proj.visit_params_mut(&join(prefix, "proj"), f);
    }
}
