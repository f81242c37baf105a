use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::BackboneConfig;
use crate::error::{shape_err, Result};
use crate::nn::gradcheck::RouteHasher;
use crate::nn::{join, Conv2d, PRelu, Param, Parameterized, SeededInit};
use crate::tensor::Tensor4;

const RECTIFIER_GAIN: f64 = core::f64::consts::SQRT_2;

/// Convolution optionally followed by a channel-wise PReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub act: Option<PRelu>,
}

#[derive(Debug, Clone)]
pub struct ConvUnitCache {
    input: Tensor4,
    pre_act: Option<Tensor4>,
}

impl ConvUnitCache {
    fn route(&self, h: &mut RouteHasher) {
        if let Some(pre) = &self.pre_act {
            h.signs(&pre.data);
        }
    }
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        act: bool,
        prelu_init: f64,
        init: &mut SeededInit,
    ) -> Self {
        let gain = if act { RECTIFIER_GAIN } else { 1.0 };
        Self {
            conv: Conv2d::new(cin, cout, k, stride, k / 2, groups, gain, init),
            act: act.then(|| PRelu::new(cout, prelu_init)),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.conv.forward(x)?;
        Ok(match &self.act {
            Some(a) => a.forward(&y),
            None => y,
        })
    }

    fn forward_train(&self, x: &Tensor4) -> Result<(Tensor4, ConvUnitCache)> {
        let pre = self.conv.forward(x)?;
        Ok(match &self.act {
            Some(a) => (
                a.forward(&pre),
                ConvUnitCache {
                    input: x.clone(),
                    pre_act: Some(pre),
                },
            ),
            None => (
                pre,
                ConvUnitCache {
                    input: x.clone(),
                    pre_act: None,
                },
            ),
        })
    }

    fn backward(&mut self, cache: &ConvUnitCache, dy: &Tensor4) -> Tensor4 {
        let dpre = match (&mut self.act, &cache.pre_act) {
            (Some(a), Some(pre)) => a.backward(pre, dy),
            _ => dy.clone(),
        };
        self.conv.backward(&cache.input, &dpre)
    }
}

impl Parameterized for ConvUnit {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        if let Some(a) = &self.act {
            a.visit_params(&join(prefix, "act"), f);
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
        if let Some(a) = &mut self.act {
            a.visit_params_mut(&join(prefix, "act"), f);
        }
    }
}

/// Inverted residual: 1×1 expand, 3×3 depthwise, 1×1 linear projection.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub expand: ConvUnit,
    pub depthwise: ConvUnit,
    pub project: ConvUnit,
    pub residual: bool,
}

#[derive(Debug, Clone)]
struct BottleneckCache {
    expand: ConvUnitCache,
    depthwise: ConvUnitCache,
    project: ConvUnitCache,
}

impl Bottleneck {
    fn new(cin: usize, cout: usize, expansion: usize, stride: usize, prelu_init: f64, init: &mut SeededInit) -> Self {
        let mid = cin * expansion;
        Self {
            expand: ConvUnit::new(cin, mid, 1, 1, 1, true, prelu_init, init),
            depthwise: ConvUnit::new(mid, mid, 3, stride, mid, true, prelu_init, init),
            project: ConvUnit::new(mid, cout, 1, 1, 1, false, prelu_init, init),
            residual: stride == 1 && cin == cout,
        }
    }

    fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let h = self.expand.forward(x)?;
        let h = self.depthwise.forward(&h)?;
        let mut y = self.project.forward(&h)?;
        if self.residual {
            y.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += b);
        }
        Ok(y)
    }

    fn forward_train(&self, x: &Tensor4) -> Result<(Tensor4, BottleneckCache)> {
        let (h, expand) = self.expand.forward_train(x)?;
        let (h, depthwise) = self.depthwise.forward_train(&h)?;
        let (mut y, project) = self.project.forward_train(&h)?;
        if self.residual {
            y.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += b);
        }
        Ok((
            y,
            BottleneckCache {
                expand,
                depthwise,
                project,
            },
        ))
    }

    fn backward(&mut self, cache: &BottleneckCache, dy: &Tensor4) -> Tensor4 {
        let dh = self.project.backward(&cache.project, dy);
        let dh = self.depthwise.backward(&cache.depthwise, &dh);
        let mut dx = self.expand.backward(&cache.expand, &dh);
        if self.residual {
            dx.data.iter_mut().zip(&dy.data).for_each(|(a, b)| *a += b);
        }
        dx
    }
}

impl Parameterized for Bottleneck {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.expand.visit_params(&join(prefix, "expand"), f);
        self.depthwise.visit_params(&join(prefix, "depthwise"), f);
        self.project.visit_params(&join(prefix, "project"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.expand.visit_params_mut(&join(prefix, "expand"), f);
        self.depthwise.visit_params_mut(&join(prefix, "depthwise"), f);
        self.project.visit_params_mut(&join(prefix, "project"), f);
    }
}

/// Mobile face feature extractor: strided stem, depthwise conv, a stack
/// of bottlenecks and a 1×1 widening convolution.
#[derive(Debug, Clone)]
pub struct Trunk {
    pub input_size: usize,
    pub stem: ConvUnit,
    pub stem_dw: ConvUnit,
    pub blocks: Vec<Bottleneck>,
    pub widen: ConvUnit,
}

#[derive(Debug, Clone)]
pub struct TrunkCache {
    stem: ConvUnitCache,
    stem_dw: ConvUnitCache,
    blocks: Vec<BottleneckCache>,
    widen: ConvUnitCache,
}

impl TrunkCache {
    /// Feed every PReLU branch decision into `h`.
    pub fn route(&self, h: &mut RouteHasher) {
        self.stem.route(h);
        self.stem_dw.route(h);
        for b in &self.blocks {
            b.expand.route(h);
            b.depthwise.route(h);
            b.project.route(h);
        }
        self.widen.route(h);
    }
}

impl Trunk {
    pub fn new(cfg: &BackboneConfig, init: &mut SeededInit) -> Self {
        let s = cfg.stem_channels;
        let stem = ConvUnit::new(3, s, 3, 2, 1, true, cfg.prelu_init, init);
        let stem_dw = ConvUnit::new(s, s, 3, 1, s, true, cfg.prelu_init, init);
        let mut cin = s;
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        for b in &cfg.blocks {
            blocks.push(Bottleneck::new(cin, b.out_channels, b.expansion, b.stride, cfg.prelu_init, init));
            cin = b.out_channels;
        }
        let widen = ConvUnit::new(cin, cfg.trunk_channels, 1, 1, 1, true, cfg.prelu_init, init);
        Self {
            input_size: cfg.input_size,
            stem,
            stem_dw,
            blocks,
            widen,
        }
    }

    pub fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.c != 3 || x.h != self.input_size || x.w != self.input_size || x.n == 0 {
            return Err(shape_err(
                format!("(n>0, 3, {0}, {0})", self.input_size),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x)?;
        h = self.stem_dw.forward(&h)?;
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        self.widen.forward(&h)
    }

    pub fn forward_train(&self, x: &Tensor4) -> Result<(Tensor4, TrunkCache)> {
        self.check_input(x)?;
        let (h, stem) = self.stem.forward_train(x)?;
        let (mut h, stem_dw) = self.stem_dw.forward_train(&h)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward_train(&h)?;
            blocks.push(c);
            h = next;
        }
        let (y, widen) = self.widen.forward_train(&h)?;
        Ok((
            y,
            TrunkCache {
                stem,
                stem_dw,
                blocks,
                widen,
            },
        ))
    }

    /// Accumulate parameter gradients; returns the gradient w.r.t. the image.
    pub fn backward(&mut self, cache: &TrunkCache, dy: &Tensor4) -> Tensor4 {
        let mut d = self.widen.backward(&cache.widen, dy);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = b.backward(c, &d);
        }
        d = self.stem_dw.backward(&cache.stem_dw, &d);
        self.stem.backward(&cache.stem, &d)
    }
}

impl Parameterized for Trunk {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        self.stem_dw.visit_params(&join(prefix, "stem_dw"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.widen.visit_params(&join(prefix, "widen"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.stem.visit_params_mut(&join(prefix, "stem"), f);
        self.stem_dw.visit_params_mut(&join(prefix, "stem_dw"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.widen.visit_params_mut(&join(prefix, "widen"), f);
    }
}
