//! Dual-direction attention.
//!
//! Each head average-pools the feature map along width (giving one
//! descriptor per row) and along height (one per column), runs every
//! descriptor through a shared `C → M` reduction with a SiLU, then through
//! separate `M → C` expansions for rows and columns gated by a logistic.
//! A head's map is the outer product of its row and column gates; heads are
//! merged by element-wise maximum and the features are multiplied by the
//! merged map.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::math::sigmoid;
use crate::nn::{join, silu, silu_grad, Linear, Param, Parameterized, SeededInit};
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct DdaHead {
    pub reduce: Linear,
    pub expand_h: Linear,
    pub expand_w: Linear,
}

/// Gates of one head after the logistic: rows `(n, c, h, 1)`, columns `(n, c, 1, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    pub horizontal: Tensor4,
    pub vertical: Tensor4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub heads: Vec<HeadMaps>,
}

impl AttentionMaps {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.heads
            .iter()
            .flat_map(|h| h.horizontal.data.iter().chain(&h.vertical.data).copied())
    }
}

#[derive(Debug, Clone)]
pub struct Dda {
    pub channels: usize,
    pub heads: Vec<DdaHead>,
}

/// Pooled descriptors laid out `(n, h + w, c)`.
struct Pooled {
    positions: usize,
    c: usize,
    data: Vec<f64>,
}

impl Pooled {
    fn vec(&self, n: usize, p: usize) -> &[f64] {
        let s = (n * self.positions + p) * self.c;
        &self.data[s..s + self.c]
    }
}

struct HeadState {
    /// Pre-activation of the reduction, `(n, h + w, m)`.
    reduced: Vec<f64>,
    activated: Vec<f64>,
    maps: HeadMaps,
}

#[derive(Debug, Clone)]
pub struct DdaCache {
    input: Tensor4,
    pooled: Vec<f64>,
    reduced: Vec<Vec<f64>>,
    activated: Vec<Vec<f64>>,
    maps: AttentionMaps,
    combined: Vec<f64>,
    winner: Vec<u8>,
}

impl DdaCache {
    /// Feed the winning head of every element into `h`.
    pub fn route(&self, h: &mut crate::nn::gradcheck::RouteHasher) {
        for &w in &self.winner {
            h.push(w);
        }
    }
}

impl DdaHead {
    fn new(channels: usize, width: usize, init: &mut SeededInit) -> Self {
        Self {
            reduce: Linear::new(channels, width, 1.0, init),
            expand_h: Linear::new(width, channels, 1.0, init),
            expand_w: Linear::new(width, channels, 1.0, init),
        }
    }

    fn forward(&self, pooled: &Pooled, n: usize, h: usize, w: usize) -> HeadState {
        let c = pooled.c;
        let m = self.reduce.out_dim;
        let positions = h + w;
        let mut reduced = vec![0.0; n * positions * m];
        let mut activated = vec![0.0; n * positions * m];
        let mut horizontal = Tensor4::zeros(n, c, h, 1);
        let mut vertical = Tensor4::zeros(n, c, 1, w);
        let mut gate = vec![0.0; c];
        for b in 0..n {
            for p in 0..positions {
                let off = (b * positions + p) * m;
                self.reduce.forward_vec(pooled.vec(b, p), &mut reduced[off..off + m]);
                for i in off..off + m {
                    activated[i] = silu(reduced[i]);
                }
                let s = &activated[off..off + m];
                if p < h {
                    self.expand_h.forward_vec(s, &mut gate);
                    for ch in 0..c {
                        let i = horizontal.idx(b, ch, p, 0);
                        horizontal.data[i] = sigmoid(gate[ch]);
                    }
                } else {
                    self.expand_w.forward_vec(s, &mut gate);
                    for ch in 0..c {
                        let i = vertical.idx(b, ch, 0, p - h);
                        vertical.data[i] = sigmoid(gate[ch]);
                    }
                }
            }
        }
        HeadState {
            reduced,
            activated,
            maps: HeadMaps { horizontal, vertical },
        }
    }
}

impl Dda {
    pub fn new(channels: usize, heads: usize, width: usize, init: &mut SeededInit) -> Self {
        Self {
            channels,
            heads: (0..heads).map(|_| DdaHead::new(channels, width, init)).collect(),
        }
    }

    fn pool(x: &Tensor4) -> Pooled {
        let positions = x.h + x.w;
        let mut data = vec![0.0; x.n * positions * x.c];
        for b in 0..x.n {
            for ch in 0..x.c {
                let plane = x.plane(b, ch);
                for hh in 0..x.h {
                    let row = &plane[hh * x.w..(hh + 1) * x.w];
                    data[(b * positions + hh) * x.c + ch] = row.iter().sum::<f64>() / x.w as f64;
                }
                for ww in 0..x.w {
                    let s: f64 = (0..x.h).map(|hh| plane[hh * x.w + ww]).sum();
                    data[(b * positions + x.h + ww) * x.c + ch] = s / x.h as f64;
                }
            }
        }
        Pooled {
            positions,
            c: x.c,
            data,
        }
    }

    fn run(&self, x: &Tensor4) -> Result<(Tensor4, DdaCache)> {
        if x.c != self.channels {
            return Err(shape_err(format!("{} channels", self.channels), x.c));
        }
        let pooled = Self::pool(x);
        let states: Vec<HeadState> = self.heads.iter().map(|h| h.forward(&pooled, x.n, x.h, x.w)).collect();
        let mut combined = vec![0.0; x.data.len()];
        let mut winner = vec![0u8; x.data.len()];
        for b in 0..x.n {
            for ch in 0..x.c {
                for hh in 0..x.h {
                    for ww in 0..x.w {
                        let i = x.idx(b, ch, hh, ww);
                        let mut best = f64::NEG_INFINITY;
                        for (k, st) in states.iter().enumerate() {
                            let a = st.maps.horizontal.at(b, ch, hh, 0) * st.maps.vertical.at(b, ch, 0, ww);
                            if a > best {
                                best = a;
                                winner[i] = k as u8;
                            }
                        }
                        combined[i] = best;
                    }
                }
            }
        }
        let mut attended = x.clone();
        attended.data.iter_mut().zip(&combined).for_each(|(v, a)| *v *= a);
        let mut reduced = Vec::with_capacity(states.len());
        let mut activated = Vec::with_capacity(states.len());
        let mut maps = Vec::with_capacity(states.len());
        for st in states {
            reduced.push(st.reduced);
            activated.push(st.activated);
            maps.push(st.maps);
        }
        Ok((
            attended,
            DdaCache {
                input: x.clone(),
                pooled: pooled.data,
                reduced,
                activated,
                maps: AttentionMaps { heads: maps },
                combined,
                winner,
            },
        ))
    }

    /// Attended features and the per-head gates.
    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, AttentionMaps)> {
        let (y, cache) = self.run(x)?;
        Ok((y, cache.maps))
    }

    pub fn forward_train(&self, x: &Tensor4) -> Result<(Tensor4, DdaCache)> {
        self.run(x)
    }

    pub fn backward(&mut self, cache: &DdaCache, dy: &Tensor4) -> Tensor4 {
        let x = &cache.input;
        let (n, c, h, w) = (x.n, x.c, x.h, x.w);
        let positions = h + w;
        let mut dx = dy.clone();
        dx.data.iter_mut().zip(&cache.combined).for_each(|(g, a)| *g *= a);

        let mut dpooled = vec![0.0; cache.pooled.len()];
        for (k, head) in self.heads.iter_mut().enumerate() {
            let maps = &cache.maps.heads[k];
            let mut dgh = vec![0.0; n * c * h];
            let mut dgw = vec![0.0; n * c * w];
            for b in 0..n {
                for ch in 0..c {
                    for hh in 0..h {
                        for ww in 0..w {
                            let i = x.idx(b, ch, hh, ww);
                            if cache.winner[i] as usize != k {
                                continue;
                            }
                            let da = dy.data[i] * x.data[i];
                            dgh[(b * c + ch) * h + hh] += da * maps.vertical.at(b, ch, 0, ww);
                            dgw[(b * c + ch) * w + ww] += da * maps.horizontal.at(b, ch, hh, 0);
                        }
                    }
                }
            }
            let m = head.reduce.out_dim;
            let mut dlogit = vec![0.0; c];
            let mut ds = vec![0.0; m];
            for b in 0..n {
                for p in 0..positions {
                    let off = (b * positions + p) * m;
                    for (ch, g) in dlogit.iter_mut().enumerate() {
                        *g = if p < h {
                            let gate = maps.horizontal.at(b, ch, p, 0);
                            dgh[(b * c + ch) * h + p] * gate * (1.0 - gate)
                        } else {
                            let gate = maps.vertical.at(b, ch, 0, p - h);
                            dgw[(b * c + ch) * w + (p - h)] * gate * (1.0 - gate)
                        };
                    }
                    ds.iter_mut().for_each(|v| *v = 0.0);
                    let s = &cache.activated[k][off..off + m];
                    if p < h {
                        head.expand_h.backward_vec(s, &dlogit, Some(&mut ds));
                    } else {
                        head.expand_w.backward_vec(s, &dlogit, Some(&mut ds));
                    }
                    for (j, d) in ds.iter_mut().enumerate() {
                        *d *= silu_grad(cache.reduced[k][off + j]);
                    }
                    let poff = (b * positions + p) * c;
                    let z = &cache.pooled[poff..poff + c];
                    head.reduce.backward_vec(z, &ds, Some(&mut dpooled[poff..poff + c]));
                }
            }
        }

        for b in 0..n {
            for ch in 0..c {
                for hh in 0..h {
                    let g = dpooled[(b * positions + hh) * c + ch] / w as f64;
                    for ww in 0..w {
                        let i = x.idx(b, ch, hh, ww);
                        dx.data[i] += g;
                    }
                }
                for ww in 0..w {
                    let g = dpooled[(b * positions + h + ww) * c + ch] / h as f64;
                    for hh in 0..h {
                        let i = x.idx(b, ch, hh, ww);
                        dx.data[i] += g;
                    }
                }
            }
        }
        dx
    }
}

impl Parameterized for Dda {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        for (i, h) in self.heads.iter().enumerate() {
            let p = join(prefix, &format!("head{i}"));
            h.reduce.visit_params(&join(&p, "reduce"), f);
            h.expand_h.visit_params(&join(&p, "expand_h"), f);
            h.expand_w.visit_params(&join(&p, "expand_w"), f);
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            let p = join(prefix, &format!("head{i}"));
            h.reduce.visit_params_mut(&join(&p, "reduce"), f);
            h.expand_h.visit_params_mut(&join(&p, "expand_h"), f);
            h.expand_w.visit_params_mut(&join(&p, "expand_w"), f);
        }
    }
}
