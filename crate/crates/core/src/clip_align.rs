//! Contrastive vision-language adaptation.
//!
//! Image and text embeddings come from a frozen [`EmbeddingProvider`]. Only
//! the two-layer [`Adapter`] on the image side is trained, against a
//! symmetric softmax loss over cosine similarities with one prompt per
//! expression category. Classification is the arg-max cosine similarity
//! against the prompt embeddings.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::ImageBatch;
use crate::error::{shape_err, Result};
use crate::math::{exp, fnv1a, log_sum_exp, sqrt};
use crate::nn::{join, relu, relu_backward, Linear, Param, Parameterized, SeededInit};
use crate::task::NUM_EXPRESSIONS;
use crate::tensor::{dot, Matrix};
use crate::Error;

pub const DEFAULT_TEMPLATE: &str = "a face showing {emotion}";
pub const DEFAULT_WIDTH: usize = 512;

/// Frozen image/text encoder pair.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn width(&self) -> usize;
    fn embed_images(&self, images: &ImageBatch) -> Result<Matrix>;
    fn embed_texts(&self, prompts: &[String]) -> Result<Matrix>;
}

/// Deterministic stand-in for a real encoder pair.
///
/// Images are summarised by per-channel means over a 4×4 grid plus
/// per-channel standard deviations, then sent through a fixed seeded
/// Gaussian projection. Prompts map to Gaussian vectors seeded by a hash of
/// the text.
#[derive(Debug, Clone, PartialEq)]
pub struct StubProvider {
    seed: u64,
    width: usize,
    projection: Matrix,
}

const STUB_GRID: usize = 4;
const STUB_FEATURES: usize = 3 * STUB_GRID * STUB_GRID + 3 + 1;

impl StubProvider {
    pub fn new(seed: u64, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c11b);
        let scale = 1.0 / sqrt(STUB_FEATURES as f64);
        let data = (0..width * STUB_FEATURES)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self {
            seed,
            width,
            projection: Matrix {
                rows: width,
                cols: STUB_FEATURES,
                data,
            },
        }
    }

    fn image_features(images: &ImageBatch, b: usize) -> [f64; STUB_FEATURES] {
        let mut f = [0.0; STUB_FEATURES];
        for c in 0..images.c.min(3) {
            let plane = images.plane(b, c);
            let n = plane.len() as f64;
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            f[3 * STUB_GRID * STUB_GRID + c] = sqrt(var);
            for gy in 0..STUB_GRID {
                for gx in 0..STUB_GRID {
                    let (y0, y1) = (gy * images.h / STUB_GRID, (gy + 1) * images.h / STUB_GRID);
                    let (x0, x1) = (gx * images.w / STUB_GRID, (gx + 1) * images.w / STUB_GRID);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        s += plane[y * images.w + x0..y * images.w + x1].iter().sum::<f64>();
                    }
                    let cells = ((y1 - y0) * (x1 - x0)).max(1) as f64;
                    f[(c * STUB_GRID + gy) * STUB_GRID + gx] = s / cells - mean * 0.5;
                }
            }
        }
        f[STUB_FEATURES - 1] = 1.0;
        f
    }
}

impl EmbeddingProvider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn width(&self) -> usize {
        self.width
    }

    fn embed_images(&self, images: &ImageBatch) -> Result<Matrix> {
        let mut out = Matrix::zeros(images.n, self.width);
        for b in 0..images.n {
            let f = Self::image_features(images, b);
            for (o, v) in out.row_mut(b).iter_mut().enumerate() {
                *v = dot(self.projection.row(o), &f);
            }
        }
        Ok(out)
    }

    fn embed_texts(&self, prompts: &[String]) -> Result<Matrix> {
        let mut out = Matrix::zeros(prompts.len(), self.width);
        for (i, p) in prompts.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(p.as_bytes()) ^ self.seed);
            for v in out.row_mut(i) {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        Ok(out)
    }
}

/// What a provider factory is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub name: String,
    pub seed: u64,
    pub width: usize,
}

type Factory = Box<dyn Fn(&ProviderSpec) -> Result<Box<dyn EmbeddingProvider>> + Send + Sync>;

/// Named provider factories.
pub struct ProviderRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for ProviderRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("stub", |spec| Ok(Box::new(StubProvider::new(spec.seed, spec.width))));
        r
    }
}

impl ProviderRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&ProviderSpec) -> Result<Box<dyn EmbeddingProvider>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, spec: &ProviderSpec) -> Result<Box<dyn EmbeddingProvider>> {
        let f = self
            .factories
            .get(&spec.name)
            .ok_or_else(|| Error::Contract(format!("no embedding provider named {:?}", spec.name)))?;
        let p = f(spec)?;
        if p.width() != spec.width {
            return Err(shape_err(spec.width, p.width()));
        }
        Ok(p)
    }
}

/// One prompt per expression category, in label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub prompts: Vec<String>,
}

pub fn build_prompts(category_names: &[&str]) -> Result<PromptSet> {
    build_prompts_with(category_names, DEFAULT_TEMPLATE)
}

/// `template` must contain `{emotion}`; the lowercased name is substituted.
pub fn build_prompts_with(category_names: &[&str], template: &str) -> Result<PromptSet> {
    if category_names.len() != NUM_EXPRESSIONS {
        return Err(Error::Contract(format!(
            "expected {NUM_EXPRESSIONS} category names, got {}",
            category_names.len()
        )));
    }
    if !template.contains("{emotion}") {
        return Err(Error::Contract(format!("prompt template {template:?} lacks {{emotion}}")));
    }
    Ok(PromptSet {
        prompts: category_names
            .iter()
            .map(|n| template.replace("{emotion}", &n.to_lowercase()))
            .collect(),
    })
}

/// `layer2(relu(layer1(x)))`, both layers square.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub layer1: Linear,
    pub layer2: Linear,
}

#[derive(Debug, Clone)]
pub struct AdapterCache {
    input: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
}

impl AdapterCache {
    pub fn route(&self, h: &mut crate::nn::gradcheck::RouteHasher) {
        h.signs(&self.hidden_pre.data);
    }
}

impl Adapter {
    pub fn new(width: usize, init: &mut SeededInit) -> Self {
        Self {
            layer1: Linear::new(width, width, core::f64::consts::SQRT_2, init),
            layer2: Linear::new(width, width, 1.0, init),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, AdapterCache)> {
        let hidden_pre = self.layer1.forward(x)?;
        let mut hidden = hidden_pre.clone();
        hidden.data.iter_mut().for_each(|v| *v = relu(*v));
        let y = self.layer2.forward(&hidden)?;
        Ok((
            y,
            AdapterCache {
                input: x.clone(),
                hidden_pre,
                hidden,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AdapterCache, dy: &Matrix) -> Matrix {
        let mut dh = self.layer2.backward(&cache.hidden, dy);
        for (g, &pre) in dh.data.iter_mut().zip(&cache.hidden_pre.data) {
            *g = relu_backward(pre, *g);
        }
        self.layer1.backward(&cache.input, &dh)
    }
}

/// Image-side adapter applied to `(batch, width)` embeddings.
pub fn adapt(adapter: &Adapter, image_embeddings: &Matrix) -> Result<Matrix> {
    adapter.forward(image_embeddings)
}

impl Parameterized for Adapter {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.layer1.visit_params(&join(prefix, "layer1"), f);
        self.layer2.visit_params(&join(prefix, "layer2"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.layer1.visit_params_mut(&join(prefix, "layer1"), f);
        self.layer2.visit_params_mut(&join(prefix, "layer2"), f);
    }
}

/// Rows scaled to unit length, plus the original norms.
pub fn l2_normalize(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows);
    for r in 0..m.rows {
        let n = sqrt(dot(m.row(r), m.row(r)));
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm(r));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// `sim[i][j] = cos(a_i, b_j)`.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(shape_err(a.cols, b.cols));
    }
    let (an, _) = l2_normalize(a)?;
    let (bn, _) = l2_normalize(b)?;
    let mut s = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            s.data[i * b.rows + j] = dot(an.row(i), bn.row(j));
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveLoss {
    pub image: f64,
    pub text: f64,
    pub total: f64,
}

fn check_pairs(image: &Matrix, text: &Matrix) -> Result<()> {
    if image.rows == 0 {
        return Err(Error::Contract("contrastive loss needs at least one pair".into()));
    }
    if image.rows != text.rows || image.cols != text.cols {
        return Err(shape_err(
            format!("{}x{}", image.rows, image.cols),
            format!("{}x{}", text.rows, text.cols),
        ));
    }
    Ok(())
}

/// Symmetric contrastive loss over cosine similarities, temperature 1.
pub fn contrastive_loss(image: &Matrix, text: &Matrix) -> Result<ContrastiveLoss> {
    contrastive_loss_with_temperature(image, text, 1.0)
}

pub fn contrastive_loss_with_temperature(image: &Matrix, text: &Matrix, temperature: f64) -> Result<ContrastiveLoss> {
    Ok(contrastive_loss_grad(image, text, temperature)?.0)
}

/// Loss together with its gradients w.r.t. the raw (unnormalized) image
/// and text embeddings.
pub fn contrastive_loss_grad(image: &Matrix, text: &Matrix, temperature: f64) -> Result<(ContrastiveLoss, Matrix, Matrix)> {
    check_pairs(image, text)?;
    let n = image.rows;
    let (img, img_norm) = l2_normalize(image)?;
    let (txt, txt_norm) = l2_normalize(text)?;
    let mut logits = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            logits.data[i * n + j] = dot(img.row(i), txt.row(j)) / temperature;
        }
    }
    let mut l_img = 0.0;
    let mut l_txt = 0.0;
    // dS accumulates d total / d logits
    let mut ds = Matrix::zeros(n, n);
    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        l_img += lse - row[i];
        for j in 0..n {
            ds.data[i * n + j] += 0.5 * exp(row[j] - lse) / n as f64;
        }
        ds.data[i * n + i] -= 0.5 / n as f64;
    }
    let mut col = vec![0.0; n];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = logits.data[i * n + j];
        }
        let lse = log_sum_exp(&col);
        l_txt += lse - col[j];
        for i in 0..n {
            ds.data[i * n + j] += 0.5 * exp(col[i] - lse) / n as f64;
        }
        ds.data[j * n + j] -= 0.5 / n as f64;
    }
    l_img /= n as f64;
    l_txt /= n as f64;

    let d = image.cols;
    let mut d_img_n = Matrix::zeros(n, d);
    let mut d_txt_n = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let g = ds.data[i * n + j] / temperature;
            if g == 0.0 {
                continue;
            }
            crate::tensor::axpy(g, txt.row(j), d_img_n.row_mut(i));
            crate::tensor::axpy(g, img.row(i), d_txt_n.row_mut(j));
        }
    }
    let d_img = normalize_backward(&img, &img_norm, &d_img_n);
    let d_txt = normalize_backward(&txt, &txt_norm, &d_txt_n);
    Ok((
        ContrastiveLoss {
            image: l_img,
            text: l_txt,
            total: (l_img + l_txt) / 2.0,
        },
        d_img,
        d_txt,
    ))
}

/// Backward through `u = x / |x|`: `dx = (du − u (u·du)) / |x|`.
fn normalize_backward(unit: &Matrix, norms: &[f64], du: &Matrix) -> Matrix {
    let mut dx = du.clone();
    for r in 0..unit.rows {
        let u = unit.row(r);
        let proj = dot(u, du.row(r));
        for (g, &uv) in dx.row_mut(r).iter_mut().zip(u) {
            *g = (*g - uv * proj) / norms[r];
        }
    }
    dx
}

/// Arg-max cosine similarity against the prompt rows; ties go to the
/// lowest index.
pub fn classify(adapted: &Matrix, prompt_embeddings: &Matrix) -> Result<Vec<usize>> {
    let sim = cosine_matrix(adapted, prompt_embeddings)?;
    Ok((0..sim.rows)
        .map(|r| {
            let mut best = 0;
            for (k, &v) in sim.row(r).iter().enumerate() {
                if v > sim.row(r)[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}
