//! Procedural videos whose pixels encode their labels.
//!
//! Each task gets its own videos. Expression frames show a per-category
//! colour patch with category-specific stripes, AU frames show one bright
//! blob per active unit on a 4×3 grid, and VA frames are tinted by the
//! current valence and arousal. Labels evolve smoothly within a video.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frames::{MemoryFrames, RgbImage};
use crate::curation::{
    filter_invalid, parse_annotation_file, AuVector, CuratedIndex, CurationConfig, ExpressionId, FrameAnnotation,
    Payload, LABEL_SENTINEL, VA_SENTINEL,
};
use crate::math::{fnv1a, round, sin};
use crate::task::{Split, Task, NUM_AUS, NUM_EXPRESSIONS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub image_size: usize,
    pub tasks: Vec<Task>,
    pub train_videos: usize,
    pub val_videos: usize,
    pub frames_per_video: usize,
    /// Standard deviation of per-pixel Gaussian noise, in `[0, 1]` units.
    pub noise: f64,
    /// Share of frames whose annotation is replaced by a sentinel.
    pub invalid_fraction: f64,
    /// Mean number of frames an expression or AU state persists.
    pub run_length: f64,
    /// Expression label of frame `t` is the category shown at `t - lag`;
    /// the first `lag` frames carry the sentinel.
    pub expr_lag: usize,
    pub category_weights: [f64; NUM_EXPRESSIONS],
    pub header: bool,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            image_size: 112,
            tasks: Task::ALL.to_vec(),
            train_videos: 6,
            val_videos: 3,
            frames_per_video: 50,
            noise: 0.04,
            invalid_fraction: 0.05,
            run_length: 6.0,
            expr_lag: 0,
            category_weights: [1.0; NUM_EXPRESSIONS],
            header: true,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || self.frames_per_video == 0 || self.train_videos == 0 || self.val_videos == 0 {
            return Err(Error::Contract("fixture sizes must be positive (images at least 8 px)".into()));
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) || !(self.noise >= 0.0) || !(self.run_length >= 1.0) {
            return Err(Error::Contract("fixture noise, invalid fraction or run length out of range".into()));
        }
        if self.category_weights.iter().any(|w| !(*w >= 0.0)) || self.category_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Contract("category weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    pub fn frames_per_task(&self) -> usize {
        (self.train_videos + self.val_videos) * self.frames_per_video
    }
}

/// The label a frame's pixels were drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Latent {
    Va { valence: f64, arousal: f64 },
    Expr { category: usize },
    Au { aus: [bool; NUM_AUS] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureVideo {
    pub task: Task,
    pub split: Split,
    pub video_id: String,
    pub frames: Vec<RgbImage>,
    pub latents: Vec<Latent>,
    /// Annotation written for each frame, sentinels included.
    pub labels: Vec<Payload>,
}

impl FixtureVideo {
    /// Annotation file content: optional header, then one line per frame.
    pub fn annotation_text(&self, header: bool) -> String {
        let mut out = String::new();
        if header {
            out.push_str(&self.task.annotation_header());
            out.push('\n');
        }
        for p in &self.labels {
            match p {
                Payload::Va { valence, arousal } => {
                    let _ = writeln!(out, "{valence},{arousal}");
                }
                Payload::Expr { label } => {
                    let _ = writeln!(out, "{}", label.0);
                }
                Payload::Au { aus } => {
                    let cells: Vec<String> = aus.0.iter().map(|a| format!("{a}")).collect();
                    let _ = writeln!(out, "{}", cells.join(","));
                }
            }
        }
        out
    }

    pub fn invalid_count(&self, config: &CurationConfig) -> usize {
        self.labels.iter().filter(|p| !config.is_valid(p)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub seed: u64,
    pub spec: FixtureSpec,
    pub videos: Vec<FixtureVideo>,
}

impl FixtureSet {
    pub fn frames(&self) -> MemoryFrames {
        let mut m = MemoryFrames::new();
        for v in &self.videos {
            for (i, img) in v.frames.iter().enumerate() {
                m.insert(&v.video_id, i as u64 + 1, img.clone());
            }
        }
        m
    }

    pub fn videos_for(&self, task: Task, split: Split) -> impl Iterator<Item = &FixtureVideo> {
        self.videos.iter().filter(move |v| v.task == task && v.split == split)
    }

    /// Parse the annotation text of every matching video and filter it,
    /// exactly as files on disk would be curated.
    pub fn curated(&self, task: Task, split: Split, config: &CurationConfig) -> Result<CuratedIndex> {
        let mut records: Vec<FrameAnnotation> = Vec::new();
        for v in self.videos_for(task, split) {
            records.extend(parse_annotation_file(&v.annotation_text(self.spec.header), task, &v.video_id)?);
        }
        Ok(filter_invalid(&records, task, config))
    }
}

// Eight well separated colours, one per expression category.
const PALETTE: [[f64; 3]; NUM_EXPRESSIONS] = [
    [0.85, 0.85, 0.85],
    [0.90, 0.10, 0.10],
    [0.20, 0.65, 0.15],
    [0.55, 0.20, 0.80],
    [0.95, 0.85, 0.10],
    [0.10, 0.25, 0.90],
    [0.10, 0.85, 0.85],
    [0.95, 0.50, 0.05],
];

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(size: usize, fill: [f64; 3]) -> Self {
        let mut px = vec![0.0; size * size * 3];
        for p in px.chunks_exact_mut(3) {
            p.copy_from_slice(&fill);
        }
        Self { size, px }
    }

    fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.size + x) * 3;
        self.px[i..i + 3].copy_from_slice(&rgb);
    }

    fn finish(self, rng: &mut ChaCha8Rng, noise: f64) -> RgbImage {
        let dist = Normal::new(0.0, noise.max(0.0)).unwrap();
        let data = self
            .px
            .iter()
            .map(|&v| {
                let n = if noise > 0.0 { dist.sample(rng) } else { 0.0 };
                round((v + n).clamp(0.0, 1.0) * 255.0) as u8
            })
            .collect();
        RgbImage {
            width: self.size,
            height: self.size,
            data,
        }
    }
}

fn draw_expression(size: usize, category: usize) -> Canvas {
    let mut c = Canvas::new(size, [0.5, 0.5, 0.5]);
    let color = PALETTE[category];
    let dark = color.map(|v| v * 0.55);
    let (lo, hi) = (size * 3 / 20, size * 17 / 20);
    let period = 4 + 2 * (category % 4);
    let vertical = category >= 4;
    for y in lo..hi {
        for x in lo..hi {
            let k = if vertical { x } else { y };
            c.set(x, y, if (k / (period / 2)).is_multiple_of(2) { color } else { dark });
        }
    }
    c
}

/// Blob centres on a 4-column, 3-row grid, in AU order.
fn au_centre(size: usize, au: usize) -> (f64, f64) {
    let (col, row) = (au % 4, au / 4);
    let s = size as f64;
    (s * (col as f64 + 0.5) / 4.0, s * (row as f64 + 0.5) / 3.0)
}

fn draw_aus(size: usize, aus: &[bool; NUM_AUS]) -> Canvas {
    let mut c = Canvas::new(size, [0.35, 0.35, 0.35]);
    let r = size as f64 / 10.0;
    for (au, _) in aus.iter().enumerate().filter(|(_, on)| **on) {
        let (cx, cy) = au_centre(size, au);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    c.set(x, y, [0.95, 0.95, 0.95]);
                }
            }
        }
    }
    c
}

fn draw_va(size: usize, valence: f64, arousal: f64) -> Canvas {
    Canvas::new(
        size,
        [
            0.5 + 0.4 * valence,
            0.5 + 0.4 * arousal,
            0.5 - 0.2 * (valence + arousal),
        ],
    )
}

fn weighted_category(rng: &mut ChaCha8Rng, weights: &[f64; NUM_EXPRESSIONS]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if x < w {
            return k;
        }
        x -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn latents(task: Task, n: usize, spec: &FixtureSpec, rng: &mut ChaCha8Rng) -> Vec<Latent> {
    let switch = 1.0 / spec.run_length;
    match task {
        Task::Expr => {
            let mut c = weighted_category(rng, &spec.category_weights);
            (0..n)
                .map(|t| {
                    if t > 0 && rng.random::<f64>() < switch {
                        c = weighted_category(rng, &spec.category_weights);
                    }
                    Latent::Expr { category: c }
                })
                .collect()
        }
        Task::Au => {
            let mut aus: [bool; NUM_AUS] = core::array::from_fn(|_| rng.random_bool(0.4));
            (0..n)
                .map(|t| {
                    if t > 0 {
                        for a in aus.iter_mut() {
                            if rng.random::<f64>() < switch {
                                *a = !*a;
                            }
                        }
                    }
                    Latent::Au { aus }
                })
                .collect()
        }
        Task::Va => {
            let mut wave = || {
                let amp = rng.random_range(0.5..0.9);
                let omega = core::f64::consts::TAU / rng.random_range(15.0..40.0);
                let phase = rng.random_range(0.0..core::f64::consts::TAU);
                (amp, omega, phase)
            };
            let (va, vw, vp) = wave();
            let (aa, aw, ap) = wave();
            // Four decimals, as written to the annotation file.
            let q = |v: f64| round(v * 1e4) / 1e4;
            (0..n)
                .map(|t| Latent::Va {
                    valence: q(va * sin(vw * t as f64 + vp)),
                    arousal: q(aa * sin(aw * t as f64 + ap)),
                })
                .collect()
        }
    }
}

fn label_for(t: usize, latents: &[Latent], lag: usize) -> Payload {
    match latents[t] {
        Latent::Va { valence, arousal } => Payload::Va { valence, arousal },
        Latent::Expr { .. } => match t.checked_sub(lag).map(|s| latents[s]) {
            Some(Latent::Expr { category }) => Payload::Expr {
                label: ExpressionId(category as i32),
            },
            _ => Payload::Expr {
                label: ExpressionId(LABEL_SENTINEL),
            },
        },
        Latent::Au { aus } => Payload::Au {
            aus: AuVector(aus.map(i32::from)),
        },
    }
}

fn corrupt(p: Payload, rng: &mut ChaCha8Rng) -> Payload {
    match p {
        Payload::Va { .. } => Payload::Va {
            valence: VA_SENTINEL,
            arousal: VA_SENTINEL,
        },
        Payload::Expr { .. } => Payload::Expr {
            label: ExpressionId(LABEL_SENTINEL),
        },
        Payload::Au { mut aus } => {
            aus.0[rng.random_range(0..NUM_AUS)] = LABEL_SENTINEL;
            Payload::Au { aus }
        }
    }
}

fn render(latent: &Latent, size: usize) -> Canvas {
    match *latent {
        Latent::Va { valence, arousal } => draw_va(size, valence, arousal),
        Latent::Expr { category } => draw_expression(size, category),
        Latent::Au { ref aus } => draw_aus(size, aus),
    }
}

/// Deterministic synthetic dataset for `seed`.
pub fn generate_fixtures(seed: u64, spec: &FixtureSpec) -> Result<FixtureSet> {
    spec.validate()?;
    let mut videos = Vec::new();
    for &task in &spec.tasks {
        for split in Split::ALL {
            let count = match split {
                Split::Train => spec.train_videos,
                Split::Val => spec.val_videos,
            };
            for i in 0..count {
                let video_id = format!("{task}_{split}_{i:03}");
                let stream = fnv1a(video_id.as_bytes());
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream);
                let n = spec.frames_per_video;
                let latents = latents(task, n, spec, &mut rng);
                let mut labels = Vec::with_capacity(n);
                let mut frames = Vec::with_capacity(n);
                for t in 0..n {
                    let mut label = label_for(t, &latents, spec.expr_lag);
                    if rng.random::<f64>() < spec.invalid_fraction {
                        label = corrupt(label, &mut rng);
                    }
                    labels.push(label);
                    frames.push(render(&latents[t], spec.image_size).finish(&mut rng, spec.noise));
                }
                videos.push(FixtureVideo {
                    task,
                    split,
                    video_id,
                    frames,
                    latents,
                    labels,
                });
            }
        }
    }
    Ok(FixtureSet {
        seed,
        spec: spec.clone(),
        videos,
    })
}
