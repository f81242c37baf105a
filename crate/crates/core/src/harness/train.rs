//! Training loop, checkpoint selection and evaluation.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{HeadKind, RunConfig};
use super::frames::{load_batch, FrameSource};
use super::model::{decode, trainable_params, Encoders, Level, Predictions, StageInput, TaskModel};
use crate::clip_align::{contrastive_loss_grad, ProviderRegistry};
use crate::curation::{AuVector, CuratedIndex, ExpressionId, Payload, VaPair};
use crate::evaluation::{metric_au_with_optimized, metric_expr, metric_va, MetricReport, ThresholdVector};
use crate::nn::{quantize_f32, Adam, AdamConfig, ParamStore, Parameterized};
use crate::objectives::{
    bce_logit_grad, binary_cross_entropy, ccc_loss, ccc_loss_grad, cross_entropy, cross_entropy_grad,
};
use crate::tensor::{Matrix, Tensor4};
use crate::{Error, Result, Task};

const SAMPLER_SEED_MIX: u64 = 0x5851_f42d_4c95_7f2d;
const CHUNK: usize = 32;

/// External inputs shared by training, evaluation and prediction.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub frames: &'a dyn FrameSource,
    pub providers: &'a ProviderRegistry,
    /// Weights imported into the backbone before training.
    pub pretrained: Option<&'a ParamStore>,
}

impl<'a> Resources<'a> {
    pub fn new(frames: &'a dyn FrameSource, providers: &'a ProviderRegistry) -> Self {
        Self {
            frames,
            providers,
            pretrained: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub metric: f64,
    /// Mean training loss since the previous evaluation.
    pub train_loss: Option<f64>,
}

/// Result of a training run: the best weights and how they scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: RunConfig,
    /// Step at which the stored weights were taken.
    pub step: usize,
    pub steps_run: usize,
    pub best_metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(default)]
    pub history: Vec<EvalPoint>,
    pub params: ParamStore,
}

impl CheckpointManifest {
    pub fn model(&self) -> Result<TaskModel> {
        let mut model = TaskModel::new(&self.config)?;
        self.params.load_into(&mut model, "")?;
        Ok(model)
    }
}

/// Frames in video order with their keys and labels.
#[derive(Debug, Clone, Default)]
pub struct FrameList {
    pub keys: Vec<(String, u64)>,
    pub labels: Vec<Option<Payload>>,
    /// Consecutive run lengths of each video in `keys`.
    pub videos: Vec<usize>,
}

impl FrameList {
    pub fn from_index(index: &CuratedIndex) -> Self {
        let mut out = Self::default();
        for (vid, frames) in index.videos() {
            out.videos.push(frames.len());
            for f in frames {
                out.keys.push((vid.clone(), f.frame_index));
                out.labels.push(Some(f.payload));
            }
        }
        out
    }

    /// Unlabelled frames, e.g. for prediction.
    pub fn from_keys(videos: &[(String, Vec<u64>)]) -> Self {
        let mut out = Self::default();
        for (vid, frames) in videos {
            out.videos.push(frames.len());
            for &f in frames {
                out.keys.push((vid.clone(), f));
                out.labels.push(None);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn video_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.videos
            .iter()
            .map(|&len| {
                let r = (start, len);
                start += len;
                r
            })
            .collect()
    }

    fn label(&self, i: usize) -> Result<&Payload> {
        self.labels[i]
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("frame {i} has no label")))
    }
}

fn image_size(config: &RunConfig) -> usize {
    config.backbone.config().input_size
}

/// Per-frame inputs at a fixed [`Level`], computed once by the frozen
/// prefix. At [`Level::Image`] frames are read on demand instead.
struct FeatureStore {
    level: Level,
    /// `(c, h, w)` of feature maps; `(dim, 1, 1)` for rows.
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl FeatureStore {
    fn build(model: &TaskModel, encoders: &Encoders, level: Level, list: &FrameList, res: &Resources<'_>, size: usize) -> Result<Self> {
        let mut store = Self {
            level,
            dims: (0, 0, 0),
            data: Vec::new(),
        };
        if level == Level::Image {
            return Ok(store);
        }
        for chunk in (0..list.len()).collect::<Vec<_>>().chunks(CHUNK) {
            let images = load_images(list, chunk, res.frames, size)?;
            let (dims, values) = match (&encoders.provider, &model.backbone) {
                (Some(p), _) => {
                    let m = p.embed_images(&images)?;
                    ((m.cols, 1, 1), m.data)
                }
                (None, Some(bb)) => match level {
                    Level::Trunk => maps(bb.trunk.forward(&images)?),
                    Level::Attended => maps(bb.attention.forward(&bb.trunk.forward(&images)?)?.0),
                    _ => {
                        let m = bb.forward(&images)?;
                        ((m.cols, 1, 1), m.data)
                    }
                },
                (None, None) => return Err(Error::Contract("model has neither backbone nor provider".into())),
            };
            store.dims = dims;
            store.data.extend(values);
        }
        Ok(store)
    }

    fn frame_len(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    fn gather(&self, list: &FrameList, ids: &[usize], frames: &dyn FrameSource, size: usize) -> Result<StageInput> {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(ids.len() * n);
        match self.level {
            Level::Image => Ok(StageInput::Maps(load_images(list, ids, frames, size)?)),
            Level::Embedding => {
                for &i in ids {
                    data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
                }
                Ok(StageInput::Rows(Matrix::from_vec(ids.len(), n, data)?))
            }
            Level::Trunk | Level::Attended => {
                for &i in ids {
                    data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
                }
                let (c, h, w) = self.dims;
                Ok(StageInput::Maps(Tensor4::from_vec(ids.len(), c, h, w, data)?))
            }
        }
    }
}

fn maps(t: Tensor4) -> ((usize, usize, usize), Vec<f64>) {
    ((t.c, t.h, t.w), t.data)
}

fn load_images(list: &FrameList, ids: &[usize], frames: &dyn FrameSource, size: usize) -> Result<Tensor4> {
    let keys: Vec<(&str, u64)> = ids.iter().map(|&i| (list.keys[i].0.as_str(), list.keys[i].1)).collect();
    load_batch(frames, &keys, size)
}

/// Raw per-frame outputs over a whole list, recurrent heads streaming each
/// video from the zero state.
fn infer(model: &TaskModel, store: &FeatureStore, list: &FrameList, frames: &dyn FrameSource, size: usize) -> Result<Matrix> {
    let ids: Vec<usize> = (0..list.len()).collect();
    let mut parts = Vec::new();
    for chunk in ids.chunks(CHUNK) {
        parts.push(model.encode(store.level, &store.gather(list, chunk, frames, size)?)?);
    }
    if parts.is_empty() {
        return Err(Error::Contract("nothing to evaluate".into()));
    }
    let h = Matrix::vstack(&parts)?;
    Ok(model.head_forward(&h, &list.videos)?.0)
}

fn score(task: Task, preds: &Predictions, list: &FrameList, grid: &[f64]) -> Result<MetricReport> {
    match (task, preds) {
        (Task::Va, Predictions::Va(p)) => {
            let t: Vec<VaPair> = (0..list.len()).map(|i| list.label(i).map(|l| l.va().unwrap())).collect::<Result<_>>()?;
            metric_va(p, &t)
        }
        (Task::Expr, Predictions::Expr(p)) => {
            let t: Vec<ExpressionId> = (0..list.len()).map(|i| list.label(i).map(|l| l.expr().unwrap())).collect::<Result<_>>()?;
            metric_expr(p, &t)
        }
        (Task::Au, Predictions::Au(p)) => {
            let t: Vec<AuVector> = (0..list.len()).map(|i| list.label(i).map(|l| l.aus().unwrap())).collect::<Result<_>>()?;
            metric_au_with_optimized(p, &t, grid)
        }
        _ => Err(Error::Contract("prediction kind does not match task".into())),
    }
}

/// Batches of frame ids, grouped into sequences.
enum Sampler {
    /// Shuffled single frames.
    Frames { order: Vec<usize>, cursor: usize },
    /// One contiguous clip from a single video.
    Clip { ranges: Vec<(usize, usize)> },
    /// At most one frame per expression category.
    Distinct { queue: VecDeque<usize>, categories: Vec<usize> },
    /// Non-overlapping windows inside videos.
    Windows { windows: Vec<(usize, usize)>, order: Vec<usize>, cursor: usize },
}

impl Sampler {
    fn new(config: &RunConfig, list: &FrameList) -> Result<Self> {
        let ranges = list.video_ranges();
        Ok(match (config.head, config.clip, config.task) {
            (HeadKind::Lstm, ..) => {
                let mut windows = Vec::new();
                for &(start, len) in &ranges {
                    let mut s = 0;
                    while s < len {
                        windows.push((start + s, config.window.min(len - s)));
                        s += config.window;
                    }
                }
                Sampler::Windows {
                    order: Vec::new(),
                    cursor: 0,
                    windows,
                }
            }
            (HeadKind::Fc, true, _) => Sampler::Distinct {
                queue: VecDeque::new(),
                categories: (0..list.len())
                    .map(|i| list.label(i).map(|l| l.expr().map_or(0, |e| e.0 as usize)))
                    .collect::<Result<_>>()?,
            },
            (HeadKind::Fc, false, Task::Va) => {
                if ranges.iter().all(|r| r.1 < 2) {
                    return Err(Error::Contract("VA training needs a video with at least 2 frames".into()));
                }
                Sampler::Clip { ranges }
            }
            (HeadKind::Fc, false, _) => Sampler::Frames {
                order: Vec::new(),
                cursor: 0,
            },
        })
    }

    fn next(&mut self, rng: &mut ChaCha8Rng, config: &RunConfig, n: usize) -> Vec<Vec<usize>> {
        let bs = config.optimizer.batch_size;
        match self {
            Sampler::Frames { order, cursor } => {
                if *cursor + bs.min(n) > order.len() {
                    *order = (0..n).collect();
                    order.shuffle(rng);
                    *cursor = 0;
                }
                let take = bs.min(n);
                let ids = order[*cursor..*cursor + take].to_vec();
                *cursor += take;
                vec![ids]
            }
            Sampler::Clip { ranges } => {
                let ranges: Vec<&(usize, usize)> = ranges.iter().filter(|r| r.1 >= 2).collect();
                let total: usize = ranges.iter().map(|r| r.1).sum();
                let mut pick = rng.random_range(0..total);
                let &&(start, len) = ranges
                    .iter()
                    .find(|r| {
                        if pick < r.1 {
                            true
                        } else {
                            pick -= r.1;
                            false
                        }
                    })
                    .unwrap();
                let take = bs.min(len);
                let s = start + rng.random_range(0..=len - take);
                vec![(s..s + take).collect()]
            }
            Sampler::Distinct { queue, categories } => {
                let want = bs.min(crate::task::NUM_EXPRESSIONS);
                let mut picked: Vec<usize> = Vec::new();
                let mut seen = [false; crate::task::NUM_EXPRESSIONS];
                let mut deferred = Vec::new();
                let mut refilled = false;
                while picked.len() < want {
                    let Some(i) = queue.pop_front() else {
                        if refilled || picked.len() >= 2 {
                            break;
                        }
                        let mut order: Vec<usize> = (0..n).collect();
                        order.shuffle(rng);
                        queue.extend(order);
                        refilled = true;
                        continue;
                    };
                    let c = categories[i];
                    if seen[c] {
                        deferred.push(i);
                    } else {
                        seen[c] = true;
                        picked.push(i);
                    }
                }
                for i in deferred.into_iter().rev() {
                    queue.push_front(i);
                }
                picked.into_iter().map(|i| vec![i]).collect()
            }
            Sampler::Windows { windows, order, cursor } => {
                let k = config.windows_per_batch().min(windows.len());
                if *cursor + k > order.len() {
                    *order = (0..windows.len()).collect();
                    order.shuffle(rng);
                    *cursor = 0;
                }
                let out = order[*cursor..*cursor + k]
                    .iter()
                    .map(|&w| {
                        let (s, len) = windows[w];
                        (s..s + len).collect()
                    })
                    .collect();
                *cursor += k;
                out
            }
        }
    }
}

/// Loss over a batch and its gradient w.r.t. the raw outputs.
fn loss_grad(
    model: &TaskModel,
    encoders: &Encoders,
    config: &RunConfig,
    z: &Matrix,
    lens: &[usize],
    labels: &[Payload],
) -> Result<(f64, Matrix)> {
    let n = z.rows;
    let mut dz = Matrix::zeros(n, z.cols);
    if let Some(prompts) = encoders.prompts.as_ref().filter(|_| model.adapter.is_some()) {
        // Contrastive loss at each time step over sequences whose frames
        // show distinct categories.
        let starts: Vec<usize> = lens.iter().scan(0, |s, &l| {
            let r = *s;
            *s += l;
            Some(r)
        }).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for t in 0..lens.iter().copied().max().unwrap_or(0) {
            let mut rows = Vec::new();
            let mut cats = Vec::new();
            for (g, &len) in lens.iter().enumerate() {
                if t >= len {
                    continue;
                }
                let r = starts[g] + t;
                let c = labels[r].expr().map_or(0, |e| e.0 as usize);
                if !cats.contains(&c) {
                    rows.push(r);
                    cats.push(c);
                }
            }
            let (loss, d_img, _) = contrastive_loss_grad(
                &z.select_rows(&rows),
                &prompts.select_rows(&cats),
                config.clip_options.temperature,
            )?;
            for (k, &r) in rows.iter().enumerate() {
                dz.row_mut(r).copy_from_slice(d_img.row(k));
            }
            total += loss.total;
            count += 1;
        }
        let scale = 1.0 / count.max(1) as f64;
        dz.data.iter_mut().for_each(|g| *g *= scale);
        return Ok((total * scale, dz));
    }
    let kind = model.kind;
    match config.task {
        Task::Va => {
            if n < 2 {
                return Ok((0.0, dz));
            }
            let pred: Vec<VaPair> = (0..n)
                .map(|r| VaPair {
                    valence: kind.activate(z.at(r, 0)),
                    arousal: kind.activate(z.at(r, 1)),
                })
                .collect();
            let target: Vec<VaPair> = labels.iter().map(|l| l.va().unwrap()).collect();
            let loss = ccc_loss(&pred, &target)?;
            for (r, g) in ccc_loss_grad(&pred, &target)?.into_iter().enumerate() {
                dz.row_mut(r)[0] = g.valence * kind.derivative(z.at(r, 0));
                dz.row_mut(r)[1] = g.arousal * kind.derivative(z.at(r, 1));
            }
            Ok((loss, dz))
        }
        Task::Expr => {
            let mut total = 0.0;
            for (r, l) in labels.iter().enumerate() {
                let label = l.expr().unwrap();
                total += cross_entropy(z.row(r), label)?;
                let g = cross_entropy_grad(z.row(r), label)?;
                dz.row_mut(r).iter_mut().zip(g).for_each(|(d, g)| *d = g / n as f64);
            }
            Ok((total / n as f64, dz))
        }
        Task::Au => {
            let mut total = 0.0;
            for (r, l) in labels.iter().enumerate() {
                let aus = l.aus().unwrap();
                total += binary_cross_entropy(&kind.activate_row(z.row(r)), &aus)?;
                let g = bce_logit_grad(z.row(r), &aus)?;
                dz.row_mut(r).iter_mut().zip(g).for_each(|(d, g)| *d = g / n as f64);
            }
            Ok((total / n as f64, dz))
        }
    }
}

fn check_index(config: &RunConfig, index: &CuratedIndex, what: &str) -> Result<()> {
    if index.task != config.task {
        return Err(Error::Contract(format!(
            "{what} index holds {} annotations but the run is {}",
            index.task, config.task
        )));
    }
    if index.is_empty() {
        return Err(Error::Contract(format!("{what} index is empty")));
    }
    Ok(())
}

struct Evaluator<'a> {
    encoders: &'a Encoders,
    store: FeatureStore,
    list: FrameList,
    grid: Vec<f64>,
    size: usize,
}

impl Evaluator<'_> {
    fn run(&self, model: &TaskModel, frames: &dyn FrameSource) -> Result<MetricReport> {
        let z = infer(model, &self.store, &self.list, frames, self.size)?;
        let preds = decode(model, self.encoders, &z)?;
        score(model.task, &preds, &self.list, &self.grid)
    }
}

fn better(candidate: f64, best: f64) -> bool {
    candidate > best || (best.is_nan() && !candidate.is_nan())
}

/// Train one task head under `config`, keeping the weights with the best
/// validation metric.
pub fn train_task(config: &RunConfig, train: &CuratedIndex, val: &CuratedIndex, res: &Resources<'_>) -> Result<CheckpointManifest> {
    config.validate()?;
    check_index(config, train, "training")?;
    check_index(config, val, "validation")?;
    let mut model = TaskModel::new(config)?;
    if let (Some(store), Some(bb)) = (res.pretrained, model.backbone.as_mut()) {
        bb.import_weights(store, "backbone")?;
    }
    quantize_f32(&mut model);
    let encoders = Encoders::new(config, res.providers)?;
    let level = TaskModel::cache_level(config);
    let size = image_size(config);
    let train_list = FrameList::from_index(train);
    let train_store = FeatureStore::build(&model, &encoders, level, &train_list, res, size)?;
    let val_list = FrameList::from_index(val);
    let evaluator = Evaluator {
        encoders: &encoders,
        store: FeatureStore::build(&model, &encoders, level, &val_list, res, size)?,
        list: val_list,
        grid: config.threshold_grid.clone(),
        size,
    };

    let report = evaluator.run(&model, res.frames)?;
    let mut best = (0usize, report.score, ParamStore::collect(&model, ""), report.clone());
    let mut history = vec![EvalPoint {
        step: 0,
        metric: report.score,
        train_loss: None,
    }];
    let mut stale = 0usize;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SAMPLER_SEED_MIX);
    let mut sampler = Sampler::new(config, &train_list)?;
    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate(),
        ..AdamConfig::default()
    });
    let want_dh = model.has_trainable_prefix(level);
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut steps_run = 0;
    for step in 1..=config.optimizer.steps {
        let groups = sampler.next(&mut rng, config, train_list.len());
        let lens: Vec<usize> = groups.iter().map(Vec::len).collect();
        let ids: Vec<usize> = groups.concat();
        let labels: Vec<Payload> = ids.iter().map(|&i| train_list.label(i).copied()).collect::<Result<_>>()?;

        model.zero_grad();
        let input = train_store.gather(&train_list, &ids, res.frames, size)?;
        let (h, cache) = model.encode_train(level, &input, want_dh)?;
        let (z, traces) = model.head_forward(&h, &lens)?;
        let (loss, dz) = loss_grad(&model, &encoders, config, &z, &lens, &labels)?;
        if let Some(dh) = model.head_backward(&h, &traces, &dz, want_dh) {
            if want_dh {
                model.encode_backward(&cache, &dh);
            }
        }
        adam.step(trainable_params(&mut model, config));
        loss_sum += loss;
        loss_n += 1;
        steps_run = step;

        if step % config.optimizer.eval_every == 0 || step == config.optimizer.steps {
            let mut snapshot = model.clone();
            quantize_f32(&mut snapshot);
            let report = evaluator.run(&snapshot, res.frames)?;
            history.push(EvalPoint {
                step,
                metric: report.score,
                train_loss: Some(loss_sum / loss_n as f64),
            });
            (loss_sum, loss_n) = (0.0, 0);
            if better(report.score, best.1) {
                best = (step, report.score, ParamStore::collect(&snapshot, ""), report);
                stale = 0;
            } else {
                stale += 1;
                if config.optimizer.patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
        }
    }

    let (step, best_metric, params, report) = best;
    Ok(CheckpointManifest {
        config: config.clone(),
        step,
        steps_run,
        best_metric,
        thresholds: report.optimized.as_ref().and_then(|r| r.thresholds),
        report: Some(report),
        history,
        params,
    })
}

/// Score a checkpoint on `index`. AU reports carry both the 0.5 and the
/// optimized-threshold results.
pub fn evaluate_task(manifest: &CheckpointManifest, index: &CuratedIndex, res: &Resources<'_>) -> Result<MetricReport> {
    check_index(&manifest.config, index, "evaluation")?;
    let model = manifest.model()?;
    let encoders = Encoders::new(&manifest.config, res.providers)?;
    let size = image_size(&manifest.config);
    let list = FrameList::from_index(index);
    let evaluator = Evaluator {
        store: FeatureStore::build(&model, &encoders, Level::Embedding, &list, res, size)?,
        encoders: &encoders,
        list,
        grid: manifest.config.threshold_grid.clone(),
        size,
    };
    evaluator.run(&model, res.frames)
}

/// Per-frame predictions for unlabelled frames.
pub fn predict(manifest: &CheckpointManifest, list: &FrameList, res: &Resources<'_>) -> Result<Predictions> {
    let model = manifest.model()?;
    let encoders = Encoders::new(&manifest.config, res.providers)?;
    let size = image_size(&manifest.config);
    let store = FeatureStore::build(&model, &encoders, Level::Embedding, list, res, size)?;
    let z = infer(&model, &store, list, res.frames, size)?;
    decode(&model, &encoders, &z)
}
