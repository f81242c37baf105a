//! Backbone or contrastive encoder, plus the per-task head, assembled from
//! a [`RunConfig`].

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::{HeadKind, RunConfig};
use crate::backbone::{Backbone, DdaCache, GdConvCache, TrunkCache};
use crate::clip_align::{build_prompts_with, classify, Adapter, AdapterCache, EmbeddingProvider, ProviderRegistry};
use crate::curation::{ExpressionId, VaPair};
use crate::error::Result;
use crate::heads::{FcHead, LstmHead, LstmTrace, OutputKind};
use crate::nn::{join, Param, Parameterized, SeededInit};
use crate::task::{Task, EXPRESSION_NAMES};
use crate::tensor::{Matrix, Tensor4};

const HEAD_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// Where the per-frame input to the trainable part of the model starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Image,
    /// Trunk feature maps.
    Trunk,
    /// Attention-weighted feature maps.
    Attended,
    /// Backbone embeddings, or provider embeddings on the contrastive path.
    Embedding,
}

/// Per-frame input at some [`Level`].
#[derive(Debug, Clone)]
pub enum StageInput {
    Maps(Tensor4),
    Rows(Matrix),
}

#[derive(Debug, Clone)]
pub enum Head {
    Fc(FcHead),
    Lstm(LstmHead),
}

/// All trainable modules of one run.
#[derive(Debug, Clone)]
pub struct TaskModel {
    pub task: Task,
    pub kind: OutputKind,
    pub backbone: Option<Backbone>,
    pub adapter: Option<Adapter>,
    /// `None` on the contrastive fully-connected path, where the adapter
    /// output is the prediction.
    pub head: Option<Head>,
}

#[derive(Debug, Clone, Default)]
pub struct EncodeCache {
    trunk: Option<TrunkCache>,
    attention: Option<DdaCache>,
    gdconv: Option<GdConvCache>,
    adapter: Option<AdapterCache>,
}

impl TaskModel {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut init = SeededInit::new(config.seed ^ HEAD_SEED_MIX);
        let kind = OutputKind::for_task(config.task, config.va_range);
        if config.clip {
            let width = config.clip_options.width;
            let adapter = Adapter::new(width, &mut init);
            let head = match config.head {
                HeadKind::Fc => None,
                HeadKind::Lstm => Some(Head::Lstm(LstmHead::new(
                    OutputKind::Embedding(width),
                    width,
                    config.lstm_hidden,
                    &mut init,
                ))),
            };
            return Ok(Self {
                task: config.task,
                kind,
                backbone: None,
                adapter: Some(adapter),
                head,
            });
        }
        let backbone = Backbone::new(config.backbone.config(), config.seed);
        let dim = backbone.config.embedding_dim;
        let head = match config.head {
            HeadKind::Fc => Head::Fc(FcHead::new(kind, dim, &mut init)),
            HeadKind::Lstm => Head::Lstm(LstmHead::new(kind, dim, config.lstm_hidden, &mut init)),
        };
        Ok(Self {
            task: config.task,
            kind,
            backbone: Some(backbone),
            adapter: None,
            head: Some(head),
        })
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.head, Some(Head::Lstm(_)))
    }

    pub fn input_size(&self) -> usize {
        self.backbone.as_ref().map_or(0, |b| b.config.input_size)
    }

    /// Frozen prefix of the model; everything before it can be cached.
    pub fn cache_level(config: &RunConfig) -> Level {
        let f = config.freeze;
        if config.clip || f.all_frozen() {
            Level::Embedding
        } else if f.backbone && f.attention {
            Level::Attended
        } else if f.backbone {
            Level::Trunk
        } else {
            Level::Image
        }
    }

    /// Inference from `level` up to the head input.
    pub fn encode(&self, level: Level, input: &StageInput) -> Result<Matrix> {
        Ok(self.encode_train(level, input, false)?.0)
    }

    /// Like [`encode`](Self::encode), keeping what backward needs when
    /// `train` is set.
    pub fn encode_train(&self, level: Level, input: &StageInput, train: bool) -> Result<(Matrix, EncodeCache)> {
        let mut cache = EncodeCache::default();
        let rows = match (input, &self.backbone) {
            (StageInput::Rows(m), _) => m.clone(),
            (StageInput::Maps(x), Some(bb)) => {
                let mut x = x.clone();
                if level == Level::Image {
                    if train {
                        let (y, c) = bb.trunk.forward_train(&x)?;
                        cache.trunk = Some(c);
                        x = y;
                    } else {
                        x = bb.trunk.forward(&x)?;
                    }
                }
                if level <= Level::Trunk {
                    if train {
                        let (y, c) = bb.attention.forward_train(&x)?;
                        cache.attention = Some(c);
                        x = y;
                    } else {
                        x = bb.attention.forward(&x)?.0;
                    }
                }
                if train {
                    let (e, c) = bb.gdconv.forward_train(&x)?;
                    cache.gdconv = Some(c);
                    e
                } else {
                    bb.gdconv.forward(&x)?
                }
            }
            (StageInput::Maps(_), None) => {
                return Err(crate::Error::Contract("feature maps given to a model without a backbone".into()))
            }
        };
        match &self.adapter {
            Some(a) if train => {
                let (y, c) = a.forward_train(&rows)?;
                cache.adapter = Some(c);
                Ok((y, cache))
            }
            Some(a) => Ok((a.forward(&rows)?, cache)),
            None => Ok((rows, cache)),
        }
    }

    /// Push head-input gradients back through every cached stage.
    pub fn encode_backward(&mut self, cache: &EncodeCache, d: &Matrix) {
        let mut d = d.clone();
        if let (Some(a), Some(c)) = (self.adapter.as_mut(), cache.adapter.as_ref()) {
            d = a.backward(c, &d);
        }
        let Some(bb) = self.backbone.as_mut() else { return };
        let Some(gc) = cache.gdconv.as_ref() else { return };
        let mut dx = bb.gdconv.backward(gc, &d);
        if let Some(ac) = cache.attention.as_ref() {
            dx = bb.attention.backward(ac, &dx);
        }
        if let Some(tc) = cache.trunk.as_ref() {
            bb.trunk.backward(tc, &dx);
        }
    }

    /// Does any stage before the head need gradients?
    pub fn has_trainable_prefix(&self, level: Level) -> bool {
        self.adapter.is_some() || (self.backbone.is_some() && level < Level::Embedding)
    }

    /// Per-frame raw outputs for a batch of sequences. `groups` partitions
    /// the rows of `h` (in order); recurrent heads run each group from the
    /// zero state.
    pub fn head_forward(&self, h: &Matrix, groups: &[usize]) -> Result<(Matrix, Vec<LstmTrace>)> {
        match &self.head {
            None => Ok((h.clone(), Vec::new())),
            Some(Head::Fc(fc)) => Ok((fc.logits(h)?, Vec::new())),
            Some(Head::Lstm(l)) => {
                let mut traces = Vec::with_capacity(groups.len());
                let mut start = 0;
                for &len in groups {
                    let frames: Vec<&[f64]> = (start..start + len).map(|r| h.row(r)).collect();
                    traces.push(l.run(&frames)?);
                    start += len;
                }
                let parts: Vec<Matrix> = traces.iter().map(|t| t.logits.clone()).collect();
                let width = l.kind.width();
                let out = if parts.is_empty() {
                    Matrix::zeros(0, width)
                } else {
                    Matrix::vstack(&parts)?
                };
                Ok((out, traces))
            }
        }
    }

    /// Head backward; returns gradients w.r.t. the head input when asked.
    pub fn head_backward(
        &mut self,
        h: &Matrix,
        traces: &[LstmTrace],
        dz: &Matrix,
        want_dh: bool,
    ) -> Option<Matrix> {
        match self.head.as_mut() {
            None => Some(dz.clone()),
            Some(Head::Fc(fc)) => {
                let dh = fc.backward(h, dz);
                want_dh.then_some(dh)
            }
            Some(Head::Lstm(l)) => {
                let mut dh = want_dh.then(|| Matrix::zeros(h.rows, h.cols));
                let mut start = 0;
                for tr in traces {
                    let len = tr.steps.len();
                    let rows: Vec<usize> = (start..start + len).collect();
                    let dzg = dz.select_rows(&rows);
                    let dx = l.backward(tr, &dzg, want_dh);
                    if let (Some(dh), Some(dx)) = (dh.as_mut(), dx) {
                        for (t, r) in rows.iter().enumerate() {
                            dh.row_mut(*r).copy_from_slice(dx.row(t));
                        }
                    }
                    start += len;
                }
                dh
            }
        }
    }
}

impl Parameterized for TaskModel {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        if let Some(b) = &self.backbone {
            b.visit_params(&join(prefix, "backbone"), f);
        }
        if let Some(a) = &self.adapter {
            a.visit_params(&join(prefix, "adapter"), f);
        }
        match &self.head {
            Some(Head::Fc(h)) => h.visit_params(&join(prefix, "head"), f),
            Some(Head::Lstm(h)) => h.visit_params(&join(prefix, "head"), f),
            None => {}
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        if let Some(b) = &mut self.backbone {
            b.visit_params_mut(&join(prefix, "backbone"), f);
        }
        if let Some(a) = &mut self.adapter {
            a.visit_params_mut(&join(prefix, "adapter"), f);
        }
        match &mut self.head {
            Some(Head::Fc(h)) => h.visit_params_mut(&join(prefix, "head"), f),
            Some(Head::Lstm(h)) => h.visit_params_mut(&join(prefix, "head"), f),
            None => {}
        }
    }
}

/// Parameters the optimizer may touch under the run's freeze flags.
pub fn trainable_params<'a>(model: &'a mut TaskModel, config: &RunConfig) -> Vec<&'a mut Param> {
    let mut out = Vec::new();
    if let Some(bb) = model.backbone.as_mut() {
        if !config.freeze.backbone {
            out.extend(bb.trunk.params_mut());
        }
        if !config.freeze.attention {
            out.extend(bb.attention.params_mut());
        }
        if !config.freeze.gdconv {
            out.extend(bb.gdconv.params_mut());
        }
    }
    if let Some(a) = model.adapter.as_mut() {
        out.extend(a.params_mut());
    }
    match model.head.as_mut() {
        Some(Head::Fc(h)) => out.extend(h.params_mut()),
        Some(Head::Lstm(h)) => out.extend(h.params_mut()),
        None => {}
    }
    out
}

/// Frozen pieces that sit outside the trainable model: the embedding
/// provider and the prompt embeddings of the contrastive path.
pub struct Encoders {
    pub provider: Option<Box<dyn EmbeddingProvider>>,
    /// One row per expression category.
    pub prompts: Option<Matrix>,
}

impl Encoders {
    pub fn new(config: &RunConfig, providers: &ProviderRegistry) -> Result<Self> {
        if !config.clip {
            return Ok(Self {
                provider: None,
                prompts: None,
            });
        }
        let provider = providers.create(&config.clip_options.provider_spec())?;
        let prompts = build_prompts_with(&EXPRESSION_NAMES, &config.clip_options.template)?;
        let text = provider.embed_texts(&prompts.prompts)?;
        Ok(Self {
            provider: Some(provider),
            prompts: Some(text),
        })
    }
}

/// Decoded per-frame predictions for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Va(Vec<VaPair>),
    Expr(Vec<ExpressionId>),
    /// `(frames, 12)` probabilities.
    Au(Matrix),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Va(v) => v.len(),
            Predictions::Expr(v) => v.len(),
            Predictions::Au(m) => m.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Turn raw outputs into task predictions.
pub fn decode(model: &TaskModel, encoders: &Encoders, z: &Matrix) -> Result<Predictions> {
    let kind = model.kind;
    Ok(match model.task {
        Task::Va => Predictions::Va(
            (0..z.rows)
                .map(|r| VaPair {
                    valence: kind.activate(z.at(r, 0)),
                    arousal: kind.activate(z.at(r, 1)),
                })
                .collect(),
        ),
        Task::Expr => match &encoders.prompts {
            Some(p) if model.adapter.is_some() => {
                Predictions::Expr(classify(z, p)?.into_iter().map(|k| ExpressionId(k as i32)).collect())
            }
            _ => Predictions::Expr((0..z.rows).map(|r| ExpressionId(argmax(z.row(r)) as i32)).collect()),
        },
        Task::Au => {
            let mut m = z.clone();
            m.data.iter_mut().for_each(|v| *v = kind.activate(*v));
            Predictions::Au(m)
        }
    })
}
