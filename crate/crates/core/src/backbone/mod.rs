//! Feature extractor: mobile face trunk, dual-direction attention and
//! global depthwise pooling to a fixed-width embedding.

mod config;
mod dda;
mod gdconv;
mod trunk;

use alloc::string::String;

pub use config::{BackboneConfig, BackbonePreset, BlockSpec};
pub use dda::{AttentionMaps, Dda, DdaCache, DdaHead, HeadMaps};
pub use gdconv::{GdConv, GdConvCache};
pub use trunk::{Bottleneck, ConvUnit, Trunk, TrunkCache};

use crate::nn::{join, Param, ParamStore, Parameterized, SeededInit};
use crate::tensor::{Matrix, Tensor4};
use crate::Result;

/// `(batch, 3, size, size)` pixels in `[0, 1]` or standardized.
pub type ImageBatch = Tensor4;
/// Trunk output `(batch, C, h, w)`.
pub type FeatureMap = Tensor4;

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub trunk: Trunk,
    pub attention: Dda,
    pub gdconv: GdConv,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    pub trunk: TrunkCache,
    pub attention: DdaCache,
    pub gdconv: GdConvCache,
}

impl BackboneCache {
    pub fn route(&self, h: &mut crate::nn::gradcheck::RouteHasher) {
        self.trunk.route(h);
        self.attention.route(h);
    }
}

impl Backbone {
    /// Fan-in scaled random initialization, fully determined by `seed`.
    pub fn new(config: BackboneConfig, seed: u64) -> Self {
        let mut init = SeededInit::new(seed);
        let trunk = Trunk::new(&config, &mut init);
        let attention = Dda::new(
            config.trunk_channels,
            config.attention_heads,
            config.attention_width(),
            &mut init,
        );
        let gdconv = GdConv::new(config.trunk_channels, config.feature_size(), config.embedding_dim, &mut init);
        Self {
            config,
            trunk,
            attention,
            gdconv,
        }
    }

    pub fn extract_features(&self, images: &ImageBatch) -> Result<FeatureMap> {
        self.trunk.forward(images)
    }

    pub fn dda_attend(&self, features: &FeatureMap) -> Result<(FeatureMap, AttentionMaps)> {
        self.attention.forward(features)
    }

    pub fn gdconv_pool(&self, attended: &FeatureMap) -> Result<Matrix> {
        self.gdconv.forward(attended)
    }

    /// Images to `(batch, embedding_dim)` embeddings.
    pub fn forward(&self, images: &ImageBatch) -> Result<Matrix> {
        let f = self.extract_features(images)?;
        let (a, _) = self.dda_attend(&f)?;
        self.gdconv_pool(&a)
    }

    pub fn forward_train(&self, images: &ImageBatch) -> Result<(Matrix, BackboneCache)> {
        let (f, trunk) = self.trunk.forward_train(images)?;
        let (a, attention) = self.attention.forward_train(&f)?;
        let (e, gdconv) = self.gdconv.forward_train(&a)?;
        Ok((
            e,
            BackboneCache {
                trunk,
                attention,
                gdconv,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BackboneCache, d_embedding: &Matrix) -> Tensor4 {
        let d = self.gdconv.backward(&cache.gdconv, d_embedding);
        let d = self.attention.backward(&cache.attention, &d);
        self.trunk.backward(&cache.trunk, &d)
    }

    /// Load every `backbone.*` tensor present in an external store, e.g.
    /// pretrained weights. Returns the number of tensors loaded.
    pub fn import_weights(&mut self, store: &ParamStore, prefix: &str) -> Result<usize> {
        store.load_matching(self, prefix)
    }
}

impl Parameterized for Backbone {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.trunk.visit_params(&join(prefix, "trunk"), f);
        self.attention.visit_params(&join(prefix, "attention"), f);
        self.gdconv.visit_params(&join(prefix, "gdconv"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.trunk.visit_params_mut(&join(prefix, "trunk"), f);
        self.attention.visit_params_mut(&join(prefix, "attention"), f);
        self.gdconv.visit_params_mut(&join(prefix, "gdconv"), f);
    }
}
