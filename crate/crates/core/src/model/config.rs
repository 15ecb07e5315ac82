use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Category, DatasetConfig};
use crate::sequence::Layout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub n_heads: usize,
    pub mlp_dim: usize,
    /// Filled in from the dataset vocabulary when left at 0.
    pub vocab_size: usize,
    /// Number of thinking tokens.
    pub k: usize,
    pub depth_bins: usize,
    pub n_categories: usize,
    pub max_seq_len: usize,
    /// Spatial head output per view: (rows, cols, channels).
    pub spatial_feature_shape: [usize; 3],
    pub layout: Layout,
    /// Width of the per-view vision features the heads read.
    pub vision_hidden: usize,
    /// Average-pool factor applied to render grids before projection.
    pub vision_pool: usize,
    pub n_views: usize,
    pub render_height: usize,
    pub render_width: usize,
    pub feature_channels: usize,
    /// Detection slots; objects map to slots in category order.
    pub max_objects: usize,
    /// Depth range of the depth head, meters. 0 means the room diagonal.
    pub d_max: f64,
    pub init_std: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let data = DatasetConfig::default();
        Self {
            n_layers: 2,
            hidden_size: 64,
            n_heads: 4,
            mlp_dim: 256,
            vocab_size: 0,
            k: 8,
            depth_bins: data.depth_bins,
            n_categories: Category::COUNT,
            max_seq_len: 64,
            spatial_feature_shape: data.spatial_shape,
            layout: Layout::default(),
            vision_hidden: 128,
            vision_pool: 2,
            n_views: data.n_views,
            render_height: data.render_height,
            render_width: data.render_width,
            feature_channels: data.feature_channels(),
            max_objects: data.max_objects,
            d_max: 0.0,
            init_std: 0.02,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Copies every data-dependent field from the dataset so model and data agree.
    pub fn fit_to_data(mut self, data: &DatasetConfig, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self.depth_bins = data.depth_bins;
        self.n_categories = Category::COUNT;
        self.spatial_feature_shape = data.spatial_shape;
        self.n_views = data.n_views;
        self.render_height = data.render_height;
        self.render_width = data.render_width;
        self.feature_channels = data.feature_channels();
        self.max_objects = data.max_objects;
        self.d_max = data.room_diagonal();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_heads == 0 || self.hidden_size % self.n_heads != 0 {
            return bad("hidden_size must be divisible by n_heads");
        }
        if self.mlp_dim < self.hidden_size {
            return bad("mlp_dim must be at least hidden_size");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must include the special tokens");
        }
        if self.depth_bins < 2 {
            return bad("depth_bins must be at least 2");
        }
        if self.n_layers == 0 || self.n_views == 0 || self.vision_hidden == 0 || self.max_objects == 0 {
            return bad("n_layers, n_views, vision_hidden and max_objects must be positive");
        }
        if self.vision_pool == 0
            || self.render_height % self.vision_pool != 0
            || self.render_width % self.vision_pool != 0
        {
            return bad("vision_pool must divide the render size");
        }
        let [sh, sw, sc] = self.spatial_feature_shape;
        if sh == 0 || sw == 0 || sc == 0 {
            return bad("spatial_feature_shape must be positive");
        }
        if !(self.d_max > 0.0) {
            return bad("d_max must be positive");
        }
        if 1 + self.k + 2 > self.max_seq_len {
            return bad("max_seq_len too small for k");
        }
        Ok(())
    }

    /// The data-facing shape, for error messages.
    pub fn data_shape(&self) -> String {
        let [sh, sw, sc] = self.spatial_feature_shape;
        format!(
            "vocab {}, {} views of {}x{}x{}, {} depth bins, spatial {}x{}x{}, {} object slots, d_max {:.3}",
            self.vocab_size,
            self.n_views,
            self.render_height,
            self.render_width,
            self.feature_channels,
            self.depth_bins,
            sh,
            sw,
            sc,
            self.max_objects,
            self.d_max
        )
    }

    /// Fails with both shapes when the model cannot consume `data`.
    pub fn check_data(&self, data: &DatasetConfig, vocab_size: usize) -> Result<()> {
        let want = self.clone().fit_to_data(data, vocab_size);
        let same = want.vocab_size == self.vocab_size
            && want.n_views == self.n_views
            && want.render_height == self.render_height
            && want.render_width == self.render_width
            && want.feature_channels == self.feature_channels
            && want.depth_bins == self.depth_bins
            && want.spatial_feature_shape == self.spatial_feature_shape
            && want.max_objects <= self.max_objects
            && want.n_categories == self.n_categories;
        if same {
            Ok(())
        } else {
            Err(Error::Incompatible { checkpoint: self.data_shape(), data: want.data_shape() })
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads
    }

    pub fn pooled_height(&self) -> usize {
        self.render_height / self.vision_pool
    }

    pub fn pooled_width(&self) -> usize {
        self.render_width / self.vision_pool
    }

    /// Length of the per-view input vector: pooled features then pooled depth.
    pub fn vision_input_dim(&self) -> usize {
        self.pooled_height() * self.pooled_width() * (self.feature_channels + 1)
    }

    pub fn pixels(&self) -> usize {
        self.render_height * self.render_width
    }

    pub fn n_pairs(&self) -> usize {
        self.max_objects * (self.max_objects.saturating_sub(1)) / 2
    }
}
