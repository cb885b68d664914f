//! Vision transformer over sEMG patch sequences.
//!
//! A window is cut into patches, linearly embedded, prefixed with a learned
//! class token and offset by a learned positional table. `depth` pre-norm
//! encoder layers follow, each `Z' = MSA(LN(Z)) + Z; Z = MLP(LN(Z')) + Z'`,
//! and the class-token row of the final state feeds a linear head.

pub mod checkpoint;
mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{PatchGeometry, PatchLayout};

pub use model::{
    argmax, classify, embed, encoder_layer, forward, forward_window, linear, multi_head_attention,
    predict, scaled_dot_product_attention, self_attention,
};
pub use params::{
    BoundEncoder, BoundLinear, BoundNorm, BoundVit, EncoderParams, Linear, NormParams, ParamInfo,
    VitParams,
};

/// Model rows of the reference configuration table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    I,
    II,
    III,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::I, ModelId::II, ModelId::III];

    pub fn embed_dim(self) -> usize {
        match self {
            ModelId::I => 192,
            ModelId::II => 96,
            ModelId::III => 48,
        }
    }

    pub fn mlp_size(self) -> usize {
        match self {
            ModelId::I => 384,
            ModelId::II => 96,
            ModelId::III => 48,
        }
    }

    /// Trainable-parameter count published for this row (65 classes).
    pub fn published_parameter_count(self) -> usize {
        match self {
            ModelId::I => 340_866,
            ModelId::II => 78_210,
            ModelId::III => 25_314,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(ModelId::I),
            "II" | "2" => Ok(ModelId::II),
            "III" | "3" => Ok(ModelId::III),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (expected I, II or III)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

/// Preset defaults shared by every model row.
pub const PRESET_DEPTH: usize = 1;
pub const PRESET_HEADS: usize = 12;
pub const PRESET_PATCH_SIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub embed_dim: usize,
    pub mlp_size: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub patch_side: usize,
    pub patch_layout: PatchLayout,
    pub num_classes: usize,
    pub num_patches: usize,
    pub patch_dim: usize,
    pub activation: Activation,
    /// LayerNorm on the class token before the head.
    pub head_norm: bool,
    pub qkv_bias: bool,
    pub layer_norm_eps: f64,
}

impl VitConfig {
    /// Preset row with patch geometry derived from the window shape.
    pub fn preset(
        id: ModelId,
        num_classes: usize,
        window: (usize, usize, usize),
        layout: PatchLayout,
    ) -> Result<Self> {
        let geometry = PatchGeometry::new(layout, PRESET_PATCH_SIDE);
        let (num_patches, patch_dim) = geometry.dims(window)?;
        let config = Self {
            embed_dim: id.embed_dim(),
            mlp_size: id.mlp_size(),
            depth: PRESET_DEPTH,
            num_heads: PRESET_HEADS,
            patch_side: PRESET_PATCH_SIDE,
            patch_layout: layout,
            num_classes,
            num_patches,
            patch_dim,
            activation: Activation::Gelu,
            head_norm: true,
            qkv_bias: true,
            layer_norm_eps: 1e-6,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn geometry(&self) -> PatchGeometry {
        PatchGeometry::new(self.patch_layout, self.patch_side)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.mlp_size == 0 || self.num_patches == 0 || self.patch_dim == 0 {
            return fail("mlp_size, num_patches and patch_dim must be positive".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Checks that a window shape produces exactly this config's patch grid.
    pub fn check_window(&self, window: (usize, usize, usize)) -> Result<()> {
        let dims = self.geometry().dims(window)?;
        if dims != (self.num_patches, self.patch_dim) {
            return Err(Error::Shape(format!(
                "window {window:?} gives {} patches of dim {}, model expects {} of dim {}",
                dims.0, dims.1, self.num_patches, self.patch_dim
            )));
        }
        Ok(())
    }
}

/// Exact number of trainable scalars for a configuration.
pub fn parameter_count(config: &VitConfig) -> usize {
    let d = config.embed_dim;
    let linear = |fan_in: usize, fan_out: usize, bias: bool| fan_in * fan_out + usize::from(bias) * fan_out;
    let norm = 2 * d;
    let embedding = linear(config.patch_dim, d, true) + d + (config.num_patches + 1) * d;
    let layer = norm
        + 3 * linear(d, d, config.qkv_bias)
        + linear(d, d, true)
        + norm
        + linear(d, config.mlp_size, true)
        + linear(config.mlp_size, d, true);
    let head = if config.head_norm { norm } else { 0 } + linear(d, config.num_classes, true);
    embedding + config.depth * layer + head
}

/// Our count for one preset next to the published figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterAudit {
    pub model_id: ModelId,
    pub count: usize,
    pub count_without_qkv_bias: usize,
    pub published: usize,
    pub delta: i64,
    pub ratio: f64,
}

/// Audits every preset at the given window geometry and class count.
pub fn audit_presets(
    num_classes: usize,
    window: (usize, usize, usize),
    layout: PatchLayout,
) -> Result<Vec<ParameterAudit>> {
    ModelId::ALL
        .iter()
        .map(|&id| {
            let config = VitConfig::preset(id, num_classes, window, layout)?;
            let count = parameter_count(&config);
            let without = parameter_count(&VitConfig {
                qkv_bias: false,
                ..config
            });
            let published = id.published_parameter_count();
            Ok(ParameterAudit {
                model_id: id,
                count,
                count_without_qkv_bias: without,
                published,
                delta: count as i64 - published as i64,
                ratio: count as f64 / published as f64,
            })
        })
        .collect()
}
