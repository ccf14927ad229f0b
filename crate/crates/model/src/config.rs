use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qvt_core::attention::{NormAxis, NormMode};
use qvt_core::ortho::LayoutKind;

use crate::data::IMAGE_SIDE;
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// One shared orthogonal transform applied to every token.
    OrthoPatchWise,
    /// Squared-overlap attention with trainable value and coefficient
    /// transforms, class token readout.
    OrthoTransformer,
    /// Whole-grid two-excitation transform across token and feature wires.
    CompoundTransformer,
    /// Dense-matrix attention baseline, class token readout.
    ClassicalVit,
    /// No patching: the whole image embeds into a single token.
    OrthoFnn,
}

impl ArchKind {
    pub fn name(&self) -> &'static str {
        match self {
            ArchKind::OrthoPatchWise => "ortho_patch_wise",
            ArchKind::OrthoTransformer => "ortho_transformer",
            ArchKind::CompoundTransformer => "compound_transformer",
            ArchKind::ClassicalVit => "classical_vit",
            ArchKind::OrthoFnn => "ortho_fnn",
        }
    }

    pub fn uses_class_token(&self) -> bool {
        matches!(self, ArchKind::OrthoTransformer | ArchKind::ClassicalVit)
    }

    pub const ALL: [ArchKind; 5] = [
        ArchKind::OrthoPatchWise,
        ArchKind::OrthoTransformer,
        ArchKind::CompoundTransformer,
        ArchKind::ClassicalVit,
        ArchKind::OrthoFnn,
    ];
}

/// Everything that determines a training run, given the dataset bytes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: ArchKind,
    pub layout: LayoutKind,
    /// Token width d.
    pub dim: usize,
    /// Number of residual blocks.
    pub layers: usize,
    /// MLP hidden width (defaults to 2·dim).
    pub hidden: usize,
    /// Patches per image side; the image splits into patch_grid² tokens.
    pub patch_grid: usize,
    pub attention_norm: NormMode,
    pub attention_axis: NormAxis,
    /// One positional vector shared by all tokens (false) or a separate
    /// vector per token (true).
    pub per_token_positional: bool,
    pub dataset: String,
    pub num_classes: usize,
    pub channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn tokens(&self) -> usize {
        match self.arch {
            ArchKind::OrthoFnn => 1,
            _ => self.patch_grid * self.patch_grid,
        }
    }

    pub fn tokens_with_class(&self) -> usize {
        self.tokens() + usize::from(self.arch.uses_class_token())
    }

    pub fn patch_len(&self) -> usize {
        match self.arch {
            ArchKind::OrthoFnn => IMAGE_SIDE * IMAGE_SIDE * self.channels,
            _ => {
                let side = IMAGE_SIDE / self.patch_grid;
                side * side * self.channels
            }
        }
    }

    /// Wires of the trainable orthogonal transform(s) in one layer.
    pub fn transform_wires(&self) -> usize {
        match self.arch {
            ArchKind::CompoundTransformer => self.tokens() + self.dim,
            _ => self.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(ModelError::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if self.layers == 0 {
            return Err(ModelError::Config("layers must be positive".into()));
        }
        if self.arch != ArchKind::OrthoFnn
            && (self.patch_grid == 0 || IMAGE_SIDE % self.patch_grid != 0)
        {
            return Err(ModelError::Config(format!(
                "patch_grid must divide {IMAGE_SIDE}, got {}",
                self.patch_grid
            )));
        }
        if self.layout == LayoutKind::Butterfly && !self.transform_wires().is_power_of_two() {
            return Err(ModelError::Config(format!(
                "butterfly layout needs a power-of-two wire count, got {}",
                self.transform_wires()
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::Config("epochs and batch_size must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("need at least two classes".into()));
        }
        Ok(())
    }

    /// Stable hash of every field except the seed and the epoch budget:
    /// runs of the same experiment share it, so output directories group by
    /// configuration, and a resumed run with a larger budget lands in the
    /// directory it started in.
    pub fn config_hash(&self) -> String {
        let mut seedless = self.clone();
        seedless.seed = 0;
        seedless.epochs = 0;
        let json = serde_json::to_string(&seedless).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let hex = format!("{:x}", hasher.finalize());
        hex[..8].to_string()
    }
}

fn default_epochs() -> usize {
    100
}

fn default_batch_size() -> usize {
    32
}

fn default_patch_grid() -> usize {
    4
}

fn default_attention_norm() -> NormMode {
    NormMode::Softmax
}

fn default_attention_axis() -> NormAxis {
    NormAxis::Rows
}

/// On-disk experiment description. Unknown keys are rejected so typos fail
/// loudly instead of training the wrong model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub arch: ArchKind,
    pub layout: LayoutKind,
    pub dim: usize,
    pub layers: usize,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default = "default_patch_grid")]
    pub patch_grid: usize,
    #[serde(default = "default_attention_norm")]
    pub attention_norm: NormMode,
    #[serde(default = "default_attention_axis")]
    pub attention_axis: NormAxis,
    #[serde(default)]
    pub per_token_positional: bool,
    pub dataset: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub output_dir: String,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<RunConfigFile> {
        let parsed: RunConfigFile = serde_json::from_str(text)
            .map_err(|e| ModelError::Config(format!("bad run configuration: {e}")))?;
        if parsed.seeds.is_empty() {
            return Err(ModelError::Config("seeds must not be empty".into()));
        }
        Ok(parsed)
    }

    /// Materialize the per-seed network configuration. Class counts and
    /// channels come from the dataset manifest so the checkpoint is
    /// self-describing.
    pub fn network_config(&self, num_classes: usize, channels: usize, seed: u64) -> NetworkConfig {
        NetworkConfig {
            arch: self.arch,
            layout: self.layout,
            dim: self.dim,
            layers: self.layers,
            hidden: self.hidden.unwrap_or(2 * self.dim),
            patch_grid: self.patch_grid,
            attention_norm: self.attention_norm,
            attention_axis: self.attention_axis,
            per_token_positional: self.per_token_positional,
            dataset: self.dataset.clone(),
            num_classes,
            channels,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}
