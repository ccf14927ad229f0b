//! Flat parameter vector with a named layout: every tensor gets a range in
//! one contiguous Vec<f64>, and the manifest of (name, shape, range) doubles
//! as the checkpoint payload description.

use std::f64::consts::FRAC_PI_4;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use qvt_core::ortho::OrthoLayer;
use qvt_core::rng::Pcg32;

use crate::config::{ArchKind, NetworkConfig};
use crate::error::Result;

const INIT_STREAM: u64 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug)]
pub enum AttnParams {
    /// One orthogonal transform shared across tokens.
    Shared { v: Range<usize> },
    /// Separate value and coefficient transforms.
    Paired { v: Range<usize>, w: Range<usize> },
    /// One transform across token and feature wires together.
    Grid { v: Range<usize> },
    /// Unconstrained value and coefficient matrices.
    Dense { v: Range<usize>, w: Range<usize> },
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub ln1_gamma: Range<usize>,
    pub ln1_beta: Range<usize>,
    pub attn: AttnParams,
    pub ln2_gamma: Range<usize>,
    pub ln2_beta: Range<usize>,
    pub mlp_w1: Range<usize>,
    pub mlp_b1: Range<usize>,
    pub mlp_w2: Range<usize>,
    pub mlp_b2: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub embed_w: Range<usize>,
    pub embed_b: Range<usize>,
    pub class_token: Option<Range<usize>>,
    pub positional: Range<usize>,
    pub layers: Vec<LayerParams>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
    pub entries: Vec<ParamEntry>,
}

struct Builder {
    entries: Vec<ParamEntry>,
    cursor: usize,
}

impl Builder {
    fn new() -> Self {
        Builder { entries: Vec::new(), cursor: 0 }
    }

    fn add(&mut self, name: String, shape: &[usize]) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.cursor..self.cursor + len;
        self.entries.push(ParamEntry {
            name,
            offset: self.cursor,
            len,
            shape: shape.to_vec(),
        });
        self.cursor += len;
        range
    }
}

/// Trainable rotation angles in one layer's attention block (dense
/// baselines count zero here; their matrix entries are counted separately).
pub fn attention_angles_per_layer(config: &NetworkConfig) -> usize {
    match config.arch {
        ArchKind::OrthoPatchWise | ArchKind::OrthoFnn => {
            OrthoLayer::angle_count(config.layout, config.dim)
        }
        ArchKind::OrthoTransformer => 2 * OrthoLayer::angle_count(config.layout, config.dim),
        ArchKind::CompoundTransformer => {
            OrthoLayer::angle_count(config.layout, config.tokens() + config.dim)
        }
        ArchKind::ClassicalVit => 0,
    }
}

/// Per-layer circuit resources implied by a configuration.
#[derive(Clone, Debug, Serialize)]
pub struct ResourceCensus {
    pub arch: String,
    pub layout: String,
    pub qubits: usize,
    /// Data-loading rotations per attention evaluation. For the grid
    /// transform this is the per-row loading stage (2·n·(d−1)), the
    /// figure-table convention; the built circuit additionally spends n−1
    /// rotations on the norm register and n entangling gates.
    pub loader_gates: usize,
    /// Trainable parameters per layer: rotation angles, or matrix entries
    /// for the dense baseline.
    pub trainable_per_layer: usize,
    pub trainable_total: usize,
    /// Distinct circuit executions per layer on a per-sample forward pass.
    pub distinct_circuits: usize,
}

pub fn census(config: &NetworkConfig) -> ResourceCensus {
    let d = config.dim;
    let tokens = config.tokens();
    let tc = config.tokens_with_class();
    let (qubits, loader_gates, distinct_circuits) = match config.arch {
        ArchKind::OrthoPatchWise | ArchKind::OrthoFnn => (d, d - 1, tokens),
        ArchKind::OrthoTransformer => (d, 3 * (d - 1), tc + tc * tc),
        ArchKind::CompoundTransformer => (tokens + d, 2 * tokens * (d - 1), 1),
        ArchKind::ClassicalVit => (0, 0, 0),
    };
    let trainable_per_layer = match config.arch {
        ArchKind::ClassicalVit => 2 * d * d,
        _ => attention_angles_per_layer(config),
    };
    ResourceCensus {
        arch: config.arch.name().to_string(),
        layout: config.layout.name().to_string(),
        qubits,
        loader_gates,
        trainable_per_layer,
        trainable_total: trainable_per_layer * config.layers,
        distinct_circuits,
    }
}

impl ParamLayout {
    pub fn new(config: &NetworkConfig) -> Result<ParamLayout> {
        config.validate()?;
        let d = config.dim;
        let mut b = Builder::new();
        let embed_w = b.add("embed.w".into(), &[d, config.patch_len()]);
        let embed_b = b.add("embed.b".into(), &[d]);
        let class_token = config
            .arch
            .uses_class_token()
            .then(|| b.add("class_token".into(), &[d]));
        let positional = if config.per_token_positional {
            b.add("positional".into(), &[config.tokens_with_class(), d])
        } else {
            b.add("positional".into(), &[d])
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |name: &str| format!("layer{l}.{name}");
            let ln1_gamma = b.add(p("ln1.gamma"), &[d]);
            let ln1_beta = b.add(p("ln1.beta"), &[d]);
            let attn = match config.arch {
                ArchKind::OrthoPatchWise | ArchKind::OrthoFnn => AttnParams::Shared {
                    v: b.add(p("attn.v"), &[OrthoLayer::angle_count(config.layout, d)]),
                },
                ArchKind::OrthoTransformer => AttnParams::Paired {
                    v: b.add(p("attn.v"), &[OrthoLayer::angle_count(config.layout, d)]),
                    w: b.add(p("attn.w"), &[OrthoLayer::angle_count(config.layout, d)]),
                },
                ArchKind::CompoundTransformer => AttnParams::Grid {
                    v: b.add(
                        p("attn.v"),
                        &[OrthoLayer::angle_count(config.layout, config.tokens() + d)],
                    ),
                },
                ArchKind::ClassicalVit => AttnParams::Dense {
                    v: b.add(p("attn.v"), &[d, d]),
                    w: b.add(p("attn.w"), &[d, d]),
                },
            };
            let ln2_gamma = b.add(p("ln2.gamma"), &[d]);
            let ln2_beta = b.add(p("ln2.beta"), &[d]);
            let mlp_w1 = b.add(p("mlp.w1"), &[config.hidden, d]);
            let mlp_b1 = b.add(p("mlp.b1"), &[config.hidden]);
            let mlp_w2 = b.add(p("mlp.w2"), &[d, config.hidden]);
            let mlp_b2 = b.add(p("mlp.b2"), &[d]);
            layers.push(LayerParams {
                ln1_gamma,
                ln1_beta,
                attn,
                ln2_gamma,
                ln2_beta,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            });
        }
        let head_w = b.add("head.w".into(), &[config.num_classes, d]);
        let head_b = b.add("head.b".into(), &[config.num_classes]);
        Ok(ParamLayout {
            embed_w,
            embed_b,
            class_token,
            positional,
            layers,
            head_w,
            head_b,
            total: b.cursor,
            entries: b.entries,
        })
    }

    /// Seeded initial parameters: dense weights uniform ±1/√fan_in, rotation
    /// angles uniform ±π/4, layer-norm scales one, everything else zero.
    pub fn init_params(&self, config: &NetworkConfig, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.total];
        let mut rng = Pcg32::new(seed, INIT_STREAM);
        let mut fill_uniform = |params: &mut Vec<f64>, range: &Range<usize>, bound: f64| {
            for i in range.clone() {
                params[i] = rng.uniform(-bound, bound);
            }
        };
        let embed_bound = 1.0 / (config.patch_len() as f64).sqrt();
        fill_uniform(&mut params, &self.embed_w, embed_bound);
        let dense_bound = 1.0 / (config.dim as f64).sqrt();
        let hidden_bound = 1.0 / (config.hidden as f64).sqrt();
        for layer in &self.layers {
            params[layer.ln1_gamma.clone()].fill(1.0);
            params[layer.ln2_gamma.clone()].fill(1.0);
            match &layer.attn {
                AttnParams::Shared { v } | AttnParams::Grid { v } => {
                    fill_uniform(&mut params, v, FRAC_PI_4);
                }
                AttnParams::Paired { v, w } => {
                    fill_uniform(&mut params, v, FRAC_PI_4);
                    fill_uniform(&mut params, w, FRAC_PI_4);
                }
                AttnParams::Dense { v, w } => {
                    fill_uniform(&mut params, v, dense_bound);
                    fill_uniform(&mut params, w, dense_bound);
                }
            }
            fill_uniform(&mut params, &layer.mlp_w1, dense_bound);
            fill_uniform(&mut params, &layer.mlp_w2, hidden_bound);
        }
        fill_uniform(&mut params, &self.head_w, dense_bound);
        params
    }
}
