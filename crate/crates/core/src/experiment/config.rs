//! Declarative experiment description.
//!
//! Configs live in TOML: flat top-level keys with nested sections for the
//! model, partition, resampling and data paths. Layer stacks are written as
//! compact strings — `"linear:16"`, `"linear:16:nobias"`, `"relu"`,
//! `"sigmoid"`, `"embedding:8"` — with input widths inferred when the
//! segments are built. A config round-trips through TOML losslessly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::ResampleConfig;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkSegment, SegmentRole};
use crate::protocol::TopologyKind;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UseCase {
    Fraud,
    Retail,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticMode {
    Fraud,
    Retail,
}

/// One layer in a config stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerTemplate {
    Linear { out_dim: usize, with_bias: bool },
    Embedding { dim: usize },
    ReLU,
    Sigmoid,
}

impl fmt::Display for LayerTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerTemplate::Linear {
                out_dim,
                with_bias: true,
            } => write!(f, "linear:{out_dim}"),
            LayerTemplate::Linear {
                out_dim,
                with_bias: false,
            } => write!(f, "linear:{out_dim}:nobias"),
            LayerTemplate::Embedding { dim } => write!(f, "embedding:{dim}"),
            LayerTemplate::ReLU => write!(f, "relu"),
            LayerTemplate::Sigmoid => write!(f, "sigmoid"),
        }
    }
}

impl std::str::FromStr for LayerTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["relu"] => Ok(LayerTemplate::ReLU),
            ["sigmoid"] => Ok(LayerTemplate::Sigmoid),
            ["linear", out] | ["linear", out, "bias"] => Ok(LayerTemplate::Linear {
                out_dim: parse_dim(out, s)?,
                with_bias: true,
            }),
            ["linear", out, "nobias"] => Ok(LayerTemplate::Linear {
                out_dim: parse_dim(out, s)?,
                with_bias: false,
            }),
            ["embedding", dim] => Ok(LayerTemplate::Embedding {
                dim: parse_dim(dim, s)?,
            }),
            _ => Err(Error::Config(format!("unknown layer template '{s}'"))),
        }
    }
}

fn parse_dim(text: &str, whole: &str) -> Result<usize> {
    let dim: usize = text
        .parse()
        .map_err(|_| Error::Config(format!("bad dimension in layer template '{whole}'")))?;
    if dim == 0 {
        return Err(Error::Config(format!(
            "zero dimension in layer template '{whole}'"
        )));
    }
    Ok(dim)
}

impl Serialize for LayerTemplate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LayerTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-segment layer stacks. The last linear width of the domain stack is
/// the domain's cut width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub domain: Vec<LayerTemplate>,
    pub server: Vec<LayerTemplate>,
    #[serde(default)]
    pub label_head: Vec<LayerTemplate>,
}

impl ModelConfig {
    /// Dense tabular default: per-domain `linear:16 + relu`, server
    /// `linear:32 + relu + linear:1`, identity-capable head `linear:1`.
    pub fn tabular_default() -> Self {
        Self {
            domain: vec![
                LayerTemplate::Linear {
                    out_dim: 16,
                    with_bias: true,
                },
                LayerTemplate::ReLU,
            ],
            server: vec![
                LayerTemplate::Linear {
                    out_dim: 32,
                    with_bias: true,
                },
                LayerTemplate::ReLU,
                LayerTemplate::Linear {
                    out_dim: 1,
                    with_bias: true,
                },
            ],
            label_head: vec![LayerTemplate::Linear {
                out_dim: 1,
                with_bias: true,
            }],
        }
    }

    /// Implicit-feedback default: per-domain `embedding:16 + linear:16 +
    /// relu`, same server and head as the tabular default.
    pub fn retail_default() -> Self {
        let mut m = Self::tabular_default();
        m.domain = vec![
            LayerTemplate::Embedding { dim: 16 },
            LayerTemplate::Linear {
                out_dim: 16,
                with_bias: true,
            },
            LayerTemplate::ReLU,
        ];
        m
    }
}

/// Materializes a layer stack into a segment. `input_width` is the width of
/// the tensors this segment will receive (for embedding stacks, the number
/// of index columns); `vocab_size` is required when the stack starts with an
/// embedding.
pub fn build_segment(
    role: SegmentRole,
    templates: &[LayerTemplate],
    input_width: usize,
    vocab_size: Option<usize>,
) -> Result<NetworkSegment> {
    if templates.is_empty() {
        return Err(Error::Config("empty layer stack".into()));
    }
    let mut layers = Vec::with_capacity(templates.len());
    let mut width = input_width;
    for (i, t) in templates.iter().enumerate() {
        match t {
            LayerTemplate::Linear { out_dim, with_bias } => {
                layers.push(LayerSpec::Linear {
                    in_dim: width,
                    out_dim: *out_dim,
                    with_bias: *with_bias,
                });
                width = *out_dim;
            }
            LayerTemplate::Embedding { dim } => {
                let vocab = vocab_size.ok_or_else(|| {
                    Error::Config("embedding layer needs a vocabulary size".into())
                })?;
                if i != 0 {
                    return Err(Error::Config(
                        "embedding must be the first layer of a stack".into(),
                    ));
                }
                layers.push(LayerSpec::Embedding {
                    vocab_size: vocab,
                    dim: *dim,
                });
                width = input_width * dim;
            }
            LayerTemplate::ReLU => layers.push(LayerSpec::ReLU),
            LayerTemplate::Sigmoid => layers.push(LayerSpec::Sigmoid),
        }
    }
    NetworkSegment::new(role, layers)
}

/// Builds the U-shaped label head: Xavier-initialized like any segment, then
/// every square linear layer is reset to the identity with zero bias, which
/// makes the default `linear:1` head an exact pass-through until training
/// moves it.
pub fn build_label_head(
    templates: &[LayerTemplate],
    input_width: usize,
    rng: &mut crate::rng::RngState,
) -> Result<NetworkSegment> {
    let mut head = build_segment(SegmentRole::LabelHead, templates, input_width, None)?;
    crate::nn::init_params(&mut head, rng)?;
    let mut param_idx = 0;
    for layer in head.layers().to_vec() {
        if let LayerSpec::Linear {
            in_dim,
            out_dim,
            with_bias,
        } = layer
        {
            if in_dim == out_dim {
                head.params_mut()[param_idx].value = Tensor::identity(in_dim);
                if with_bias {
                    head.params_mut()[param_idx + 1].value = Tensor::zeros(&[1, out_dim]);
                }
            }
            param_idx += 1 + usize::from(with_bias);
        }
    }
    Ok(head)
}

/// Width of the tensor a stack produces for a given input width.
pub fn stack_output_width(templates: &[LayerTemplate], input_width: usize) -> Result<usize> {
    if templates.is_empty() {
        return Err(Error::Config("empty layer stack".into()));
    }
    let mut width = input_width;
    for (i, t) in templates.iter().enumerate() {
        match t {
            LayerTemplate::Linear { out_dim, .. } => width = *out_dim,
            LayerTemplate::Embedding { dim } => {
                if i != 0 {
                    return Err(Error::Config(
                        "embedding must be the first layer of a stack".into(),
                    ));
                }
                width = input_width * dim;
            }
            LayerTemplate::ReLU | LayerTemplate::Sigmoid => {}
        }
    }
    Ok(width)
}

/// Synthetic-data knobs; only the fields for the selected mode matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub mode: SyntheticMode,
    pub rows: usize,
    pub features: usize,
    pub imbalance: f64,
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub positives_per_user: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            mode: SyntheticMode::Fraud,
            rows: 20_000,
            features: 30,
            imbalance: 0.02,
            users: 500,
            items: 200,
            rank: 2,
            positives_per_user: 5,
        }
    }
}

/// File locations for the two real datasets (opt-in; nothing is bundled).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub fraud_csv: Option<PathBuf>,
    pub transactions_csv: Option<PathBuf>,
    pub articles_csv: Option<PathBuf>,
    pub customers_csv: Option<PathBuf>,
    /// Keep only this fraction of retail users (and their transactions),
    /// chosen uniformly; how the small/medium/large retail subsets are cut
    /// from the full dump.
    pub user_sample_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub use_case: UseCase,
    pub topology: TopologyKind,
    pub num_domains: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub metrics_k: usize,
    pub test_fraction: f64,
    pub shuffle: bool,
    /// Ranking evaluation candidate pool: rank the held-out item against
    /// this many sampled non-interacted items instead of the whole catalog.
    /// Unset = rank against every non-train item.
    pub eval_negatives: Option<usize>,
    /// Explicit column → domain map; when absent, the fraud schema uses its
    /// three-domain default and everything else splits contiguously.
    pub partition: Option<BTreeMap<String, usize>>,
    /// Resampling pipeline for the training split; absent = off.
    pub resample: Option<ResampleConfig>,
    /// Layer stacks; when absent, per-use-case defaults apply.
    pub model: Option<ModelConfig>,
    pub synthetic: SyntheticConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            use_case: UseCase::Synthetic,
            topology: TopologyKind::SplitLabelSharing,
            num_domains: 3,
            seed: 42,
            epochs: 10,
            batch_size: 256,
            learning_rate: 0.01,
            metrics_k: 10,
            test_fraction: 0.3,
            shuffle: true,
            eval_negatives: None,
            partition: None,
            resample: None,
            model: None,
            synthetic: SyntheticConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains == 0 {
            return Err(Error::Config("num_domains must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.metrics_k == 0 {
            return Err(Error::Config("metrics_k must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let Some(r) = &self.resample {
            r.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(n) = self.eval_negatives {
            if n == 0 {
                return Err(Error::Config("eval_negatives must be positive".into()));
            }
        }
        if let Some(ratio) = self.data.user_sample_ratio {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::Config(format!(
                    "user_sample_ratio must lie in (0, 1], got {ratio}"
                )));
            }
        }
        match self.use_case {
            UseCase::Fraud => {
                if self.data.fraud_csv.is_none() {
                    return Err(Error::Config(
                        "use_case = fraud requires data.fraud_csv".into(),
                    ));
                }
            }
            UseCase::Retail => {
                if self.data.transactions_csv.is_none()
                    || self.data.articles_csv.is_none()
                    || self.data.customers_csv.is_none()
                {
                    return Err(Error::Config(
                        "use_case = retail requires transactions, articles and customers paths"
                            .into(),
                    ));
                }
            }
            UseCase::Synthetic => {
                let s = &self.synthetic;
                match s.mode {
                    SyntheticMode::Fraud => {
                        if s.rows == 0 || s.features == 0 {
                            return Err(Error::Config("synthetic sizes must be positive".into()));
                        }
                        if !(s.imbalance > 0.0 && s.imbalance < 1.0) {
                            return Err(Error::Config(format!(
                                "imbalance must lie in (0, 1), got {}",
                                s.imbalance
                            )));
                        }
                        if self.num_domains > s.features {
                            return Err(Error::Config(format!(
                                "{} domains cannot share {} features",
                                self.num_domains, s.features
                            )));
                        }
                    }
                    SyntheticMode::Retail => {
                        if s.users == 0 || s.items == 0 || s.rank == 0 {
                            return Err(Error::Config("synthetic sizes must be positive".into()));
                        }
                        if s.positives_per_user < 2 || s.positives_per_user >= s.items {
                            return Err(Error::Config(
                                "positives_per_user must be in 2..items so one can be held out"
                                    .into(),
                            ));
                        }
                    }
                }
            }
        }
        if self.topology == TopologyKind::SplitUShaped {
            let head_empty = self
                .model
                .as_ref()
                .map(|m| m.label_head.is_empty())
                .unwrap_or(false);
            if head_empty {
                return Err(Error::Config(
                    "the U-shaped topology needs a label_head stack".into(),
                ));
            }
        }
        Ok(())
    }

    /// The model stacks in effect: explicit config or the use-case default.
    pub fn resolved_model(&self) -> ModelConfig {
        match &self.model {
            Some(m) => m.clone(),
            None => match (self.use_case, self.synthetic.mode) {
                (UseCase::Retail, _) | (UseCase::Synthetic, SyntheticMode::Retail) => {
                    ModelConfig::retail_default()
                }
                _ => ModelConfig::tabular_default(),
            },
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
