use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{EncoderConfig, ModelConfig, TokenReduction, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderDims {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden size; split evenly across heads.
    pub d: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d: 64,
            ffn_dim: 128,
            max_len: 128,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Linear warmup length; `None` means 10% of the total step budget.
    pub warmup_steps: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub token_reduction: TokenReduction,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            warmup_steps: None,
            epochs: 50,
            batch_size: 16,
            token_reduction: TokenReduction::Sum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// Span macro-F1 over (LF, role) labels on the dev set.
    #[default]
    DevSpanMacroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStoppingConfig {
    pub metric: StopMetric,
    pub patience: usize,
}

impl Default for EarlyStoppingConfig {
    fn default() -> Self {
        Self {
            metric: StopMetric::DevSpanMacroF1,
            patience: 5,
        }
    }
}

/// Everything a training run depends on besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model_variant: Variant,
    pub encoder: EncoderDims,
    pub optimizer: OptimizerConfig,
    pub early_stopping: EarlyStoppingConfig,
    pub seed: u64,
    pub init_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_variant: Variant::G2c,
            encoder: EncoderDims::default(),
            optimizer: OptimizerConfig::default(),
            early_stopping: EarlyStoppingConfig::default(),
            seed: 13,
            init_std: crate::model::DEFAULT_INIT_STD,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let e = &self.encoder;
        let o = &self.optimizer;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if e.n_heads == 0 || e.d == 0 || e.ffn_dim == 0 || e.max_len < 3 {
            return bad("encoder dims must be positive and max_len at least 3");
        }
        if !e.d.is_multiple_of(e.n_heads) {
            return bad("d must be divisible by n_heads");
        }
        if !(0.0..1.0).contains(&e.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if o.epochs == 0 || o.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.early_stopping.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    pub fn model_config(
        &self,
        vocab_size: usize,
        pos_tag_count: usize,
        relation_dim: usize,
        n_sentence_labels: usize,
        n_tags: usize,
    ) -> ModelConfig {
        let v = self.model_variant;
        let e = &self.encoder;
        ModelConfig {
            encoder: EncoderConfig {
                n_layers: e.n_layers,
                n_heads: e.n_heads,
                head_dim: e.d / e.n_heads,
                hidden: e.d,
                ffn_dim: e.ffn_dim,
                max_len: e.max_len,
                vocab_size,
                pos_tag_count,
                relation_dim,
                use_pos_embeddings: v.use_pos_embeddings(),
                use_graph: v.use_graph(),
                scaling: v.scaling(),
                dropout: e.dropout,
                layer_norm_eps: 1e-12,
            },
            n_sentence_labels,
            n_tags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c = RunConfig::from_json(r#"{"model_variant":"baseline","optimizer":{"epochs":3}}"#)
            .unwrap();
        assert_eq!(c.model_variant, Variant::Baseline);
        assert_eq!(c.optimizer.epochs, 3);
        assert_eq!(c.optimizer.learning_rate, 5e-4);
        assert_eq!(c.optimizer.batch_size, 16);
        assert_eq!(c.early_stopping.patience, 5);
        assert_eq!(c.optimizer.warmup_steps, None);
    }

    #[test]
    fn invalid_configs() {
        assert!(RunConfig::from_json(r#"{"model_variant":"bert"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"unknown":1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"encoder":{"d":10,"n_heads":4}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"optimizer":{"learning_rate":0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"early_stopping":{"patience":0}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
