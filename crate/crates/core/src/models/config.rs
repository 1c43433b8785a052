use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    BiGru,
    BiLstm,
    Transformer,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::BiGru, Arch::BiLstm, Arch::Transformer];

    pub fn is_recurrent(self) -> bool {
        !matches!(self, Arch::Transformer)
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bigru" => Ok(Arch::BiGru),
            "bilstm" => Ok(Arch::BiLstm),
            "transformer" => Ok(Arch::Transformer),
            other => Err(format!("unknown architecture `{other}` (bigru, bilstm, transformer)")),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::BiGru => "bigru",
            Arch::BiLstm => "bilstm",
            Arch::Transformer => "transformer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    Bahdanau,
    Luong,
}

impl std::str::FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bahdanau" => Ok(AttentionKind::Bahdanau),
            "luong" => Ok(AttentionKind::Luong),
            other => Err(format!("unknown attention `{other}` (bahdanau, luong)")),
        }
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionKind::Bahdanau => "bahdanau",
            AttentionKind::Luong => "luong",
        })
    }
}

/// Embedding widths of the four source features. A width of 0 leaves the
/// feature out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub ans: usize,
    pub case: usize,
    pub pos: usize,
    pub ne: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self {
            ans: 4,
            case: 4,
            pos: 16,
            ne: 16,
        }
    }
}

impl FeatureDims {
    pub fn total(&self) -> usize {
        self.ans + self.case + self.pos + self.ne
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub attention: AttentionKind,
    pub use_copy: bool,
    pub use_coverage: bool,
    /// Feed the coverage vector into the attention score (not only the loss).
    pub coverage_in_score: bool,
    pub uncased: bool,
    pub word_dim: usize,
    pub feature_dims: FeatureDims,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub coverage_weight: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Arch::BiGru)
    }
}

impl ModelConfig {
    pub fn new(arch: Arch) -> Self {
        Self {
            arch,
            attention: AttentionKind::Bahdanau,
            use_copy: false,
            use_coverage: false,
            coverage_in_score: true,
            uncased: false,
            word_dim: crate::textprep::DEFAULT_WORD_DIM,
            feature_dims: FeatureDims::default(),
            hidden: 128,
            layers: if arch.is_recurrent() { 1 } else { 2 },
            heads: 4,
            coverage_weight: 1.0,
            dropout: 0.0,
        }
    }

    /// Width of one encoder input row.
    pub fn input_width(&self) -> usize {
        self.word_dim + self.feature_dims.total()
    }

    /// The variant name used in result tables, e.g. `Uncased-Copy-Coverage`.
    pub fn variant_name(&self) -> String {
        let mut parts = vec![if self.uncased { "Uncased" } else { "Cased" }];
        if self.use_copy {
            parts.push("Copy");
        }
        if self.use_coverage {
            parts.push("Coverage");
        }
        parts.join("-")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.arch == Arch::Transformer && self.use_coverage {
            return err("the coverage mechanism is not available for the transformer".into());
        }
        if self.word_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return err("word_dim, hidden and layers must be positive".into());
        }
        if self.arch == Arch::Transformer && (self.heads == 0 || !self.hidden.is_multiple_of(self.heads)) {
            return err(format!("hidden {} is not divisible by {} heads", self.hidden, self.heads));
        }
        if !(self.coverage_weight >= 0.0 && self.coverage_weight.is_finite()) {
            return err(format!("coverage weight {} must be a finite value >= 0", self.coverage_weight));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transformer_with_coverage_is_rejected() {
        let mut c = ModelConfig::new(Arch::Transformer);
        assert!(c.validate().is_ok());
        c.use_coverage = true;
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn variant_names_and_width() {
        let mut c = ModelConfig::default();
        c.uncased = true;
        c.use_copy = true;
        c.use_coverage = true;
        assert_eq!(c.variant_name(), "Uncased-Copy-Coverage");
        assert_eq!(c.input_width(), 300 + 4 + 4 + 16 + 16);
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"arch": "bilstm", "hidden": 8}"#).unwrap();
        assert_eq!(c.arch, Arch::BiLstm);
        assert_eq!(c.hidden, 8);
        assert_eq!(c.word_dim, 300);
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
