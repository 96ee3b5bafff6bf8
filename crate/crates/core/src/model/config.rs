use crate::corpus::{check_keep_rate, Direction, NUM_RESERVED};

use super::ModelError;

/// Architecture settings shared by both model families.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub z_dim: usize,
    pub direction: Direction,
    /// Also feed z to every decoder step.
    pub concat_z: bool,
    pub highway_layers: usize,
    /// Word-dropout keep rate used during training.
    pub keep_rate: f64,
    /// Share the embedding table with the output projection.
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embedding_dim: 64,
            hidden_dim: 128,
            z_dim: 16,
            direction: Direction::LeftToRight,
            concat_z: false,
            highway_layers: 0,
            keep_rate: 1.0,
            tie_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.vocab_size < NUM_RESERVED {
            return bad("vocab_size must include the 4 reserved ids");
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.z_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.tie_embeddings && self.embedding_dim != self.hidden_dim {
            return bad("tie_embeddings needs embedding_dim == hidden_dim");
        }
        check_keep_rate(self.keep_rate).map_err(|e| ModelError::Config(e.to_string()))
    }

    /// Single-line `key=value` form used in checkpoints.
    pub fn to_line(&self) -> String {
        format!(
            "vocab_size={} embedding_dim={} hidden_dim={} z_dim={} direction={} concat_z={} highway_layers={} keep_rate={} tie_embeddings={}",
            self.vocab_size,
            self.embedding_dim,
            self.hidden_dim,
            self.z_dim,
            self.direction.as_str(),
            self.concat_z,
            self.highway_layers,
            self.keep_rate,
            self.tie_embeddings
        )
    }

    pub fn from_line(line: &str) -> Result<Self, ModelError> {
        let mut cfg = ModelConfig::new(0);
        let mut seen = 0;
        for kv in line.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("expected key=value, got {kv:?}")))?;
            let err = |e: &dyn std::fmt::Display| ModelError::Config(format!("{k}: {e}"));
            match k {
                "vocab_size" => cfg.vocab_size = v.parse().map_err(|e| err(&e))?,
                "embedding_dim" => cfg.embedding_dim = v.parse().map_err(|e| err(&e))?,
                "hidden_dim" => cfg.hidden_dim = v.parse().map_err(|e| err(&e))?,
                "z_dim" => cfg.z_dim = v.parse().map_err(|e| err(&e))?,
                "direction" => cfg.direction = v.parse().map_err(|e| err(&e))?,
                "concat_z" => cfg.concat_z = v.parse().map_err(|e| err(&e))?,
                "highway_layers" => cfg.highway_layers = v.parse().map_err(|e| err(&e))?,
                "keep_rate" => cfg.keep_rate = v.parse().map_err(|e| err(&e))?,
                "tie_embeddings" => cfg.tie_embeddings = v.parse().map_err(|e| err(&e))?,
                _ => return Err(ModelError::Config(format!("unknown key {k:?}"))),
            }
            seen += 1;
        }
        if seen != 9 {
            return Err(ModelError::Config(format!("expected 9 keys, found {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
