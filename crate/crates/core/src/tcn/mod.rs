//! Character-level temporal convolutional network.

mod model;
mod sampler;
mod train;

pub use model::{ResidualBlock, TcnModel};
pub use sampler::{sample_tags, Sampler, SamplerConfig};
pub use train::{evaluate_loss, train, train_model, EarlyStopping, EpochRecord, LossHistory, TrainConfig, TrainOutcome};

use crate::corpus::MAX_SEQ_LEN;
use crate::error::{Error, Result};
use crate::kv::{join, Kv};

#[derive(Debug, Clone, PartialEq)]
pub struct TcnConfig {
    pub name: String,
    pub kernel_size: usize,
    /// One residual block per dilation.
    pub dilations: Vec<usize>,
    pub dense1: usize,
    pub dense2: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

pub const PRESET_NAMES: [&str; 8] = ["cfg01", "cfg02", "cfg03", "cfg04", "cfg05", "cfg06", "cfg07", "cfg08"];

fn powers_of_two(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |d| Some(d * 2))
        .take_while(|&d| d <= max)
        .collect()
}

impl TcnConfig {
    /// One of the eight shipped architectures.
    pub fn preset(name: &str) -> Result<Self> {
        let (k, max_d, d1, d2) = match name {
            "cfg01" => (3, 64, 512, 256),
            "cfg02" => (3, 64, 1024, 512),
            "cfg03" => (5, 32, 512, 256),
            "cfg04" => (5, 32, 1024, 512),
            "cfg05" => (9, 16, 512, 256),
            "cfg06" => (9, 16, 1024, 512),
            "cfg07" => (18, 8, 512, 256),
            "cfg08" => (18, 8, 1024, 512),
            _ => return Err(Error::InvalidConfig(format!("unknown TCN preset {name:?}"))),
        };
        Ok(Self {
            name: name.to_owned(),
            kernel_size: k,
            dilations: powers_of_two(max_d),
            dense1: d1,
            dense2: d2,
            embed_dim: 256,
            dropout: 0.1,
            vocab_size: 107,
            max_seq_len: MAX_SEQ_LEN,
        })
    }

    pub fn presets() -> Vec<Self> {
        PRESET_NAMES.iter().map(|n| Self::preset(n).expect("known preset")).collect()
    }

    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn with_embed_dim(mut self, embed_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel_size, &self.dilations)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.kernel_size == 0 || self.embed_dim == 0 || self.dense1 == 0 || self.dense2 == 0 {
            return bad("kernel size and layer widths must be positive".into());
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad("vocabulary size and sequence length must be positive".into());
        }
        if self.dilations.first() != Some(&1) {
            return bad(format!("dilations must start at 1, got {:?}", self.dilations));
        }
        if self
            .dilations
            .windows(2)
            .any(|w| w[1] <= w[0] || !w[1].is_power_of_two())
        {
            return bad(format!("dilations must be increasing powers of two, got {:?}", self.dilations));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.receptive_field() < self.max_seq_len {
            return bad(format!(
                "receptive field {} is shorter than the maximum sequence length {}",
                self.receptive_field(),
                self.max_seq_len
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Kv {
        let mut kv = Kv::new();
        kv.set("name", &self.name)
            .set("kernel_size", self.kernel_size)
            .set("dilations", join(&self.dilations))
            .set("dense1", self.dense1)
            .set("dense2", self.dense2)
            .set("embed_dim", self.embed_dim)
            .set("dropout", self.dropout)
            .set("vocab_size", self.vocab_size)
            .set("max_seq_len", self.max_seq_len);
        kv
    }

    /// Starts from the preset named by `name` (default `cfg07`) and applies the other keys.
    pub fn from_kv(kv: &Kv) -> Result<Self> {
        let mut c = Self::preset(kv.get("name").unwrap_or("cfg07")).or_else(|_| {
            let mut c = Self::preset("cfg07")?;
            c.name = kv.get("name").unwrap_or("custom").to_owned();
            Ok::<_, Error>(c)
        })?;
        kv.read_into("kernel_size", &mut c.kernel_size)?;
        if let Some(d) = kv.list("dilations")? {
            c.dilations = d;
        }
        kv.read_into("dense1", &mut c.dense1)?;
        kv.read_into("dense2", &mut c.dense2)?;
        kv.read_into("embed_dim", &mut c.embed_dim)?;
        kv.read_into("dropout", &mut c.dropout)?;
        kv.read_into("vocab_size", &mut c.vocab_size)?;
        kv.read_into("max_seq_len", &mut c.max_seq_len)?;
        Ok(c)
    }
}

/// Number of past positions visible to the last output: `1 + Σ 2(k−1)dᵢ`.
pub fn receptive_field(kernel_size: usize, dilations: &[usize]) -> usize {
    1 + dilations
        .iter()
        .map(|d| 2 * kernel_size.saturating_sub(1) * d)
        .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_fields() {
        let rf: Vec<usize> = TcnConfig::presets().iter().map(TcnConfig::receptive_field).collect();
        assert_eq!(rf, vec![509, 509, 505, 505, 497, 497, 511, 511]);
        assert_eq!(receptive_field(1, &[1, 2, 4, 8]), 1);
        for c in TcnConfig::presets() {
            c.validate().unwrap();
        }
    }

    #[test]
    fn receptive_field_matches_brute_force_reachability() {
        // Walk the two-conv-per-block dependency graph backwards from the last position.
        for (k, dil) in [(3usize, vec![1usize, 2]), (2, vec![1, 2, 4]), (5, vec![1])] {
            let mut reach = std::collections::BTreeSet::from([0usize]);
            for &d in &dil {
                for _ in 0..2 {
                    reach = reach.iter().flat_map(|&p| (0..k).map(move |j| p + j * d)).collect();
                }
            }
            assert_eq!(reach.iter().max().unwrap() + 1, receptive_field(k, &dil));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TcnConfig::preset("cfg01").unwrap();
        c.dilations = vec![1, 3];
        assert!(c.validate().is_err());
        let mut c = TcnConfig::preset("cfg01").unwrap();
        c.dilations = vec![1, 2];
        assert!(c.validate().is_err(), "receptive field 9 < 250");
        assert!(TcnConfig::preset("cfg09").is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TcnConfig::preset("cfg03").unwrap();
        c.embed_dim = 32;
        assert_eq!(TcnConfig::from_kv(&c.to_kv()).unwrap(), c);
    }
}
