use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::grammar::{GrammarConfig, TagGenerator};
use crate::tcn::{Sampler, SamplerConfig, TcnModel};

/// Character source that continues a document.
pub trait Generator {
    /// Starts over with `prefix` as the document so far.
    fn reset(&mut self, prefix: &str) -> Result<()>;

    /// Appends text inserted by someone else.
    fn feed(&mut self, text: &str) -> Result<()>;

    /// Produces and appends the next character.
    fn next_char(&mut self, rng: &mut dyn RngCore) -> Result<char>;
}

/// Autoregressive TCN sampling.
pub struct TcnGenerator<'m> {
    sampler: Sampler<'m, f32>,
    vocab: &'m Vocabulary,
}

impl<'m> TcnGenerator<'m> {
    pub fn new(model: &'m TcnModel<f32>, vocab: &'m Vocabulary, config: SamplerConfig) -> Result<Self> {
        if vocab.size() != model.vocab_size() {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {} characters, model expects {}",
                vocab.size(),
                model.vocab_size()
            )));
        }
        Ok(Self {
            sampler: Sampler::new(model, config)?,
            vocab,
        })
    }
}

impl Generator for TcnGenerator<'_> {
    fn reset(&mut self, prefix: &str) -> Result<()> {
        self.sampler.set_context(&self.vocab.encode_lossy(prefix).ids)
    }

    fn feed(&mut self, text: &str) -> Result<()> {
        for id in self.vocab.encode_lossy(text).ids {
            self.sampler.push(id)?;
        }
        Ok(())
    }

    fn next_char(&mut self, rng: &mut dyn RngCore) -> Result<char> {
        let id = self.sampler.sample(rng)?;
        self.vocab.char(id).ok_or(Error::IdOutOfRange {
            id,
            size: self.vocab.size(),
        })
    }
}

/// Grammar-driven stand-in for the TCN: emits whole random tags, and after a
/// fed `"<name"` finishes a tag of that name.
pub struct GrammarGenerator {
    config: GrammarConfig,
    tags: TagGenerator,
    queue: VecDeque<char>,
    pending: Option<usize>,
}

impl GrammarGenerator {
    pub fn new(config: GrammarConfig) -> Self {
        let tags = TagGenerator::from_config(&config);
        Self {
            config,
            tags,
            queue: VecDeque::new(),
            pending: None,
        }
    }
}

impl Generator for GrammarGenerator {
    fn reset(&mut self, _prefix: &str) -> Result<()> {
        self.queue.clear();
        self.pending = None;
        Ok(())
    }

    fn feed(&mut self, text: &str) -> Result<()> {
        if let Some(name) = text.strip_prefix('<') {
            if let Some(i) = self.config.tags.iter().position(|t| t.name == name) {
                self.queue.clear();
                self.pending = Some(i);
            }
        }
        Ok(())
    }

    fn next_char(&mut self, rng: &mut dyn RngCore) -> Result<char> {
        if let Some(i) = self.pending.take() {
            let spec = &self.config.tags[i];
            let text = self.tags.generate(rng, spec);
            self.queue.extend(text.chars().skip(1 + spec.name.chars().count()));
        }
        while self.queue.is_empty() {
            if self.config.tags.is_empty() {
                return Err(Error::InvalidConfig("grammar has no tags".into()));
            }
            let spec = &self.config.tags[rng.gen_range(0..self.config.tags.len())];
            self.queue.extend(self.tags.generate(rng, spec).chars());
        }
        Ok(self.queue.pop_front().expect("queue refilled"))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn grammar_generator_finishes_fed_tag() {
        let grammar = GrammarConfig::with_seed(0).restricted(&["br", "p"]).unwrap();
        let mut g = GrammarGenerator::new(grammar);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        g.reset("").unwrap();
        g.feed("<br").unwrap();
        let tail: String = (0..200)
            .map(|_| g.next_char(&mut rng).unwrap())
            .take_while(|&c| c != '>')
            .collect();
        let tag = format!("<br{tail}>");
        assert!(tag.starts_with("<br>") || tag.starts_with("<br "), "{tag}");
    }

    #[test]
    fn tcn_generator_emits_vocabulary_characters() {
        use crate::tcn::TcnConfig;
        let vocab = Vocabulary::from_chars("<>abp/ ".chars()).unwrap();
        let config = TcnConfig {
            name: "t".into(),
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8, 16, 32, 64],
            dense1: 8,
            dense2: 8,
            embed_dim: 4,
            dropout: 0.0,
            vocab_size: vocab.size(),
            max_seq_len: 250,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = TcnModel::new(config, &mut rng).unwrap();
        let mut g = TcnGenerator::new(&model, &vocab, SamplerConfig::default()).unwrap();
        g.reset("<html><body>").unwrap();
        g.feed("<p").unwrap();
        for _ in 0..400 {
            let c = g.next_char(&mut rng).unwrap();
            assert!(vocab.id(c).is_some());
        }
    }
}
