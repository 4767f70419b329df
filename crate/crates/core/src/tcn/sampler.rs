use ndarray::{s, Array2};
use rand::Rng;

use super::model::TcnModel;
use crate::corpus::{Vocabulary, MAX_SEQ_LEN};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax, Scalar};

/// Context window rule for generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Longest context fed to the model.
    pub window: usize,
    /// Context length kept after the window fills up.
    pub truncate_to: usize,
    pub temperature: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            window: MAX_SEQ_LEN,
            truncate_to: 200,
            temperature: 1.0,
        }
    }
}

/// Incremental autoregressive sampler.
///
/// Per-block activations of the current context are cached so that each new
/// character costs one convolution step per layer. When the context reaches
/// `window` characters it is cut back to the latest `truncate_to` and the
/// cache is rebuilt with a full forward pass over the kept characters.
pub struct Sampler<'m, S: Scalar> {
    model: &'m TcnModel<S>,
    config: SamplerConfig,
    context: Vec<u32>,
    /// Per block: inputs and first-conv outputs, `window` rows each.
    xs: Vec<Array2<S>>,
    hs: Vec<Array2<S>>,
    last: Option<ndarray::Array1<S>>,
}

impl<'m, S: Scalar> Sampler<'m, S> {
    pub fn new(model: &'m TcnModel<S>, config: SamplerConfig) -> Result<Self> {
        if config.truncate_to == 0 || config.truncate_to >= config.window || config.window > model.config.max_seq_len {
            return Err(Error::InvalidConfig(format!(
                "sampler window {} / truncation {} invalid for a model with maximum length {}",
                config.window, config.truncate_to, model.config.max_seq_len
            )));
        }
        let c = model.config.embed_dim;
        let blocks = model.blocks.len();
        Ok(Self {
            model,
            config,
            context: Vec::with_capacity(config.window),
            xs: vec![Array2::zeros((config.window, c)); blocks],
            hs: vec![Array2::zeros((config.window, c)); blocks],
            last: None,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn context(&self) -> &[u32] {
        &self.context
    }

    pub fn reset(&mut self) {
        self.context.clear();
        self.last = None;
    }

    /// Replaces the context with the latest characters of `ids`.
    pub fn set_context(&mut self, ids: &[u32]) -> Result<()> {
        let keep = if ids.len() > self.config.window {
            &ids[ids.len() - self.config.truncate_to..]
        } else {
            ids
        };
        self.rebuild(keep)
    }

    fn rebuild(&mut self, ids: &[u32]) -> Result<()> {
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= self.model.vocab_size()) {
            return Err(Error::IdOutOfRange {
                id,
                size: self.model.vocab_size(),
            });
        }
        self.context = ids.to_vec();
        self.last = None;
        if ids.is_empty() {
            return Ok(());
        }
        let (states, out) = self.model.block_states(ids);
        let n = ids.len();
        for (b, st) in states.into_iter().enumerate() {
            self.xs[b].slice_mut(s![..n, ..]).assign(&st.x);
            self.hs[b].slice_mut(s![..n, ..]).assign(&st.h1);
        }
        let logits = self.model.head(&out.slice(s![n - 1..n, ..]).to_owned());
        self.last = Some(logits.row(0).to_owned());
        Ok(())
    }

    /// Appends one character, sliding the window if it is full.
    pub fn push(&mut self, id: u32) -> Result<()> {
        if id as usize >= self.model.vocab_size() {
            return Err(Error::IdOutOfRange {
                id,
                size: self.model.vocab_size(),
            });
        }
        if self.context.len() == self.config.window {
            let keep = self.context[self.context.len() - self.config.truncate_to..].to_vec();
            self.rebuild(&keep)?;
        }
        let t = self.context.len();
        self.context.push(id);
        let mut x = self.model.embedding.row(id as usize).to_owned();
        for (b, block) in self.model.blocks.iter().enumerate() {
            self.xs[b].row_mut(t).assign(&x);
            let taps: Vec<_> = (0..block.conv1.kernel_size())
                .map(|j| {
                    let back = block.conv1.shift(j);
                    (t >= back).then(|| self.xs[b].row(t - back))
                })
                .collect();
            let h1 = block.conv1.forward_step(&taps).mapv(|v| v.max(S::zero()));
            self.hs[b].row_mut(t).assign(&h1);
            let taps: Vec<_> = (0..block.conv2.kernel_size())
                .map(|j| {
                    let back = block.conv2.shift(j);
                    (t >= back).then(|| self.hs[b].row(t - back))
                })
                .collect();
            let h2 = block.conv2.forward_step(&taps).mapv(|v| v.max(S::zero()));
            let res = match &block.projection {
                Some(p) => p.forward(&x.clone().insert_axis(ndarray::Axis(0))).row(0).to_owned(),
                None => x,
            };
            x = (res + h2).mapv(|v| v.max(S::zero()));
        }
        let logits = self.model.head(&x.insert_axis(ndarray::Axis(0)));
        self.last = Some(logits.row(0).to_owned());
        Ok(())
    }

    /// Next-character distribution at the given temperature (0 = one-hot argmax).
    pub fn distribution(&self, temperature: f64) -> Result<Vec<f64>> {
        let logits = self.last.as_ref().ok_or_else(|| Error::InvalidConfig("sampler has no context".into()))?;
        let logits = logits.as_slice().expect("contiguous");
        if temperature <= 0.0 {
            let mut p = vec![0.0; logits.len()];
            p[argmax(logits)] = 1.0;
            return Ok(p);
        }
        Ok(softmax(logits, temperature))
    }

    /// Draws the next character, appends it and returns its id.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<u32> {
        let t = self.config.temperature;
        let id = if t <= 0.0 {
            let logits = self.last.as_ref().ok_or_else(|| Error::InvalidConfig("sampler has no context".into()))?;
            argmax(logits.as_slice().expect("contiguous")) as u32
        } else {
            let p = self.distribution(t)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = p.len() - 1;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick as u32
        };
        self.push(id)?;
        Ok(id)
    }
}

/// Generates `n_chars` characters starting from the context `"<"` (included in the output).
pub fn sample_tags<S: Scalar, R: Rng + ?Sized>(
    model: &TcnModel<S>,
    vocab: &Vocabulary,
    n_chars: usize,
    config: SamplerConfig,
    rng: &mut R,
) -> Result<String> {
    let start = vocab.id('<').ok_or(Error::UnknownChar('<'))?;
    let mut sampler = Sampler::new(model, config)?;
    let mut out = String::with_capacity(n_chars);
    if n_chars == 0 {
        return Ok(out);
    }
    sampler.push(start)?;
    out.push('<');
    for _ in 1..n_chars {
        let id = sampler.sample(rng)?;
        out.push(vocab.char(id).ok_or(Error::IdOutOfRange { id, size: vocab.size() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::softmax;
    use crate::tcn::TcnConfig;

    fn config(vocab: usize) -> TcnConfig {
        TcnConfig {
            name: "sampler".into(),
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8],
            dense1: 16,
            dense2: 12,
            embed_dim: 8,
            dropout: 0.0,
            vocab_size: vocab,
            max_seq_len: 60,
        }
    }

    #[test]
    fn incremental_matches_full_forward_across_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = TcnModel::<f64>::new(config(6), &mut rng).unwrap();
        let sc = SamplerConfig {
            window: 20,
            truncate_to: 15,
            temperature: 1.0,
        };
        let mut sampler = Sampler::new(&model, sc).unwrap();
        let mut max_len = 0;
        for step in 0..70u32 {
            sampler.push(step * 7 % 6).unwrap();
            max_len = max_len.max(sampler.context().len());
            let ctx = sampler.context().to_vec();
            let full = model.logits(&ctx).unwrap();
            let expect = softmax(full.row(ctx.len() - 1).as_slice().unwrap(), 1.0);
            let got = sampler.distribution(1.0).unwrap();
            assert!(expect.iter().zip(&got).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert_eq!(max_len, 20);
    }

    #[test]
    fn greedy_is_deterministic_and_length_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = TcnModel::<f32>::new(config(4), &mut rng).unwrap();
        let vocab = Vocabulary::from_chars("<>ab".chars()).unwrap();
        let sc = SamplerConfig {
            window: 60,
            truncate_to: 48,
            temperature: 0.0,
        };
        let a = sample_tags(&model, &vocab, 300, sc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_tags(&model, &vocab, 300, sc, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.chars().count(), 300);
        assert!(a.starts_with('<'));
    }

    #[test]
    fn rejects_bad_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = TcnModel::<f32>::new(config(4), &mut rng).unwrap();
        let bad = SamplerConfig {
            window: 61,
            truncate_to: 10,
            temperature: 1.0,
        };
        assert!(Sampler::new(&model, bad).is_err());
    }
}
