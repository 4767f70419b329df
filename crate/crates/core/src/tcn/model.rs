use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::TcnConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::nn::{
    cross_entropy, cross_entropy_loss, dropout_mask, glorot_limit, he_limit, relu, relu_backward, softmax_rows,
    CausalConv, Linear, Params, Scalar,
};

/// Initial convolution weights are small so every block starts close to identity.
const CONV_INIT_STD: f64 = 0.01;
const EMBED_INIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<S: Scalar> {
    pub conv1: CausalConv<S>,
    pub conv2: CausalConv<S>,
    /// 1×1 projection of the skip path when input and output widths differ.
    pub projection: Option<Linear<S>>,
}

impl<S: Scalar> ResidualBlock<S> {
    fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            projection: self.projection.as_ref().map(Linear::zeros_like),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel<S: Scalar> {
    pub config: TcnConfig,
    /// `[vocab_size, embed_dim]`
    pub embedding: Array2<S>,
    pub blocks: Vec<ResidualBlock<S>>,
    pub dense1: Linear<S>,
    pub dense2: Linear<S>,
    pub output: Linear<S>,
}

/// Activations of one block kept for the backward pass.
struct BlockTrace<S: Scalar> {
    x: Array2<S>,
    r1: Array2<S>,
    m1: Option<Array2<S>>,
    h1: Array2<S>,
    r2: Array2<S>,
    m2: Option<Array2<S>>,
    out: Array2<S>,
}

struct Trace<S: Scalar> {
    ids: Vec<u32>,
    blocks: Vec<BlockTrace<S>>,
    z: Array2<S>,
    d1: Array2<S>,
    d2: Array2<S>,
}

/// Per-block inputs and first-conv activations over a whole sequence.
pub(crate) struct BlockStates<S: Scalar> {
    pub x: Array2<S>,
    pub h1: Array2<S>,
}

impl<S: Scalar> TcnModel<S> {
    pub fn new<R: Rng + ?Sized>(config: TcnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim;
        let k = config.kernel_size;
        let conv_limit = CONV_INIT_STD * 3f64.sqrt();
        let embedding = crate::nn::uniform(rng, (config.vocab_size, c), EMBED_INIT);
        let blocks = config
            .dilations
            .iter()
            .map(|&d| ResidualBlock {
                conv1: CausalConv::new(rng, k, c, c, d, conv_limit),
                conv2: CausalConv::new(rng, k, c, c, d, conv_limit),
                projection: None,
            })
            .collect();
        let dense1 = Linear::new(rng, c, config.dense1, he_limit(c));
        let dense2 = Linear::new(rng, config.dense1, config.dense2, he_limit(config.dense1));
        let output = Linear::new(
            rng,
            config.dense2,
            config.vocab_size,
            glorot_limit(config.dense2, config.vocab_size),
        );
        Ok(Self {
            config,
            embedding,
            blocks,
            dense1,
            dense2,
            output,
        })
    }

    /// A gradient accumulator with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            embedding: Array2::zeros(self.embedding.raw_dim()),
            blocks: self.blocks.iter().map(ResidualBlock::zeros_like).collect(),
            dense1: self.dense1.zeros_like(),
            dense2: self.dense2.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    fn check(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.max_seq_len {
            return Err(Error::InvalidConfig(format!(
                "sequence of {} exceeds the maximum length {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        match ids.iter().find(|&&id| id as usize >= self.vocab_size()) {
            Some(&id) => Err(Error::IdOutOfRange {
                id,
                size: self.vocab_size(),
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn embed(&self, ids: &[u32]) -> Array2<S> {
        self.embedding.select(Axis(0), &ids.iter().map(|&i| i as usize).collect::<Vec<_>>())
    }

    pub(crate) fn block_forward(block: &ResidualBlock<S>, x: &Array2<S>) -> (Array2<S>, Array2<S>) {
        let mut h1 = block.conv1.forward(x);
        relu(&mut h1);
        let mut h2 = block.conv2.forward(&h1);
        relu(&mut h2);
        let mut out = match &block.projection {
            Some(p) => p.forward(x),
            None => x.clone(),
        };
        out += &h2;
        relu(&mut out);
        (out, h1)
    }

    /// Final-layer logits from the last block's output rows.
    pub(crate) fn head(&self, z: &Array2<S>) -> Array2<S> {
        let mut d1 = self.dense1.forward(z);
        relu(&mut d1);
        let mut d2 = self.dense2.forward(&d1);
        relu(&mut d2);
        self.output.forward(&d2)
    }

    /// Block inputs and activations for every position (evaluation mode).
    pub(crate) fn block_states(&self, ids: &[u32]) -> (Vec<BlockStates<S>>, Array2<S>) {
        let mut x = self.embed(ids);
        let mut states = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, h1) = Self::block_forward(block, &x);
            states.push(BlockStates { x, h1 });
            x = out;
        }
        (states, x)
    }

    /// Unnormalised next-character scores, one row per input position.
    pub fn logits(&self, ids: &[u32]) -> Result<Array2<S>> {
        self.check(ids)?;
        let mut x = self.embed(ids);
        for block in &self.blocks {
            x = Self::block_forward(block, &x).0;
        }
        Ok(self.head(&x))
    }

    /// Per-position next-character distributions (evaluation mode, no dropout).
    pub fn forward(&self, ids: &[u32]) -> Result<Array2<S>> {
        Ok(softmax_rows(&self.logits(ids)?))
    }

    /// Summed next-character cross-entropy (evaluation mode).
    pub fn loss(&self, input: &[u32], target: &[u32]) -> Result<f64> {
        self.check(target)?;
        Ok(cross_entropy_loss(&self.logits(input)?, target))
    }

    fn forward_train<R: Rng + ?Sized>(&self, ids: &[u32], mut rng: Option<&mut R>) -> (Array2<S>, Trace<S>) {
        let p = self.config.dropout;
        let mut mask = |shape: (usize, usize)| match rng.as_deref_mut() {
            Some(r) if p > 0.0 => Some(dropout_mask(r, shape, p)),
            _ => None,
        };
        let mut x = self.embed(ids);
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let mut r1 = block.conv1.forward(&x);
            relu(&mut r1);
            let m1 = mask(r1.dim());
            let h1 = match &m1 {
                Some(m) => &r1 * m,
                None => r1.clone(),
            };
            let mut r2 = block.conv2.forward(&h1);
            relu(&mut r2);
            let m2 = mask(r2.dim());
            let mut out = match &block.projection {
                Some(pr) => pr.forward(&x),
                None => x.clone(),
            };
            match &m2 {
                Some(m) => out += &(&r2 * m),
                None => out += &r2,
            }
            relu(&mut out);
            let next = out.clone();
            traces.push(BlockTrace {
                x,
                r1,
                m1,
                h1,
                r2,
                m2,
                out,
            });
            x = next;
        }
        let mut d1 = self.dense1.forward(&x);
        relu(&mut d1);
        let mut d2 = self.dense2.forward(&d1);
        relu(&mut d2);
        let logits = self.output.forward(&d2);
        let trace = Trace {
            ids: ids.to_vec(),
            blocks: traces,
            z: x,
            d1,
            d2,
        };
        (logits, trace)
    }

    fn backward(&self, trace: &Trace<S>, dlogits: &Array2<S>, grads: &mut Self) {
        let mut g = self.output.backward(&trace.d2, dlogits, &mut grads.output);
        relu_backward(&mut g, &trace.d2);
        let mut g = self.dense2.backward(&trace.d1, &g, &mut grads.dense2);
        relu_backward(&mut g, &trace.d1);
        let mut g = self.dense1.backward(&trace.z, &g, &mut grads.dense1);
        for ((block, bt), bg) in self.blocks.iter().zip(&trace.blocks).zip(&mut grads.blocks).rev() {
            relu_backward(&mut g, &bt.out);
            let mut d2 = match &bt.m2 {
                Some(m) => &g * m,
                None => g.clone(),
            };
            relu_backward(&mut d2, &bt.r2);
            let dh1 = block.conv2.backward(&bt.h1, &d2, &mut bg.conv2);
            let mut d1 = match &bt.m1 {
                Some(m) => &dh1 * m,
                None => dh1,
            };
            relu_backward(&mut d1, &bt.r1);
            let mut dx = block.conv1.backward(&bt.x, &d1, &mut bg.conv1);
            match (&block.projection, bg.projection.as_mut()) {
                (Some(p), Some(pg)) => dx += &p.backward(&bt.x, &g, pg),
                _ => dx += &g,
            }
            g = dx;
        }
        for (row, &id) in g.rows().into_iter().zip(&trace.ids) {
            let mut dst = grads.embedding.row_mut(id as usize);
            dst += &row;
        }
    }

    /// Accumulates `grad_scale · ∇(summed cross-entropy)` into `grads` and
    /// returns the summed loss. Dropout is active when `rng` is given.
    pub fn accumulate_gradients<R: Rng + ?Sized>(
        &self,
        input: &[u32],
        target: &[u32],
        rng: Option<&mut R>,
        grads: &mut Self,
        grad_scale: S,
    ) -> Result<f64> {
        self.check(input)?;
        self.check(target)?;
        if input.len() != target.len() {
            return Err(Error::InvalidConfig("input and target lengths differ".into()));
        }
        let (logits, trace) = self.forward_train(input, rng);
        let (loss, dlogits) = cross_entropy(&logits, target, grad_scale);
        self.backward(&trace, &dlogits, grads);
        Ok(loss)
    }

    pub fn zero_output_layer(&mut self) {
        self.output.w.fill(S::zero());
        self.output.b.fill(S::zero());
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<T: Scalar>(&self) -> TcnModel<T> {
        let c2 = |a: &Array2<S>| a.mapv(|v| T::of(v.f64()));
        let c1 = |a: &Array1<S>| a.mapv(|v| T::of(v.f64()));
        let lin = |l: &Linear<S>| Linear { w: c2(&l.w), b: c1(&l.b) };
        let conv = |c: &CausalConv<S>| CausalConv {
            w: c.w.mapv(|v| T::of(v.f64())),
            b: c1(&c.b),
            dilation: c.dilation,
        };
        TcnModel {
            config: self.config.clone(),
            embedding: c2(&self.embedding),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlock {
                    conv1: conv(&b.conv1),
                    conv2: conv(&b.conv2),
                    projection: b.projection.as_ref().map(lin),
                })
                .collect(),
            dense1: lin(&self.dense1),
            dense2: lin(&self.dense2),
            output: lin(&self.output),
        }
    }
}

impl<S: Scalar> Params<S> for TcnModel<S> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, S>)> {
        let mut out = vec![("embedding".to_owned(), self.embedding.view().into_dyn())];
        for (i, b) in self.blocks.iter().enumerate() {
            b.conv1.push_tensors(&format!("block{i}.conv1"), &mut out);
            b.conv2.push_tensors(&format!("block{i}.conv2"), &mut out);
            if let Some(p) = &b.projection {
                p.push_tensors(&format!("block{i}.projection"), &mut out);
            }
        }
        self.dense1.push_tensors("dense1", &mut out);
        self.dense2.push_tensors("dense2", &mut out);
        self.output.push_tensors("output", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, S>> {
        let mut out = vec![self.embedding.view_mut().into_dyn()];
        for b in &mut self.blocks {
            b.conv1.push_tensors_mut(&mut out);
            b.conv2.push_tensors_mut(&mut out);
            if let Some(p) = &mut b.projection {
                p.push_tensors_mut(&mut out);
            }
        }
        self.dense1.push_tensors_mut(&mut out);
        self.dense2.push_tensors_mut(&mut out);
        self.output.push_tensors_mut(&mut out);
        out
    }
}

const CONFIG_KEYS: [&str; 9] = [
    "name",
    "kernel_size",
    "dilations",
    "dense1",
    "dense2",
    "embed_dim",
    "dropout",
    "vocab_size",
    "max_seq_len",
];

impl<S: Scalar> TcnModel<S> {
    /// Parameters plus a header echoing the configuration. Callers may add
    /// their own header keys.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut header = self.config.to_kv();
        header.set("kind", "tcn");
        Checkpoint::from_params(header, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.get("kind") != Some("tcn") {
            return Err(Error::Checkpoint("not a TCN checkpoint".into()));
        }
        let mut kv = Kv::new();
        for (k, v) in ckpt.header.iter().filter(|(k, _)| CONFIG_KEYS.contains(k)) {
            kv.set(k, v);
        }
        let config = TcnConfig::from_kv(&kv)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        ckpt.load_into(&mut model)?;
        Ok(model)
    }
}
