use ndarray::{Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{DdqnConfig, QEstimator};
use crate::error::{Error, Result};
use crate::nn::{glorot_limit, he_limit, relu, relu_backward, Linear, Params, Scalar, StridedConv};

/// States evaluated per forward pass in [`QEstimator::q_values`].
const CHUNK: usize = 64;

/// Convolutional Q-network over the last `window` characters.
///
/// Characters are looked up in a frozen embedding table; states shorter than
/// the window are left-padded with zero vectors.
#[derive(Debug, Clone)]
pub struct QNet<S: Scalar> {
    pub embedding: Array2<S>,
    pub window: usize,
    pub convs: Vec<StridedConv<S>>,
    pub dense: Vec<Linear<S>>,
    pub output: Linear<S>,
}

/// Activations kept for the backward pass.
pub(crate) struct Trace<S: Scalar> {
    cols: Vec<Array2<S>>,
    conv_out: Vec<Array3<S>>,
    dense_in: Vec<Array2<S>>,
    dense_out: Vec<Array2<S>>,
    head_in: Array2<S>,
}

impl<S: Scalar> QNet<S> {
    pub fn new<R: Rng + ?Sized>(config: &DdqnConfig, embedding: Array2<S>, n_actions: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if n_actions == 0 || embedding.ncols() == 0 {
            return Err(Error::InvalidConfig("Q-network needs actions and a non-empty embedding".into()));
        }
        let mut c_in = embedding.ncols();
        let mut convs = Vec::with_capacity(config.convs.len());
        for spec in &config.convs {
            let fan_in = spec.kernel * c_in;
            convs.push(StridedConv::new(rng, spec.kernel, spec.stride, c_in, spec.filters, he_limit(fan_in)));
            c_in = spec.filters;
        }
        let flat = config.conv_lengths().last().copied().unwrap_or(config.state_window) * c_in;
        let mut width = flat;
        let mut dense = Vec::with_capacity(config.dense.len());
        for &units in &config.dense {
            dense.push(Linear::new(rng, width, units, he_limit(width)));
            width = units;
        }
        let output = Linear::new(rng, width, n_actions, glorot_limit(width, n_actions));
        Ok(Self {
            embedding,
            window: config.state_window,
            convs,
            dense,
            output,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: self.embedding.clone(),
            window: self.window,
            convs: self.convs.iter().map(StridedConv::zeros_like).collect(),
            dense: self.dense.iter().map(Linear::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.output.outputs()
    }

    pub fn zero_output_layer(&mut self) {
        self.output.w.fill(S::zero());
        self.output.b.fill(S::zero());
    }

    /// Copies every trainable tensor of `other` (the embedding is shared by construction).
    pub fn copy_from(&mut self, other: &Self) {
        for (mut dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.assign(&src);
        }
    }

    fn input(&self, states: &[&[u32]]) -> Result<Array3<S>> {
        let vocab = self.embedding.nrows();
        let e = self.embedding.ncols();
        let mut x = Array3::zeros((states.len(), self.window, e));
        for (b, state) in states.iter().enumerate() {
            let ids = &state[state.len().saturating_sub(self.window)..];
            let offset = self.window - ids.len();
            for (t, &id) in ids.iter().enumerate() {
                if id as usize >= vocab {
                    return Err(Error::IdOutOfRange { id, size: vocab });
                }
                x.index_axis_mut(Axis(0), b)
                    .row_mut(offset + t)
                    .assign(&self.embedding.row(id as usize));
            }
        }
        Ok(x)
    }

    pub(crate) fn forward_trace(&self, states: &[&[u32]]) -> Result<(Array2<S>, Trace<S>)> {
        let mut x = self.input(states)?;
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut conv_out = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, c) = conv.forward(&x);
            y.mapv_inplace(|v| v.max(S::zero()));
            cols.push(c);
            conv_out.push(y.clone());
            x = y;
        }
        let (batch, p, f) = x.dim();
        let mut h = x.into_shape_with_order((batch, p * f)).expect("contiguous");
        let mut dense_in = Vec::with_capacity(self.dense.len());
        let mut dense_out = Vec::with_capacity(self.dense.len());
        for layer in &self.dense {
            let mut y = layer.forward(&h);
            relu(&mut y);
            dense_in.push(h);
            dense_out.push(y.clone());
            h = y;
        }
        let q = self.output.forward(&h);
        Ok((
            q,
            Trace {
                cols,
                conv_out,
                dense_in,
                dense_out,
                head_in: h,
            },
        ))
    }

    /// Q-values `[batch, actions]`.
    pub fn forward(&self, states: &[&[u32]]) -> Result<Array2<S>> {
        Ok(self.forward_trace(states)?.0)
    }

    /// Q-values for one state.
    pub fn q(&self, state: &[u32]) -> Result<Vec<f64>> {
        Ok(self.forward(&[state])?.row(0).iter().map(|v| v.f64()).collect())
    }

    /// Accumulates parameter gradients for `dL/dq` into `grads`. The embedding receives none.
    pub(crate) fn backward(&self, trace: &Trace<S>, dq: &Array2<S>, grads: &mut Self) {
        let mut d = self.output.backward(&trace.head_in, dq, &mut grads.output);
        for (i, layer) in self.dense.iter().enumerate().rev() {
            relu_backward(&mut d, &trace.dense_out[i]);
            d = layer.backward(&trace.dense_in[i], &d, &mut grads.dense[i]);
        }
        let last = trace.conv_out.last().expect("at least one convolution");
        let mut d = d.into_shape_with_order(last.raw_dim()).expect("flatten shape");
        for (i, conv) in self.convs.iter().enumerate().rev() {
            d.zip_mut_with(&trace.conv_out[i], |g, &o| {
                if o <= S::zero() {
                    *g = S::zero();
                }
            });
            let input_len = (i > 0).then(|| trace.conv_out[i - 1].dim().1);
            match conv.backward(&trace.cols[i], &d, &mut grads.convs[i], input_len) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    pub fn cast<T: Scalar>(&self) -> QNet<T> {
        let c2 = |a: &Array2<S>| a.mapv(|v| T::of(v.f64()));
        let c1 = |a: &ndarray::Array1<S>| a.mapv(|v| T::of(v.f64()));
        let lin = |l: &Linear<S>| Linear { w: c2(&l.w), b: c1(&l.b) };
        QNet {
            embedding: c2(&self.embedding),
            window: self.window,
            convs: self
                .convs
                .iter()
                .map(|c| StridedConv {
                    w: c2(&c.w),
                    b: c1(&c.b),
                    kernel: c.kernel,
                    stride: c.stride,
                    c_in: c.c_in,
                })
                .collect(),
            dense: self.dense.iter().map(lin).collect(),
            output: lin(&self.output),
        }
    }
}

/// Only the trainable tensors; the embedding is not listed.
impl<S: Scalar> Params<S> for QNet<S> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, S>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            c.push_tensors(&format!("conv{i}"), &mut out);
        }
        for (i, d) in self.dense.iter().enumerate() {
            d.push_tensors(&format!("dense{i}"), &mut out);
        }
        self.output.push_tensors("output", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, S>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            c.push_tensors_mut(&mut out);
        }
        for d in &mut self.dense {
            d.push_tensors_mut(&mut out);
        }
        self.output.push_tensors_mut(&mut out);
        out
    }
}

impl<S: Scalar> QEstimator for QNet<S> {
    fn q_values(&self, states: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(CHUNK) {
            let q = self.forward(chunk)?;
            out.extend(q.rows().into_iter().map(|r| r.iter().map(|v| v.f64()).collect::<Vec<f64>>()));
        }
        Ok(out)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ddqn::ConvSpec;
    use crate::nn::uniform;

    pub(crate) fn tiny_config() -> DdqnConfig {
        let mut c = DdqnConfig::preset("C1").unwrap();
        c.name = "tiny".into();
        c.convs = vec![
            ConvSpec {
                kernel: 4,
                stride: 2,
                filters: 3,
            },
            ConvSpec {
                kernel: 3,
                stride: 1,
                filters: 4,
            },
        ];
        c.dense = vec![6, 5];
        c.state_window = 20;
        c
    }

    fn net(seed: u64) -> QNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = uniform(&mut rng, (7, 3), 0.5);
        QNet::new(&tiny_config(), emb, 4, &mut rng).unwrap()
    }

    #[test]
    fn shapes_for_every_preset() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = uniform::<f32, _>(&mut rng, (107, 8), 0.05);
        for name in super::super::PRESET_NAMES {
            let mut c = DdqnConfig::preset(name).unwrap();
            c.state_window = 128;
            let n = QNet::new(&c, emb.clone(), 11, &mut rng).unwrap();
            let q = n.q(&[1, 2, 3]).unwrap();
            assert_eq!(q.len(), 11);
            assert!(q.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_head_and_determinism() {
        let mut n = net(1);
        let s = [1u32, 2, 3, 4, 5, 6];
        assert_eq!(n.q(&s).unwrap(), n.q(&s).unwrap());
        n.zero_output_layer();
        assert!(n.q(&s).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn long_states_keep_latest_window() {
        let n = net(2);
        let long: Vec<u32> = (0..50).map(|i| i % 7).collect();
        assert_eq!(n.q(&long).unwrap(), n.q(&long[30..]).unwrap());
        assert!(n.q(&[9]).is_err());
    }

    #[test]
    fn batch_equals_single() {
        let n = net(3);
        let a: Vec<u32> = vec![1, 2, 3];
        let b: Vec<u32> = (0..25).map(|i| i % 7).collect();
        let q = n.forward(&[&a, &b]).unwrap();
        let qa = n.q(&a).unwrap();
        assert!(q.row(0).iter().zip(&qa).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut n = net(4);
        // Zero-initialised biases put padded positions exactly on the ReLU kink.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for mut t in n.tensors_mut() {
            t.mapv_inplace(|v| v + rng.gen_range(-0.1..0.1));
        }
        let states: Vec<Vec<u32>> = vec![(0..20).map(|i| (i * 3) % 7).collect(), vec![2, 5, 1, 1, 6, 0, 3, 4, 2, 2, 5]];
        let refs: Vec<&[u32]> = states.iter().map(Vec::as_slice).collect();
        let c: Array2<f64> = uniform(&mut rng, (2, 4), 1.0);
        let loss = |m: &QNet<f64>| (m.forward(&refs).unwrap() * &c).sum();
        let (_, trace) = n.forward_trace(&refs).unwrap();
        let mut g = n.zeros_like();
        n.backward(&trace, &c, &mut g);
        let analytic: Vec<f64> = g.tensors().iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect();
        let mut probe = n.clone();
        let h = 1e-6;
        let mut k = 0;
        let count = probe.tensors().iter().map(|(_, t)| t.len()).sum::<usize>();
        assert_eq!(analytic.len(), count);
        for (idx, &a) in analytic.iter().enumerate() {
            let set = |m: &mut QNet<f64>, delta: f64| {
                let mut seen = 0;
                for mut t in m.tensors_mut() {
                    if idx < seen + t.len() {
                        let v = t.iter_mut().nth(idx - seen).unwrap();
                        *v += delta;
                        return;
                    }
                    seen += t.len();
                }
            };
            set(&mut probe, h);
            let up = loss(&probe);
            set(&mut probe, -2.0 * h);
            let down = loss(&probe);
            set(&mut probe, h);
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (numeric - a).abs() <= 1e-5 * (1.0 + numeric.abs().max(a.abs())),
                "param {idx}: numeric {numeric} analytic {a}"
            );
            k += 1;
        }
        assert_eq!(k, count);
    }
}
