use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::qnet::QNet;
use super::{double_q_target, select_action, ActionSpace, DdqnConfig, Experience, PrioritizedReplay};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::nn::{Adam, Params};

/// Summary of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    pub mean_abs_td: f64,
    pub synced: bool,
}

/// Online and target Q-networks with their optimizer and counters.
#[derive(Debug, Clone)]
pub struct DdqnAgent {
    pub config: DdqnConfig,
    pub actions: ActionSpace,
    pub online: QNet<f32>,
    pub target: QNet<f32>,
    adam: Adam<f32>,
    /// Gradient steps taken so far.
    pub train_steps: u64,
    /// Environment steps taken so far; drives the exploration schedule.
    pub env_steps: u64,
}

impl DdqnAgent {
    /// `embedding` is the pre-trained character table `[vocab, embed_dim]`; it stays frozen.
    pub fn new<R: Rng + ?Sized>(config: DdqnConfig, actions: ActionSpace, embedding: Array2<f32>, rng: &mut R) -> Result<Self> {
        let online = QNet::new(&config, embedding, actions.len(), rng)?;
        let target = online.clone();
        let adam = Adam::new(config.learning_rate);
        Ok(Self {
            config,
            actions,
            online,
            target,
            adam,
            train_steps: 0,
            env_steps: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon().value(self.env_steps)
    }

    /// Truncates a document to the state window.
    pub fn state_of<'a>(&self, ids: &'a [u32]) -> &'a [u32] {
        &ids[ids.len().saturating_sub(self.config.state_window)..]
    }

    /// ε-greedy action with an explicit ε.
    pub fn act_with<R: Rng + ?Sized>(&self, state: &[u32], epsilon: f64, rng: &mut R) -> Result<usize> {
        if epsilon >= 1.0 {
            return Ok(rng.gen_range(0..self.actions.len()));
        }
        let q = self.online.q(state)?;
        Ok(select_action(&q, epsilon, rng))
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }

    /// One importance-weighted gradient step on a prioritized batch.
    pub fn train_step<R: Rng + ?Sized>(&mut self, memory: &mut PrioritizedReplay, rng: &mut R) -> Result<TrainStats> {
        let batch_size = self.config.batch_size;
        if memory.len() < batch_size {
            return Err(Error::InsufficientData(format!(
                "replay memory holds {} experiences, batch needs {batch_size}",
                memory.len()
            )));
        }
        let sample = memory.sample(batch_size, self.config.beta(self.train_steps), rng)?;
        let batch: Vec<&Experience> = sample.indices.iter().map(|&i| memory.get(i)).collect();
        let stats = self.fit_batch(&batch, &sample.weights)?;
        memory.update_priorities(&sample.indices, &stats.1);
        Ok(stats.0)
    }

    /// Gradient step on explicit experiences and weights; returns stats and TD errors.
    pub fn fit_batch(&mut self, batch: &[&Experience], weights: &[f64]) -> Result<(TrainStats, Vec<f64>)> {
        let y = double_q_target(batch, &self.online, &self.target, self.config.gamma)?;
        let states: Vec<&[u32]> = batch.iter().map(|e| e.state.ids.as_slice()).collect();
        let (q, trace) = self.online.forward_trace(&states)?;
        let n = batch.len() as f64;
        let mut dq = Array2::<f32>::zeros(q.raw_dim());
        let mut td = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for (i, e) in batch.iter().enumerate() {
            if e.action >= q.ncols() {
                return Err(Error::InvalidConfig(format!("action {} outside {} actions", e.action, q.ncols())));
            }
            let delta = f64::from(q[[i, e.action]]) - y[i];
            let (l, dl) = if self.config.huber && delta.abs() > 1.0 {
                (2.0 * delta.abs() - 1.0, 2.0 * delta.signum())
            } else {
                (delta * delta, 2.0 * delta)
            };
            loss += weights[i] * l / n;
            dq[[i, e.action]] = (weights[i] * dl / n) as f32;
            td.push(delta);
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                context: format!("DDQN train step {}", self.train_steps),
                loss,
            });
        }
        let mut grads = self.online.zeros_like();
        self.online.backward(&trace, &dq, &mut grads);
        self.adam.update(&mut self.online, &grads);
        self.train_steps += 1;
        let synced = self.train_steps.is_multiple_of(self.config.target_sync_interval);
        if synced {
            self.sync_target();
        }
        let mean_abs_td = td.iter().map(|d| d.abs()).sum::<f64>() / n;
        Ok((
            TrainStats {
                loss,
                mean_abs_td,
                synced,
            },
            td,
        ))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut header = self.config.to_kv();
        header
            .set("kind", "ddqn")
            .set("actions", self.actions.tags().join(","))
            .set("train_steps", self.train_steps)
            .set("env_steps", self.env_steps)
            .set("epsilon", self.epsilon())
            .set("embed_vocab", self.online.embedding.nrows())
            .set("embed_dim", self.online.embedding.ncols());
        let mut tensors = vec![("embedding".to_owned(), self.online.embedding.clone().into_dyn())];
        for (name, t) in self.online.tensors() {
            tensors.push((name, t.to_owned()));
        }
        Checkpoint { header, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.header;
        if h.get("kind") != Some("ddqn") {
            return Err(Error::Checkpoint("not a DDQN checkpoint".into()));
        }
        let mut config_kv = Kv::new();
        for (k, v) in h.iter() {
            if !matches!(k, "kind" | "actions" | "train_steps" | "env_steps" | "epsilon" | "embed_vocab" | "embed_dim") {
                config_kv.set(k, v);
            }
        }
        let config = DdqnConfig::from_kv(&config_kv)?;
        let actions = ActionSpace::new(h.require("actions")?.split(',').map(str::to_owned).collect())?;
        let (first, rest) = ckpt
            .tensors
            .split_first()
            .ok_or_else(|| Error::Checkpoint("no tensors".into()))?;
        if first.0 != "embedding" || first.1.ndim() != 2 {
            return Err(Error::Checkpoint("first tensor must be the 2-d embedding".into()));
        }
        let embedding = first
            .1
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut agent = Self::new(config, actions, embedding, &mut rng)?;
        let body = Checkpoint {
            header: Kv::new(),
            tensors: rest.to_vec(),
        };
        body.load_into(&mut agent.online)?;
        agent.sync_target();
        agent.train_steps = h.parse_opt("train_steps")?.unwrap_or(0);
        agent.env_steps = h.parse_opt("env_steps")?.unwrap_or(0);
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
