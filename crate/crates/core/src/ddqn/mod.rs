//! Double deep Q-network agent that picks the next HTML tag.

mod agent;
mod qnet;
mod replay;

pub use agent::{DdqnAgent, TrainStats};
pub use qnet::QNet;
pub use replay::{PrioritizedReplay, ReplaySample, SumTree};

use rand::Rng;

use crate::corpus::EncodedSequence;
use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::nn::argmax;

/// Insertable tags followed by the distinguished CONTINUE action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    tags: Vec<String>,
}

pub const CONTINUE_NAME: &str = "CONTINUE";

impl ActionSpace {
    pub fn new(tags: Vec<String>) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::InvalidConfig("action space needs at least one tag".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &tags {
            if t == CONTINUE_NAME || !seen.insert(t) {
                return Err(Error::InvalidConfig(format!("duplicate or reserved action {t:?}")));
            }
        }
        Ok(Self { tags })
    }

    pub fn len(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn continue_action(&self) -> usize {
        self.tags.len()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Tag name for a tag action, `None` for CONTINUE.
    pub fn tag(&self, action: usize) -> Option<&str> {
        self.tags.get(action).map(String::as_str)
    }

    pub fn name(&self, action: usize) -> &str {
        self.tag(action).unwrap_or(CONTINUE_NAME)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        if name == CONTINUE_NAME {
            return Some(self.continue_action());
        }
        self.tags.iter().position(|t| t == name)
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.len()).map(|a| self.name(a).to_owned()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdqnConfig {
    pub name: String,
    pub convs: Vec<ConvSpec>,
    pub dense: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub target_sync_interval: u64,
    /// Number of most recent characters the agent sees.
    pub state_window: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    pub huber: bool,
    pub replay_capacity: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_anneal_steps: u64,
    pub priority_eps: f64,
}

pub const PRESET_NAMES: [&str; 4] = ["C1", "C2", "C3", "C4"];

impl DdqnConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let conv = |k, s, f| ConvSpec {
            kernel: k,
            stride: s,
            filters: f,
        };
        let (convs, dense) = match name {
            "C1" => (
                vec![conv(8, 2, 8), conv(4, 2, 16), conv(3, 1, 32), conv(3, 1, 64)],
                vec![128, 128, 128, 64],
            ),
            "C2" => (
                vec![conv(8, 2, 16), conv(4, 2, 32), conv(3, 1, 64), conv(3, 1, 64)],
                vec![128, 128, 128, 64],
            ),
            "C3" => (
                vec![conv(8, 2, 16), conv(4, 2, 32), conv(3, 1, 64), conv(3, 1, 64)],
                vec![128, 128, 128, 128],
            ),
            "C4" => (
                vec![conv(8, 2, 32), conv(4, 2, 64), conv(3, 1, 64), conv(3, 1, 64)],
                vec![256, 256],
            ),
            _ => return Err(Error::InvalidConfig(format!("unknown DDQN preset {name:?}"))),
        };
        Ok(Self {
            name: name.to_owned(),
            convs,
            dense,
            learning_rate: 0.000645,
            gamma: 0.99,
            target_sync_interval: 500,
            state_window: 1024,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            batch_size: 32,
            huber: false,
            replay_capacity: 20_000,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            beta_anneal_steps: 50_000,
            priority_eps: 1e-6,
        })
    }

    /// Sequence length after each convolution for the configured state window.
    pub fn conv_lengths(&self) -> Vec<usize> {
        let mut len = self.state_window;
        self.convs
            .iter()
            .map(|c| {
                len = if len < c.kernel { 0 } else { (len - c.kernel) / c.stride + 1 };
                len
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.convs.iter().any(|c| c.kernel == 0 || c.stride == 0 || c.filters == 0) {
            return bad("convolution sizes must be positive".into());
        }
        if self.conv_lengths().last().copied().unwrap_or(self.state_window) == 0 {
            return bad(format!("state window {} too short for the convolution stack", self.state_window));
        }
        if self.dense.contains(&0) {
            return bad("dense widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} not in [0, 1]", self.gamma));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_sync_interval == 0 {
            return bad("batch size, replay capacity and sync interval must be positive".into());
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("beta_start", self.beta_start),
            ("beta_end", self.beta_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} not in [0, 1]"));
            }
        }
        if self.alpha < 0.0 || self.priority_eps <= 0.0 || self.learning_rate <= 0.0 {
            return bad("alpha must be ≥ 0, priority_eps and learning_rate > 0".into());
        }
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_steps: self.epsilon_decay_steps,
        }
    }

    /// Importance exponent after `step` training steps.
    pub fn beta(&self, step: u64) -> f64 {
        let frac = if self.beta_anneal_steps == 0 {
            1.0
        } else {
            (step as f64 / self.beta_anneal_steps as f64).min(1.0)
        };
        self.beta_start + (self.beta_end - self.beta_start) * frac
    }

    pub fn to_kv(&self) -> Kv {
        let convs: Vec<String> = self
            .convs
            .iter()
            .map(|c| format!("{}x{}x{}", c.kernel, c.stride, c.filters))
            .collect();
        let mut kv = Kv::new();
        kv.set("name", &self.name)
            .set("convs", convs.join(","))
            .set("dense", crate::kv::join(&self.dense))
            .set("learning_rate", self.learning_rate)
            .set("gamma", self.gamma)
            .set("target_sync_interval", self.target_sync_interval)
            .set("state_window", self.state_window)
            .set("epsilon_start", self.epsilon_start)
            .set("epsilon_end", self.epsilon_end)
            .set("epsilon_decay_steps", self.epsilon_decay_steps)
            .set("batch_size", self.batch_size)
            .set("huber", self.huber)
            .set("replay_capacity", self.replay_capacity)
            .set("alpha", self.alpha)
            .set("beta_start", self.beta_start)
            .set("beta_end", self.beta_end)
            .set("beta_anneal_steps", self.beta_anneal_steps)
            .set("priority_eps", self.priority_eps);
        kv
    }

    /// Starts from the preset named by `name` (default `C1`) and applies the other keys.
    pub fn from_kv(kv: &Kv) -> Result<Self> {
        let name = kv.get("name").unwrap_or("C1");
        let mut c = Self::preset(name).or_else(|_| {
            let mut c = Self::preset("C1")?;
            c.name = name.to_owned();
            Ok::<_, Error>(c)
        })?;
        if let Some(convs) = kv.list::<String>("convs")? {
            c.convs = convs
                .iter()
                .map(|s| {
                    let parts: Vec<usize> = s
                        .split('x')
                        .map(|p| p.trim().parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::InvalidConfig(format!("bad conv spec {s:?}")))?;
                    match parts[..] {
                        [kernel, stride, filters] => Ok(ConvSpec { kernel, stride, filters }),
                        _ => Err(Error::InvalidConfig(format!("bad conv spec {s:?}, want KxSxF"))),
                    }
                })
                .collect::<Result<_>>()?;
        }
        if let Some(d) = kv.list("dense")? {
            c.dense = d;
        }
        kv.read_into("learning_rate", &mut c.learning_rate)?;
        kv.read_into("gamma", &mut c.gamma)?;
        kv.read_into("target_sync_interval", &mut c.target_sync_interval)?;
        kv.read_into("state_window", &mut c.state_window)?;
        kv.read_into("epsilon_start", &mut c.epsilon_start)?;
        kv.read_into("epsilon_end", &mut c.epsilon_end)?;
        kv.read_into("epsilon_decay_steps", &mut c.epsilon_decay_steps)?;
        kv.read_into("batch_size", &mut c.batch_size)?;
        kv.read_into("huber", &mut c.huber)?;
        kv.read_into("replay_capacity", &mut c.replay_capacity)?;
        kv.read_into("alpha", &mut c.alpha)?;
        kv.read_into("beta_start", &mut c.beta_start)?;
        kv.read_into("beta_end", &mut c.beta_end)?;
        kv.read_into("beta_anneal_steps", &mut c.beta_anneal_steps)?;
        kv.read_into("priority_eps", &mut c.priority_eps)?;
        Ok(c)
    }
}

/// Linear decay from `start` to `end` over `decay_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * (step as f64 / self.decay_steps as f64)
    }
}

/// `(s, a, r, s', terminal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: EncodedSequence,
    pub action: usize,
    pub reward: f64,
    pub next_state: EncodedSequence,
    pub terminal: bool,
}

impl Experience {
    /// Little-endian record: action, reward, terminal flag, then both id lists with u32 lengths.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + 4 * (self.state.len() + self.next_state.len()));
        out.extend_from_slice(&(self.action as u32).to_le_bytes());
        out.extend_from_slice(&self.reward.to_le_bytes());
        out.push(u8::from(self.terminal));
        for seq in [&self.state, &self.next_state] {
            out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
            for id in &seq.ids {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            let slice = bytes
                .get(pos..end)
                .ok_or_else(|| Error::Parse(format!("experience record truncated at byte {pos}")))?;
            pos = end;
            Ok(slice)
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let action = u32_at(take(4)?) as usize;
        let reward = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let terminal = match take(1)?[0] {
            0 => false,
            1 => true,
            v => return Err(Error::Parse(format!("bad terminal flag {v}"))),
        };
        let mut seqs = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = u32_at(take(4)?) as usize;
            let raw = take(n.checked_mul(4).ok_or_else(|| Error::Parse("length overflow".into()))?)?;
            seqs.push(EncodedSequence::new(raw.chunks_exact(4).map(u32_at).collect()));
        }
        if pos != bytes.len() {
            return Err(Error::Parse(format!("{} trailing bytes after experience", bytes.len() - pos)));
        }
        let next_state = seqs.pop().expect("two sequences");
        let state = seqs.pop().expect("two sequences");
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            terminal,
        })
    }
}

/// ε-greedy choice: argmax (lowest index on ties) with probability `1−ε`.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Anything that maps a batch of states to one Q-value vector per state.
pub trait QEstimator {
    fn q_values(&self, states: &[&[u32]]) -> Result<Vec<Vec<f64>>>;
}

/// `y = r` for terminal entries, otherwise `r + γ·Q_target(s′, argmax_a Q_online(s′, a))`.
///
/// Each network is queried once, on the next states of the non-terminal entries only.
pub fn double_q_target<O: QEstimator + ?Sized, T: QEstimator + ?Sized>(
    batch: &[&Experience],
    online: &O,
    target: &T,
    gamma: f64,
) -> Result<Vec<f64>> {
    let open: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    let mut y: Vec<f64> = batch.iter().map(|e| e.reward).collect();
    if open.is_empty() {
        return Ok(y);
    }
    let next: Vec<&[u32]> = open.iter().map(|&i| batch[i].next_state.ids.as_slice()).collect();
    let q_online = online.q_values(&next)?;
    let q_target = target.q_values(&next)?;
    for ((&i, qo), qt) in open.iter().zip(&q_online).zip(&q_target) {
        y[i] += gamma * qt[argmax(qo)];
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    struct Fixed {
        q: Vec<f64>,
        states_seen: Cell<usize>,
        calls: Cell<usize>,
    }

    impl Fixed {
        fn new(q: &[f64]) -> Self {
            Self {
                q: q.to_vec(),
                states_seen: Cell::new(0),
                calls: Cell::new(0),
            }
        }
    }

    impl QEstimator for Fixed {
        fn q_values(&self, states: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
            self.calls.set(self.calls.get() + 1);
            self.states_seen.set(self.states_seen.get() + states.len());
            Ok(states.iter().map(|_| self.q.clone()).collect())
        }
    }

    fn exp(reward: f64, terminal: bool) -> Experience {
        Experience {
            state: EncodedSequence::new(vec![1, 2]),
            action: 0,
            reward,
            next_state: EncodedSequence::new(vec![2, 3]),
            terminal,
        }
    }

    #[test]
    fn double_q_examples() {
        let online = Fixed::new(&[0.2, 0.5]);
        let target = Fixed::new(&[0.3, 0.1]);
        let e = exp(0.0, false);
        let y = double_q_target(&[&e], &online, &target, 0.99).unwrap();
        assert!((y[0] - 0.099).abs() < 1e-12);

        let t = exp(1.038, true);
        assert_eq!(double_q_target(&[&t], &online, &target, 0.99).unwrap(), vec![1.038]);
        assert_eq!(double_q_target(&[&e], &online, &target, 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn each_network_consulted_once_per_open_entry() {
        let online = Fixed::new(&[0.2, 0.5, 0.1]);
        let target = Fixed::new(&[0.3, 0.1, 0.0]);
        let batch = [exp(0.0, false), exp(1.0, true), exp(0.5, false), exp(0.2, false)];
        let refs: Vec<&Experience> = batch.iter().collect();
        double_q_target(&refs, &online, &target, 0.9).unwrap();
        assert_eq!((online.calls.get(), online.states_seen.get()), (1, 3));
        assert_eq!((target.calls.get(), target.states_seen.get()), (1, 3));

        let terminal = [exp(1.0, true)];
        let refs: Vec<&Experience> = terminal.iter().collect();
        let fresh = Fixed::new(&[0.0]);
        double_q_target(&refs, &fresh, &fresh, 0.9).unwrap();
        assert_eq!(fresh.calls.get(), 0);
    }

    #[test]
    fn experience_bytes_round_trip() {
        let e = exp(1.038, true);
        let bytes = e.to_bytes();
        assert_eq!(Experience::from_bytes(&bytes).unwrap(), e);
        for cut in 0..bytes.len() {
            assert!(Experience::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn select_action_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[0.1, 0.9, 0.2], 0.0, &mut rng), 1);
        assert_eq!(select_action(&[0.5, 0.5], 0.0, &mut rng), 0);
    }

    #[test]
    fn epsilon_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 6;
        let n = 100_000;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[select_action(&[0.0, 9.0, 0.0, 0.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        let expected = n as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Upper 1% point of chi-square with 5 degrees of freedom.
        assert!(chi2 < 15.086, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn presets_and_schedules() {
        for name in PRESET_NAMES {
            let c = DdqnConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(DdqnConfig::from_kv(&c.to_kv()).unwrap(), c);
        }
        let c = DdqnConfig::preset("C1").unwrap();
        assert_eq!(c.learning_rate, 0.000645);
        assert_eq!(c.conv_lengths(), vec![509, 253, 251, 249]);
        let e = c.epsilon();
        assert_eq!(e.value(0), 1.0);
        assert!((e.value(25_000) - 0.525).abs() < 1e-12);
        assert_eq!(e.value(1_000_000), 0.05);
        assert_eq!(c.beta(0), 0.4);
        assert_eq!(c.beta(10_000_000), 1.0);
        let mut short = c.clone();
        short.state_window = 16;
        assert!(short.validate().is_err());
    }

    #[test]
    fn action_space_layout() {
        let a = ActionSpace::new(vec!["a".into(), "br".into()]).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.continue_action(), 2);
        assert_eq!(a.name(2), CONTINUE_NAME);
        assert_eq!(a.index_of("br"), Some(1));
        assert!(ActionSpace::new(vec!["a".into(), "a".into()]).is_err());
    }
}
