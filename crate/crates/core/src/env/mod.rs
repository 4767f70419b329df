//! Episode environment: the agent picks a tag, a generator amends the document,
//! and the finished test case is scored against a coverage target.

mod generator;
mod train;

pub use generator::{Generator, GrammarGenerator, TcnGenerator};
pub use train::{
    collect_experiences, estimate_avg_blocks, evaluate_checkpoint, train_offline, train_online, EvalPoint,
    OnlineConfig, TrainReport,
};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodedSequence, Vocabulary};
use crate::coverage::TargetHarness;
use crate::ddqn::{select_action, ActionSpace, DdqnAgent, Experience};
use crate::error::{Error, Result};
use crate::grammar::{Source, Template, TestCase};

/// Test case size at which an episode ends.
pub const TARGET_LEN: usize = 12_000;
/// Sampled characters after which a step ends even without a closing `>`.
pub const MAX_STEP_CHARS: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub target_len: usize,
    pub max_step_chars: usize,
    /// Optional cap on agent actions per episode.
    pub max_actions: Option<usize>,
    /// Characters of the document the agent observes.
    pub state_window: usize,
    /// Reseeds the generator at every reset, making episodes a function of the actions.
    pub generator_seed: Option<u64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            target_len: TARGET_LEN,
            max_step_chars: MAX_STEP_CHARS,
            max_actions: None,
            state_window: 1024,
            generator_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSpec {
    pub target_len: usize,
    /// Mean block count of test cases from the generator alone.
    pub tcn_avg_blocks: f64,
}

impl RewardSpec {
    pub fn new(target_len: usize, tcn_avg_blocks: f64) -> Result<Self> {
        if !(tcn_avg_blocks > 0.0 && tcn_avg_blocks.is_finite()) {
            return Err(Error::InvalidConfig(format!("average block count {tcn_avg_blocks} must be positive")));
        }
        Ok(Self {
            target_len,
            tcn_avg_blocks,
        })
    }

    pub fn reward(&self, blocks: usize) -> f64 {
        blocks as f64 / self.tcn_avg_blocks
    }
}

/// Document under construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeState {
    pub partial_doc: String,
    prefix_chars: usize,
    pub chars_emitted: usize,
    pub actions_taken: Vec<usize>,
}

impl EpisodeState {
    /// Text after the template prefix.
    pub fn body(&self) -> &str {
        let start = self
            .partial_doc
            .char_indices()
            .nth(self.prefix_chars)
            .map_or(self.partial_doc.len(), |(i, _)| i);
        &self.partial_doc[start..]
    }

    fn push(&mut self, text: &str) {
        self.partial_doc.push_str(text);
        self.chars_emitted += text.chars().count();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    /// Block count of the finished test case on terminal steps.
    pub coverage: Option<usize>,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub action: String,
    pub chars_emitted: usize,
    pub reward: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.step, self.action, self.chars_emitted, self.reward)
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub test_case: TestCase,
    pub experiences: Vec<Experience>,
    pub reward: f64,
    pub coverage: usize,
    pub log: Vec<LogRecord>,
}

impl Episode {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| r.to_line() + "\n").collect()
    }
}

/// Chooses actions from encoded states.
pub trait Policy {
    fn act(&mut self, state: &[u32], rng: &mut dyn RngCore) -> Result<usize>;
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub n_actions: usize,
}

impl Policy for RandomPolicy {
    fn act(&mut self, _state: &[u32], rng: &mut dyn RngCore) -> Result<usize> {
        Ok(rand::Rng::gen_range(rng, 0..self.n_actions))
    }
}

/// Plays a fixed action list, then repeats `fallback`.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub actions: Vec<usize>,
    pub fallback: usize,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<usize>, fallback: usize) -> Self {
        Self {
            actions,
            fallback,
            next: 0,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _state: &[u32], _rng: &mut dyn RngCore) -> Result<usize> {
        let a = self.actions.get(self.next).copied().unwrap_or(self.fallback);
        self.next += 1;
        Ok(a)
    }
}

/// ε-greedy over the agent's online network.
pub struct AgentPolicy<'a> {
    pub agent: &'a DdqnAgent,
    pub epsilon: f64,
}

impl Policy for AgentPolicy<'_> {
    fn act(&mut self, state: &[u32], rng: &mut dyn RngCore) -> Result<usize> {
        let q = self.agent.online.q(state)?;
        Ok(select_action(&q, self.epsilon, rng))
    }
}

/// Environment around one generator and one coverage target.
pub struct FuzzEnv<G: Generator, H: TargetHarness> {
    pub config: EnvConfig,
    pub actions: ActionSpace,
    pub template: Template,
    pub vocab: Vocabulary,
    pub generator: G,
    pub harness: H,
    pub reward: RewardSpec,
    rng: ChaCha8Rng,
}

impl<G: Generator, H: TargetHarness> FuzzEnv<G, H> {
    pub fn new(
        config: EnvConfig,
        actions: ActionSpace,
        vocab: Vocabulary,
        generator: G,
        harness: H,
        reward: RewardSpec,
        seed: u64,
    ) -> Self {
        Self {
            config,
            actions,
            template: Template::default(),
            vocab,
            generator,
            harness,
            reward,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_template(mut self, template: Template) -> Self {
        self.template = template;
        self
    }

    /// Reseeds the generator stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn reset(&mut self) -> Result<EpisodeState> {
        if let Some(seed) = self.config.generator_seed {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
        }
        self.generator.reset(&self.template.prefix)?;
        Ok(EpisodeState {
            partial_doc: self.template.prefix.clone(),
            prefix_chars: self.template.prefix.chars().count(),
            chars_emitted: 0,
            actions_taken: Vec::new(),
        })
    }

    /// The last `state_window` characters, encoded.
    pub fn observe(&self, state: &EpisodeState) -> EncodedSequence {
        let n = state.partial_doc.chars().count();
        let skip = n.saturating_sub(self.config.state_window);
        let start = state
            .partial_doc
            .char_indices()
            .nth(skip)
            .map_or(state.partial_doc.len(), |(i, _)| i);
        self.vocab.encode_lossy(&state.partial_doc[start..])
    }

    /// The complete test case for the current document.
    pub fn test_case(&self, state: &EpisodeState) -> Result<TestCase> {
        TestCase::new(
            self.template.fill(state.body()).into_bytes(),
            Source::Ddqn,
            state.actions_taken.len(),
            String::new(),
        )
    }

    pub fn is_done(&self, state: &EpisodeState) -> bool {
        state.chars_emitted >= self.config.target_len
            || self.config.max_actions.is_some_and(|m| state.actions_taken.len() >= m)
    }

    /// Applies one action: seed a tag (or nothing for CONTINUE), then let the generator finish it.
    pub fn step(&mut self, state: &mut EpisodeState, action: usize) -> Result<StepResult> {
        if action >= self.actions.len() {
            return Err(Error::InvalidConfig(format!("action {action} outside {} actions", self.actions.len())));
        }
        let mut depth: i64 = 0;
        if let Some(tag) = self.actions.tag(action) {
            let seed = format!("<{tag}");
            state.push(&seed);
            self.generator.feed(&seed)?;
            depth = 1;
        }
        let mut buf = [0u8; 4];
        for _ in 0..self.config.max_step_chars {
            let c = self.generator.next_char(&mut self.rng)?;
            state.push(c.encode_utf8(&mut buf));
            match c {
                '<' => depth += 1,
                '>' => {
                    depth -= 1;
                    if depth <= 0 {
                        break;
                    }
                }
                _ => {}
            }
        }
        state.actions_taken.push(action);
        if !self.is_done(state) {
            return Ok(StepResult {
                reward: 0.0,
                done: false,
                coverage: None,
            });
        }
        let case = self.test_case(state)?;
        let blocks = self.harness.execute(&case.content)?.len();
        Ok(StepResult {
            reward: self.reward.reward(blocks),
            done: true,
            coverage: Some(blocks),
        })
    }

    /// Plays one episode to the end with `policy`.
    pub fn run_episode(&mut self, policy: &mut dyn Policy, rng: &mut dyn RngCore) -> Result<Episode> {
        let mut state = self.reset()?;
        let mut obs = self.observe(&state);
        let mut experiences = Vec::new();
        let mut log = Vec::new();
        loop {
            let action = policy.act(&obs.ids, rng)?;
            let result = self.step(&mut state, action)?;
            let next = self.observe(&state);
            log.push(LogRecord {
                step: log.len(),
                action: self.actions.name(action).to_owned(),
                chars_emitted: state.chars_emitted,
                reward: result.reward,
            });
            experiences.push(Experience {
                state: obs,
                action,
                reward: result.reward,
                next_state: next.clone(),
                terminal: result.done,
            });
            obs = next;
            if result.done {
                let mut test_case = self.test_case(&state)?;
                test_case.origin = format!("actions={}", state.actions_taken.len());
                return Ok(Episode {
                    test_case,
                    experiences,
                    reward: result.reward,
                    coverage: result.coverage.unwrap_or(0),
                    log,
                });
            }
        }
    }
}
