use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentPolicy, Episode, FuzzEnv, Generator, ScriptedPolicy};
use crate::coverage::TargetHarness;
use crate::ddqn::{DdqnAgent, Experience, PrioritizedReplay};
use crate::error::{Error, Result};

/// Mean block count of `n_cases` generator-only test cases (every action is CONTINUE).
pub fn estimate_avg_blocks<G: Generator, H: TargetHarness>(env: &mut FuzzEnv<G, H>, n_cases: usize) -> Result<f64> {
    if n_cases == 0 {
        return Err(Error::InvalidConfig("need at least one case to estimate the average".into()));
    }
    let cont = env.actions.continue_action();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0usize;
    for _ in 0..n_cases {
        let ep = env.run_episode(&mut ScriptedPolicy::new(Vec::new(), cont), &mut rng)?;
        total += ep.coverage;
    }
    Ok(total as f64 / n_cases as f64)
}

/// Mean block count over `n_cases` greedy episodes, with the generator stream reseeded to `seed`.
pub fn evaluate_checkpoint<G: Generator, H: TargetHarness>(
    env: &mut FuzzEnv<G, H>,
    agent: &DdqnAgent,
    n_cases: usize,
    seed: u64,
) -> Result<f64> {
    if n_cases == 0 {
        return Err(Error::InvalidConfig("need at least one evaluation case".into()));
    }
    env.reseed(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0usize;
    for _ in 0..n_cases {
        let ep = env.run_episode(&mut AgentPolicy { agent, epsilon: 0.0 }, &mut rng)?;
        total += ep.coverage;
    }
    Ok(total as f64 / n_cases as f64)
}

/// Plays `episodes` episodes with the agent's exploration schedule (or a fixed ε)
/// and hands each finished episode to `sink`. Returns the episode rewards.
pub fn collect_experiences<G: Generator, H: TargetHarness>(
    env: &mut FuzzEnv<G, H>,
    agent: &mut DdqnAgent,
    episodes: usize,
    epsilon: Option<f64>,
    rng: &mut dyn RngCore,
    sink: &mut dyn FnMut(&Episode) -> Result<()>,
) -> Result<Vec<f64>> {
    let mut rewards = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let eps = epsilon.unwrap_or_else(|| agent.epsilon());
        let ep = env.run_episode(&mut AgentPolicy { agent, epsilon: eps }, rng)?;
        agent.env_steps += ep.experiences.len() as u64;
        sink(&ep)?;
        rewards.push(ep.reward);
    }
    Ok(rewards)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub train_step: u64,
    pub mean_coverage: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub evaluations: Vec<EvalPoint>,
    /// Snapshot taken at the best evaluation.
    pub best: Option<DdqnAgent>,
    pub best_coverage: f64,
    pub losses: Vec<f64>,
    pub episode_rewards: Vec<f64>,
}

impl TrainReport {
    fn new() -> Self {
        Self {
            evaluations: Vec::new(),
            best: None,
            best_coverage: f64::NEG_INFINITY,
            losses: Vec::new(),
            episode_rewards: Vec::new(),
        }
    }

    fn evaluate<G: Generator, H: TargetHarness>(
        &mut self,
        env: &mut FuzzEnv<G, H>,
        agent: &DdqnAgent,
        cases: usize,
        seed: u64,
    ) -> Result<EvalPoint> {
        let mean = evaluate_checkpoint(env, agent, cases, seed)?;
        let improved = mean > self.best_coverage;
        if improved {
            self.best_coverage = mean;
            self.best = Some(agent.clone());
        }
        let point = EvalPoint {
            train_step: agent.train_steps,
            mean_coverage: mean,
            improved,
        };
        self.evaluations.push(point);
        Ok(point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    pub episodes: usize,
    /// Memory size before the first gradient step.
    pub train_start: usize,
    /// Gradient steps after every environment step.
    pub train_per_step: usize,
    pub eval_every: u64,
    pub eval_cases: usize,
    pub eval_seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            train_start: 1_000,
            train_per_step: 1,
            eval_every: 20,
            eval_cases: 4,
            eval_seed: 0,
        }
    }
}

/// Interleaves ε-greedy play, replay storage and gradient steps.
///
/// Evaluations run at episode boundaries, once for every `eval_every` gradient
/// steps completed since the last one.
pub fn train_online<G: Generator, H: TargetHarness>(
    env: &mut FuzzEnv<G, H>,
    agent: &mut DdqnAgent,
    memory: &mut PrioritizedReplay,
    config: &OnlineConfig,
    rng: &mut dyn RngCore,
    on_eval: &mut dyn FnMut(&EvalPoint),
) -> Result<TrainReport> {
    let mut report = TrainReport::new();
    let start = config.train_start.max(agent.config.batch_size);
    let mut next_eval = agent.train_steps + config.eval_every;
    for _ in 0..config.episodes {
        let mut state = env.reset()?;
        let mut obs = env.observe(&state);
        loop {
            let action = agent.act_with(&obs.ids, agent.epsilon(), rng)?;
            let result = env.step(&mut state, action)?;
            let next = env.observe(&state);
            memory.insert(Experience {
                state: obs,
                action,
                reward: result.reward,
                next_state: next.clone(),
                terminal: result.done,
            });
            obs = next;
            agent.env_steps += 1;
            if memory.len() >= start {
                for _ in 0..config.train_per_step {
                    report.losses.push(agent.train_step(memory, rng)?.loss);
                }
            }
            if result.done {
                report.episode_rewards.push(result.reward);
                break;
            }
        }
        if config.eval_every > 0 && agent.train_steps >= next_eval {
            let point = report.evaluate(env, agent, config.eval_cases, config.eval_seed)?;
            on_eval(&point);
            next_eval = agent.train_steps + config.eval_every - agent.train_steps % config.eval_every;
        }
    }
    Ok(report)
}

/// Gradient steps on a filled replay memory, with no environment interaction
/// besides the periodic greedy evaluations.
#[allow(clippy::too_many_arguments)]
pub fn train_offline<G: Generator, H: TargetHarness>(
    env: &mut FuzzEnv<G, H>,
    agent: &mut DdqnAgent,
    memory: &mut PrioritizedReplay,
    steps: u64,
    eval_every: u64,
    eval_cases: usize,
    eval_seed: u64,
    rng: &mut dyn RngCore,
    on_eval: &mut dyn FnMut(&EvalPoint),
) -> Result<TrainReport> {
    let mut report = TrainReport::new();
    for _ in 0..steps {
        report.losses.push(agent.train_step(memory, rng)?.loss);
        if eval_every > 0 && agent.train_steps.is_multiple_of(eval_every) {
            let point = report.evaluate(env, agent, eval_cases, eval_seed)?;
            on_eval(&point);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::coverage::ToyTarget;
    use crate::ddqn::{ActionSpace, ConvSpec, DdqnConfig};
    use crate::env::{EnvConfig, GrammarGenerator, RewardSpec};
    use crate::grammar::GrammarConfig;
    use crate::nn::uniform;

    fn setup() -> (FuzzEnv<GrammarGenerator, ToyTarget>, DdqnAgent) {
        let grammar = GrammarConfig::with_seed(1).restricted(&["br", "p", "table"]).unwrap();
        let actions = ActionSpace::new(grammar.tag_names()).unwrap();
        let vocab = Vocabulary::from_chars((' '..='~').chain(crate::grammar::EXTRA_CHARS)).unwrap();
        let config = EnvConfig {
            target_len: 400,
            state_window: 64,
            ..EnvConfig::default()
        };
        let env = FuzzEnv::new(
            config,
            actions.clone(),
            vocab.clone(),
            GrammarGenerator::new(grammar),
            ToyTarget,
            RewardSpec::new(400, 50.0).unwrap(),
            3,
        );
        let mut dc = DdqnConfig::preset("C1").unwrap();
        dc.convs = vec![
            ConvSpec {
                kernel: 8,
                stride: 4,
                filters: 4,
            },
            ConvSpec {
                kernel: 3,
                stride: 1,
                filters: 4,
            },
        ];
        dc.dense = vec![8];
        dc.state_window = 64;
        dc.batch_size = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = uniform(&mut rng, (vocab.size(), 4), 0.05);
        let agent = DdqnAgent::new(dc, actions, emb, &mut rng).unwrap();
        (env, agent)
    }

    #[test]
    fn evaluation_is_reproducible() {
        let (mut env, agent) = setup();
        let a = evaluate_checkpoint(&mut env, &agent, 4, 9).unwrap();
        let b = evaluate_checkpoint(&mut env, &agent, 4, 9).unwrap();
        assert_eq!(a, b);
        let one = evaluate_checkpoint(&mut env, &agent, 1, 9).unwrap();
        assert_eq!(one.fract(), 0.0);
    }

    #[test]
    fn online_loop_trains_and_snapshots() {
        let (mut env, mut agent) = setup();
        let mut memory = PrioritizedReplay::new(1_000, 0.6, 1e-6).unwrap();
        let config = OnlineConfig {
            episodes: 12,
            train_start: 8,
            train_per_step: 1,
            eval_every: 20,
            eval_cases: 1,
            eval_seed: 0,
        };
        let mut seen = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = train_online(&mut env, &mut agent, &mut memory, &config, &mut rng, &mut |_| seen += 1).unwrap();
        assert_eq!(report.episode_rewards.len(), 12);
        assert!(agent.train_steps > 20);
        assert_eq!(report.evaluations.len(), seen);
        assert!(seen >= 1);
        let best = report.evaluations.iter().map(|e| e.mean_coverage).fold(f64::MIN, f64::max);
        assert_eq!(report.best_coverage, best);
        assert!(report.best.is_some());
    }

    #[test]
    fn average_blocks_is_positive() {
        let (mut env, _) = setup();
        let avg = estimate_avg_blocks(&mut env, 3).unwrap();
        assert!(avg > 8.0);
    }
}
