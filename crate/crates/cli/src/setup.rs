//! Builders shared by the commands: grammars, harnesses, generators, environments.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};
use tagfuzz_core::checkpoint::Checkpoint;
use tagfuzz_core::corpus::Vocabulary;
use tagfuzz_core::coverage::{CoverageSet, DrcovCommandHarness, HarnessDescriptor, TargetHarness, ToyTarget};
use tagfuzz_core::ddqn::{ActionSpace, DdqnAgent, DdqnConfig};
use tagfuzz_core::env::{estimate_avg_blocks, EnvConfig, FuzzEnv, Generator, GrammarGenerator, RewardSpec, TcnGenerator};
use tagfuzz_core::grammar::{GrammarConfig, EXTRA_CHARS};
use tagfuzz_core::kv::Kv;
use tagfuzz_core::nn::uniform;
use tagfuzz_core::tcn::{SamplerConfig, TcnModel};
use tagfuzz_service::{Coordinator, RemoteHarness, DEFAULT_TIMEOUT};

use crate::config::{get, get_opt, subset, usage};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `path` itself if it is a file, otherwise `path/name`.
pub fn file_in(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

pub fn grammar(kv: &Kv, seed: u64) -> Result<GrammarConfig> {
    let mut g = GrammarConfig::with_seed(seed);
    g.max_attrs_per_tag = get(kv, "max_attrs_per_tag")?;
    g.error_rate = get(kv, "error_rate")?;
    let tags = kv.get("tags").unwrap_or("all");
    if tags != "all" {
        let names: Vec<&str> = tags.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        g = g.restricted(&names).map_err(|e| usage(e.to_string()))?;
    }
    g.validate().map_err(|e| usage(e.to_string()))?;
    Ok(g)
}

pub fn local_harness(kv: &Kv) -> Result<Arc<dyn TargetHarness>> {
    match kv.get("target").unwrap_or("toy") {
        "toy" => Ok(Arc::new(ToyTarget)),
        "drcov" => {
            let program: String = get(kv, "drcov_program")?;
            if program.is_empty() {
                return Err(usage("target=drcov needs drcov_program"));
            }
            Ok(Arc::new(DrcovCommandHarness {
                program,
                args: kv
                    .get("drcov_args")
                    .unwrap_or("")
                    .split_whitespace()
                    .map(str::to_owned)
                    .collect(),
                module_filter: get(kv, "drcov_module")?,
                timeout: Duration::from_millis(get(kv, "timeout_ms")?),
            }))
        }
        other => Err(usage(format!("unknown target {other:?} (expected toy or drcov)"))),
    }
}

/// The configured target, either run in-process or on remote workers.
pub fn harness(kv: &Kv, workers: &[String]) -> Result<Arc<dyn TargetHarness>> {
    let local = local_harness(kv)?;
    if workers.is_empty() {
        return Ok(local);
    }
    let timeout = kv
        .get("timeout_ms")
        .and_then(|v| v.parse().ok())
        .map_or(DEFAULT_TIMEOUT, Duration::from_millis);
    let coordinator = Coordinator::connect(workers, timeout).context("connecting to workers")?;
    Ok(Arc::new(RemoteHarness::new(coordinator, local.descriptor())))
}

/// Remembers the coverage of the last executed case.
pub struct RecordingHarness {
    pub inner: Arc<dyn TargetHarness>,
    pub last: Mutex<Option<CoverageSet>>,
}

impl RecordingHarness {
    pub fn new(inner: Arc<dyn TargetHarness>) -> Self {
        Self {
            inner,
            last: Mutex::new(None),
        }
    }

    pub fn take(&self) -> Option<CoverageSet> {
        self.last.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

impl TargetHarness for RecordingHarness {
    fn descriptor(&self) -> HarnessDescriptor {
        self.inner.descriptor()
    }

    fn execute(&self, test_case: &[u8]) -> tagfuzz_core::Result<CoverageSet> {
        let set = self.inner.execute(test_case)?;
        *self.last.lock().unwrap_or_else(|e| e.into_inner()) = Some(set.clone());
        Ok(set)
    }
}

pub enum AnyGenerator<'m> {
    Tcn(TcnGenerator<'m>),
    Grammar(GrammarGenerator),
}

impl Generator for AnyGenerator<'_> {
    fn reset(&mut self, prefix: &str) -> tagfuzz_core::Result<()> {
        match self {
            Self::Tcn(g) => g.reset(prefix),
            Self::Grammar(g) => g.reset(prefix),
        }
    }

    fn feed(&mut self, text: &str) -> tagfuzz_core::Result<()> {
        match self {
            Self::Tcn(g) => g.feed(text),
            Self::Grammar(g) => g.feed(text),
        }
    }

    fn next_char(&mut self, rng: &mut dyn RngCore) -> tagfuzz_core::Result<char> {
        match self {
            Self::Tcn(g) => g.next_char(rng),
            Self::Grammar(g) => g.next_char(rng),
        }
    }
}

/// Sampler settings fitted to the model's maximum sequence length.
pub fn sampler_config(model: &TcnModel<f32>, window: usize, truncate_to: usize, temperature: f64) -> SamplerConfig {
    let window = window.min(model.config.max_seq_len);
    SamplerConfig {
        window,
        truncate_to: truncate_to.min((window * 4 / 5).clamp(1, window.saturating_sub(1).max(1))),
        temperature,
    }
}

/// A trained character model with its vocabulary.
pub struct LoadedTcn {
    pub model: TcnModel<f32>,
    pub vocab: Vocabulary,
    pub hash: String,
}

pub fn load_tcn(dir: &Path) -> Result<LoadedTcn> {
    let ckpt_path = file_in(dir, "model.ckpt");
    let vocab_path = ckpt_path.with_file_name("vocab.tsv");
    let ckpt = Checkpoint::load(&ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let model = TcnModel::from_checkpoint(&ckpt)?;
    let vocab = Vocabulary::from_tsv(
        &fs::read_to_string(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?,
    )?;
    if let Some(h) = ckpt.header.get("vocab_hash") {
        if h != vocab.hash() {
            bail!("{} does not belong to {}", vocab_path.display(), ckpt_path.display());
        }
    }
    if vocab.size() != model.vocab_size() {
        bail!("vocabulary has {} characters, model expects {}", vocab.size(), model.vocab_size());
    }
    Ok(LoadedTcn {
        model,
        vocab,
        hash: sha256_file(&ckpt_path)?,
    })
}

/// Printable ASCII plus the extra characters the grammar may emit.
pub fn grammar_vocab() -> Vocabulary {
    Vocabulary::from_chars((' '..='~').chain(EXTRA_CHARS)).expect("non-empty")
}

/// Everything an agent-driven command needs before it can build an environment.
pub struct AgentSetup {
    pub kv: Kv,
    pub grammar: GrammarConfig,
    pub tcn: Option<LoadedTcn>,
    pub vocab: Vocabulary,
    pub harness: Arc<RecordingHarness>,
    pub seed: u64,
}

impl AgentSetup {
    pub fn new(kv: Kv, seed: u64, tcn_dir: Option<&Path>, workers: &[String]) -> Result<Self> {
        let grammar = grammar(&kv, seed)?;
        let want = kv.get("generator").unwrap_or("auto");
        let tcn = match (want, tcn_dir) {
            ("grammar", _) | ("auto", None) => None,
            ("tcn", None) => return Err(usage("generator=tcn needs --tcn <dir>")),
            ("tcn" | "auto", Some(d)) => Some(load_tcn(d)?),
            (other, _) => return Err(usage(format!("unknown generator {other:?}"))),
        };
        let vocab = tcn.as_ref().map_or_else(grammar_vocab, |t| t.vocab.clone());
        let harness = Arc::new(RecordingHarness::new(harness(&kv, workers)?));
        Ok(Self {
            kv,
            grammar,
            tcn,
            vocab,
            harness,
            seed,
        })
    }

    pub fn generator_hash(&self) -> String {
        match &self.tcn {
            Some(t) => t.hash.clone(),
            None => format!("grammar-seed-{}", self.seed),
        }
    }

    pub fn actions(&self) -> Result<ActionSpace> {
        Ok(ActionSpace::new(self.grammar.tag_names())?)
    }

    pub fn ddqn_config(&self) -> Result<DdqnConfig> {
        let keys = DdqnConfig::preset("C1").expect("preset").to_kv();
        let config = DdqnConfig::from_kv(&subset(&self.kv, keys.keys()))?;
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }

    fn embedding(&self) -> Result<Array2<f32>> {
        Ok(match &self.tcn {
            Some(t) => t.model.embedding.clone(),
            None => {
                let dim: usize = get(&self.kv, "embed_dim")?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x00e6_bedd);
                uniform(&mut rng, (self.vocab.size(), dim), 0.05)
            }
        })
    }

    /// Loads `path` if given, otherwise builds a fresh agent from the config.
    pub fn agent(&self, path: Option<&Path>) -> Result<DdqnAgent> {
        let agent = match path {
            Some(p) => {
                let a = DdqnAgent::load(&file_in(p, "agent.ckpt")).with_context(|| format!("loading agent {}", p.display()))?;
                if a.online.embedding.nrows() != self.vocab.size() {
                    bail!(
                        "agent embeds {} characters, generator vocabulary has {}",
                        a.online.embedding.nrows(),
                        self.vocab.size()
                    );
                }
                a
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                DdqnAgent::new(self.ddqn_config()?, self.actions()?, self.embedding()?, &mut rng)?
            }
        };
        Ok(agent)
    }

    pub fn env_config(&self, state_window: usize) -> Result<EnvConfig> {
        Ok(EnvConfig {
            target_len: get(&self.kv, "target_len")?,
            max_step_chars: get(&self.kv, "max_step_chars")?,
            max_actions: get_opt(&self.kv, "max_actions")?,
            state_window,
            generator_seed: None,
        })
    }

    /// An environment whose reward is normalised by the configured or measured
    /// generator-only block average. `avg_hint` is used when the config says `auto`.
    pub fn env(
        &self,
        actions: ActionSpace,
        state_window: usize,
        avg_hint: Option<f64>,
    ) -> Result<FuzzEnv<AnyGenerator<'_>, Arc<RecordingHarness>>> {
        let generator = match &self.tcn {
            Some(t) => AnyGenerator::Tcn(TcnGenerator::new(
                &t.model,
                &t.vocab,
                {
                    let d = SamplerConfig::default();
                    sampler_config(&t.model, d.window, d.truncate_to, get(&self.kv, "temperature")?)
                },
            )?),
            None => {
                let restricted: Vec<&str> = actions.tags().iter().map(String::as_str).collect();
                let g = self.grammar.restricted(&restricted).map_err(|e| usage(e.to_string()))?;
                AnyGenerator::Grammar(GrammarGenerator::new(g))
            }
        };
        let config = self.env_config(state_window)?;
        let target_len = config.target_len;
        let mut env = FuzzEnv::new(
            config,
            actions,
            self.vocab.clone(),
            generator,
            Arc::clone(&self.harness),
            RewardSpec::new(target_len, 1.0)?,
            self.seed,
        );
        let avg = match get_opt::<f64>(&self.kv, "tcn_avg_blocks")?.or(avg_hint) {
            Some(a) => a,
            None => {
                let cases: usize = get(&self.kv, "avg_cases")?;
                let a = estimate_avg_blocks(&mut env, cases)?;
                eprintln!("generator-only average: {a:.2} blocks over {cases} cases");
                a
            }
        };
        env.reward = RewardSpec::new(target_len, avg)?;
        env.reseed(self.seed);
        Ok(env)
    }
}

/// `tcn_avg_blocks` recorded by an earlier run in `dir/env.kv`.
pub fn recorded_avg(dir: Option<&Path>) -> Option<f64> {
    let dir = dir?;
    let dir = if dir.is_dir() { dir } else { dir.parent()? };
    Kv::load(&dir.join("env.kv")).ok()?.parse_opt("tcn_avg_blocks").ok()?
}
