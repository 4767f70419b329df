//! `ddqn collect`, `ddqn train-offline`, `ddqn train-online` and `fuzz run`.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tagfuzz_core::analysis::PolicyHistogram;
use tagfuzz_core::coverage::coverage_union;
use tagfuzz_core::ddqn::{DdqnAgent, PrioritizedReplay};
use tagfuzz_core::env::{
    collect_experiences, train_offline as fit_offline, train_online as fit_online, AgentPolicy, EvalPoint,
    OnlineConfig, Policy, RandomPolicy, ScriptedPolicy, TrainReport,
};
use tagfuzz_core::kv::Kv;
use tagfuzz_service::{ExperienceRecord, ExperienceStore};

use crate::config::{get, get_opt, usage, Schema};
use crate::setup::{ensure_dir, file_in, recorded_avg, write, AgentSetup};
use crate::{settings, Global};

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Trained TCN directory; without it the grammar generator is used.
    #[arg(long)]
    pub tcn: Option<PathBuf>,
    /// Agent checkpoint (file or directory holding `agent.ckpt`).
    #[arg(long)]
    pub agent: Option<PathBuf>,
    /// Remote workers (`host:port`) to execute test cases on.
    #[arg(long, value_delimiter = ',')]
    pub workers: Vec<String>,
}

/// Fixed exploration rate, or `None` to follow the agent's schedule.
fn epsilon(kv: &Kv) -> Result<Option<f64>> {
    match kv.get("epsilon") {
        Some("schedule") => Ok(None),
        _ => get_opt(kv, "epsilon"),
    }
}

fn env_kv(setup: &AgentSetup, avg: f64) -> String {
    let mut kv = Kv::new();
    kv.set("tcn_avg_blocks", avg)
        .set("generator", if setup.tcn.is_some() { "tcn" } else { "grammar" })
        .set("generator_hash", setup.generator_hash())
        .set("seed", setup.seed);
    kv.to_text()
}

fn evals_csv(points: &[EvalPoint]) -> String {
    let mut out = String::from("train_step,mean_coverage,improved\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.train_step, p.mean_coverage, p.improved);
    }
    out
}

fn save_training(out: &Path, agent: &DdqnAgent, report: &TrainReport) -> Result<()> {
    agent.save(&out.join("agent.ckpt"))?;
    if let Some(best) = &report.best {
        best.save(&out.join("best.ckpt"))?;
    }
    let mut losses = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(losses, "{},{l}", i + 1);
    }
    write(&out.join("losses.csv"), losses)?;
    write(&out.join("evals.csv"), evals_csv(&report.evaluations))?;
    Ok(())
}

fn print_eval(p: &EvalPoint) {
    eprintln!(
        "step {} mean coverage {:.2}{}",
        p.train_step,
        p.mean_coverage,
        if p.improved { " *" } else { "" }
    );
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Experience log to append to (default: `<out>/experiences.log`).
    #[arg(long)]
    pub store: Option<PathBuf>,
}

pub fn collect(g: &Global, args: &CollectArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::Agent)? else { return Ok(()) };
    let setup = AgentSetup::new(kv, g.seed, args.common.tcn.as_deref(), &args.common.workers)?;
    let mut agent = setup.agent(args.common.agent.as_deref())?;
    let mut env = setup.env(agent.actions.clone(), agent.config.state_window, None)?;
    let avg = env.reward.tcn_avg_blocks;
    let store_path = args.store.clone().unwrap_or_else(|| g.out.join("experiences.log"));
    let mut store = ExperienceStore::open(&store_path)?;
    if let Some(c) = store.recovered() {
        eprintln!("dropped an unfinished tail at offset {}: {}", c.offset, c.message);
    }
    let wanted: u64 = get(&setup.kv, "experiences")?;
    let eps = epsilon(&setup.kv)?;
    let hash = setup.generator_hash();
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(g.out.join("episodes.log"))
        .context("opening episodes.log")?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let start = store.len();
    let mut episodes = 0u64;
    while store.len() - start < wanted {
        let episode_id = store.len();
        collect_experiences(&mut env, &mut agent, 1, eps, &mut rng, &mut |ep| {
            let records: Vec<_> = ep
                .experiences
                .iter()
                .enumerate()
                .map(|(i, e)| ExperienceRecord {
                    episode_id,
                    sequence: i as u32,
                    generator_hash: hash.clone(),
                    experience: e.clone(),
                })
                .collect();
            store
                .append(&records)
                .map_err(|e| tagfuzz_core::Error::Harness(format!("experience store: {e}")))?;
            writeln!(log, "# episode {episode_id} reward {} blocks {}", ep.reward, ep.coverage)?;
            log.write_all(ep.log_text().as_bytes())?;
            Ok(())
        })?;
        episodes += 1;
    }
    agent.save(&g.out.join("agent.ckpt"))?;
    write(&g.out.join("env.kv"), env_kv(&setup, avg))?;
    println!(
        "collected {} experiences in {episodes} episodes -> {}",
        store.len() - start,
        store_path.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct OfflineArgs {
    #[command(flatten)]
    pub common: Common,
    /// Experience log, or the directory of a `ddqn collect` run.
    #[arg(long)]
    pub store: PathBuf,
}

pub fn train_offline(g: &Global, args: &OfflineArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::Agent)? else { return Ok(()) };
    let setup = AgentSetup::new(kv, g.seed, args.common.tcn.as_deref(), &args.common.workers)?;
    let mut agent = setup.agent(args.common.agent.as_deref())?;
    let store_path = file_in(&args.store, "experiences.log");
    if !store_path.is_file() {
        bail!("no experience log at {}", store_path.display());
    }
    let store = ExperienceStore::open(&store_path)?;
    if store.is_empty() {
        bail!("{} holds no experiences", store_path.display());
    }
    let c = &agent.config;
    let mut memory = PrioritizedReplay::new(c.replay_capacity, c.alpha, c.priority_eps)?;
    let mut foreign = 0u64;
    let hash = setup.generator_hash();
    for r in store.stream(0)? {
        let r = r?;
        if r.generator_hash != hash {
            foreign += 1;
        }
        if r.experience.action >= agent.actions.len() {
            bail!("stored action {} outside the agent's {} actions", r.experience.action, agent.actions.len());
        }
        memory.insert(r.experience);
    }
    if foreign > 0 {
        eprintln!("warning: {foreign} experiences came from a different generator");
    }
    eprintln!("loaded {} experiences, replay holds {}", store.len(), memory.len());

    let avg = recorded_avg(Some(&args.store));
    let mut env = setup.env(agent.actions.clone(), agent.config.state_window, avg)?;
    let avg = env.reward.tcn_avg_blocks;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let report = fit_offline(
        &mut env,
        &mut agent,
        &mut memory,
        get(&setup.kv, "steps")?,
        get(&setup.kv, "eval_every")?,
        get(&setup.kv, "eval_cases")?,
        g.seed,
        &mut rng,
        &mut print_eval,
    )?;
    save_training(&g.out, &agent, &report)?;
    write(&g.out.join("env.kv"), env_kv(&setup, avg))?;
    println!(
        "{} training steps, final loss {:.5} -> {}",
        report.losses.len(),
        report.losses.last().copied().unwrap_or(f64::NAN),
        g.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct OnlineArgs {
    #[command(flatten)]
    pub common: Common,
}

pub fn train_online(g: &Global, args: &OnlineArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::Agent)? else { return Ok(()) };
    let setup = AgentSetup::new(kv, g.seed, args.common.tcn.as_deref(), &args.common.workers)?;
    let mut agent = setup.agent(args.common.agent.as_deref())?;
    let mut env = setup.env(agent.actions.clone(), agent.config.state_window, None)?;
    let avg = env.reward.tcn_avg_blocks;
    let c = &agent.config;
    let mut memory = PrioritizedReplay::new(c.replay_capacity, c.alpha, c.priority_eps)?;
    let online = OnlineConfig {
        episodes: get(&setup.kv, "episodes")?,
        train_start: get(&setup.kv, "train_start")?,
        train_per_step: get(&setup.kv, "train_per_step")?,
        eval_every: get(&setup.kv, "eval_every")?,
        eval_cases: get(&setup.kv, "eval_cases")?,
        eval_seed: g.seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let report = fit_online(&mut env, &mut agent, &mut memory, &online, &mut rng, &mut print_eval)?;
    save_training(&g.out, &agent, &report)?;
    write(&g.out.join("env.kv"), env_kv(&setup, avg))?;
    println!(
        "{} episodes, {} training steps, best mean coverage {:.2} -> {}",
        report.episode_rewards.len(),
        report.losses.len(),
        report.best_coverage,
        g.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct FuzzArgs {
    #[command(flatten)]
    pub common: Common,
}

pub fn fuzz(g: &Global, args: &FuzzArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::Agent)? else { return Ok(()) };
    let setup = AgentSetup::new(kv, g.seed, args.common.tcn.as_deref(), &args.common.workers)?;
    let policy_name = setup.kv.get("policy").unwrap_or("agent").to_owned();
    let agent = match (policy_name.as_str(), &args.common.agent) {
        ("agent", None) => return Err(usage("policy=agent needs --agent <checkpoint>")),
        ("agent", Some(p)) => Some(setup.agent(Some(p))?),
        ("random" | "tcn", _) => None,
        (other, _) => return Err(usage(format!("unknown policy {other:?} (agent, random or tcn)"))),
    };
    let (actions, window) = match &agent {
        Some(a) => (a.actions.clone(), a.config.state_window),
        None => (setup.actions()?, setup.ddqn_config()?.state_window),
    };
    let avg = recorded_avg(args.common.agent.as_deref());
    let mut env = setup.env(actions.clone(), window, avg)?;
    let eps = epsilon(&setup.kv)?.unwrap_or(0.0);
    let mut policy: Box<dyn Policy + '_> = match &agent {
        Some(a) => Box::new(AgentPolicy { agent: a, epsilon: eps }),
        None if policy_name == "random" => Box::new(RandomPolicy { n_actions: actions.len() }),
        None => Box::new(ScriptedPolicy::new(Vec::new(), actions.continue_action())),
    };

    let cases_dir = g.out.join("cases");
    let cov_dir = g.out.join("coverage");
    ensure_dir(&cases_dir)?;
    ensure_dir(&cov_dir)?;
    let n: usize = get(&setup.kv, "cases")?;
    let mut hist = PolicyHistogram::new(&actions);
    let mut sets = Vec::with_capacity(n);
    let mut log = String::new();
    let mut summary = String::from("case\tblocks\treward\tactions\n");
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    for i in 0..n {
        let ep = env.run_episode(policy.as_mut(), &mut rng)?;
        for e in &ep.experiences {
            hist.record(e.action);
        }
        let set = setup.harness.take().context("episode ended without executing its test case")?;
        let hash = ep.test_case.content_hash();
        ep.test_case.write_html(&cases_dir)?;
        set.save(&cov_dir.join(format!("{hash}.cov")))?;
        let _ = writeln!(log, "# case {i} {hash} reward {} blocks {}", ep.reward, ep.coverage);
        log.push_str(&ep.log_text());
        let _ = writeln!(summary, "{hash}\t{}\t{}\t{}", set.len(), ep.reward, ep.experiences.len());
        sets.push(set);
    }
    let union = coverage_union(&sets);
    union.save(&g.out.join("union.cov"))?;
    write(&g.out.join("policy.tsv"), hist.to_tsv())?;
    write(&g.out.join("episodes.log"), log)?;
    write(&g.out.join("cases.tsv"), summary)?;
    let mean = sets.iter().map(|s| s.len()).sum::<usize>() as f64 / n.max(1) as f64;
    println!(
        "{n} cases, mean {mean:.2} blocks, union {} blocks -> {}",
        union.len(),
        g.out.display()
    );
    Ok(())
}
