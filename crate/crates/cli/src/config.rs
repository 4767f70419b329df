//! Flat key-value settings: command defaults, named presets, and config files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use tagfuzz_core::ddqn::DdqnConfig;
use tagfuzz_core::kv::Kv;
use tagfuzz_core::tcn::{TcnConfig, TrainConfig};

/// Bad flags, unknown presets or config keys. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Which defaults and presets a command uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Corpus,
    Baseline,
    TcnTrain,
    TcnSample,
    TcnEval,
    Agent,
    Report,
    Policy,
    Worker,
}

fn grammar_defaults(kv: &mut Kv) {
    kv.set("max_attrs_per_tag", 4).set("error_rate", 0.05).set("tags", "all");
}

fn env_defaults(kv: &mut Kv) {
    kv.set("target", "toy")
        .set("drcov_program", "")
        .set("drcov_args", "")
        .set("drcov_module", "")
        .set("timeout_ms", 10_000)
        .set("target_len", 12_000)
        .set("max_step_chars", 250)
        .set("max_actions", "none")
        .set("avg_cases", 4)
        .set("tcn_avg_blocks", "auto")
        .set("temperature", 1.0)
        .set("generator", "auto")
        .set("embed_dim", 32);
}

/// Every key a command understands, with its default value.
pub fn defaults(schema: Schema) -> Kv {
    let mut kv = Kv::new();
    match schema {
        Schema::Corpus => {
            grammar_defaults(&mut kv);
            kv.set("n_tags", 10_000);
        }
        Schema::Baseline => {
            grammar_defaults(&mut kv);
            env_defaults(&mut kv);
            kv.set("n_sets", 6).set("cases_per_set", 128).set("tags_per_case", 128);
        }
        Schema::TcnTrain => {
            kv.merge(&TcnConfig::preset("cfg07").expect("preset").to_kv());
            kv.merge(&TrainConfig::default().to_kv());
            kv.set("split_fraction", 0.8).set("n_splits", 5).set("split_index", 0);
        }
        Schema::TcnSample => {
            kv.set("n_chars", 1_000).set("temperature", 1.0).set("window", 250).set("truncate_to", 200);
        }
        Schema::TcnEval => {
            kv.set("window_len", 250);
        }
        Schema::Agent => {
            kv.merge(&DdqnConfig::preset("C1").expect("preset").to_kv());
            grammar_defaults(&mut kv);
            env_defaults(&mut kv);
            kv.set("experiences", 1_000)
                .set("epsilon", "schedule")
                .set("steps", 1_000)
                .set("episodes", 100)
                .set("train_start", 1_000)
                .set("train_per_step", 1)
                .set("eval_every", 100)
                .set("eval_cases", 4)
                .set("cases", 100)
                .set("policy", "agent");
        }
        Schema::Report => {}
        Schema::Policy => {
            kv.set("smoothing", tagfuzz_core::analysis::KL_SMOOTHING);
        }
        Schema::Worker => {
            env_defaults(&mut kv);
            kv.set("isolation", "process");
        }
    }
    kv
}

fn preset(schema: Schema, name: &str) -> Option<Kv> {
    match schema {
        Schema::TcnTrain => TcnConfig::preset(name).ok().map(|c| c.to_kv()),
        Schema::Agent => DdqnConfig::preset(name).ok().map(|c| c.to_kv()),
        _ => None,
    }
}

/// Defaults, overlaid with a preset or a config file. A file may itself name a
/// preset with `name=`; its other keys are applied on top.
pub fn resolve(schema: Schema, arg: Option<&str>) -> Result<Kv> {
    let mut kv = defaults(schema);
    let Some(arg) = arg else { return Ok(kv) };
    let given = if Path::new(arg).is_file() {
        Kv::load(Path::new(arg)).with_context(|| format!("reading config {arg}"))?
    } else if let Some(p) = preset(schema, arg) {
        p
    } else {
        return Err(usage(format!("{arg:?} is neither a config file nor a preset of this command")));
    };
    if let Err(e) = given.reject_unknown(&kv) {
        return Err(usage(format!("config {arg}: {e}")));
    }
    if let Some(name) = given.get("name") {
        if let Some(p) = preset(schema, name) {
            kv.merge(&p);
        }
    }
    kv.merge(&given);
    Ok(kv)
}

pub fn get<T: FromStr>(kv: &Kv, key: &str) -> Result<T> {
    let raw = kv.get(key).ok_or_else(|| usage(format!("missing config key {key}")))?;
    raw.parse()
        .map_err(|_| usage(format!("config key {key}: cannot parse {raw:?}")))
}

/// `none`/`auto` read as absent.
pub fn get_opt<T: FromStr>(kv: &Kv, key: &str) -> Result<Option<T>> {
    match kv.get(key) {
        None | Some("none") | Some("auto") | Some("") => Ok(None),
        Some(_) => get(kv, key).map(Some),
    }
}

/// Keeps only `keys` from `kv`.
pub fn subset<'a>(kv: &Kv, keys: impl IntoIterator<Item = &'a str>) -> Kv {
    let mut out = Kv::new();
    for k in keys {
        if let Some(v) = kv.get(k) {
            out.set(k, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_files_overlay_defaults() {
        let kv = resolve(Schema::TcnTrain, Some("cfg05")).unwrap();
        assert_eq!(kv.get("kernel_size"), Some("9"));
        assert_eq!(kv.get("patience"), Some("5"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.kv");
        std::fs::write(&path, "name=cfg03\nmax_epochs=2\n").unwrap();
        let kv = resolve(Schema::TcnTrain, Some(path.to_str().unwrap())).unwrap();
        assert_eq!(kv.get("kernel_size"), Some("5"));
        assert_eq!(kv.get("max_epochs"), Some("2"));

        std::fs::write(&path, "bogus=1\n").unwrap();
        let err = resolve(Schema::TcnTrain, Some(path.to_str().unwrap())).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(resolve(Schema::Agent, Some("C9")).is_err());
    }

    #[test]
    fn every_default_echoes_back() {
        for schema in [
            Schema::Corpus,
            Schema::Baseline,
            Schema::TcnTrain,
            Schema::TcnSample,
            Schema::TcnEval,
            Schema::Agent,
            Schema::Report,
            Schema::Policy,
            Schema::Worker,
        ] {
            let kv = defaults(schema);
            assert_eq!(Kv::parse(&kv.to_text()).unwrap(), kv);
        }
    }
}
