//! `tcn train`, `tcn sample` and `tcn eval`.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tagfuzz_core::corpus::{make_splits, Vocabulary};
use tagfuzz_core::kv::Kv;
use tagfuzz_core::tcn::{evaluate_loss, sample_tags, train as fit, TcnConfig, TrainConfig};

use crate::config::{get, subset, usage, Schema};
use crate::setup::{file_in, load_tcn, sampler_config, write};
use crate::{settings, Global};

/// Corpus file (one tag per line) with line breaks removed.
fn read_corpus(path: &std::path::Path) -> Result<String> {
    let path = file_in(path, "corpus.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().collect())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus file or a directory holding `corpus.txt`.
    #[arg(long)]
    pub corpus: PathBuf,
}

pub fn train(g: &Global, args: &TrainArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::TcnTrain)? else { return Ok(()) };
    let text = read_corpus(&args.corpus)?;
    let vocab = Vocabulary::build(text.as_bytes())?;
    let ids = vocab.encode(&text)?;

    let model_keys = TcnConfig::preset("cfg07").expect("preset").to_kv();
    let config = TcnConfig::from_kv(&subset(&kv, model_keys.keys()))?.with_vocab_size(vocab.size());
    config.validate().map_err(|e| usage(e.to_string()))?;
    let train_keys = TrainConfig::default().to_kv();
    let mut tc = TrainConfig::from_kv(&subset(&kv, train_keys.keys()))?;
    tc.seed = g.seed;

    let n_splits: usize = get(&kv, "n_splits")?;
    let index: usize = get(&kv, "split_index")?;
    if index >= n_splits {
        return Err(usage(format!("split_index {index} must be below n_splits {n_splits}")));
    }
    let splits = make_splits(&ids, n_splits, get(&kv, "split_fraction")?, g.seed, tc.window_len)?;
    let split = &splits[index];
    eprintln!(
        "{} characters, vocabulary {}, receptive field {}, validation at {}",
        ids.len(),
        vocab.size(),
        config.receptive_field(),
        split.validation_offset
    );

    let outcome = fit::<f32>(&config, &tc, split, &mut |r| {
        eprintln!("epoch {} train {:.4} val {:.4}", r.epoch, r.train_loss, r.val_loss);
    })?;

    let mut ckpt = outcome.model.checkpoint();
    ckpt.header
        .set("vocab_hash", vocab.hash())
        .set("best_epoch", outcome.best_epoch)
        .set("best_val_loss", outcome.best_val_loss)
        .set("seed", g.seed);
    ckpt.save(&g.out.join("model.ckpt"))?;
    write(&g.out.join("vocab.tsv"), vocab.to_tsv())?;
    write(&g.out.join("history.csv"), outcome.history.to_csv())?;
    println!(
        "best epoch {} validation loss {:.4} -> {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        g.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Directory of a trained model (or its `model.ckpt`).
    #[arg(long)]
    pub model: PathBuf,
}

pub fn sample(g: &Global, args: &SampleArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::TcnSample)? else { return Ok(()) };
    let tcn = load_tcn(&args.model)?;
    let config = sampler_config(
        &tcn.model,
        get(&kv, "window")?,
        get(&kv, "truncate_to")?,
        get(&kv, "temperature")?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let text = sample_tags(&tcn.model, &tcn.vocab, get(&kv, "n_chars")?, config, &mut rng)?;
    write(&g.out.join("sample.txt"), &text)?;
    println!("{text}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus file or a directory holding `corpus.txt`.
    #[arg(long)]
    pub corpus: PathBuf,
}

pub fn eval(g: &Global, args: &EvalArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::TcnEval)? else { return Ok(()) };
    let tcn = load_tcn(&args.model)?;
    let text = read_corpus(&args.corpus)?;
    let ids = tcn.vocab.encode(&text).context("corpus holds characters outside the model vocabulary")?;
    let loss = evaluate_loss(&tcn.model, &ids, get(&kv, "window_len")?)?;
    let mut out = Kv::new();
    out.set("loss", loss).set("characters", ids.len());
    write(&g.out.join("eval.kv"), out.to_text())?;
    println!("loss {loss:.6} over {} characters", ids.len());
    Ok(())
}
