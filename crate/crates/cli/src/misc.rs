//! `report`, `policy kl`, `worker serve` and the hidden `exec-case` helper.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Args;
use tagfuzz_core::analysis::{build_report, kl_divergence, matrix_csv, LabeledSet, PolicyHistogram};
use tagfuzz_core::coverage::{CoverageSet, TargetHarness};
use tagfuzz_service::{ProcessHarness, Worker, WorkerServer};

use crate::config::{get, usage, Schema};
use crate::setup::{local_harness, write};
use crate::{settings, Global};

fn stem(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// A `.cov` file, a run directory with `union.cov`, or a directory of `.cov` files
/// (each one its own set).
fn load_sets(path: &Path) -> Result<Vec<LabeledSet>> {
    let load = |p: &Path, label: String| -> Result<LabeledSet> {
        let set = CoverageSet::load(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(LabeledSet { label, set })
    };
    if !path.is_dir() {
        return Ok(vec![load(path, stem(path))?]);
    }
    let union = path.join("union.cov");
    if union.is_file() {
        return Ok(vec![load(&union, stem(path))?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cov"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("{} holds no coverage files", path.display())));
    }
    files.iter().map(|p| load(p, stem(p))).collect()
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<LabeledSet>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_sets(p)?);
    }
    Ok(out)
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Coverage of the agent-guided runs.
    #[arg(long, required = true)]
    pub candidate: Vec<PathBuf>,
    /// Coverage of the grammar baseline sets.
    #[arg(long, required = true)]
    pub baseline: Vec<PathBuf>,
    /// Coverage of TCN-only runs.
    #[arg(long)]
    pub tcn: Vec<PathBuf>,
}

pub fn report(g: &Global, args: &ReportArgs) -> Result<()> {
    if settings(g, Schema::Report)?.is_none() {
        return Ok(());
    }
    let report = build_report(&load_all(&args.candidate)?, &load_all(&args.baseline)?, &load_all(&args.tcn)?)?;
    write(&g.out.join("report.csv"), report.to_csv())?;
    let summary = report.summary();
    write(&g.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    if !summary.ends_with('\n') {
        println!();
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct KlArgs {
    /// Histogram files (`policy.tsv`) or run directories holding one.
    #[arg(long = "hist", required = true)]
    pub hists: Vec<PathBuf>,
}

pub fn policy_kl(g: &Global, args: &KlArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::Policy)? else { return Ok(()) };
    if args.hists.len() < 2 {
        return Err(usage("policy kl needs at least two histograms"));
    }
    let smoothing: f64 = get(&kv, "smoothing")?;
    let mut labels = Vec::new();
    let mut hists = Vec::new();
    for p in &args.hists {
        let file = if p.is_dir() { p.join("policy.tsv") } else { p.clone() };
        let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        hists.push(PolicyHistogram::from_tsv(&text)?);
        labels.push(if p.is_dir() { stem(p) } else { stem(&file) });
    }
    for h in &hists[1..] {
        if h.names != hists[0].names {
            return Err(usage("histograms cover different action sets"));
        }
    }
    let dists: Vec<Vec<f64>> = hists.iter().map(PolicyHistogram::normalized).collect();
    let mut matrix = Vec::with_capacity(dists.len());
    for p in &dists {
        let row = dists.iter().map(|q| kl_divergence(p, q, smoothing)).collect::<tagfuzz_core::Result<Vec<_>>>()?;
        matrix.push(row);
    }
    let csv = matrix_csv(&labels, &matrix);
    write(&g.out.join("kl.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub listen: String,
    /// Worker id reported to coordinators (default: the listen address).
    #[arg(long)]
    pub id: Option<String>,
    /// Target override (`toy` or `drcov`).
    #[arg(long)]
    pub target: Option<String>,
    /// Per-case timeout override in milliseconds.
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// `process` runs every case in a child process, `thread` in-process.
    #[arg(long)]
    pub isolation: Option<String>,
}

pub fn serve(g: &Global, args: &ServeArgs) -> Result<()> {
    let Some(mut kv) = settings(g, Schema::Worker)? else { return Ok(()) };
    if let Some(t) = &args.target {
        kv.set("target", t);
    }
    if let Some(ms) = args.timeout_ms {
        kv.set("timeout_ms", ms);
    }
    if let Some(i) = &args.isolation {
        kv.set("isolation", i);
    }
    let timeout = Duration::from_millis(get(&kv, "timeout_ms")?);
    let local = local_harness(&kv)?;
    let target = kv.get("target").unwrap_or("toy").to_owned();
    let harness: Arc<dyn TargetHarness> = match (kv.get("isolation").unwrap_or("process"), target.as_str()) {
        // The DrCov harness already runs the target as a child process.
        ("process", "toy") => Arc::new(ProcessHarness {
            descriptor: local.descriptor(),
            program: std::env::current_exe()?.to_string_lossy().into_owned(),
            args: vec!["exec-case".into(), "--target".into(), target.clone()],
            timeout,
        }),
        ("process" | "thread", _) => local,
        (other, _) => return Err(usage(format!("unknown isolation {other:?} (process or thread)"))),
    };
    let id = args.id.clone().unwrap_or_else(|| args.listen.clone());
    let server = WorkerServer::bind(&args.listen, Arc::new(Worker::new(id, harness, timeout)))
        .with_context(|| format!("listening on {}", args.listen))?;
    println!("listening on {}", server.addr());
    std::io::stdout().flush()?;
    server.join();
    Ok(())
}

pub fn exec_case(target: &str) -> Result<()> {
    let mut kv = crate::config::defaults(Schema::Worker);
    kv.set("target", target);
    let harness = local_harness(&kv)?;
    let mut case = Vec::new();
    std::io::stdin().read_to_end(&mut case)?;
    let set = harness.execute(&case)?;
    std::io::stdout().write_all(set.to_text().as_bytes())?;
    Ok(())
}
