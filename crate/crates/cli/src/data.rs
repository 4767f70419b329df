//! `corpus gen` and `baseline run`.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use clap::Args;
use tagfuzz_core::corpus::Vocabulary;
use tagfuzz_core::coverage::{coverage_union, CoverageSet};
use tagfuzz_core::grammar::{baseline_sets, generate_corpus};

use crate::config::{get, Schema};
use crate::setup::{self, write};
use crate::{settings, Global};

pub fn corpus_gen(g: &Global) -> Result<()> {
    let Some(kv) = settings(g, Schema::Corpus)? else { return Ok(()) };
    let grammar = setup::grammar(&kv, g.seed)?;
    let corpus = generate_corpus(&grammar, get(&kv, "n_tags")?)?;
    let text = corpus.to_text();
    let vocab = Vocabulary::build(corpus.tags.concat().as_bytes())?;
    write(&g.out.join("corpus.txt"), &text)?;
    write(&g.out.join("manifest.kv"), corpus.manifest.to_kv())?;
    write(&g.out.join("vocab.tsv"), vocab.to_tsv())?;
    println!(
        "{} tags, {} characters, vocabulary of {} -> {}",
        corpus.tags.len(),
        text.chars().count() - corpus.tags.len(),
        vocab.size(),
        g.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// Remote workers (`host:port`) to execute the cases on.
    #[arg(long, value_delimiter = ',')]
    pub workers: Vec<String>,
    /// Also write every test case as HTML.
    #[arg(long)]
    pub write_cases: bool,
}

pub fn baseline_run(g: &Global, args: &BaselineArgs) -> Result<()> {
    let Some(kv) = settings(g, Schema::Baseline)? else { return Ok(()) };
    let grammar = setup::grammar(&kv, g.seed)?;
    let sets = baseline_sets(&grammar, get(&kv, "n_sets")?, get(&kv, "cases_per_set")?, get(&kv, "tags_per_case")?)?;
    let harness = setup::harness(&kv, &args.workers)?;
    let mut summary = String::from("set\tcases\tblocks\n");
    let mut unions = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let mut covs: Vec<CoverageSet> = Vec::with_capacity(set.len());
        for case in set {
            covs.push(harness.execute(&case.content).with_context(|| format!("set {i}"))?);
        }
        let union = coverage_union(&covs);
        union.save(&g.out.join(format!("baseline_{i}.cov")))?;
        if args.write_cases {
            let dir = g.out.join(format!("baseline_{i}"));
            setup::ensure_dir(&dir)?;
            for case in set {
                case.write_html(&dir)?;
            }
        }
        let _ = writeln!(summary, "{i}\t{}\t{}", set.len(), union.len());
        println!("baseline {i}: {} cases, {} blocks", set.len(), union.len());
        unions.push(union);
    }
    let all = coverage_union(&unions);
    let _ = writeln!(summary, "all\t{}\t{}", sets.iter().map(Vec::len).sum::<usize>(), all.len());
    write(&g.out.join("summary.tsv"), summary)?;
    Ok(())
}
