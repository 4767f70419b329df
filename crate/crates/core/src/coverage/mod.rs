//! Coverage sets, target harnesses and set algebra.

mod drcov;
pub mod toy;

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

pub use drcov::{emit_drcov, parse_drcov, BbRecord, DrcovLog, ModuleEntry};
pub use toy::{toy_target_execute, ToyTarget};

use crate::error::{Error, Result};

/// Start offset of a basic block within a module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasicBlockId {
    pub module_id: u16,
    pub offset: u64,
}

impl BasicBlockId {
    pub const fn new(module_id: u16, offset: u64) -> Self {
        Self { module_id, offset }
    }
}

impl fmt::Display for BasicBlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04x}:{:08x}", self.module_id, self.offset)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageSet {
    blocks: BTreeSet<BasicBlockId>,
}

impl CoverageSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: BasicBlockId) -> bool {
        self.blocks.insert(id)
    }

    pub fn contains(&self, id: &BasicBlockId) -> bool {
        self.blocks.contains(id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BasicBlockId> + '_ {
        self.blocks.iter()
    }

    pub fn is_superset(&self, other: &CoverageSet) -> bool {
        self.blocks.is_superset(&other.blocks)
    }

    pub fn intersection_len(&self, other: &CoverageSet) -> usize {
        self.blocks.intersection(&other.blocks).count()
    }

    /// Keeps only the blocks of one module.
    pub fn filter_module(&self, module_id: u16) -> CoverageSet {
        self.blocks
            .iter()
            .filter(|b| b.module_id == module_id)
            .copied()
            .collect()
    }

    /// Sorted `mod_id:offset` hex lines.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.blocks.len() * 14);
        for b in &self.blocks {
            let _ = writeln!(out, "{b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|line| {
                let bad = || Error::Parse(format!("coverage line {line:?}"));
                let (m, o) = line.split_once(':').ok_or_else(bad)?;
                Ok(BasicBlockId {
                    module_id: u16::from_str_radix(m, 16).map_err(|_| bad())?,
                    offset: u64::from_str_radix(o, 16).map_err(|_| bad())?,
                })
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl FromIterator<BasicBlockId> for CoverageSet {
    fn from_iter<I: IntoIterator<Item = BasicBlockId>>(iter: I) -> Self {
        Self {
            blocks: iter.into_iter().collect(),
        }
    }
}

impl Extend<BasicBlockId> for CoverageSet {
    fn extend<I: IntoIterator<Item = BasicBlockId>>(&mut self, iter: I) {
        self.blocks.extend(iter);
    }
}

impl<'a> IntoIterator for &'a CoverageSet {
    type Item = &'a BasicBlockId;
    type IntoIter = std::collections::btree_set::Iter<'a, BasicBlockId>;

    fn into_iter(self) -> Self::IntoIter {
        self.blocks.iter()
    }
}

pub fn coverage_union<'a>(sets: impl IntoIterator<Item = &'a CoverageSet>) -> CoverageSet {
    let mut out = CoverageSet::new();
    for set in sets {
        out.blocks.extend(set.blocks.iter().copied());
    }
    out
}

/// Blocks of `candidate` that `baseline` never reached.
pub fn coverage_unique(candidate: &CoverageSet, baseline: &CoverageSet) -> CoverageSet {
    CoverageSet {
        blocks: candidate.blocks.difference(&baseline.blocks).copied().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessDescriptor {
    pub name: String,
    pub modules: Vec<ModuleEntry>,
}

/// Something that executes a test case and reports which blocks it reached.
pub trait TargetHarness: Send + Sync {
    fn descriptor(&self) -> HarnessDescriptor;

    fn execute(&self, test_case: &[u8]) -> Result<CoverageSet>;
}

impl<T: TargetHarness + ?Sized> TargetHarness for &T {
    fn descriptor(&self) -> HarnessDescriptor {
        (**self).descriptor()
    }

    fn execute(&self, test_case: &[u8]) -> Result<CoverageSet> {
        (**self).execute(test_case)
    }
}

impl<T: TargetHarness + ?Sized> TargetHarness for std::sync::Arc<T> {
    fn descriptor(&self) -> HarnessDescriptor {
        (**self).descriptor()
    }

    fn execute(&self, test_case: &[u8]) -> Result<CoverageSet> {
        (**self).execute(test_case)
    }
}

/// Runs an external, DrCov-instrumented command once per test case.
///
/// `{input}` and `{log}` in the argument list are replaced by the test case
/// file and the log path the instrumentation writes. Only blocks of modules
/// whose path contains `module_filter` are kept.
#[derive(Debug, Clone)]
pub struct DrcovCommandHarness {
    pub program: String,
    pub args: Vec<String>,
    pub module_filter: String,
    pub timeout: Duration,
}

impl TargetHarness for DrcovCommandHarness {
    fn descriptor(&self) -> HarnessDescriptor {
        HarnessDescriptor {
            name: format!("drcov:{}", self.program),
            modules: Vec::new(),
        }
    }

    fn execute(&self, test_case: &[u8]) -> Result<CoverageSet> {
        static NEXT: AtomicU64 = AtomicU64::new(0);
        let dir = std::env::temp_dir().join(format!(
            "tagfuzz-{}-{}",
            std::process::id(),
            NEXT.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir)?;
        let input = dir.join("case.html");
        let log = dir.join("coverage.log");
        std::fs::write(&input, test_case)?;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{input}", &input.to_string_lossy())
                    .replace("{log}", &log.to_string_lossy())
            })
            .collect();
        let mut child = Command::new(&self.program)
            .args(&args)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Harness(format!("spawn {}: {e}", self.program)))?;
        let started = std::time::Instant::now();
        loop {
            if child.try_wait()?.is_some() {
                break;
            }
            if started.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                let _ = std::fs::remove_dir_all(&dir);
                return Err(Error::Harness("timeout".into()));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        let bytes = std::fs::read(&log).map_err(|e| Error::Harness(format!("no coverage log: {e}")));
        let _ = std::fs::remove_dir_all(&dir);
        let parsed = parse_drcov(&bytes?)?;
        Ok(parsed.coverage_for_module(&self.module_filter))
    }
}
