//! Coverage comparison reports and policy similarity.

use std::fmt::Write as _;

use crate::coverage::{coverage_union, CoverageSet};
use crate::ddqn::ActionSpace;
use crate::error::{Error, Result};

/// Smoothing added to every cell before normalising.
pub const KL_SMOOTHING: f64 = 1e-9;

/// `D(P‖Q) = Σ pᵢ ln(pᵢ/qᵢ)` after adding `smoothing` to every cell of both inputs and renormalising.
pub fn kl_divergence(p: &[f64], q: &[f64], smoothing: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::MismatchedSupport(p.len(), q.len()));
    }
    if p.iter().chain(q).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidConfig("distributions must be finite and nonnegative".into()));
    }
    let smooth = |d: &[f64]| {
        let total: f64 = d.iter().map(|v| v + smoothing).sum();
        d.iter().map(|v| (v + smoothing) / total).collect::<Vec<f64>>()
    };
    let (p, q) = (smooth(p), smooth(q));
    let d: f64 = p
        .iter()
        .zip(&q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    Ok(d.max(0.0))
}

/// How often each action was chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyHistogram {
    pub names: Vec<String>,
    pub counts: Vec<u64>,
}

impl PolicyHistogram {
    pub fn new(actions: &ActionSpace) -> Self {
        Self {
            names: actions.names(),
            counts: vec![0; actions.len()],
        }
    }

    pub fn record(&mut self, action: usize) {
        self.counts[action] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts as a distribution; all zeros when nothing was recorded.
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// `name<TAB>count` lines.
    pub fn to_tsv(&self) -> String {
        self.names
            .iter()
            .zip(&self.counts)
            .map(|(n, c)| format!("{n}\t{c}\n"))
            .collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (name, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("histogram line {}: expected name<TAB>count", i + 1)))?;
            let count = count
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("histogram line {}: bad count {count:?}", i + 1)))?;
            names.push(name.to_owned());
            counts.push(count);
        }
        Ok(Self { names, counts })
    }

    /// KL divergence from `self` to `other`; both must list the same actions in the same order.
    pub fn kl_to(&self, other: &Self) -> Result<f64> {
        if self.names != other.names {
            return Err(Error::MismatchedSupport(self.names.len(), other.names.len()));
        }
        kl_divergence(&self.normalized(), &other.normalized(), KL_SMOOTHING)
    }
}

/// `m[i][j] = D(hᵢ ‖ hⱼ)`.
pub fn policy_similarity_matrix(histograms: &[PolicyHistogram]) -> Result<Vec<Vec<f64>>> {
    histograms
        .iter()
        .map(|a| histograms.iter().map(|b| a.kl_to(b)).collect())
        .collect()
}

pub fn matrix_csv(labels: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("model");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(matrix) {
        out.push_str(l);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `(candidate − reference) / reference`.
pub fn improvement(candidate: usize, reference: usize) -> f64 {
    (candidate as f64 - reference as f64) / reference as f64
}

/// Signed percentage with one decimal, e.g. `+7.7%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:+.1}%", fraction * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub label: String,
    pub set: CoverageSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: &'static str,
    pub label: String,
    pub total: usize,
    pub unique_vs_baseline: usize,
    pub unique_vs_tcn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub rows: Vec<ReportRow>,
    pub best_candidate: usize,
    pub best_baseline: usize,
    pub best_tcn: Option<usize>,
    pub improvement_vs_baseline: f64,
    pub improvement_vs_tcn: Option<f64>,
}

fn best(sets: &[LabeledSet]) -> usize {
    sets.iter().map(|s| s.set.len()).max().unwrap_or(0)
}

/// Compares candidate sets against the best baseline and TCN sets.
///
/// Unique counts are taken against the union of the respective reference group.
pub fn build_report(candidates: &[LabeledSet], baselines: &[LabeledSet], tcn: &[LabeledSet]) -> Result<CoverageReport> {
    if candidates.is_empty() || baselines.is_empty() {
        return Err(Error::InsufficientData("report needs candidate and baseline sets".into()));
    }
    let base_union = coverage_union(baselines.iter().map(|s| &s.set));
    let tcn_union = coverage_union(tcn.iter().map(|s| &s.set));
    let mut rows = Vec::new();
    for (group, sets) in [("candidate", candidates), ("baseline", baselines), ("tcn", tcn)] {
        for s in sets {
            rows.push(ReportRow {
                group,
                label: s.label.clone(),
                total: s.set.len(),
                unique_vs_baseline: s.set.len() - s.set.intersection_len(&base_union),
                unique_vs_tcn: s.set.len() - s.set.intersection_len(&tcn_union),
            });
        }
    }
    let best_candidate = best(candidates);
    let best_baseline = best(baselines);
    let best_tcn = (!tcn.is_empty()).then(|| best(tcn));
    if best_baseline == 0 {
        return Err(Error::InsufficientData("baseline sets are empty".into()));
    }
    Ok(CoverageReport {
        rows,
        best_candidate,
        best_baseline,
        best_tcn,
        improvement_vs_baseline: improvement(best_candidate, best_baseline),
        improvement_vs_tcn: best_tcn.filter(|&t| t > 0).map(|t| improvement(best_candidate, t)),
    })
}

impl CoverageReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,label,total,unique_vs_baseline,unique_vs_tcn,improvement_vs_best_baseline_pct\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.group,
                r.label,
                r.total,
                r.unique_vs_baseline,
                r.unique_vs_tcn,
                improvement(r.total, self.best_baseline) * 100.0
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "best candidate {} vs best baseline {}: {}\n",
            self.best_candidate,
            self.best_baseline,
            format_percent(self.improvement_vs_baseline)
        );
        if let (Some(t), Some(imp)) = (self.best_tcn, self.improvement_vs_tcn) {
            let _ = writeln!(out, "best candidate {} vs best tcn {}: {}", self.best_candidate, t, format_percent(imp));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::coverage::BasicBlockId;

    fn set(range: std::ops::Range<u64>) -> CoverageSet {
        range.map(|o| BasicBlockId::new(0, o)).collect()
    }

    #[test]
    fn kl_fixtures() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5], KL_SMOOTHING).unwrap(), 0.0);
        let d = kl_divergence(&[0.5, 0.5], &[0.25, 0.75], KL_SMOOTHING).unwrap();
        let hand = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((d - 0.1438).abs() < 1e-4);
        assert!((d - hand).abs() < 1e-8);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5], KL_SMOOTHING).is_err());
        assert!(kl_divergence(&[1.0, 0.0], &[0.0, 1.0], KL_SMOOTHING).unwrap().is_finite());
    }

    #[test]
    fn matrix_properties() {
        let actions = ActionSpace::new(vec!["a".into(), "b".into()]).unwrap();
        let mut h1 = PolicyHistogram::new(&actions);
        let mut h2 = PolicyHistogram::new(&actions);
        for a in [0, 0, 1, 2] {
            h1.record(a);
        }
        for a in [2, 2, 2, 1] {
            h2.record(a);
        }
        let same = policy_similarity_matrix(&[h1.clone(), h1.clone()]).unwrap();
        assert_eq!(same, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let m = policy_similarity_matrix(&[h1.clone(), h2.clone()]).unwrap();
        assert_eq!(m[0][0], 0.0);
        assert_eq!(m[1][1], 0.0);
        assert_eq!(m[0][1], h1.kl_to(&h2).unwrap());
        assert_ne!(m[0][1], m[1][0]);
        assert_eq!(PolicyHistogram::from_tsv(&h1.to_tsv()).unwrap(), h1);
        let csv = matrix_csv(&["x".into(), "y".into()], &m);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn report_fixture() {
        assert_eq!(format_percent(improvement(57_993, 53_580 + 242)), "+7.7%");
        let r = build_report(
            &[LabeledSet {
                label: "c".into(),
                set: set(0..10),
            }],
            &[LabeledSet {
                label: "b".into(),
                set: set(0..10),
            }],
            &[],
        )
        .unwrap();
        assert_eq!(r.improvement_vs_baseline, 0.0);
        assert_eq!(r.rows[0].unique_vs_baseline, 0);
        assert!(r.summary().contains("+0.0%"));
    }

    proptest! {
        #[test]
        fn kl_nonnegative(p in prop::collection::vec(0u32..50, 1..12), seed in any::<u64>()) {
            let q: Vec<f64> = p.iter().enumerate().map(|(i, _)| ((seed >> (i % 60)) & 7) as f64).collect();
            let p: Vec<f64> = p.iter().map(|&v| f64::from(v)).collect();
            let d = kl_divergence(&p, &q, KL_SMOOTHING).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p, KL_SMOOTHING).unwrap(), 0.0);
        }

        #[test]
        fn unique_counts_match_naive(a in prop::collection::btree_set(0u64..60, 0..40),
                                     b in prop::collection::btree_set(0u64..60, 1..40),
                                     t in prop::collection::btree_set(0u64..60, 0..40)) {
            let to_set = |s: &std::collections::BTreeSet<u64>| s.iter().map(|&o| BasicBlockId::new(0, o)).collect::<CoverageSet>();
            let r = build_report(
                &[LabeledSet { label: "c".into(), set: to_set(&a) }],
                &[LabeledSet { label: "b".into(), set: to_set(&b) }],
                &[LabeledSet { label: "t".into(), set: to_set(&t) }],
            ).unwrap();
            prop_assert_eq!(r.rows[0].unique_vs_baseline, a.iter().filter(|x| !b.contains(x)).count());
            prop_assert_eq!(r.rows[0].unique_vs_tcn, a.iter().filter(|x| !t.contains(x)).count());
            let expect = (a.len() as f64 - b.len() as f64) / b.len() as f64;
            prop_assert_eq!(r.improvement_vs_baseline, expect);
        }
    }
}
