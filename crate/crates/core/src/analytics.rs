//! Transition matrices between snapshots, re-probe noise baselines, aggregate
//! counts and HighlyKnown gain metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classify::coarsen;
use crate::error::{Error, Result};
use crate::model::{ClassificationSnapshot, CoarseClass, KnowledgeClass, TransitionMatrix};

fn fine_labels() -> Vec<String> {
    KnowledgeClass::ALL.iter().map(|c| c.to_string()).collect()
}

fn coarse_labels() -> Vec<String> {
    CoarseClass::ALL.iter().map(|c| c.to_string()).collect()
}

fn check_same_ids(before: &ClassificationSnapshot, after: &ClassificationSnapshot) -> Result<()> {
    let only_before = before.labels.keys().filter(|id| !after.labels.contains_key(*id)).count();
    let only_after = after.labels.keys().filter(|id| !before.labels.contains_key(*id)).count();
    if only_before + only_after > 0 {
        return Err(Error::IdSetMismatch {
            only_before,
            only_after,
        });
    }
    Ok(())
}

/// `counts[i][j]` = pairs labelled `i` before and `j` after; 4x4, or 3x3 when `coarse`.
pub fn transition_matrix(
    before: &ClassificationSnapshot,
    after: &ClassificationSnapshot,
    coarse: bool,
) -> Result<TransitionMatrix> {
    check_same_ids(before, after)?;
    let mut m = if coarse {
        TransitionMatrix::zeros(coarse_labels(), coarse_labels())
    } else {
        TransitionMatrix::zeros(fine_labels(), fine_labels())
    };
    for (id, b) in &before.labels {
        let a = after.labels[id];
        let (i, j) = if coarse {
            (coarsen(*b).index(), coarsen(a).index())
        } else {
            (b.index(), a.index())
        };
        m.counts[i][j] += 1;
    }
    Ok(m)
}

/// Fine rows, coarse columns: the layout used when only the target needs coarsening.
pub fn collapse_columns(fine: &TransitionMatrix) -> TransitionMatrix {
    let mut m = TransitionMatrix::zeros(fine.row_labels.clone(), coarse_labels());
    for (i, row) in fine.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let to = coarsen(KnowledgeClass::ALL[j]);
            m.counts[i][to.index()] += c;
        }
    }
    m
}

/// Per-label counts in display order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
}

impl LabelCounts {
    pub fn new(labels: Vec<String>, counts: Vec<u64>) -> Self {
        assert_eq!(labels.len(), counts.len());
        LabelCounts { labels, counts }
    }

    pub fn coarse(counts: [u64; 3]) -> Self {
        LabelCounts::new(coarse_labels(), counts.to_vec())
    }

    pub fn get(&self, label: &str) -> Option<u64> {
        self.labels.iter().position(|l| l == label).map(|i| self.counts[i])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_map(&self) -> BTreeMap<&str, u64> {
        self.labels.iter().map(String::as_str).zip(self.counts.iter().copied()).collect()
    }
}

pub fn aggregate_counts(snapshot: &ClassificationSnapshot, coarse: bool) -> LabelCounts {
    if coarse {
        let mut counts = vec![0; 3];
        for c in snapshot.labels.values() {
            counts[coarsen(*c).index()] += 1;
        }
        LabelCounts::new(coarse_labels(), counts)
    } else {
        let mut counts = vec![0; 4];
        for c in snapshot.labels.values() {
            counts[c.index()] += 1;
        }
        LabelCounts::new(fine_labels(), counts)
    }
}

/// Coarse transitions between two probes of the same model: churn owed to
/// prompt and sampling randomness alone.
pub fn noise_baseline(
    first: &ClassificationSnapshot,
    second: &ClassificationSnapshot,
) -> Result<TransitionMatrix> {
    if first.model_ref != second.model_ref {
        return Err(Error::ModelMismatch(
            first.model_ref.clone(),
            second.model_ref.clone(),
        ));
    }
    transition_matrix(first, second, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub highly_known: [u64; 3],
    /// `HK_two / HK_one - 1`; `None` when `HK_one` is zero.
    pub relative_gain: Option<f64>,
    /// `(HK_two - HK_origin) / (HK_one - HK_origin) - 1`; `None` when stage one added nothing.
    pub incremental_gain: Option<f64>,
}

/// HighlyKnown gain of two-stage over one-stage tuning, overall and counting only
/// pairs gained over the untuned model.
pub fn gain_report(
    origin: &LabelCounts,
    one_stage: &LabelCounts,
    two_stage: &LabelCounts,
) -> Result<GainReport> {
    if origin.labels != one_stage.labels || origin.labels != two_stage.labels {
        return Err(Error::Config("gain report inputs use different labels".into()));
    }
    let hk = |c: &LabelCounts| {
        c.get(KnowledgeClass::HighlyKnown.as_str())
            .ok_or_else(|| Error::Config("counts lack a HighlyKnown label".into()))
    };
    let (h0, h1, h2) = (hk(origin)?, hk(one_stage)?, hk(two_stage)?);
    let relative_gain = (h1 != 0).then(|| h2 as f64 / h1 as f64 - 1.0);
    let gained_one = h1 as f64 - h0 as f64;
    let incremental_gain = (gained_one != 0.0).then(|| (h2 as f64 - h0 as f64) / gained_one - 1.0);
    Ok(GainReport {
        highly_known: [h0, h1, h2],
        relative_gain,
        incremental_gain,
    })
}

/// Share of a row that changed label, with its binomial standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowChurn {
    pub label: String,
    pub total: u64,
    pub changed: u64,
    pub fraction: f64,
    pub std_error: f64,
}

pub fn row_churn(m: &TransitionMatrix) -> Vec<RowChurn> {
    m.counts
        .iter()
        .zip(&m.row_labels)
        .map(|(row, label)| {
            let total: u64 = row.iter().sum();
            let stayed = m
                .col_labels
                .iter()
                .position(|c| c == label)
                .map(|j| row[j])
                .unwrap_or(0);
            let changed = total - stayed;
            let (fraction, std_error) = if total == 0 {
                (0.0, 0.0)
            } else {
                let f = changed as f64 / total as f64;
                (f, (f * (1.0 - f) / total as f64).sqrt())
            };
            RowChurn {
                label: label.clone(),
                total,
                changed,
                fraction,
                std_error,
            }
        })
        .collect()
}

/// Accuracy on each class of `origin`, from per-pair correctness.
/// Classes with no scored pair are omitted.
pub fn accuracy_by_class(
    correct: &BTreeMap<String, bool>,
    origin: &ClassificationSnapshot,
) -> BTreeMap<KnowledgeClass, f64> {
    let mut tallies: BTreeMap<KnowledgeClass, (u64, u64)> = BTreeMap::new();
    for (id, ok) in correct {
        if let Some(class) = origin.get(id) {
            let t = tallies.entry(class).or_default();
            t.0 += u64::from(*ok);
            t.1 += 1;
        }
    }
    tallies
        .into_iter()
        .map(|(c, (k, n))| (c, k as f64 / n as f64))
        .collect()
}

/// Everything `analyze` prints about a before/after snapshot pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub fine: TransitionMatrix,
    pub coarse: TransitionMatrix,
    pub before: LabelCounts,
    pub after: LabelCounts,
    pub churn: Vec<RowChurn>,
    pub baseline: Option<TransitionMatrix>,
    pub baseline_churn: Option<Vec<RowChurn>>,
    pub gain: Option<GainReport>,
}

impl TransitionReport {
    /// `origin`, when given, is the untuned snapshot and makes `before` the
    /// one-stage snapshot for the gain computation. `baseline` is a same-model re-probe pair.
    pub fn build(
        before: &ClassificationSnapshot,
        after: &ClassificationSnapshot,
        origin: Option<&ClassificationSnapshot>,
        baseline: Option<(&ClassificationSnapshot, &ClassificationSnapshot)>,
    ) -> Result<Self> {
        let fine = transition_matrix(before, after, false)?;
        let coarse = transition_matrix(before, after, true)?;
        let baseline = baseline.map(|(a, b)| noise_baseline(a, b)).transpose()?;
        let gain = origin
            .map(|o| {
                gain_report(
                    &aggregate_counts(o, true),
                    &aggregate_counts(before, true),
                    &aggregate_counts(after, true),
                )
            })
            .transpose()?;
        Ok(TransitionReport {
            churn: row_churn(&coarse),
            baseline_churn: baseline.as_ref().map(row_churn),
            before: aggregate_counts(before, true),
            after: aggregate_counts(after, true),
            fine,
            coarse,
            baseline,
            gain,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("transitions by initial label\n");
        out.push_str(&render_matrix(&collapse_columns(&self.fine)));
        out.push_str("\ncoarse transitions\n");
        out.push_str(&render_matrix(&self.coarse));
        if let Some(b) = &self.baseline {
            out.push_str("\nre-probe baseline (same model)\n");
            out.push_str(&render_matrix(b));
        }
        out.push_str("\nrow churn\n");
        out.push_str(&render_churn(&self.churn, self.baseline_churn.as_deref()));
        out.push_str("\ncounts before\n");
        out.push_str(&render_counts(&self.before));
        out.push_str("\ncounts after\n");
        out.push_str(&render_counts(&self.after));
        if let Some(g) = &self.gain {
            out.push('\n');
            out.push_str(&render_gain(g));
        }
        out
    }
}

pub fn render_matrix(m: &TransitionMatrix) -> String {
    let width = m
        .row_labels
        .iter()
        .chain(&m.col_labels)
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = format!("{:<width$}", "from\\to");
    for c in &m.col_labels {
        let _ = write!(out, " {c:>width$}");
    }
    let _ = writeln!(out, " {:>width$}", "total");
    for (label, row) in m.row_labels.iter().zip(&m.counts) {
        let _ = write!(out, "{label:<width$}");
        for c in row {
            let _ = write!(out, " {c:>width$}");
        }
        let _ = writeln!(out, " {:>width$}", row.iter().sum::<u64>());
    }
    out
}

pub fn render_counts(c: &LabelCounts) -> String {
    let labels: Vec<&str> = c.labels.iter().map(String::as_str).collect();
    let counts: Vec<String> = c.counts.iter().map(u64::to_string).collect();
    format!("{}\n{}\n", labels.join(" "), counts.join(" "))
}

fn render_churn(observed: &[RowChurn], baseline: Option<&[RowChurn]>) -> String {
    let mut out = String::new();
    for (i, r) in observed.iter().enumerate() {
        let _ = write!(
            out,
            "{:<12} {:>7.2}% ± {:.2}",
            r.label,
            100.0 * r.fraction,
            100.0 * r.std_error
        );
        if let Some(b) = baseline.and_then(|b| b.get(i)) {
            let _ = write!(out, "   baseline {:>7.2}% ± {:.2}", 100.0 * b.fraction, 100.0 * b.std_error);
        }
        out.push('\n');
    }
    out
}

fn percent(x: Option<f64>) -> String {
    x.map(|v| format!("{:.2}%", 100.0 * v)).unwrap_or_else(|| "undefined".into())
}

pub fn render_gain(g: &GainReport) -> String {
    format!(
        "HighlyKnown origin/one-stage/two-stage: {} {} {}\nrelative gain: {}\nincremental gain: {}\n",
        g.highly_known[0],
        g.highly_known[1],
        g.highly_known[2],
        percent(g.relative_gain),
        percent(g.incremental_gain)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn snap(model: &str, labels: &[(&str, KnowledgeClass)]) -> ClassificationSnapshot {
        ClassificationSnapshot::new(
            model,
            "d",
            0,
            labels.iter().map(|(i, c)| (i.to_string(), *c)).collect(),
        )
    }

    #[test]
    fn identical_snapshots_are_diagonal() {
        use KnowledgeClass::*;
        let s = snap("m", &[("a", HighlyKnown), ("b", Unknown), ("c", WeaklyKnown)]);
        let m = transition_matrix(&s, &s, false).unwrap();
        assert_eq!(m.off_diagonal(), 0);
        assert_eq!(m.total(), 3);
    }

    #[test]
    fn hand_counted_pair() {
        use KnowledgeClass::*;
        let before = snap("m", &[("a", HighlyKnown), ("b", Unknown)]);
        let after = snap("m2", &[("a", MaybeKnown), ("b", Unknown)]);
        let m = transition_matrix(&before, &after, false).unwrap();
        assert_eq!(m.get("HighlyKnown", "MaybeKnown"), Some(1));
        assert_eq!(m.get("Unknown", "Unknown"), Some(1));
        assert_eq!(m.total(), 2);
    }

    #[test]
    fn id_mismatch_is_rejected() {
        use KnowledgeClass::*;
        let a = snap("m", &[("a", HighlyKnown)]);
        let b = snap("m", &[("b", HighlyKnown)]);
        assert!(matches!(
            transition_matrix(&a, &b, true),
            Err(Error::IdSetMismatch { only_before: 1, only_after: 1 })
        ));
    }

    #[test]
    fn published_first_row() {
        let f = fixtures::qwen2();
        let m = collapse_columns(&transition_matrix(&f.snap0, &f.snap1, false).unwrap());
        assert_eq!(m.counts[0], vec![27282, 3952, 3192]);
        assert_eq!(m.row_sums()[0], 34426);
    }

    #[test]
    fn published_aggregates() {
        let f = fixtures::qwen2();
        assert_eq!(aggregate_counts(&f.snap1, true).counts, vec![49959, 20665, 98540]);
        assert_eq!(
            aggregate_counts(f.snap2.as_ref().unwrap(), true).counts,
            vec![53691, 18288, 97185]
        );
        let empty = ClassificationSnapshot::new("m", "d", 0, BTreeMap::new());
        assert_eq!(aggregate_counts(&empty, true).counts, vec![0, 0, 0]);
        assert_eq!(aggregate_counts(&empty, false).counts, vec![0, 0, 0, 0]);
    }

    #[test]
    fn baseline_requires_same_model() {
        use KnowledgeClass::*;
        let a = snap("m1", &[("a", HighlyKnown)]);
        let b = snap("m2", &[("a", HighlyKnown)]);
        assert!(matches!(noise_baseline(&a, &b), Err(Error::ModelMismatch(..))));
        assert_eq!(noise_baseline(&a, &a).unwrap().off_diagonal(), 0);
    }

    #[test]
    fn published_noise_off_diagonal() {
        let m = fixtures::retest_noise_matrix();
        let off: Vec<u64> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| m.counts[i][j])
            .collect();
        assert_eq!(off, vec![3190, 0, 3285, 5236, 0, 5285]);
    }

    #[test]
    fn gains() {
        let g = gain_report(
            &LabelCounts::coarse(fixtures::COARSE_COUNTS_ORIGIN),
            &LabelCounts::coarse(fixtures::COARSE_COUNTS_ONE_STAGE),
            &LabelCounts::coarse(fixtures::COARSE_COUNTS_TWO_STAGE),
        )
        .unwrap();
        assert!((g.relative_gain.unwrap() - (53691.0 / 49959.0 - 1.0)).abs() < 1e-12);
        assert!((g.incremental_gain.unwrap() - (3732.0 / 15533.0)).abs() < 1e-12);
        let same = LabelCounts::coarse([1, 2, 3]);
        let flat = gain_report(&same, &LabelCounts::coarse([5, 0, 1]), &LabelCounts::coarse([5, 1, 0])).unwrap();
        assert_eq!(flat.relative_gain, Some(0.0));
        let undefined = gain_report(&same, &same, &same).unwrap();
        assert_eq!(undefined.incremental_gain, None);
        let zero = LabelCounts::coarse([0, 2, 3]);
        assert_eq!(gain_report(&zero, &zero, &zero).unwrap().relative_gain, None);
    }

    #[test]
    fn churn_with_error_bars() {
        let m = fixtures::retest_noise_matrix();
        let churn = row_churn(&m);
        assert_eq!(churn[0].changed, 3190);
        assert_eq!(churn[0].total, 35177);
        let f = 3190.0 / 35177.0;
        assert!((churn[0].std_error - (f * (1.0 - f) / 35177.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn report_shows_aggregate_line() {
        let f = fixtures::qwen2();
        let report = TransitionReport::build(&f.snap0, &f.snap1, None, None).unwrap();
        let text = report.render();
        assert!(text.contains("49959 20665 98540"), "{text}");
        let report =
            TransitionReport::build(&f.snap1, f.snap2.as_ref().unwrap(), Some(&f.snap0), None).unwrap();
        assert!(report.render().contains("relative gain: 7.47%"));
        assert!(report.render().contains("incremental gain: 24.03%"));
    }

    #[test]
    fn per_class_accuracy() {
        use KnowledgeClass::*;
        let origin = snap("m", &[("a", HighlyKnown), ("b", HighlyKnown), ("c", Unknown)]);
        let correct: BTreeMap<String, bool> =
            [("a", true), ("b", false), ("c", false)].iter().map(|(i, c)| (i.to_string(), *c)).collect();
        let acc = accuracy_by_class(&correct, &origin);
        assert_eq!(acc[&HighlyKnown], 0.5);
        assert_eq!(acc[&Unknown], 0.0);
        assert!(!acc.contains_key(&MaybeKnown));
    }

    fn random_pair() -> impl proptest::strategy::Strategy<Value = Vec<(KnowledgeClass, KnowledgeClass)>> {
        let class = prop::sample::select(KnowledgeClass::ALL.to_vec());
        prop::collection::vec((class.clone(), class), 0..60)
    }

    proptest! {
        #[test]
        fn marginals_and_coarsening_commute(pairs in random_pair()) {
            let ids: Vec<String> = (0..pairs.len()).map(|i| format!("q{i}")).collect();
            let before = ClassificationSnapshot::new("m", "d", 0, ids.iter().cloned().zip(pairs.iter().map(|p| p.0)).collect());
            let after = ClassificationSnapshot::new("m", "d", 0, ids.iter().cloned().zip(pairs.iter().map(|p| p.1)).collect());
            let fine = transition_matrix(&before, &after, false).unwrap();
            let coarse = transition_matrix(&before, &after, true).unwrap();
            prop_assert_eq!(fine.row_sums(), aggregate_counts(&before, false).counts);
            prop_assert_eq!(fine.col_sums(), aggregate_counts(&after, false).counts);
            prop_assert_eq!(coarse.row_sums(), aggregate_counts(&before, true).counts);
            prop_assert_eq!(coarse.col_sums(), aggregate_counts(&after, true).counts);
            let mut pushed = vec![vec![0u64; 3]; 3];
            for (i, row) in fine.counts.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    pushed[coarsen(KnowledgeClass::ALL[i]).index()][coarsen(KnowledgeClass::ALL[j]).index()] += c;
                }
            }
            prop_assert_eq!(pushed, coarse.counts);
            prop_assert_eq!(fine.total(), pairs.len() as u64);
        }
    }
}
