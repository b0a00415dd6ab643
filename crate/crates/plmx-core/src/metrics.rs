//! Confusion-matrix evaluation: per-class precision/recall/F1 with support,
//! weighted-average F1, and accuracy, plus the result-table renderer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::{render_pipe_table, Label, Language};
use crate::error::{Error, Result};

/// 5×5 count matrix, rows = gold class, columns = predicted class, indexed
/// by [`Label::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, gold: Label, pred: Label) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn count(&self, gold: Label, pred: Label) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn set_count(&mut self, gold: Label, pred: Label, n: u64) {
        self.counts[gold.index()][pred.index()] = n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..5).map(|i| self.counts[i][i]).sum()
    }

    /// Gold-class support.
    pub fn support(&self, gold: Label) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    pub fn predicted_total(&self, pred: Label) -> u64 {
        (0..5).map(|g| self.counts[g][pred.index()]).sum()
    }
}

/// Tallies gold/prediction pairs.
pub fn confusion(golds: &[Label], preds: &[Label]) -> Result<ConfusionMatrix> {
    if golds.len() != preds.len() {
        return Err(Error::Parameter(format!(
            "confusion: {} gold labels vs {} predictions",
            golds.len(),
            preds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::Parameter("confusion: empty label sequences".into()));
    }
    let mut cm = ConfusionMatrix::new();
    for (&g, &p) in golds.iter().zip(preds) {
        cm.record(g, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class and aggregate metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Indexed by [`Label::index`].
    pub per_class: [ClassMetrics; 5],
    pub weighted_avg_f1: f64,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.per_class[label.index()]
    }
}

/// Harmonic mean of precision and recall; 0/0 → 0 by convention.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Derives the full report from a confusion matrix. Undefined ratios
/// (zero denominators) become 0 by convention so aggregates stay defined.
pub fn class_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("class_report: empty confusion matrix".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = [ClassMetrics { precision: 0.0, recall: 0.0, f1: 0.0, support: 0 }; 5];
    let mut weighted_f1 = 0.0;
    for label in Label::ALL {
        let tp = cm.count(label, label);
        let support = cm.support(label);
        let predicted = cm.predicted_total(label);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = f1_score(precision, recall);
        per_class[label.index()] = ClassMetrics { precision, recall, f1, support };
        weighted_f1 += support as f64 * f1;
    }
    Ok(MetricsReport {
        per_class,
        weighted_avg_f1: weighted_f1 / total as f64,
        accuracy: cm.trace() as f64 / total as f64,
    })
}

/// Rounds half-up to two decimals (rendering only; internal values keep
/// full precision).
pub fn round2(x: f64) -> f64 {
    libm::floor(x * 100.0 + 0.5) / 100.0
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Renders the result table: one row per class in
/// [`Label::TABLE_ORDER`], with the dataset name and the two aggregate
/// columns carried on the first row.
pub fn render_table(report: &MetricsReport, language: Language) -> String {
    let mut rows: Vec<Vec<String>> = Vec::new();
    rows.push(
        ["Data", "Classes", "Precision", "Recall", "F1 Score", "Weighted Average-F1", "Accuracy"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for (i, label) in Label::TABLE_ORDER.iter().enumerate() {
        let m = report.class(*label);
        let mut row = Vec::new();
        row.push(if i == 0 { language.display().to_string() } else { String::new() });
        row.push(label.display(language).to_string());
        row.push(fmt2(m.precision));
        row.push(fmt2(m.recall));
        row.push(fmt2(m.f1));
        if i == 0 {
            row.push(fmt2(report.weighted_avg_f1));
            row.push(fmt2(report.accuracy));
        } else {
            row.push(String::new());
            row.push(String::new());
        }
        rows.push(row);
    }
    render_pipe_table(&rows)
}

/// Machine-readable report: TSV with one row per class plus trailing
/// aggregate lines, values at full precision.
pub fn report_to_tsv(report: &MetricsReport, language: Language) -> String {
    let mut out = String::from("class\tprecision\trecall\tf1\tsupport\n");
    for label in Label::TABLE_ORDER {
        let m = report.class(label);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            label.canonical(language),
            m.precision,
            m.recall,
            m.f1,
            m.support
        ));
    }
    out.push_str(&format!("weighted_avg_f1\t{}\n", report.weighted_avg_f1));
    out.push_str(&format!("accuracy\t{}\n", report.accuracy));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use alloc::vec;
    use alloc::vec::Vec;

    fn diag(counts: [u64; 5]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new();
        for (label, n) in Label::ALL.into_iter().zip(counts) {
            cm.set_count(label, label, n);
        }
        cm
    }

    #[test]
    fn confusion_perfect_predictions_is_diagonal() {
        let golds = [Label::Positive, Label::Negative, Label::Positive];
        let cm = confusion(&golds, &golds).unwrap();
        assert_eq!(cm.trace(), 3);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn confusion_single_off_diagonal() {
        let cm = confusion(&[Label::Positive], &[Label::Negative]).unwrap();
        assert_eq!(cm.count(Label::Positive, Label::Negative), 1);
        assert_eq!(cm.trace(), 0);
    }

    #[test]
    fn confusion_matches_brute_force_tally() {
        let mut rng = SplitMix64::new(42);
        let golds: Vec<Label> =
            (0..100).map(|_| Label::from_index(rng.below(5)).unwrap()).collect();
        let preds: Vec<Label> =
            (0..100).map(|_| Label::from_index(rng.below(5)).unwrap()).collect();
        let cm = confusion(&golds, &preds).unwrap();
        for g in Label::ALL {
            for p in Label::ALL {
                let want =
                    golds.iter().zip(&preds).filter(|(a, b)| **a == g && **b == p).count() as u64;
                assert_eq!(cm.count(g, p), want, "{g:?} -> {p:?}");
            }
        }
    }

    #[test]
    fn confusion_rejects_mismatch_and_empty() {
        assert!(matches!(
            confusion(&[Label::Positive], &[]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(confusion(&[], &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn f1_reproduces_reference_rows() {
        // Positive rows of the two reference result tables
        let f1 = f1_score(0.72, 0.50);
        assert!((f1 - 0.59).abs() < 0.005, "0.72/0.50 -> {f1}");
        let f1 = f1_score(0.39, 0.73);
        assert!((f1 - 0.51).abs() < 0.005, "0.39/0.73 -> {f1}");
    }

    #[test]
    fn class_report_on_exact_ratio_matrix() {
        // Positive: TP=18, FP=7 (P=0.72), FN=18 (R=0.50)
        let mut cm = ConfusionMatrix::new();
        cm.set_count(Label::Positive, Label::Positive, 18);
        cm.set_count(Label::Negative, Label::Positive, 7);
        cm.set_count(Label::Positive, Label::Negative, 18);
        cm.set_count(Label::Negative, Label::Negative, 10);
        let report = class_report(&cm).unwrap();
        let pos = report.class(Label::Positive);
        assert!((pos.precision - 0.72).abs() < 1e-12);
        assert!((pos.recall - 0.50).abs() < 1e-12);
        assert!((pos.f1 - 0.59).abs() < 0.005);
    }

    #[test]
    fn class_report_diagonal_is_perfect() {
        let report = class_report(&diag([3, 1, 4, 1, 5])).unwrap();
        for label in Label::ALL {
            let m = report.class(label);
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.weighted_avg_f1, 1.0);
    }

    #[test]
    fn class_report_zero_over_zero_convention() {
        // UnknownState never appears as gold or prediction
        let mut cm = ConfusionMatrix::new();
        cm.set_count(Label::Positive, Label::Positive, 5);
        let report = class_report(&cm).unwrap();
        let m = report.class(Label::UnknownState);
        assert_eq!((m.precision, m.recall, m.f1, m.support), (0.0, 0.0, 0.0, 0));
    }

    #[test]
    fn class_report_rejects_empty_matrix() {
        assert!(matches!(class_report(&ConfusionMatrix::new()), Err(Error::Data(_))));
    }

    #[test]
    fn micro_recall_equals_accuracy() {
        let mut rng = SplitMix64::new(9);
        let mut cm = ConfusionMatrix::new();
        for g in Label::ALL {
            for p in Label::ALL {
                cm.set_count(g, p, rng.below(20) as u64);
            }
        }
        let report = class_report(&cm).unwrap();
        // micro recall = Σ TP / Σ support = trace/total = accuracy
        let micro: f64 = Label::ALL
            .iter()
            .map(|&l| cm.count(l, l) as f64)
            .sum::<f64>()
            / cm.total() as f64;
        assert!((micro - report.accuracy).abs() < 1e-15);
    }

    #[test]
    fn weighted_f1_between_min_and_max_class_f1() {
        let mut rng = SplitMix64::new(10);
        for _ in 0..20 {
            let mut cm = ConfusionMatrix::new();
            for g in Label::ALL {
                for p in Label::ALL {
                    cm.set_count(g, p, 1 + rng.below(15) as u64); // all supports > 0
                }
            }
            let report = class_report(&cm).unwrap();
            let f1s: Vec<f64> = report.per_class.iter().map(|m| m.f1).collect();
            let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(report.weighted_avg_f1 >= lo - 1e-12);
            assert!(report.weighted_avg_f1 <= hi + 1e-12);
        }
    }

    #[test]
    fn report_invariant_under_label_permutation() {
        let mut rng = SplitMix64::new(11);
        let mut cm = ConfusionMatrix::new();
        for g in Label::ALL {
            for p in Label::ALL {
                cm.set_count(g, p, rng.below(9) as u64);
            }
        }
        cm.set_count(Label::Positive, Label::Positive, 3);
        let report = class_report(&cm).unwrap();

        // permute class identities simultaneously on rows and columns
        let perm = [Label::UnknownState, Label::Positive, Label::OtherLanguage, Label::Negative, Label::MixedFeelings];
        let mut permuted = ConfusionMatrix::new();
        for g in Label::ALL {
            for p in Label::ALL {
                permuted.set_count(perm[g.index()], perm[p.index()], cm.count(g, p));
            }
        }
        let report2 = class_report(&permuted).unwrap();
        assert_eq!(report.accuracy, report2.accuracy);
        assert_eq!(report.weighted_avg_f1, report2.weighted_avg_f1);
        for label in Label::ALL {
            assert_eq!(report.class(label), report2.class(perm[label.index()]));
        }
    }

    #[test]
    fn f1_is_harmonic_mean_with_zero_rule() {
        assert_eq!(f1_score(0.0, 0.9), 0.0);
        assert_eq!(f1_score(0.9, 0.0), 0.0);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        let mut rng = SplitMix64::new(12);
        for _ in 0..100 {
            let p = rng.next_f64();
            let r = rng.next_f64();
            let f1 = f1_score(p, r);
            assert!(f1 <= p.min(r) * 2.0 / 1.0 + 1e-15);
            assert!(f1 <= 2.0 * p.min(r) / (p.min(r) + p.max(r)) * p.max(r) + 1e-12);
            assert!(f1 <= p.max(r) + 1e-15);
        }
    }

    #[test]
    fn render_table_layout_and_rounding() {
        let mut cm = ConfusionMatrix::new();
        cm.set_count(Label::Positive, Label::Positive, 18);
        cm.set_count(Label::Negative, Label::Positive, 7);
        cm.set_count(Label::Positive, Label::Negative, 18);
        cm.set_count(Label::Negative, Label::Negative, 10);
        let report = class_report(&cm).unwrap();
        let table = render_table(&report, Language::MalayalamEnglish);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].contains("Data") && lines[0].contains("Weighted Average-F1"));
        assert!(lines[1].contains("Mixed feelings"));
        assert!(lines[5].contains("unknown state"));
        let positive_row = lines[3];
        assert!(positive_row.contains("Positive"));
        for cell in ["0.72", "0.50", "0.59"] {
            assert!(positive_row.contains(cell), "expected {cell} in {positive_row}");
        }
        assert!(lines.iter().any(|l| l.contains("not-malayalam")));
    }

    #[test]
    fn render_table_all_zero_report() {
        let mut cm = ConfusionMatrix::new();
        cm.set_count(Label::Positive, Label::Negative, 1);
        let report = class_report(&cm).unwrap();
        let table = render_table(&report, Language::TamilEnglish);
        assert!(table.contains("0.00"));
    }

    #[test]
    fn round2_is_half_up() {
        assert_eq!(round2(0.725), 0.73);
        assert_eq!(round2(0.5901639344262295), 0.59);
        assert_eq!(round2(0.0), 0.0);
        assert_eq!(round2(1.0), 1.0);
    }

    #[test]
    fn tsv_report_full_precision_roundtrip() {
        let mut cm = ConfusionMatrix::new();
        cm.set_count(Label::Positive, Label::Positive, 39);
        cm.set_count(Label::Positive, Label::Negative, 14);
        cm.set_count(Label::Negative, Label::Positive, 61);
        let report = class_report(&cm).unwrap();
        let tsv = report_to_tsv(&report, Language::TamilEnglish);
        let mut lines = tsv.lines();
        assert_eq!(lines.next().unwrap(), "class\tprecision\trecall\tf1\tsupport");
        for (line, label) in lines.by_ref().take(5).zip(Label::TABLE_ORDER) {
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields[0], label.canonical(Language::TamilEnglish));
            let m = report.class(label);
            assert_eq!(fields[1].parse::<f64>().unwrap(), m.precision);
            assert_eq!(fields[2].parse::<f64>().unwrap(), m.recall);
            assert_eq!(fields[3].parse::<f64>().unwrap(), m.f1);
            assert_eq!(fields[4].parse::<u64>().unwrap(), m.support);
        }
        let wf1 = lines.next().unwrap();
        assert!(wf1.starts_with("weighted_avg_f1\t"));
        assert_eq!(
            wf1.split('\t').nth(1).unwrap().parse::<f64>().unwrap(),
            report.weighted_avg_f1
        );
    }
}
