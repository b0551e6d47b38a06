//! Ranking metrics over bag scores: per-class average precision, AUC via the
//! Mann-Whitney statistic, and d-prime, with macro averages across classes.
//!
//! Conventions, fixed here once for the whole crate:
//! - AP is the mean of precision-at-positive-ranks, no interpolation. Ties
//!   break by original index ascending, so results are deterministic.
//! - AUC is the probability a random positive outscores a random negative,
//!   with tied pairs counted 1/2 (midrank formulation, one sort).
//! - d' = sqrt(2) * Phi^-1(AUC).
//! - Classes without both a positive and a negative example are skipped and
//!   reported, never averaged in as zeros.

use std::fmt::Write as _;

use thiserror::Error;

use crate::tensor::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("score and label shapes differ: {0}x{1} vs {2} labels")]
    ShapeMismatch(usize, usize, usize),
    #[error("every class was skipped (no class has both positive and negative examples)")]
    AllClassesSkipped,
}

/// Eval-set scores (`n x k`, one row per bag) paired with binary labels in
/// the same layout.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    scores: Matrix,
    labels: Vec<bool>,
}

impl ScoreTable {
    pub fn new(scores: Matrix, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if labels.len() != scores.rows() * scores.cols() {
            return Err(MetricsError::ShapeMismatch(scores.rows(), scores.cols(), labels.len()));
        }
        Ok(ScoreTable { scores, labels })
    }

    pub fn num_examples(&self) -> usize {
        self.scores.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.cols()
    }

    fn class_column(&self, k: usize) -> (Vec<f64>, Vec<bool>) {
        let n = self.scores.rows();
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            scores.push(self.scores[(r, k)]);
            labels.push(self.labels[r * self.scores.cols() + k]);
        }
        (scores, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub ap: f64,
    pub auc: f64,
    pub d_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroMetrics {
    pub map: f64,
    pub auc: f64,
    pub d_prime: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Per-class metrics, `None` for skipped classes. Indexed by class.
    pub per_class: Vec<Option<ClassMetrics>>,
    pub macro_avg: MacroMetrics,
    /// Classes with zero positives or zero negatives in the eval set.
    pub skipped_classes: Vec<usize>,
    /// Classes whose AUC saturated at exactly 0 or 1, making d' infinite.
    pub saturated_classes: Vec<usize>,
}

/// Average precision of one class. `None` when there are no positives.
///
/// Scores are ranked descending; ties break by original index ascending.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// AUC of one class via the rank-sum statistic with midranks for ties.
/// `None` when labels are one-sided.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based midrank shared by the whole tied group.
        let midrank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        start = end;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// d' = sqrt(2) * Phi^-1(auc). AUC of exactly 0 or 1 yields the infinite
/// sentinel, which [`evaluate`] flags per class.
pub fn d_prime(auc: f64) -> f64 {
    assert!((0.0..=1.0).contains(&auc), "auc out of [0,1]: {auc}");
    if auc <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if auc >= 1.0 {
        return f64::INFINITY;
    }
    std::f64::consts::SQRT_2 * normal_quantile(auc)
}

/// Standard normal quantile via the Wichura AS241 (PPND16) rational
/// approximation, accurate to well below 1e-9 across (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0,1), got {p}");

    const A: [f64; 8] = [
        3.3871328727963666080e0,
        1.3314166789178437745e2,
        1.9715909503065514427e3,
        1.3731693765509461125e4,
        4.5921953931549871457e4,
        6.7265770927008700853e4,
        3.3430575583588128105e4,
        2.5090809287301226727e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252e1,
        6.8718700749205790830e2,
        5.3941960214247511077e3,
        2.1213794301586595867e4,
        3.9307895800092710610e4,
        2.8729085735721942674e4,
        5.2264952788528545610e3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734e0,
        4.63033784615654529590e0,
        5.76949722146069140550e0,
        3.64784832476320460504e0,
        1.27045825245236838258e0,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187e0,
        1.67638483018380384940e0,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720e0,
        5.46378491116411436990e0,
        1.78482653991729133580e0,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];

    fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Per-class and macro metrics for a score table. Macro values are means
/// over the non-skipped classes, accumulated in ascending class order.
pub fn evaluate(table: &ScoreTable) -> Result<MetricsReport, MetricsError> {
    let k = table.num_classes();
    let mut per_class = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    let mut saturated = Vec::new();
    let (mut sum_ap, mut sum_auc, mut sum_dp) = (0.0, 0.0, 0.0);
    let mut counted = 0usize;

    for class in 0..k {
        let (scores, labels) = table.class_column(class);
        match (average_precision(&scores, &labels), auc(&scores, &labels)) {
            (Some(ap), Some(class_auc)) => {
                let dp = d_prime(class_auc);
                if dp.is_infinite() {
                    saturated.push(class);
                }
                per_class.push(Some(ClassMetrics { ap, auc: class_auc, d_prime: dp }));
                sum_ap += ap;
                sum_auc += class_auc;
                sum_dp += dp;
                counted += 1;
            }
            _ => {
                per_class.push(None);
                skipped.push(class);
            }
        }
    }

    if counted == 0 {
        return Err(MetricsError::AllClassesSkipped);
    }
    let n = counted as f64;
    Ok(MetricsReport {
        per_class,
        macro_avg: MacroMetrics { map: sum_ap / n, auc: sum_auc / n, d_prime: sum_dp / n },
        skipped_classes: skipped,
        saturated_classes: saturated,
    })
}

impl MetricsReport {
    /// Human-readable table.
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:>10}  {:>10}  {:>10}", "class", "AP", "AUC", "d-prime");
        for (class, metrics) in self.per_class.iter().enumerate() {
            match metrics {
                Some(m) => {
                    let _ = writeln!(out, "{:>6}  {:>10.4}  {:>10.4}  {:>10.4}", class, m.ap, m.auc, m.d_prime);
                }
                None => {
                    let _ = writeln!(out, "{:>6}  {:>10}  {:>10}  {:>10}", class, "-", "-", "-");
                }
            }
        }
        let _ = writeln!(
            out,
            "{:>6}  {:>10.4}  {:>10.4}  {:>10.4}",
            "macro", self.macro_avg.map, self.macro_avg.auc, self.macro_avg.d_prime
        );
        if !self.skipped_classes.is_empty() {
            let _ = writeln!(out, "skipped classes (one-sided labels): {:?}", self.skipped_classes);
        }
        if !self.saturated_classes.is_empty() {
            let _ = writeln!(out, "saturated classes (AUC of 0 or 1): {:?}", self.saturated_classes);
        }
        out
    }

    /// Machine-readable key=value lines:
    ///
    /// ```text
    /// num_classes=<K>
    /// num_examples=<N>
    /// macro.map=<float>
    /// macro.auc=<float>
    /// macro.dprime=<float>
    /// skipped_classes=<comma-separated or empty>
    /// saturated_classes=<comma-separated or empty>
    /// class.<k>.ap=<float>        (only for evaluated classes)
    /// class.<k>.auc=<float>
    /// class.<k>.dprime=<float>
    /// ```
    pub fn to_kv_string(&self, num_examples: usize) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "num_classes={}", self.per_class.len());
        let _ = writeln!(out, "num_examples={num_examples}");
        let _ = writeln!(out, "macro.map={}", self.macro_avg.map);
        let _ = writeln!(out, "macro.auc={}", self.macro_avg.auc);
        let _ = writeln!(out, "macro.dprime={}", self.macro_avg.d_prime);
        let _ = writeln!(out, "skipped_classes={}", join(&self.skipped_classes));
        let _ = writeln!(out, "saturated_classes={}", join(&self.saturated_classes));
        for (class, metrics) in self.per_class.iter().enumerate() {
            if let Some(m) = metrics {
                let _ = writeln!(out, "class.{class}.ap={}", m.ap);
                let _ = writeln!(out, "class.{class}.auc={}", m.auc);
                let _ = writeln!(out, "class.{class}.dprime={}", m.d_prime);
            }
        }
        out
    }
}
