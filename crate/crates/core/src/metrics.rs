//! Confusion matrix and per-class precision / recall / F1.

use std::fmt;

use thiserror::Error;

use crate::signal_model::Class;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{actual} actual labels vs {predicted} predicted labels")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("label {label} at position {position} not in {{0,1,2}}")]
    BadLabel { position: usize, label: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// Rows are actual classes, columns predicted, in straight/left/right order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Label pairs that reproduce this matrix, grouped by cell in row order.
    pub fn label_stream(&self) -> (Vec<usize>, Vec<usize>) {
        let mut actual = Vec::new();
        let mut predicted = Vec::new();
        for (a, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    actual.push(a);
                    predicted.push(p);
                }
            }
        }
        (actual, predicted)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>8} {:>8} {:>8}", "", "straight", "left", "right")?;
        for c in Class::ALL {
            let r = self.counts[c.index()];
            writeln!(f, "{:>10} {:>8} {:>8} {:>8}", c.name(), r[0], r[1], r[2])?;
        }
        Ok(())
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(MetricsError::LengthMismatch { actual: actual.len(), predicted: predicted.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (position, (&a, &p)) in actual.iter().zip(predicted).enumerate() {
        for label in [a, p] {
            if label > 2 {
                return Err(MetricsError::BadLabel { position, label });
            }
        }
        cm.counts[a][p] += 1;
    }
    Ok(cm)
}

/// Which metric hit a zero denominator for a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroDenominator {
    Precision(Class),
    Recall(Class),
    F1(Class),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub accuracy: f64,
    /// Metrics forced to 0 because their denominator was 0.
    pub zero_denominators: Vec<ZeroDenominator>,
}

fn ratio(num: f64, den: f64, flag: ZeroDenominator, flags: &mut Vec<ZeroDenominator>) -> f64 {
    if den == 0.0 {
        flags.push(flag);
        0.0
    } else {
        num / den
    }
}

pub fn class_metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut flags = Vec::new();
    let mut m = ClassMetrics { precision: [0.0; 3], recall: [0.0; 3], f1: [0.0; 3], accuracy: 0.0, zero_denominators: Vec::new() };
    for c in Class::ALL {
        let i = c.index();
        let tp = cm.counts[i][i] as f64;
        let p = ratio(tp, cm.col_sum(i) as f64, ZeroDenominator::Precision(c), &mut flags);
        let r = ratio(tp, cm.row_sum(i) as f64, ZeroDenominator::Recall(c), &mut flags);
        m.precision[i] = p;
        m.recall[i] = r;
        m.f1[i] = ratio(2.0 * p * r, p + r, ZeroDenominator::F1(c), &mut flags);
    }
    m.accuracy = cm.trace() as f64 / total as f64;
    m.zero_denominators = flags;
    Ok(m)
}

/// Half-up rounding to three decimals for reports.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0 + 0.5).floor() / 1000.0
}

/// `class,precision,recall,f1` rows followed by `accuracy,<value>`.
pub fn report_csv(m: &ClassMetrics) -> String {
    let mut s = String::from("class,precision,recall,f1\n");
    for c in Class::ALL {
        let i = c.index();
        s.push_str(&format!("{},{:.3},{:.3},{:.3}\n", c.name(), round3(m.precision[i]), round3(m.recall[i]), round3(m.f1[i])));
    }
    s.push_str(&format!("accuracy,{:.3}\n", round3(m.accuracy)));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_diagonal() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
    }

    #[test]
    fn row_of_misses() {
        let cm = confusion(&[0, 0], &[1, 2]).unwrap();
        assert_eq!(cm.counts[0], [0, 1, 1]);
    }

    #[test]
    fn input_errors() {
        assert_eq!(confusion(&[0], &[0, 1]), Err(MetricsError::LengthMismatch { actual: 1, predicted: 2 }));
        assert_eq!(confusion(&[], &[]), Err(MetricsError::LengthMismatch { actual: 0, predicted: 0 }));
        assert_eq!(confusion(&[0, 3], &[0, 0]), Err(MetricsError::BadLabel { position: 1, label: 3 }));
        assert_eq!(class_metrics(&ConfusionMatrix::default()), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn zero_column_is_flagged() {
        let cm = ConfusionMatrix::from_counts([[3, 0, 1], [2, 0, 0], [0, 0, 4]]);
        let m = class_metrics(&cm).unwrap();
        assert_eq!(m.precision[1], 0.0);
        assert!(m.zero_denominators.contains(&ZeroDenominator::Precision(Class::Left)));
        assert!(m.zero_denominators.contains(&ZeroDenominator::F1(Class::Left)));
    }

    #[test]
    fn label_stream_reproduces_matrix() {
        let cm = ConfusionMatrix::from_counts([[395, 56, 24], [30, 187, 2], [35, 7, 209]]);
        let (a, p) = cm.label_stream();
        assert_eq!(confusion(&a, &p).unwrap(), cm);
        assert_eq!(cm.total(), 945);
        assert_eq!(cm.trace(), 791);
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round3(0.0625), 0.063);
        assert_eq!(round3(0.8586956), 0.859);
        let m = class_metrics(&ConfusionMatrix::from_counts([[1, 0, 0], [0, 1, 0], [0, 0, 1]])).unwrap();
        let csv = report_csv(&m);
        assert_eq!(csv.lines().next(), Some("class,precision,recall,f1"));
        assert_eq!(csv.lines().last(), Some("accuracy,1.000"));
    }
}
