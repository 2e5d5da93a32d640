use serde::{Deserialize, Serialize};

use crate::vision::Label;

/// Binary confusion counts (`confusion[true][predicted]`) and
/// support-weighted scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: [[usize; 2]; 2],
    pub per_class_precision: [f64; 2],
    pub per_class_recall: [f64; 2],
    pub per_class_f1: [f64; 2],
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Scores from `(predicted, actual)` pairs. Undefined per-class ratios
    /// (no predictions or no support) count as zero.
    pub fn from_pairs(pairs: &[(Label, Label)]) -> Metrics {
        let mut confusion = [[0; 2]; 2];
        for &(pred, actual) in pairs {
            confusion[actual.class_index()][pred.class_index()] += 1;
        }
        Metrics::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: [[usize; 2]; 2]) -> Metrics {
        let n: usize = confusion.iter().flatten().sum();
        let mut p = [0.0; 2];
        let mut r = [0.0; 2];
        let mut f = [0.0; 2];
        let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
        for k in 0..2 {
            let tp = confusion[k][k];
            let support = confusion[k][0] + confusion[k][1];
            let predicted = confusion[0][k] + confusion[1][k];
            p[k] = ratio(tp, predicted);
            r[k] = ratio(tp, support);
            f[k] = if p[k] + r[k] > 0.0 {
                2.0 * p[k] * r[k] / (p[k] + r[k])
            } else {
                0.0
            };
            let w = ratio(support, n);
            wp += w * p[k];
            wr += w * r[k];
            wf += w * f[k];
        }
        Metrics {
            confusion,
            per_class_precision: p,
            per_class_recall: r,
            per_class_f1: f,
            weighted_precision: wp,
            weighted_recall: wr,
            weighted_f1: wf,
            accuracy: ratio(confusion[0][0] + confusion[1][1], n),
        }
    }

    pub fn count(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}
