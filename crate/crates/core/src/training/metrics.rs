use crate::ingest::Label;

const C: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision: [f64; C],
    pub recall: [f64; C],
    pub f1: [f64; C],
    /// `confusion[gold][predicted]`.
    pub confusion: [[usize; C]; C],
}

impl Metrics {
    pub fn from_predictions(gold: &[Label], predicted: &[Label]) -> Self {
        assert_eq!(gold.len(), predicted.len());
        let mut confusion = [[0usize; C]; C];
        for (g, p) in gold.iter().zip(predicted) {
            confusion[g.index()][p.index()] += 1;
        }
        let total = gold.len();
        let correct: usize = (0..C).map(|c| confusion[c][c]).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };

        let mut precision = [0.0; C];
        let mut recall = [0.0; C];
        let mut f1 = [0.0; C];
        for c in 0..C {
            let tp = confusion[c][c];
            let predicted_c: usize = (0..C).map(|g| confusion[g][c]).sum();
            let gold_c: usize = confusion[c].iter().sum();
            precision[c] = ratio(tp, predicted_c);
            recall[c] = ratio(tp, gold_c);
            let denom = precision[c] + recall[c];
            f1[c] = if denom > 0.0 {
                2.0 * precision[c] * recall[c] / denom
            } else {
                0.0
            };
        }
        Self {
            accuracy: ratio(correct, total),
            macro_f1: f1.iter().sum::<f64>() / C as f64,
            precision,
            recall,
            f1,
            confusion,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..C).map(|c| self.confusion[c][c]).sum()
    }

    /// Confusion matrix as CSV with a header row of predicted labels.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("gold\\predicted");
        for l in Label::ALL {
            out.push(',');
            out.push_str(l.as_str());
        }
        out.push('\n');
        for g in Label::ALL {
            out.push_str(g.as_str());
            for p in 0..C {
                out.push_str(&format!(",{}", self.confusion[g.index()][p]));
            }
            out.push('\n');
        }
        out
    }
}
