//! Binary confusion counts and the class-1 scores derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2×2 confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[u8], actual: &[u8]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::invalid(format!(
                "prediction length {} does not match label length {}",
                predicted.len(),
                actual.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            c.record(p, a);
        }
        Ok(c)
    }

    pub fn record(&mut self, predicted: u8, actual: u8) {
        match (predicted, actual) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn summary(&self) -> ConfusionSummary {
        ConfusionSummary {
            confusion: *self,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl std::fmt::Display for Confusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "              pred 0    pred 1")?;
        writeln!(f, "actual 0  {:>10} {:>9}", self.tn, self.fp)?;
        writeln!(f, "actual 1  {:>10} {:>9}", self.fn_, self.tp)?;
        write!(
            f,
            "precision {:.3}  recall {:.3}  F1 {:.3}",
            self.precision(),
            self.recall(),
            self.f1()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let c = Confusion::from_labels(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(c.fp + c.fn_, 0);
        assert_eq!(c.f1(), 1.0);
    }

    #[test]
    fn all_negative_predictions() {
        let c = Confusion::from_labels(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!(c.recall(), 0.0);
        assert_eq!(c.f1(), 0.0);
    }

    #[test]
    fn published_confusion_tables() {
        // black-box train and test splits: rows actual 0/1, columns predicted 0/1
        let train = Confusion { tn: 4286, fp: 789, fn_: 657, tp: 4268 };
        assert_eq!(train.total(), 10_000);
        assert_eq!(format!("{:.2}", train.f1()), "0.86");
        let test = Confusion { tn: 8239, fp: 1703, fn_: 1520, tp: 8538 };
        assert_eq!(test.total(), 20_000);
        assert_eq!(format!("{:.2}", test.f1()), "0.84");
    }

    #[test]
    fn length_mismatch() {
        assert!(Confusion::from_labels(&[1], &[1, 0]).is_err());
    }
}
