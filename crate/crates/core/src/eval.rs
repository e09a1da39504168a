//! F1 scores at city and global level, and the weighted F1 that drives stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const DEFAULT_CITY_WEIGHT: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("no cities to aggregate")]
    NoCities,
    #[error("city weight must lie in [0, 1], got {0}")]
    BadWeight(f64),
}

/// Positive class is `1` (with_pv).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self, EvalError> {
        if predictions.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                predictions: predictions.len(),
                labels: labels.len(),
            });
        }
        if predictions.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut c = Self::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == 1, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2tp / (2tp + fp + fn)`, or 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 { 0.0 } else { (2 * self.tp) as f64 / denom as f64 }
    }
}

pub fn f1(predictions: &[u8], labels: &[u8]) -> Result<f64, EvalError> {
    Ok(ConfusionCounts::from_predictions(predictions, labels)?.f1())
}

/// Rounds to 2 decimals, halves away from zero. Values within 1e-9 of a half
/// are treated as exact halves, so `0.965` (stored as 0.96499…) gives 0.97.
pub fn round2(v: f64) -> f64 {
    let scaled = v * 100.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if v >= 0.0 { floor + 1.0 } else { floor }
    } else {
        scaled.round()
    };
    r / 100.0
}

/// `w·mean(per_city) + (1 − w)·global`.
pub fn weighted_f1(per_city: &BTreeMap<String, f64>, global_f1: f64, w: f64) -> Result<f64, EvalError> {
    if per_city.is_empty() {
        return Err(EvalError::NoCities);
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(EvalError::BadWeight(w));
    }
    let mean = per_city.values().sum::<f64>() / per_city.len() as f64;
    Ok(w * mean + (1.0 - w) * global_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_city: BTreeMap<String, f64>,
    pub global_f1: f64,
    pub weighted_f1: f64,
    pub rounded: f64,
    pub elapsed_seconds: f64,
}

impl ScoreReport {
    pub fn from_scores(per_city: BTreeMap<String, f64>, global_f1: f64, w: f64) -> Result<Self, EvalError> {
        let weighted = weighted_f1(&per_city, global_f1, w)?;
        Ok(Self {
            per_city,
            global_f1,
            weighted_f1: weighted,
            rounded: round2(weighted),
            elapsed_seconds: 0.0,
        })
    }

    /// City F1 on each city's own rows, global F1 on the union.
    pub fn evaluate(cities: &[String], predictions: &[u8], labels: &[u8], w: f64) -> Result<Self, EvalError> {
        if cities.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                predictions: cities.len(),
                labels: labels.len(),
            });
        }
        let global = f1(predictions, labels)?;
        let mut grouped: BTreeMap<&str, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
        for ((c, &p), &l) in cities.iter().zip(predictions).zip(labels) {
            let e = grouped.entry(c).or_default();
            e.0.push(p);
            e.1.push(l);
        }
        let mut per_city = BTreeMap::new();
        for (c, (p, l)) in grouped {
            per_city.insert(c.to_string(), f1(&p, &l)?);
        }
        Self::from_scores(per_city, global, w)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.rounded >= round2(threshold) - 1e-12
    }

    /// Plain-text table: one column per city, then global and weighted scores.
    pub fn to_table(&self) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for (c, v) in &self.per_city {
            let width = c.len().max(6);
            let _ = write!(header, "{c:>width$} ");
            let _ = write!(row, "{v:>width$.2} ");
        }
        let _ = write!(header, "{:>8} {:>8}", "global", "weighted");
        let _ = write!(row, "{:>8.2} {:>8.2}", self.global_f1, self.rounded);
        format!("{header}\n{row}\n")
    }
}
