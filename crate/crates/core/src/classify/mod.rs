//! Logistic regression, random forest, and SVM on rooftop descriptors.

mod forest;
mod logistic;
mod standardize;
mod store;
mod svm;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub use forest::{Forest, Node, Tree, rf_fit};
pub use logistic::{LrSolution, lr_fit, lr_gradient, lr_objective, lr_solve};
pub use standardize::Standardizer;
pub use store::{MODEL_FILE_VERSION, load_model, model_from_bytes, model_to_bytes, save_model};
pub use svm::{FeatureMap, SvmOptions, SvmSolution, hinge_gradient, hinge_objective, svm_fit, svm_fit_with, svm_solve};

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("training data is empty")]
    Empty,
    #[error("features contain non-finite values")]
    NonFinite,
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    BadParameter(String),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Format(#[from] crate::binfmt::FormatError),
}

/// Rooftop-level design matrix with binary labels (1 = with_pv).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset2D {
    pub x: Matrix,
    pub y: Vec<u8>,
    pub ids: Vec<String>,
    pub cities: Vec<String>,
}

impl Dataset2D {
    pub fn new(x: Matrix, y: Vec<u8>, ids: Vec<String>, cities: Vec<String>) -> Result<Self, ClassifyError> {
        let n = x.rows();
        if y.len() != n || ids.len() != n || cities.len() != n {
            return Err(ClassifyError::Inconsistent(format!(
                "{n} rows, {} labels, {} ids, {} cities",
                y.len(),
                ids.len(),
                cities.len()
            )));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(ClassifyError::Inconsistent("labels must be 0 or 1".into()));
        }
        Ok(Self { x, y, ids, cities })
    }

    /// Unlabelled-metadata convenience constructor used by tests and tools.
    pub fn from_xy(x: Matrix, y: Vec<u8>) -> Result<Self, ClassifyError> {
        let n = x.rows();
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::new(x, y, ids, vec![String::new(); n])
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub(crate) fn check_trainable(&self) -> Result<(), ClassifyError> {
        if self.is_empty() {
            return Err(ClassifyError::Empty);
        }
        if !self.x.is_finite() {
            return Err(ClassifyError::NonFinite);
        }
        let pos = self.y.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == self.len() {
            return Err(ClassifyError::SingleClass);
        }
        Ok(())
    }

    /// Labels as ±1.
    pub(crate) fn signed_labels(&self) -> Vec<f64> {
        self.y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect()
    }
}

/// The two logistic-regression solver labels. `Lbfgs` runs full-batch
/// limited-memory quasi-Newton on the primal; `Liblinear` runs cyclic
/// coordinate descent (one Newton step per coordinate) on the primal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSolver {
    Liblinear,
    Lbfgs,
}

impl LrSolver {
    pub fn as_str(self) -> &'static str {
        match self {
            LrSolver::Liblinear => "liblinear",
            LrSolver::Lbfgs => "lbfgs",
        }
    }
}

impl std::str::FromStr for LrSolver {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "liblinear" => Ok(LrSolver::Liblinear),
            "lbfgs" => Ok(LrSolver::Lbfgs),
            o => Err(ClassifyError::BadParameter(format!("unknown solver {o:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf,
}

impl std::str::FromStr for Kernel {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "linear" => Ok(Kernel::Linear),
            "rbf" => Ok(Kernel::Rbf),
            o => Err(ClassifyError::BadParameter(format!("unknown kernel {o:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Lr,
    Rf,
    Svc,
}

impl std::str::FromStr for ModelFamily {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "lr" => Ok(ModelFamily::Lr),
            "rf" => Ok(ModelFamily::Rf),
            "svc" => Ok(ModelFamily::Svc),
            o => Err(ClassifyError::BadParameter(format!("unknown model family {o:?}"))),
        }
    }
}

/// Family-specific hyperparameters; only the fields that apply exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ClassifierParams {
    Lr { c: f64, solver: LrSolver },
    Rf { n_estimators: usize, max_depth: Option<usize> },
    Svc { c: f64, kernel: Kernel },
}

impl ClassifierParams {
    pub fn family(&self) -> ModelFamily {
        match self {
            ClassifierParams::Lr { .. } => ModelFamily::Lr,
            ClassifierParams::Rf { .. } => ModelFamily::Rf,
            ClassifierParams::Svc { .. } => ModelFamily::Svc,
        }
    }
}

/// One point of the hyperparameter grid. `grid_size` and `k` are set only for
/// the approaches that use them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterCombo {
    pub classifier: ClassifierParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl fmt::Display for HyperparameterCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.classifier {
            ClassifierParams::Lr { c, solver } => write!(f, "lr(C={c}, solver={})", solver.as_str())?,
            ClassifierParams::Rf { n_estimators, max_depth } => match max_depth {
                Some(d) => write!(f, "rf(n={n_estimators}, depth={d})")?,
                None => write!(f, "rf(n={n_estimators}, depth=None)")?,
            },
            ClassifierParams::Svc { c, kernel } => write!(f, "svc(C={c}, kernel={kernel:?})")?,
        }
        if let Some(g) = self.grid_size {
            write!(f, " g={g}")?;
        }
        if let Some(k) = self.k {
            write!(f, " K={k}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Lr { weights: Vec<f64>, bias: f64 },
    Rf(Forest),
    Svc { map: FeatureMap, weights: Vec<f64>, bias: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ClassifierParams,
    pub seed: u64,
    pub standardizer: Standardizer,
    pub kind: ModelKind,
}

impl TrainedModel {
    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    /// Probability (LR), vote fraction (RF), or signed margin (SVC).
    pub scores: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits the classifier named by `params`.
pub fn fit(data: &Dataset2D, params: &ClassifierParams, seed: u64) -> Result<TrainedModel, ClassifyError> {
    match *params {
        ClassifierParams::Lr { c, solver } => lr_fit(data, c, solver, seed),
        ClassifierParams::Rf { n_estimators, max_depth } => rf_fit(data, n_estimators, max_depth, seed),
        ClassifierParams::Svc { c, kernel } => svm_fit(data, c, kernel, seed),
    }
}

pub fn predict(model: &TrainedModel, x: &Matrix) -> Result<Prediction, ClassifyError> {
    if x.cols() != model.input_dim() {
        return Err(ClassifyError::DimensionMismatch {
            expected: model.input_dim(),
            found: x.cols(),
        });
    }
    let z = model.standardizer.transform(x);
    let scores: Vec<f64> = match &model.kind {
        ModelKind::Lr { weights, bias } => z
            .iter_rows()
            .map(|r| sigmoid(crate::matrix::dot(weights, r) + bias))
            .collect(),
        ModelKind::Rf(forest) => z.iter_rows().map(|r| forest.vote_fraction(r)).collect(),
        ModelKind::Svc { map, weights, bias } => {
            let mapped = map.transform(&z);
            mapped
                .iter_rows()
                .map(|r| crate::matrix::dot(weights, r) + bias)
                .collect()
        }
    };
    let labels = scores
        .iter()
        .map(|&s| match model.kind {
            ModelKind::Svc { .. } => (s > 0.0) as u8,
            _ => (s > 0.5) as u8,
        })
        .collect();
    Ok(Prediction { labels, scores })
}
