//! The three-phase multi-city protocol: evaluate the stored best model, then
//! re-validate every stored model, then retrain the full grid, stopping as soon
//! as the rounded weighted F1 reaches the threshold.

mod context;
mod registry;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierParams, HyperparameterCombo, Kernel, LrSolver, ModelFamily};
use crate::config::{Config, ConfigError, Kind, KeyDef, Schema};
use crate::encoding::Normalization;
use crate::eval::ScoreReport;
use crate::features::{ExtractorKind, ExtractorSpec};

pub use context::{Counters, Sample, assert_disjoint, extract_rooftops};
pub use registry::{ModelRef, ModelRegistry, StepRecord, StoredModel, combo_hash, load_registry, save_registry};
pub use run::{
    ComparisonReport, ComparisonRow, Phase3Result, Pipeline, PipelineReport, StepSummary, compare_approaches,
    run_pipeline, select_by_validation,
};

#[derive(Debug, thiserror::Error)]
pub enum PhaseError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid pipeline config: {0}")]
    Invalid(String),
    #[error("features: {0}")]
    Feature(#[from] crate::features::FeatureError),
    #[error("tiler: {0}")]
    Tile(#[from] crate::tiler::TileError),
    #[error("encoding: {0}")]
    Encode(#[from] crate::encoding::EncodeError),
    #[error("classify: {0}")]
    Classify(#[from] crate::classify::ClassifyError),
    #[error("eval: {0}")]
    Eval(#[from] crate::eval::EvalError),
    #[error("geodata: {0}")]
    Geo(#[from] crate::geodata::GeoError),
    #[error("synthcity: {0}")]
    Synth(#[from] crate::synthcity::SynthError),
    #[error("registry: {0}")]
    Format(#[from] crate::binfmt::FormatError),
    #[error("registry i/o on {path}: {message}")]
    Io { path: String, message: String },
    #[error("train/test leakage: rooftop {0} is in both pools")]
    Leakage(String),
    #[error("registry has no trained model yet")]
    EmptyRegistry,
    #[error("city {0} has no test rooftops")]
    NoTestSplit(String),
    #[error("city {0} has no training rooftops")]
    EmptyTraining(String),
    #[error("previous step stored no models")]
    NoStoredModels,
    #[error("every combo failed; last error: {0}")]
    AllCombosFailed(String),
    #[error("no cities given")]
    NoCities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    #[serde(rename = "br")]
    BrMl,
    #[serde(rename = "brg-vlad")]
    BrgVladMl,
    #[serde(rename = "brg-fv")]
    BrgFvMl,
    #[serde(rename = "brg-avg")]
    BrgAvgMl,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::BrMl, Approach::BrgVladMl, Approach::BrgFvMl, Approach::BrgAvgMl];

    /// Short name used in config files, the CLI, and registry paths.
    pub fn key(self) -> &'static str {
        match self {
            Approach::BrMl => "br",
            Approach::BrgVladMl => "brg-vlad",
            Approach::BrgFvMl => "brg-fv",
            Approach::BrgAvgMl => "brg-avg",
        }
    }

    pub fn uses_grid(self) -> bool {
        self != Approach::BrMl
    }

    pub fn uses_k(self) -> bool {
        matches!(self, Approach::BrgVladMl | Approach::BrgFvMl)
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::BrMl => "BR-ML",
            Approach::BrgVladMl => "BRG-VLAD-ML",
            Approach::BrgFvMl => "BRG-FV-ML",
            Approach::BrgAvgMl => "BRG-AVG-ML",
        })
    }
}

impl FromStr for Approach {
    type Err = PhaseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "br" | "br-ml" => Ok(Approach::BrMl),
            "brg-vlad" | "brg-vlad-ml" => Ok(Approach::BrgVladMl),
            "brg-fv" | "brg-fv-ml" => Ok(Approach::BrgFvMl),
            "brg-avg" | "brg-avg-ml" => Ok(Approach::BrgAvgMl),
            _ => Err(PhaseError::Invalid(format!("unknown approach {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    P1,
    P2,
    P3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub phase: Phase,
    pub report: ScoreReport,
    pub stopped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_combo: Option<HyperparameterCombo>,
}

/// Hyperparameter lists; the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub grid_sizes: Vec<usize>,
    pub ks: Vec<usize>,
    pub families: Vec<ModelFamily>,
    pub lr_c: Vec<f64>,
    pub lr_solvers: Vec<LrSolver>,
    pub rf_n_estimators: Vec<usize>,
    pub rf_max_depth: Vec<Option<usize>>,
    pub svc_c: Vec<f64>,
    pub svc_kernels: Vec<Kernel>,
}

impl HyperGrid {
    pub fn classifier_params(&self) -> Vec<ClassifierParams> {
        let mut out = Vec::new();
        for family in &self.families {
            match family {
                ModelFamily::Lr => {
                    for &c in &self.lr_c {
                        for &solver in &self.lr_solvers {
                            out.push(ClassifierParams::Lr { c, solver });
                        }
                    }
                }
                ModelFamily::Rf => {
                    for &n_estimators in &self.rf_n_estimators {
                        for &max_depth in &self.rf_max_depth {
                            out.push(ClassifierParams::Rf { n_estimators, max_depth });
                        }
                    }
                }
                ModelFamily::Svc => {
                    for &c in &self.svc_c {
                        for &kernel in &self.svc_kernels {
                            out.push(ClassifierParams::Svc { c, kernel });
                        }
                    }
                }
            }
        }
        out
    }

    /// Grid order: grid size, then K, then classifier parameters.
    pub fn expand(&self, approach: Approach) -> Vec<HyperparameterCombo> {
        let sizes: Vec<Option<usize>> = if approach.uses_grid() {
            self.grid_sizes.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let ks: Vec<Option<usize>> = if approach.uses_k() {
            self.ks.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let classifiers = self.classifier_params();
        let mut out = Vec::new();
        for &grid_size in &sizes {
            for &k in &ks {
                for &classifier in &classifiers {
                    out.push(HyperparameterCombo { classifier, grid_size, k });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub approach: Approach,
    pub extractor: ExtractorSpec,
    /// Common side length rooftops are resized to on the BR path.
    pub br_input_size: usize,
    pub grid: HyperGrid,
    pub threshold: f64,
    pub city_weight: f64,
    pub seed: u64,
    pub min_coverage: f64,
    pub normalization: Normalization,
    /// Cap on the codebook training pool.
    pub pool_cap: usize,
    pub kmeans_max_iter: usize,
    pub gmm_max_iter: usize,
    pub gmm_variance_floor: f64,
    pub rff_dim: usize,
    /// Balance each city's training split by augmenting the minority class.
    pub balance: bool,
}

macro_rules! key {
    ($k:expr, $kind:ident, $d:expr, $h:expr) => {
        KeyDef {
            key: $k,
            kind: Kind::$kind,
            default: $d,
            help: $h,
        }
    };
}

/// Every key accepted by pipeline configs.
pub const PIPELINE_SCHEMA: Schema = Schema {
    keys: &[
        key!("approach", Str, "brg-vlad", "br | brg-vlad | brg-fv | brg-avg"),
        key!("seed", Int, "7", "seed for splits, augmentation, codebooks, and models"),
        key!("threshold", Float, "0.90", "stop once the rounded weighted F1 reaches this"),
        key!("city_weight", Float, "0.5", "weight of the mean city F1 in the weighted F1"),
        key!("balance", Bool, "true", "augment the minority class of each training split"),
        key!("extractor.kind", Str, "baseline", "baseline | precomputed | onnx"),
        key!("extractor.input_size", Int, "", "side tiles are resized to before extraction"),
        key!("extractor.model_path", Str, "", "ONNX model file (extractor.kind = onnx)"),
        key!("extractor.scale", FloatList, "0.00392156862745098,0.00392156862745098,0.00392156862745098", "per-channel input scale"),
        key!("extractor.offset", FloatList, "0,0,0", "per-channel input offset"),
        key!("extractor.features_dir", Str, "", "directory of precomputed feature files"),
        key!("br.input_size", Int, "224", "common rooftop size on the BR path"),
        key!("grid.sizes", IntList, "64,96,128", "tile sizes (px)"),
        key!("grid.min_coverage", Float, "0.5", "minimum in-footprint fraction of a kept tile"),
        key!("vlad.k", IntList, "2,3,4", "cluster counts for VLAD and Fisher vectors"),
        key!("encoding.signed_sqrt", Bool, "true", "signed square root on VLAD/FV"),
        key!("encoding.l2", Bool, "true", "global L2 normalisation on VLAD/FV"),
        key!("encoding.pool_cap", Int, "100000", "max vectors used to fit a codebook"),
        key!("kmeans.max_iter", Int, "100", "Lloyd iteration cap"),
        key!("gmm.max_iter", Int, "100", "EM iteration cap"),
        key!("gmm.variance_floor", Float, "1e-6", "variance floor relative to mean data variance"),
        key!("models", StrList, "lr,rf,svc", "classifier families to search"),
        key!("lr.c", FloatList, "0.01,0.1,1,10", "LR inverse regularisation"),
        key!("lr.solver", StrList, "liblinear,lbfgs", "LR solvers"),
        key!("rf.n_estimators", IntList, "50,100,200", "forest sizes"),
        key!("rf.max_depth", OptIntList, "none,10,20", "tree depth limits"),
        key!("svc.c", FloatList, "0.1,1,10", "SVC inverse regularisation"),
        key!("svc.kernel", StrList, "linear,rbf", "SVC kernels"),
        key!("svc.rff_dim", Int, "256", "random Fourier feature count for rbf"),
    ],
    sections: &[],
};

impl PipelineConfig {
    /// Reads a config layered over the schema defaults.
    pub fn from_config(cfg: &Config) -> Result<Self, PhaseError> {
        cfg.validate(&PIPELINE_SCHEMA)?;
        let mut c = Config::defaults(&PIPELINE_SCHEMA);
        c.merge(cfg);
        let kind = match c.get("extractor.kind").unwrap_or("baseline") {
            "baseline" => ExtractorKind::Baseline,
            "precomputed" => ExtractorKind::PrecomputedFile,
            "onnx" => ExtractorKind::ExternalModel,
            o => return Err(PhaseError::Invalid(format!("unknown extractor kind {o:?}"))),
        };
        let triple = |key: &str| -> Result<[f32; 3], PhaseError> {
            let v: Vec<f32> = c.list(key)?;
            v.try_into()
                .map_err(|_| PhaseError::Invalid(format!("{key} needs three values")))
        };
        let non_empty = |k: &str| c.get(k).filter(|v| !v.is_empty()).map(str::to_string);
        let extractor = ExtractorSpec {
            kind,
            input_size: c.opt("extractor.input_size")?,
            model_path: non_empty("extractor.model_path"),
            scale: triple("extractor.scale")?,
            offset: triple("extractor.offset")?,
            features_dir: non_empty("extractor.features_dir"),
        };
        let families = c
            .list::<String>("models")?
            .iter()
            .map(|s| s.parse::<ModelFamily>())
            .collect::<Result<Vec<_>, _>>()?;
        let grid = HyperGrid {
            grid_sizes: c.list("grid.sizes")?,
            ks: c.list("vlad.k")?,
            families,
            lr_c: c.list("lr.c")?,
            lr_solvers: c.list::<String>("lr.solver")?.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
            rf_n_estimators: c.list("rf.n_estimators")?,
            rf_max_depth: c.opt_list("rf.max_depth")?,
            svc_c: c.list("svc.c")?,
            svc_kernels: c.list::<String>("svc.kernel")?.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
        };
        let out = Self {
            approach: c.get("approach").unwrap_or("brg-vlad").parse()?,
            extractor,
            br_input_size: c.parsed("br.input_size")?,
            grid,
            threshold: c.parsed("threshold")?,
            city_weight: c.parsed("city_weight")?,
            seed: c.parsed("seed")?,
            min_coverage: c.parsed("grid.min_coverage")?,
            normalization: Normalization {
                signed_sqrt: c.bool("encoding.signed_sqrt")?,
                l2: c.bool("encoding.l2")?,
            },
            pool_cap: c.parsed("encoding.pool_cap")?,
            kmeans_max_iter: c.parsed("kmeans.max_iter")?,
            gmm_max_iter: c.parsed("gmm.max_iter")?,
            gmm_variance_floor: c.parsed("gmm.variance_floor")?,
            rff_dim: c.parsed("svc.rff_dim")?,
            balance: c.bool("balance")?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        let bad = |m: &str| Err(PhaseError::Invalid(m.to_string()));
        if !(self.threshold > 0.0 && self.threshold <= 1.0) && self.threshold != 0.0 {
            return bad("threshold must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.city_weight) {
            return bad("city_weight must lie in [0, 1]");
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return bad("grid.min_coverage must lie in (0, 1]");
        }
        if self.approach.uses_grid() && (self.grid.grid_sizes.is_empty() || self.grid.grid_sizes.iter().any(|&g| g < 8)) {
            return bad("grid.sizes must be non-empty with every size ≥ 8");
        }
        if self.approach.uses_k() && (self.grid.ks.is_empty() || self.grid.ks.contains(&0)) {
            return bad("vlad.k must be non-empty and positive");
        }
        if self.grid.classifier_params().is_empty() {
            return bad("the classifier grid is empty");
        }
        if self.grid.lr_c.iter().chain(&self.grid.svc_c).any(|&c| !(c > 0.0)) {
            return bad("C values must be positive");
        }
        if self.grid.rf_n_estimators.contains(&0) {
            return bad("rf.n_estimators must be positive");
        }
        if self.br_input_size == 0 || self.pool_cap == 0 || self.rff_dim == 0 {
            return bad("br.input_size, encoding.pool_cap, and svc.rff_dim must be positive");
        }
        self.extractor
            .validate()
            .map_err(|e| PhaseError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Balancing needs pixels, so it is skipped for precomputed features.
    pub fn balancing_enabled(&self) -> bool {
        self.balance && self.extractor.kind != ExtractorKind::PrecomputedFile
    }
}
