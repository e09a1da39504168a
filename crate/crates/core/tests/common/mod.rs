//! Scripted fixtures for protocol tests: two-dimensional precomputed
//! whole-rooftop features and hand-built logistic models.

#![allow(dead_code)]

pub mod protocol;

use std::collections::BTreeMap;
use std::path::Path;

use gridpv_core::classify::{ClassifierParams, HyperparameterCombo, LrSolver, ModelKind, Standardizer, TrainedModel};
use gridpv_core::config::Config;
use gridpv_core::eval::ScoreReport;
use gridpv_core::features::{LocalFeatureSet, save_features};
use gridpv_core::geodata::{Affine, CityDataset, Label, RooftopImage, RooftopRecord, Split};
use gridpv_core::image::{Image, Mask};
use gridpv_core::matrix::Matrix;
use gridpv_core::phases::{
    ModelRef, ModelRegistry, Phase, PhaseOutcome, PipelineConfig, StepRecord, StoredModel,
};

/// One fixture rooftop: split, label, and its 2-D feature.
pub struct Row {
    pub split: Split,
    pub positive: bool,
    pub x: [f64; 2],
}

pub fn row(split: Split, positive: bool, x0: f64) -> Row {
    Row { split, positive, x: [x0, 0.0] }
}

/// `n` rooftops of one class and split, all with first feature `x0`.
pub fn rows(n: usize, split: Split, positive: bool, x0: f64) -> Vec<Row> {
    (0..n).map(|_| row(split, positive, x0)).collect()
}

/// Writes `<dir>/<name>_br.feat` and returns the matching city.
pub fn city(dir: &Path, name: &str, rows: &[Row]) -> CityDataset {
    let mut rooftops = Vec::new();
    let mut sets = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let id = format!("r{i:03}");
        let label = if r.positive { Label::WithPv } else { Label::NoPv };
        rooftops.push(RooftopRecord {
            image: RooftopImage {
                rooftop_id: id.clone(),
                city_id: name.into(),
                pixels: Image::filled(4, 4, 3, 100),
                valid_mask: Mask::full(4, 4),
                label: Some(label),
                transform: Affine::IDENTITY,
            },
            split: r.split,
        });
        sets.push(LocalFeatureSet {
            rooftop_id: id,
            city_id: name.into(),
            vectors: Matrix::from_rows(2, [&r.x[..]]).unwrap(),
            label: Some(label),
        });
    }
    save_features(&dir.join(format!("{name}_br.feat")), name, "fixture", &sets).unwrap();
    CityDataset {
        name: name.into(),
        rooftops,
    }
}

/// BR pipeline over precomputed features in `dir`, LR-only grid, no balancing.
pub fn config(dir: &Path, extra: &[(&str, &str)]) -> PipelineConfig {
    let mut c = Config::default();
    c.set("approach", "br");
    c.set("balance", "false");
    c.set("extractor.kind", "precomputed");
    c.set("extractor.features_dir", &dir.display().to_string());
    c.set("models", "lr");
    c.set("lr.c", "0.1,1,10");
    c.set("lr.solver", "liblinear");
    for (k, v) in extra {
        c.set(k, v);
    }
    PipelineConfig::from_config(&c).unwrap()
}

pub fn combo(c: f64) -> HyperparameterCombo {
    HyperparameterCombo {
        classifier: ClassifierParams::Lr {
            c,
            solver: LrSolver::Liblinear,
        },
        grid_size: None,
        k: None,
    }
}

/// Predicts positive when `sign · x0 + bias > 0`.
pub fn lr_model(c: f64, sign: f64, bias: f64) -> TrainedModel {
    TrainedModel {
        params: combo(c).classifier,
        seed: 0,
        standardizer: Standardizer::identity(2),
        kind: ModelKind::Lr {
            weights: vec![sign * 10.0, 0.0],
            bias,
        },
    }
}

/// One-step registry for `city` holding `models` (keyed by C), with `best` as the stored pointer.
pub fn registry(config: &PipelineConfig, city: &str, models: Vec<TrainedModel>, best: usize) -> ModelRegistry {
    let report = ScoreReport::from_scores(BTreeMap::from([(city.to_string(), 1.0)]), 1.0, 0.5).unwrap();
    let stored: Vec<StoredModel> = models
        .into_iter()
        .map(|m| {
            let c = match m.params {
                ClassifierParams::Lr { c, .. } => c,
                _ => unreachable!(),
            };
            StoredModel {
                combo: combo(c),
                model: m,
                quantizer_key: None,
                validation: None,
                test: report.clone(),
                seconds: 0.0,
            }
        })
        .collect();
    let grid = stored.iter().map(|m| m.combo).collect();
    let best_combo = stored[best].combo;
    let mut reg = ModelRegistry::new(config.clone());
    reg.steps.push(StepRecord {
        index: 0,
        city: city.into(),
        cities: vec![city.into()],
        outcomes: vec![PhaseOutcome {
            phase: Phase::P3,
            report,
            stopped: true,
            chosen_combo: Some(best_combo),
        }],
        phase_seconds: BTreeMap::from([(Phase::P3, 0.0)]),
        grid,
        models: stored,
        quantizers: BTreeMap::new(),
        best: ModelRef { step: 0, model: best },
    });
    reg
}

/// City whose positives sit at `x0 = +1` and negatives at `-1`, 6 + 6 train, 3 + 3 test.
pub fn separable(dir: &Path, name: &str) -> CityDataset {
    let mut r = rows(6, Split::Train, true, 1.0);
    r.extend(rows(6, Split::Train, false, -1.0));
    r.extend(rows(3, Split::Test, true, 1.0));
    r.extend(rows(3, Split::Test, false, -1.0));
    city(dir, name, &r)
}
