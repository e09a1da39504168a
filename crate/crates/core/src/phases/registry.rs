//! Trained models, codebooks, and scores for every city step.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/registry.json                                   step index
//! <root>/<step>_<city>/best.json                         best-model pointer
//! <root>/<step>_<city>/<approach>/<combo_hash>/model.bin
//! <root>/<step>_<city>/<approach>/<combo_hash>/meta.json
//! <root>/<step>_<city>/<approach>/<combo_hash>/codebook.bin   (VLAD / FV only)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Approach, Phase, PhaseError, PhaseOutcome, PipelineConfig};
use crate::classify::{HyperparameterCombo, TrainedModel, load_model, save_model};
use crate::encoding::{Quantizer, load_quantizer, save_quantizer};
use crate::eval::ScoreReport;

pub const REGISTRY_VERSION: u32 = 1;

/// Points at one stored model: `step` indexes the registry, `model` that step's list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub step: usize,
    pub model: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub combo: HyperparameterCombo,
    pub model: TrainedModel,
    /// Key into the step's quantizers, e.g. `g64_k3`.
    pub quantizer_key: Option<String>,
    pub validation: Option<ScoreReport>,
    pub test: ScoreReport,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub city: String,
    /// Cities in scope at this step, in arrival order.
    pub cities: Vec<String>,
    pub outcomes: Vec<PhaseOutcome>,
    pub phase_seconds: BTreeMap<Phase, f64>,
    /// Grid order used by the full search; empty when it did not run.
    pub grid: Vec<HyperparameterCombo>,
    pub models: Vec<StoredModel>,
    pub quantizers: BTreeMap<String, Quantizer>,
    pub best: ModelRef,
}

impl StepRecord {
    pub fn seconds(&self) -> f64 {
        self.phase_seconds.values().sum()
    }

    pub fn final_outcome(&self) -> &PhaseOutcome {
        self.outcomes.last().expect("every step runs at least one phase")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry {
    pub approach: Approach,
    pub config: PipelineConfig,
    pub steps: Vec<StepRecord>,
}

impl ModelRegistry {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            approach: config.approach,
            config,
            steps: Vec::new(),
        }
    }

    pub fn model(&self, r: ModelRef) -> Option<&StoredModel> {
        self.steps.get(r.step)?.models.get(r.model)
    }

    pub fn quantizer(&self, r: ModelRef) -> Option<&Quantizer> {
        let key = self.model(r)?.quantizer_key.as_ref()?;
        self.steps[r.step].quantizers.get(key)
    }

    pub fn best(&self) -> Option<ModelRef> {
        self.steps.last().map(|s| s.best)
    }

    /// Most recent step that stored a full model set.
    pub fn latest_trained_step(&self) -> Option<usize> {
        self.steps.iter().rposition(|s| !s.models.is_empty())
    }

    /// Checks the pointer and grid invariants.
    pub fn validate(&self) -> Result<(), PhaseError> {
        let bad = |m: String| Err(PhaseError::Invalid(m));
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i {
                return bad(format!("step {i} records index {}", step.index));
            }
            if step.best.step > i || self.model(step.best).is_none() {
                return bad(format!("step {i} best pointer {:?} is dangling", step.best));
            }
            for m in &step.models {
                if !step.grid.contains(&m.combo) {
                    return bad(format!("step {i} model {} is not in its grid", m.combo));
                }
                if let Some(k) = &m.quantizer_key
                    && !step.quantizers.contains_key(k)
                {
                    return bad(format!("step {i} model {} lacks quantizer {k}", m.combo));
                }
            }
        }
        Ok(())
    }
}

/// First 16 hex digits of the SHA-256 of the combo's JSON form.
pub fn combo_hash(combo: &HyperparameterCombo) -> String {
    let json = serde_json::to_vec(combo).expect("combo serialises");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    approach: Approach,
    config: PipelineConfig,
    steps: Vec<StepMeta>,
}

#[derive(Serialize, Deserialize)]
struct StepMeta {
    index: usize,
    city: String,
    cities: Vec<String>,
    dir: String,
    outcomes: Vec<PhaseOutcome>,
    phase_seconds: BTreeMap<Phase, f64>,
    grid: Vec<HyperparameterCombo>,
    best: ModelRef,
    models: Vec<String>,
    quantizers: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    combo: HyperparameterCombo,
    quantizer_key: Option<String>,
    validation: Option<ScoreReport>,
    test: ScoreReport,
    seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct BestFile {
    step: usize,
    model: usize,
    combo: HyperparameterCombo,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PhaseError {
    PhaseError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PhaseError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PhaseError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn step_dir(step: &StepRecord) -> String {
    format!("{}_{}", step.index, step.city)
}

/// Writes the whole registry under `root`, replacing any previous contents.
pub fn save_registry(root: &Path, reg: &ModelRegistry) -> Result<(), PhaseError> {
    reg.validate()?;
    if root.exists() {
        // Only remove what a previous save could have written.
        if !root.join("registry.json").exists() && fs::read_dir(root).map_err(|e| io_err(root, e))?.next().is_some() {
            return Err(io_err(root, "directory is not empty and holds no registry"));
        }
        fs::remove_dir_all(root).map_err(|e| io_err(root, e))?;
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let mut steps = Vec::with_capacity(reg.steps.len());
    for step in &reg.steps {
        let dir_name = step_dir(step);
        let dir = root.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let best = reg.model(step.best).expect("validated");
        write_json(
            &dir.join("best.json"),
            &BestFile {
                step: step.best.step,
                model: step.best.model,
                combo: best.combo,
            },
        )?;
        let mut models = Vec::with_capacity(step.models.len());
        let mut quantizers = BTreeMap::new();
        for m in &step.models {
            let rel: PathBuf = [reg.approach.key(), &combo_hash(&m.combo)].iter().collect();
            let mdir = dir.join(&rel);
            fs::create_dir_all(&mdir).map_err(|e| io_err(&mdir, e))?;
            save_model(&mdir.join("model.bin"), &m.model)?;
            write_json(
                &mdir.join("meta.json"),
                &ModelMeta {
                    combo: m.combo,
                    quantizer_key: m.quantizer_key.clone(),
                    validation: m.validation.clone(),
                    test: m.test.clone(),
                    seconds: m.seconds,
                },
            )?;
            let rel = rel.to_string_lossy().replace('\\', "/");
            if let Some(k) = &m.quantizer_key {
                save_quantizer(&mdir.join("codebook.bin"), &step.quantizers[k])?;
                quantizers.entry(k.clone()).or_insert_with(|| format!("{rel}/codebook.bin"));
            }
            models.push(rel);
        }
        steps.push(StepMeta {
            index: step.index,
            city: step.city.clone(),
            cities: step.cities.clone(),
            dir: dir_name,
            outcomes: step.outcomes.clone(),
            phase_seconds: step.phase_seconds.clone(),
            grid: step.grid.clone(),
            best: step.best,
            models,
            quantizers,
        });
    }
    write_json(
        &root.join("registry.json"),
        &IndexFile {
            version: REGISTRY_VERSION,
            approach: reg.approach,
            config: reg.config.clone(),
            steps,
        },
    )
}

pub fn load_registry(root: &Path) -> Result<ModelRegistry, PhaseError> {
    let index: IndexFile = read_json(&root.join("registry.json"))?;
    crate::binfmt::check_version(index.version, REGISTRY_VERSION)?;
    let mut steps = Vec::with_capacity(index.steps.len());
    for meta in index.steps {
        let dir = root.join(&meta.dir);
        let mut models = Vec::with_capacity(meta.models.len());
        for rel in &meta.models {
            let mdir = dir.join(rel);
            let m: ModelMeta = read_json(&mdir.join("meta.json"))?;
            models.push(StoredModel {
                combo: m.combo,
                model: load_model(&mdir.join("model.bin"))?,
                quantizer_key: m.quantizer_key,
                validation: m.validation,
                test: m.test,
                seconds: m.seconds,
            });
        }
        let mut quantizers = BTreeMap::new();
        for (k, rel) in meta.quantizers {
            quantizers.insert(k, load_quantizer(&dir.join(rel))?);
        }
        steps.push(StepRecord {
            index: meta.index,
            city: meta.city,
            cities: meta.cities,
            outcomes: meta.outcomes,
            phase_seconds: meta.phase_seconds,
            grid: meta.grid,
            models,
            quantizers,
            best: meta.best,
        });
    }
    let reg = ModelRegistry {
        approach: index.approach,
        config: index.config,
        steps,
    };
    reg.validate()?;
    Ok(reg)
}
