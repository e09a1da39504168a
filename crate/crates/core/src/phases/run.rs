//! Phase execution and the per-city driver.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::context::{FeatureCache, WHOLE_ROOFTOP};
use super::registry::{ModelRef, ModelRegistry, StepRecord, StoredModel};
use super::{Approach, Counters, Phase, PhaseError, PhaseOutcome, PipelineConfig, Sample, assert_disjoint};
use crate::classify::{
    self, ClassifierParams, Dataset2D, HyperparameterCombo, SvmOptions, TrainedModel, predict, svm_fit_with,
};
use crate::encoding::{
    GmmParams, KMeansParams, Provenance, Quantizer, avg_encode, fv_encode, gmm_fit, kmeans_fit, subsample_rows,
    vlad_encode,
};
use crate::eval::{ScoreReport, round2};
use crate::geodata::{CityDataset, Split};
use crate::matrix::Matrix;
use crate::synthcity::balance_minority;

struct CityPools {
    name: String,
    /// Training split, including augmented copies.
    train: Vec<Sample>,
    /// Training split without augmented copies.
    validation: Vec<Sample>,
    test: Vec<Sample>,
}

#[derive(Clone, Copy)]
enum Pool {
    Train,
    Validation,
    Test,
}

/// Outcome of one city step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub index: usize,
    pub city: String,
    pub phases: Vec<Phase>,
    pub report: ScoreReport,
    pub stopped: bool,
    pub chosen_combo: Option<HyperparameterCombo>,
    pub seconds: f64,
    pub cumulative_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub approach: Approach,
    pub steps: Vec<StepSummary>,
}

fn minutes(seconds: f64) -> f64 {
    (seconds / 60.0 * 10.0).round() / 10.0
}

impl PipelineReport {
    pub fn all_passed(&self) -> bool {
        self.steps.iter().all(|s| s.stopped)
    }

    pub fn total_seconds(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_seconds)
    }

    pub fn final_weighted_f1(&self) -> Option<f64> {
        self.steps.last().map(|s| s.report.weighted_f1)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{}\n", self.approach);
        let _ = writeln!(out, "{:<5} {:<12} {:<9} {:>8} {:>8} {:>8}  combo", "step", "city", "phases", "weighted", "minutes", "total");
        for s in &self.steps {
            let phases: Vec<&str> = s
                .phases
                .iter()
                .map(|p| match p {
                    Phase::P1 => "P1",
                    Phase::P2 => "P2",
                    Phase::P3 => "P3",
                })
                .collect();
            let combo = s.chosen_combo.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<5} {:<12} {:<9} {:>8.2} {:>8.1} {:>8.1}  {combo}",
                s.index + 1,
                s.city,
                phases.join(","),
                s.report.rounded,
                minutes(s.seconds),
                minutes(s.cumulative_seconds),
            );
        }
        out
    }
}

/// First index holding the largest finite score, so ties go to the earlier grid entry.
pub fn select_by_validation(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Drives the phases over cities in arrival order and owns the registry.
pub struct Pipeline {
    config: PipelineConfig,
    registry: ModelRegistry,
    counters: Counters,
    cache: FeatureCache,
    cities: Vec<CityPools>,
    summaries: Vec<StepSummary>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PhaseError> {
        config.validate()?;
        let cache = FeatureCache::new(&config.extractor, config.min_coverage, config.br_input_size)?;
        Ok(Self {
            registry: ModelRegistry::new(config.clone()),
            config,
            counters: Counters::default(),
            cache,
            cities: Vec::new(),
            summaries: Vec::new(),
        })
    }

    /// Continues from a stored registry. `prior` must hold the registry's cities in step order.
    pub fn resume(registry: ModelRegistry, prior: &[CityDataset]) -> Result<Self, PhaseError> {
        let names: Vec<&str> = registry.steps.iter().map(|s| s.city.as_str()).collect();
        let given: Vec<&str> = prior.iter().map(|c| c.name.as_str()).collect();
        if names != given {
            return Err(PhaseError::Invalid(format!(
                "registry covers cities {names:?} but {given:?} were supplied"
            )));
        }
        Self::attach(registry, prior)
    }

    /// Loads a stored registry next to an arbitrary set of cities, e.g. to
    /// score its best model on new data. No phase is run.
    pub fn attach(registry: ModelRegistry, cities: &[CityDataset]) -> Result<Self, PhaseError> {
        registry.validate()?;
        let mut p = Self::new(registry.config.clone())?;
        for (i, city) in cities.iter().enumerate() {
            let pools = p.pools(city, i)?;
            p.cities.push(pools);
        }
        let mut cumulative = 0.0;
        p.summaries = registry
            .steps
            .iter()
            .map(|s| {
                cumulative += s.seconds();
                summary(s, cumulative)
            })
            .collect();
        p.registry = registry;
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn report(&self) -> PipelineReport {
        PipelineReport {
            approach: self.config.approach,
            steps: self.summaries.clone(),
        }
    }

    fn pools(&self, city: &CityDataset, step: usize) -> Result<CityPools, PhaseError> {
        if self.cities.iter().any(|c| c.name == city.name) {
            return Err(PhaseError::Invalid(format!("city {} was already added", city.name)));
        }
        let to_samples = |c: &CityDataset, split: Split| -> Vec<Sample> {
            c.split(split)
                .map(|r| {
                    let mut img = r.image.clone();
                    img.city_id = c.name.clone();
                    Sample::new(img, r.label().as_class())
                })
                .collect()
        };
        let test = to_samples(city, Split::Test);
        let validation = to_samples(city, Split::Train);
        if test.is_empty() {
            return Err(PhaseError::NoTestSplit(city.name.clone()));
        }
        if validation.is_empty() {
            return Err(PhaseError::EmptyTraining(city.name.clone()));
        }
        let (pos, neg) = city.class_counts(Split::Train);
        let train = if self.config.balancing_enabled() && pos > 0 && neg > 0 && pos != neg {
            let balanced = balance_minority(city, self.config.seed.wrapping_add(step as u64))?;
            to_samples(&balanced, Split::Train)
        } else {
            validation.clone()
        };
        Ok(CityPools {
            name: city.name.clone(),
            train,
            validation,
            test,
        })
    }

    fn pool(&self, which: Pool) -> Vec<&Sample> {
        self.cities
            .iter()
            .flat_map(|c| match which {
                Pool::Train => &c.train,
                Pool::Validation => &c.validation,
                Pool::Test => &c.test,
            })
            .collect()
    }

    fn check_leakage(&self, train: &[&Sample], test: &[&Sample]) -> Result<(), PhaseError> {
        self.counters.add_leakage_check();
        assert_disjoint(train, test)
    }

    /// Fixed-length descriptors for `samples` under the configured approach.
    fn encode(&self, samples: &[&Sample], grid_size: Option<usize>, q: Option<&Quantizer>) -> Result<Matrix, PhaseError> {
        let approach = self.config.approach;
        let norm = self.config.normalization;
        let locals = self.cache.get(samples, grid_size.unwrap_or(WHOLE_ROOFTOP))?;
        let rows: Vec<Vec<f64>> = locals
            .par_iter()
            .map(|l| -> Result<Vec<f64>, PhaseError> {
                Ok(match (approach, q) {
                    (Approach::BrMl, _) => {
                        if l.is_empty() {
                            return Err(PhaseError::Invalid(format!("no features for rooftop {}", l.rooftop_id)));
                        }
                        l.vectors.row(0).to_vec()
                    }
                    (Approach::BrgAvgMl, _) => avg_encode(l)?.values,
                    (Approach::BrgVladMl, Some(Quantizer::Codebook(cb))) => vlad_encode(cb, l, norm)?.values,
                    (Approach::BrgFvMl, Some(Quantizer::Gmm(gmm))) => fv_encode(gmm, l, norm)?.values,
                    _ => return Err(PhaseError::Invalid(format!("{approach} needs a matching codebook"))),
                })
            })
            .collect::<Result<_, _>>()?;
        let dim = rows.first().map_or(0, Vec::len);
        Matrix::from_rows(dim, rows.iter().map(Vec::as_slice))
            .ok_or_else(|| PhaseError::Invalid("descriptors differ in length".into()))
    }

    fn evaluate(&self, model: &TrainedModel, x: &Matrix, samples: &[&Sample]) -> Result<ScoreReport, PhaseError> {
        let pred = predict(model, x)?;
        let cities: Vec<String> = samples.iter().map(|s| s.city.clone()).collect();
        let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
        Ok(ScoreReport::evaluate(&cities, &pred.labels, &labels, self.config.city_weight)?)
    }

    fn score_stored(&self, r: ModelRef, samples: &[&Sample]) -> Result<ScoreReport, PhaseError> {
        let m = self.registry.model(r).ok_or(PhaseError::EmptyRegistry)?;
        let x = self.encode(samples, m.combo.grid_size, self.registry.quantizer(r))?;
        self.evaluate(&m.model, &x, samples)
    }

    fn outcome(&self, phase: Phase, mut report: ScoreReport, seconds: f64, combo: Option<HyperparameterCombo>) -> PhaseOutcome {
        report.elapsed_seconds = seconds;
        PhaseOutcome {
            phase,
            stopped: report.passes(self.config.threshold),
            report,
            chosen_combo: combo,
        }
    }

    /// Scores the current best model on the combined test splits.
    pub fn run_phase1(&self) -> Result<(PhaseOutcome, ModelRef), PhaseError> {
        let t = Instant::now();
        let best = self.registry.best().ok_or(PhaseError::EmptyRegistry)?;
        let test = self.pool(Pool::Test);
        self.check_leakage(&self.pool(Pool::Train), &test)?;
        let report = self.score_stored(best, &test)?;
        let combo = self.registry.model(best).map(|m| m.combo);
        Ok((self.outcome(Phase::P1, report, t.elapsed().as_secs_f64(), combo), best))
    }

    /// Re-ranks the latest stored model set on the combined training splits
    /// and scores the winner on the combined test splits. Nothing is refitted.
    pub fn run_phase2(&self) -> Result<(PhaseOutcome, ModelRef, Vec<f64>), PhaseError> {
        let t = Instant::now();
        let step = self.registry.latest_trained_step().ok_or(PhaseError::NoStoredModels)?;
        let models = &self.registry.steps[step].models;
        let validation = self.pool(Pool::Validation);
        let test = self.pool(Pool::Test);
        self.check_leakage(&validation, &test)?;

        // Models that share a codebook share their encoded validation matrix.
        let mut encoded: HashMap<(Option<usize>, Option<String>), Matrix> = HashMap::new();
        for (i, m) in models.iter().enumerate() {
            let key = (m.combo.grid_size, m.quantizer_key.clone());
            if !encoded.contains_key(&key) {
                let r = ModelRef { step, model: i };
                let x = self.encode(&validation, m.combo.grid_size, self.registry.quantizer(r))?;
                encoded.insert(key, x);
            }
        }
        let scores: Vec<f64> = models
            .par_iter()
            .map(|m| {
                let x = &encoded[&(m.combo.grid_size, m.quantizer_key.clone())];
                self.evaluate(&m.model, x, &validation).map(|r| r.weighted_f1)
            })
            .collect::<Result<_, _>>()?;
        let chosen = select_by_validation(&scores).ok_or(PhaseError::NoStoredModels)?;
        let r = ModelRef { step, model: chosen };
        let report = self.score_stored(r, &test)?;
        let outcome = self.outcome(Phase::P2, report, t.elapsed().as_secs_f64(), Some(models[chosen].combo));
        Ok((outcome, r, scores))
    }

    fn fit_quantizer(&self, train: &[&Sample], g: usize, k: usize) -> Result<Quantizer, PhaseError> {
        let locals = self.cache.get(train, g)?;
        let dim = locals.first().map_or(0, |l| l.dim());
        let pool = Matrix::from_rows(dim, locals.iter().flat_map(|l| l.vectors.iter_rows()))
            .ok_or_else(|| PhaseError::Invalid("local features differ in length".into()))?;
        let pool = subsample_rows(&pool, self.config.pool_cap, self.config.seed);
        let provenance = Provenance {
            cities: self.cities.iter().map(|c| c.name.clone()).collect(),
            extractor: self.config.extractor.id(),
        };
        self.counters.add_quantizer_fit();
        match self.config.approach {
            Approach::BrgFvMl => {
                let mut p = GmmParams::new(k, self.config.seed);
                p.max_iter = self.config.gmm_max_iter;
                p.variance_floor = self.config.gmm_variance_floor;
                let mut model = gmm_fit(&pool, &p)?.model;
                model.provenance = provenance;
                Ok(Quantizer::Gmm(model))
            }
            _ => {
                let mut p = KMeansParams::new(k, self.config.seed);
                p.max_iter = self.config.kmeans_max_iter;
                let mut codebook = kmeans_fit(&pool, &p)?.codebook;
                codebook.provenance = provenance;
                Ok(Quantizer::Codebook(codebook))
            }
        }
    }

    fn fit_classifier(&self, params: &ClassifierParams, data: &Dataset2D) -> Result<TrainedModel, PhaseError> {
        self.counters.add_fit();
        let seed = self.config.seed;
        Ok(match *params {
            ClassifierParams::Svc { c, kernel } => svm_fit_with(
                data,
                c,
                kernel,
                seed,
                SvmOptions {
                    rff_dim: self.config.rff_dim,
                    gamma: None,
                },
            )?,
            ref p => classify::fit(data, p, seed)?,
        })
    }

    /// Full grid search on the combined training splits.
    pub fn run_phase3(&self, step: usize) -> Result<(PhaseOutcome, Phase3Result), PhaseError> {
        let t = Instant::now();
        let grid = self.config.grid.expand(self.config.approach);
        let train = self.pool(Pool::Train);
        let test = self.pool(Pool::Test);
        self.check_leakage(&train, &test)?;
        let y_train: Vec<u8> = train.iter().map(|s| s.label).collect();

        // Combos sharing (g, K) share a codebook and encoded pools.
        let mut groups: Vec<((Option<usize>, Option<usize>), Vec<HyperparameterCombo>)> = Vec::new();
        for c in &grid {
            match groups.iter_mut().find(|(key, _)| *key == (c.grid_size, c.k)) {
                Some((_, v)) => v.push(*c),
                None => groups.push(((c.grid_size, c.k), vec![*c])),
            }
        }

        let mut models = Vec::new();
        let mut quantizers = BTreeMap::new();
        let mut last_error = None;
        for ((g, k), combos) in groups {
            let group = (|| -> Result<_, PhaseError> {
                let q = match (g, k) {
                    (Some(g), Some(k)) => Some((format!("g{g}_k{k}"), self.fit_quantizer(&train, g, k)?)),
                    _ => None,
                };
                let qref = q.as_ref().map(|(_, q)| q);
                let x_train = self.encode(&train, g, qref)?;
                let x_test = self.encode(&test, g, qref)?;
                let data = Dataset2D::new(
                    x_train,
                    y_train.clone(),
                    train.iter().map(|s| s.id.clone()).collect(),
                    train.iter().map(|s| s.city.clone()).collect(),
                )?;
                Ok((q, data, x_test))
            })();
            let (q, data, x_test) = match group {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("skipping g={g:?} K={k:?}: {e}");
                    last_error = Some(e.to_string());
                    continue;
                }
            };
            let fitted: Vec<Result<StoredModel, PhaseError>> = combos
                .par_iter()
                .map(|combo| {
                    let ct = Instant::now();
                    let model = self.fit_classifier(&combo.classifier, &data)?;
                    let test_report = self.evaluate(&model, &x_test, &test)?;
                    Ok(StoredModel {
                        combo: *combo,
                        model,
                        quantizer_key: q.as_ref().map(|(key, _)| key.clone()),
                        validation: None,
                        test: test_report,
                        seconds: ct.elapsed().as_secs_f64(),
                    })
                })
                .collect();
            let mut used = false;
            for (combo, r) in combos.iter().zip(fitted) {
                match r {
                    Ok(m) => {
                        used = true;
                        models.push(m);
                    }
                    Err(e) => {
                        log::warn!("combo {combo} failed: {e}");
                        last_error = Some(e.to_string());
                    }
                }
            }
            if let (true, Some((key, q))) = (used, q) {
                quantizers.insert(key, q);
            }
        }
        if models.is_empty() {
            return Err(PhaseError::AllCombosFailed(last_error.unwrap_or_else(|| "empty grid".into())));
        }
        let scores: Vec<f64> = models.iter().map(|m| m.test.weighted_f1).collect();
        let best = select_by_validation(&scores).ok_or_else(|| PhaseError::AllCombosFailed("no finite score".into()))?;
        let outcome = self.outcome(
            Phase::P3,
            models[best].test.clone(),
            t.elapsed().as_secs_f64(),
            Some(models[best].combo),
        );
        Ok((
            outcome,
            Phase3Result {
                grid,
                models,
                quantizers,
                best: ModelRef { step, model: best },
            },
        ))
    }

    /// Runs Phase-1, Phase-2, then Phase-3 for a newly arrived city, stopping
    /// at the first phase whose rounded weighted F1 meets the threshold.
    pub fn add_city(&mut self, city: &CityDataset) -> Result<StepSummary, PhaseError> {
        let step = self.registry.steps.len();
        let pools = self.pools(city, step)?;
        self.cities.push(pools);
        match self.run_step(step) {
            Ok(record) => {
                let cumulative = self.summaries.last().map_or(0.0, |s| s.cumulative_seconds) + record.seconds();
                let s = summary(&record, cumulative);
                log::info!(
                    "step {} ({}): {:?} weighted F1 {:.2}",
                    step + 1,
                    record.city,
                    s.phases,
                    s.report.rounded
                );
                self.registry.steps.push(record);
                self.summaries.push(s.clone());
                Ok(s)
            }
            Err(e) => {
                self.cities.pop();
                Err(e)
            }
        }
    }

    fn run_step(&self, step: usize) -> Result<StepRecord, PhaseError> {
        let mut record = StepRecord {
            index: step,
            city: self.cities[step].name.clone(),
            cities: self.cities.iter().map(|c| c.name.clone()).collect(),
            outcomes: Vec::new(),
            phase_seconds: BTreeMap::new(),
            grid: Vec::new(),
            models: Vec::new(),
            quantizers: BTreeMap::new(),
            best: ModelRef { step, model: 0 },
        };
        if step > 0 {
            let (o1, best) = self.run_phase1()?;
            record.phase_seconds.insert(Phase::P1, o1.report.elapsed_seconds);
            let stopped = o1.stopped;
            record.outcomes.push(o1);
            if stopped {
                record.best = best;
                return Ok(record);
            }
            let (o2, chosen, _) = self.run_phase2()?;
            record.phase_seconds.insert(Phase::P2, o2.report.elapsed_seconds);
            let stopped = o2.stopped;
            record.outcomes.push(o2);
            if stopped {
                record.best = chosen;
                return Ok(record);
            }
        }
        let (o3, trained) = self.run_phase3(step)?;
        record.phase_seconds.insert(Phase::P3, o3.report.elapsed_seconds);
        record.outcomes.push(o3);
        record.grid = trained.grid;
        record.models = trained.models;
        record.quantizers = trained.quantizers;
        record.best = trained.best;
        Ok(record)
    }

    /// Runs only the full grid search, over several new cities pooled into one step.
    pub fn train_combined(&mut self, cities: &[CityDataset]) -> Result<StepSummary, PhaseError> {
        if cities.is_empty() {
            return Err(PhaseError::NoCities);
        }
        let step = self.registry.steps.len();
        let before = self.cities.len();
        for c in cities {
            match self.pools(c, step) {
                Ok(p) => self.cities.push(p),
                Err(e) => {
                    self.cities.truncate(before);
                    return Err(e);
                }
            }
        }
        let (o3, trained) = match self.run_phase3(step) {
            Ok(v) => v,
            Err(e) => {
                self.cities.truncate(before);
                return Err(e);
            }
        };
        let record = StepRecord {
            index: step,
            city: cities.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("+"),
            cities: self.cities.iter().map(|c| c.name.clone()).collect(),
            phase_seconds: BTreeMap::from([(Phase::P3, o3.report.elapsed_seconds)]),
            outcomes: vec![o3],
            grid: trained.grid,
            models: trained.models,
            quantizers: trained.quantizers,
            best: trained.best,
        };
        let cumulative = self.summaries.last().map_or(0.0, |s| s.cumulative_seconds) + record.seconds();
        let s = summary(&record, cumulative);
        self.registry.steps.push(record);
        self.summaries.push(s.clone());
        Ok(s)
    }

    /// Scores the current best model on the combined test splits of every city added so far.
    pub fn evaluate_best(&self) -> Result<ScoreReport, PhaseError> {
        let best = self.registry.best().ok_or(PhaseError::EmptyRegistry)?;
        self.score_stored(best, &self.pool(Pool::Test))
    }
}

pub struct Phase3Result {
    pub grid: Vec<HyperparameterCombo>,
    pub models: Vec<StoredModel>,
    pub quantizers: BTreeMap<String, Quantizer>,
    pub best: ModelRef,
}

fn summary(record: &StepRecord, cumulative: f64) -> StepSummary {
    let last = record.final_outcome();
    StepSummary {
        index: record.index,
        city: record.city.clone(),
        phases: record.outcomes.iter().map(|o| o.phase).collect(),
        report: last.report.clone(),
        stopped: last.stopped,
        chosen_combo: last.chosen_combo,
        seconds: record.seconds(),
        cumulative_seconds: cumulative,
    }
}

/// Runs every city in arrival order.
pub fn run_pipeline(cities: &[CityDataset], config: &PipelineConfig) -> Result<(PipelineReport, Pipeline), PhaseError> {
    if cities.is_empty() {
        return Err(PhaseError::NoCities);
    }
    let mut p = Pipeline::new(config.clone())?;
    for c in cities {
        p.add_city(c)?;
    }
    Ok((p.report(), p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub approach: Approach,
    /// Rounded weighted F1 per step.
    pub weighted: Vec<f64>,
    pub minutes: Vec<f64>,
    pub total_minutes: f64,
    pub all_passed: bool,
}

/// One row per approach over the same city sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cities: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn from_reports(cities: Vec<String>, reports: &[PipelineReport]) -> Self {
        let rows = reports
            .iter()
            .map(|r| ComparisonRow {
                approach: r.approach,
                weighted: r.steps.iter().map(|s| s.report.rounded).collect(),
                minutes: r.steps.iter().map(|s| minutes(s.seconds)).collect(),
                total_minutes: minutes(r.total_seconds()),
                all_passed: r.all_passed(),
            })
            .collect();
        Self { cities, rows }
    }

    /// Schema check: one score per city in [0, 1] with two decimals, and non-negative times.
    pub fn validate(&self) -> Result<(), String> {
        if self.rows.is_empty() {
            return Err("no rows".into());
        }
        for row in &self.rows {
            if row.weighted.len() != self.cities.len() || row.minutes.len() != self.cities.len() {
                return Err(format!("{}: expected {} steps", row.approach, self.cities.len()));
            }
            for &w in &row.weighted {
                if !(0.0..=1.0).contains(&w) || round2(w) != w {
                    return Err(format!("{}: score {w} is not a rounded F1", row.approach));
                }
            }
            if row.minutes.iter().chain([&row.total_minutes]).any(|m| !(*m >= 0.0)) {
                return Err(format!("{}: negative time", row.approach));
            }
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12}", "approach");
        for c in &self.cities {
            let _ = write!(out, " {c:>8}");
        }
        let _ = writeln!(out, " {:>9}", "minutes");
        for row in &self.rows {
            let _ = write!(out, "{:<12}", row.approach.to_string());
            for w in &row.weighted {
                let _ = write!(out, " {w:>8.2}");
            }
            let _ = writeln!(out, " {:>9.1}", row.total_minutes);
        }
        out
    }
}

/// Runs the same cities once per approach.
pub fn compare_approaches(
    cities: &[CityDataset],
    config: &PipelineConfig,
    approaches: &[Approach],
) -> Result<(ComparisonReport, Vec<PipelineReport>), PhaseError> {
    let mut reports = Vec::with_capacity(approaches.len());
    for &approach in approaches {
        let mut cfg = config.clone();
        cfg.approach = approach;
        reports.push(run_pipeline(cities, &cfg)?.0);
    }
    let names = cities.iter().map(|c| c.name.clone()).collect();
    Ok((ComparisonReport::from_reports(names, &reports), reports))
}
