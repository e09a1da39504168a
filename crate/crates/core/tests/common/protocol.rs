//! Phase-protocol scenarios. Each returns a description of the first
//! violated expectation.

#![allow(dead_code)]

use gridpv_core::geodata::Split;
use gridpv_core::phases::{ModelRef, Phase, Pipeline};

use super::{city, combo, config, lr_model, registry, rows, separable};

type Check = Result<(), String>;

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Check {
    if ok { Ok(()) } else { Err(what()) }
}

/// The first city has no stored models, so only the full search runs.
pub fn first_city_skips_reuse() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = separable(dir.path(), "a");
    let mut p = Pipeline::new(config(dir.path(), &[])).map_err(|e| e.to_string())?;
    let s = p.add_city(&a).map_err(|e| e.to_string())?;
    ensure(s.phases == [Phase::P3], || format!("phases {:?}", s.phases))?;
    ensure(p.counters().classifier_fits() == 3, || {
        format!("{} fits for a 3-combo grid", p.counters().classifier_fits())
    })
}

/// A stored model that already meets the threshold ends the step without training.
pub fn phase1_pass_fits_nothing() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = separable(dir.path(), "a");
    let b = separable(dir.path(), "b");
    let cfg = config(dir.path(), &[]);
    let reg = registry(&cfg, "a", vec![lr_model(1.0, 1.0, 0.0)], 0);
    let mut p = Pipeline::attach(reg, &[a]).map_err(|e| e.to_string())?;
    let s = p.add_city(&b).map_err(|e| e.to_string())?;
    ensure(s.phases == [Phase::P1] && s.stopped, || format!("phases {:?} stopped {}", s.phases, s.stopped))?;
    ensure(p.counters().classifier_fits() == 0 && p.counters().quantizer_fits() == 0, || {
        format!("{} classifier fits", p.counters().classifier_fits())
    })?;
    let best = p.registry().best();
    ensure(best == Some(ModelRef { step: 0, model: 0 }), || format!("best moved to {best:?}"))
}

/// Phase-2 reuses stored models: argmax of validation score, earliest on ties, zero fits.
pub fn phase2_pass_selects_without_fitting() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = separable(dir.path(), "a");
    let b = separable(dir.path(), "b");
    let cfg = config(dir.path(), &[]);

    // Stored best is inverted; the two later models are equally perfect.
    let tied = vec![lr_model(0.1, -1.0, 0.0), lr_model(1.0, 1.0, 0.0), lr_model(10.0, 1.0, 0.0)];
    let mut p = Pipeline::attach(registry(&cfg, "a", tied, 0), std::slice::from_ref(&a)).map_err(|e| e.to_string())?;
    let s = p.add_city(&b).map_err(|e| e.to_string())?;
    ensure(s.phases == [Phase::P1, Phase::P2] && s.stopped, || format!("phases {:?} stopped {}", s.phases, s.stopped))?;
    ensure(s.chosen_combo == Some(combo(1.0)), || format!("tie went to {:?}", s.chosen_combo))?;
    ensure(p.counters().classifier_fits() == 0, || format!("{} fits", p.counters().classifier_fits()))?;
    let best = p.registry().best();
    ensure(best == Some(ModelRef { step: 0, model: 1 }), || format!("best {best:?}"))?;

    // Strict argmax: all-positive scores below the perfect model at the end.
    let ordered = vec![lr_model(0.1, -1.0, 0.0), lr_model(1.0, 0.0, 1.0), lr_model(10.0, 1.0, 0.0)];
    let p = Pipeline::attach(registry(&cfg, "a", ordered, 0), &[a, b]).map_err(|e| e.to_string())?;
    let (o, chosen, scores) = p.run_phase2().map_err(|e| e.to_string())?;
    ensure(chosen.model == 2 && o.stopped, || format!("chose {chosen:?} from {scores:?}"))?;
    ensure(scores[0] < scores[1] && scores[1] < scores[2], || format!("scores {scores:?}"))?;
    ensure(p.counters().classifier_fits() == 0, || "phase 2 fitted a model".into())
}

/// Weighted F1 of the scripted two-city test set as a function of the city weight:
/// city a is perfect, city b finds 2 of 4 positives, so mean city F1 = 5/6 and global F1 = 12/13.
pub fn city_weight_for(target: f64) -> f64 {
    (12.0 / 13.0 - target) / (12.0 / 13.0 - 5.0 / 6.0)
}

fn boundary_cities(dir: &std::path::Path) -> (gridpv_core::geodata::CityDataset, gridpv_core::geodata::CityDataset) {
    let mut ra = rows(4, Split::Train, true, 1.0);
    ra.extend(rows(4, Split::Train, false, -1.0));
    ra.extend(rows(10, Split::Test, true, 1.0));
    ra.extend(rows(2, Split::Test, false, -1.0));
    let mut rb = rows(2, Split::Train, true, 1.0);
    rb.extend(rows(2, Split::Train, true, -1.0));
    rb.extend(rows(4, Split::Train, false, -1.0));
    rb.extend(rows(2, Split::Test, true, 1.0));
    rb.extend(rows(2, Split::Test, true, -1.0));
    rb.extend(rows(4, Split::Test, false, -1.0));
    (city(dir, "a", &ra), city(dir, "b", &rb))
}

/// Weighted F1 of 0.894 continues to the next phase, 0.895 stops.
pub fn rounding_boundary() -> Check {
    for (target, stop) in [(0.894, false), (0.895, true)] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (a, b) = boundary_cities(dir.path());
        let w = city_weight_for(target).to_string();
        let cfg = config(dir.path(), &[("city_weight", w.as_str()), ("threshold", "0.90")]);
        let reg = registry(&cfg, "a", vec![lr_model(1.0, 1.0, 0.0)], 0);
        let mut p = Pipeline::attach(reg, std::slice::from_ref(&a)).map_err(|e| e.to_string())?;
        let s = p.add_city(&b).map_err(|e| e.to_string())?;
        let p1 = &p.registry().steps[1].outcomes[0];
        ensure(p1.phase == Phase::P1 && (p1.report.weighted_f1 - target).abs() < 1e-12, || {
            format!("phase-1 weighted F1 {} for target {target}", p1.report.weighted_f1)
        })?;
        ensure(p1.stopped == stop, || format!("{target}: stopped = {}", p1.stopped))?;
        let expected_rounded = if stop { 0.90 } else { 0.89 };
        ensure(p1.report.rounded == expected_rounded, || format!("{target} rounded to {}", p1.report.rounded))?;
        ensure((s.phases == [Phase::P1]) == stop, || format!("{target}: phases {:?}", s.phases))?;
    }
    Ok(())
}
