//! Per-run state shared by the phases: samples, lazily extracted local
//! features, and instrumentation counters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::PhaseError;
use crate::features::{Extractor, ExtractorKind, ExtractorSpec, LocalFeatureSet, load_features, resize_bilinear};
use crate::geodata::RooftopImage;
use crate::image::Image;
use crate::matrix::Matrix;
use crate::synthcity::source_id;
use crate::tiler::tile_or_best;

/// One labelled rooftop in a training, validation, or test pool.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `<city>/<rooftop_id>`, unique across cities.
    pub key: String,
    pub city: String,
    pub id: String,
    pub label: u8,
    pub image: Arc<RooftopImage>,
}

impl Sample {
    pub fn new(image: RooftopImage, label: u8) -> Self {
        Self {
            key: format!("{}/{}", image.city_id, image.rooftop_id),
            city: image.city_id.clone(),
            id: image.rooftop_id.clone(),
            label,
            image: Arc::new(image),
        }
    }

    /// Key of the original rooftop, with any augmentation suffix removed.
    pub fn source_key(&self) -> String {
        format!("{}/{}", self.city, source_id(&self.id))
    }
}

/// Fails if any training rooftop (or an augmented copy of one) is also a test rooftop.
pub fn assert_disjoint(train: &[&Sample], test: &[&Sample]) -> Result<(), PhaseError> {
    let train_keys: HashSet<String> = train.iter().map(|s| s.source_key()).collect();
    match test.iter().find(|s| train_keys.contains(&s.source_key())) {
        Some(s) => Err(PhaseError::Leakage(s.key.clone())),
        None => Ok(()),
    }
}

/// Work counters used to check that early exits skip training.
#[derive(Debug, Default)]
pub struct Counters {
    classifier_fits: AtomicUsize,
    quantizer_fits: AtomicUsize,
    leakage_checks: AtomicUsize,
}

impl Counters {
    pub fn classifier_fits(&self) -> usize {
        self.classifier_fits.load(Ordering::Relaxed)
    }

    pub fn quantizer_fits(&self) -> usize {
        self.quantizer_fits.load(Ordering::Relaxed)
    }

    pub fn leakage_checks(&self) -> usize {
        self.leakage_checks.load(Ordering::Relaxed)
    }

    pub(crate) fn add_fit(&self) {
        self.classifier_fits.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_quantizer_fit(&self) {
        self.quantizer_fits.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_leakage_check(&self) {
        self.leakage_checks.fetch_add(1, Ordering::Relaxed);
    }
}

/// Local features for each rooftop: one row per kept `g × g` tile, or a single
/// row for the whole masked crop resized to `whole_size` when `grid` is `None`.
pub fn extract_rooftops(
    extractor: &Extractor,
    roofs: &[&RooftopImage],
    grid: Option<usize>,
    min_coverage: f64,
    whole_size: usize,
) -> Result<Vec<LocalFeatureSet>, PhaseError> {
    let per_roof: Vec<Vec<Image>> = roofs
        .par_iter()
        .map(|roof| -> Result<Vec<Image>, PhaseError> {
            Ok(match grid {
                None => vec![resize_bilinear(&roof.masked_pixels(), whole_size, whole_size)],
                Some(g) => tile_or_best(roof, g, min_coverage)?.into_iter().map(|t| t.pixels).collect(),
            })
        })
        .collect::<Result<_, _>>()?;
    // One batch so an external model sees a single sequential stream.
    let flat: Vec<Image> = per_roof.iter().flatten().cloned().collect();
    let vectors = extractor.extract(&flat)?;
    let dim = vectors.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(roofs.len());
    let mut offset = 0;
    for (roof, imgs) in roofs.iter().zip(&per_roof) {
        let rows = &vectors[offset..offset + imgs.len()];
        offset += imgs.len();
        out.push(LocalFeatureSet {
            rooftop_id: roof.rooftop_id.clone(),
            city_id: roof.city_id.clone(),
            vectors: Matrix::from_rows(dim, rows.iter().map(Vec::as_slice)).expect("uniform dimension"),
            label: roof.label,
        });
    }
    Ok(out)
}

/// Grid size used as the cache key for whole-rooftop (BR) features.
pub(crate) const WHOLE_ROOFTOP: usize = 0;

enum Source {
    Live(Extractor),
    Files { dir: String, loaded: Mutex<HashMap<(String, usize), Arc<HashMap<String, Arc<LocalFeatureSet>>>>> },
}

/// Local features per (sample, grid size), computed once per run.
pub(crate) struct FeatureCache {
    source: Source,
    min_coverage: f64,
    br_input_size: usize,
    entries: Mutex<HashMap<(String, usize), Arc<LocalFeatureSet>>>,
}

impl FeatureCache {
    pub fn new(spec: &ExtractorSpec, min_coverage: f64, br_input_size: usize) -> Result<Self, PhaseError> {
        let source = match spec.kind {
            ExtractorKind::PrecomputedFile => Source::Files {
                dir: spec.features_dir.clone().unwrap_or_default(),
                loaded: Mutex::default(),
            },
            _ => Source::Live(Extractor::from_spec(spec)?),
        };
        Ok(Self {
            source,
            min_coverage,
            br_input_size,
            entries: Mutex::default(),
        })
    }

    /// Features for every sample at grid size `g` (0 = whole rooftop), in input order.
    pub fn get(&self, samples: &[&Sample], g: usize) -> Result<Vec<Arc<LocalFeatureSet>>, PhaseError> {
        let missing: Vec<&Sample> = {
            let entries = self.entries.lock().expect("feature cache lock");
            let mut seen = HashSet::new();
            samples
                .iter()
                .copied()
                .filter(|s| !entries.contains_key(&(s.key.clone(), g)) && seen.insert(s.key.as_str()))
                .collect()
        };
        if !missing.is_empty() {
            let computed = match &self.source {
                Source::Live(extractor) => self.extract_live(extractor, &missing, g)?,
                Source::Files { dir, loaded } => Self::lookup_files(dir, loaded, &missing, g)?,
            };
            let mut entries = self.entries.lock().expect("feature cache lock");
            for (s, set) in missing.iter().zip(computed) {
                entries.insert((s.key.clone(), g), Arc::new(set));
            }
        }
        let entries = self.entries.lock().expect("feature cache lock");
        Ok(samples.iter().map(|s| Arc::clone(&entries[&(s.key.clone(), g)])).collect())
    }

    fn extract_live(&self, extractor: &Extractor, samples: &[&Sample], g: usize) -> Result<Vec<LocalFeatureSet>, PhaseError> {
        let roofs: Vec<&RooftopImage> = samples.iter().map(|s| s.image.as_ref()).collect();
        let grid = (g != WHOLE_ROOFTOP).then_some(g);
        extract_rooftops(extractor, &roofs, grid, self.min_coverage, self.br_input_size)
    }

    fn lookup_files(
        dir: &str,
        loaded: &Mutex<HashMap<(String, usize), Arc<HashMap<String, Arc<LocalFeatureSet>>>>>,
        samples: &[&Sample],
        g: usize,
    ) -> Result<Vec<LocalFeatureSet>, PhaseError> {
        let mut by_city: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_city.entry(s.city.as_str()).or_default().push(i);
        }
        let mut out: Vec<Option<LocalFeatureSet>> = vec![None; samples.len()];
        for (city, idx) in by_city {
            let file = {
                let mut loaded = loaded.lock().expect("feature file lock");
                match loaded.get(&(city.to_string(), g)) {
                    Some(f) => Arc::clone(f),
                    None => {
                        let name = if g == WHOLE_ROOFTOP { format!("{city}_br.feat") } else { format!("{city}_g{g}.feat") };
                        let parsed = load_features(&Path::new(dir).join(name))?;
                        let map: HashMap<String, Arc<LocalFeatureSet>> = parsed
                            .sets
                            .into_iter()
                            .map(|s| (s.rooftop_id.clone(), Arc::new(s)))
                            .collect();
                        let map = Arc::new(map);
                        loaded.insert((city.to_string(), g), Arc::clone(&map));
                        map
                    }
                }
            };
            for i in idx {
                let s = samples[i];
                let set = file.get(&s.id).ok_or_else(|| {
                    PhaseError::Invalid(format!("precomputed features for {city} lack rooftop {}", s.id))
                })?;
                out[i] = Some(set.as_ref().clone());
            }
        }
        Ok(out.into_iter().map(|s| s.expect("every sample resolved")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{Affine, Label};
    use crate::image::Mask;

    fn roof(city: &str, id: &str, w: usize, h: usize) -> Sample {
        let img = RooftopImage {
            rooftop_id: id.into(),
            city_id: city.into(),
            pixels: Image::filled(w, h, 3, 90),
            valid_mask: Mask::full(w, h),
            label: Some(Label::NoPv),
            transform: Affine::IDENTITY,
        };
        Sample::new(img, 0)
    }

    #[test]
    fn leakage_sees_through_augmentation_suffix() {
        let a = roof("x", "b0001", 8, 8);
        let aug = roof("x", "b0001_aug2", 8, 8);
        let other = roof("y", "b0001", 8, 8);
        assert!(assert_disjoint(&[&aug], &[&other]).is_ok());
        assert!(matches!(assert_disjoint(&[&aug], &[&a]), Err(PhaseError::Leakage(_))));
    }

    #[test]
    fn small_roof_falls_back_to_best_cell() {
        let cache = FeatureCache::new(&ExtractorSpec::default(), 0.5, 16).unwrap();
        // 10×10 roof on a 64 px grid covers under 3% of the single cell
        let s = roof("x", "tiny", 10, 10);
        let f = cache.get(&[&s], 64).unwrap();
        assert_eq!(f[0].len(), 1);
        let whole = cache.get(&[&s, &s], WHOLE_ROOFTOP).unwrap();
        assert_eq!(whole.len(), 2);
        assert_eq!(whole[0].len(), 1);
    }
}
