//! Seeded synthetic cities and training-set augmentation.
//!
//! A city is rendered as one georeferenced mosaic with a world file, a GeoJSON
//! footprint layer, and a label table, then run through the regular ingest path
//! into the prepared-dataset layout.

mod augment;
mod render;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Config, ConfigError, Kind, KeyDef, Schema};
use crate::geodata::{
    self, Affine, CityDataset, FootprintEntry, FootprintSet, GeoError, GeoRaster, Label, RooftopRecord, Split,
};
use crate::image::Image;

pub use augment::{
    AugKind, AugmentError, AugmentationOp, augment, augment_rooftop, augment_with_mask, blur_plane, gaussian_kernel,
    sample_chain,
};
pub use render::{Rect, RenderedRoof, render_rooftop};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid city spec {city}: {message}")]
    BadSpec { city: String, message: String },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training split of {0} lacks one of the classes")]
    MissingClass(String),
}

/// Rendering parameters for one synthetic city. Ranges are inclusive `(lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CitySpec {
    pub name: String,
    pub n_with_pv: usize,
    pub n_no_pv: usize,
    /// Rooftop bounding-box side, pixels.
    pub roof_size_range: (usize, usize),
    /// Degrees.
    pub roof_hue_range: (f64, f64),
    pub roof_saturation_range: (f64, f64),
    pub roof_value_range: (f64, f64),
    /// Lattice spacing of the roof texture, pixels.
    pub roof_texture_scale: f64,
    pub roof_texture_amplitude: f64,
    /// Corrugation period in pixels, if the roofs are ribbed sheets.
    pub roof_stripe_period: Option<f64>,
    pub clutter_count_range: (usize, usize),
    pub pv_panel_count_range: (usize, usize),
    /// Cell rows and cell columns per panel.
    pub pv_cell_grid: ((usize, usize), (usize, usize)),
    pub pv_cell_size_range: (usize, usize),
    pub pv_hue_range: (f64, f64),
    pub pv_value_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl CitySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| {
            Err(SynthError::BadSpec {
                city: self.name.clone(),
                message: m.to_string(),
            })
        };
        let ordered_u = |r: (usize, usize)| r.0 <= r.1;
        let ordered_f = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return bad("name must be a non-empty path component");
        }
        if self.n_with_pv + self.n_no_pv == 0 {
            return bad("no rooftops requested");
        }
        if !(ordered_u(self.roof_size_range) && self.roof_size_range.0 >= 24) {
            return bad("roof_size range must be ordered with lo ≥ 24");
        }
        for r in [
            self.clutter_count_range,
            self.pv_panel_count_range,
            self.pv_cell_grid.0,
            self.pv_cell_grid.1,
            self.pv_cell_size_range,
        ] {
            if !ordered_u(r) {
                return bad("integer ranges must satisfy lo ≤ hi");
            }
        }
        if self.pv_panel_count_range.1 == 0 || self.pv_cell_size_range.0 < 2 || self.pv_cell_grid.0.0 == 0 || self.pv_cell_grid.1.0 == 0 {
            return bad("panels need ≥1 panel, ≥1 cell per side, and cells of ≥2 px");
        }
        for r in [
            self.roof_hue_range,
            self.roof_saturation_range,
            self.roof_value_range,
            self.pv_hue_range,
            self.pv_value_range,
        ] {
            if !ordered_f(r) {
                return bad("real ranges must be finite and ordered");
            }
        }
        for r in [self.roof_saturation_range, self.roof_value_range, self.pv_value_range] {
            if r.0 < 0.0 || r.1 > 1.0 {
                return bad("saturation and value ranges must lie in [0, 1]");
            }
        }
        if !(self.roof_texture_scale > 0.0 && self.noise_sigma >= 0.0 && self.roof_texture_amplitude >= 0.0) {
            return bad("texture scale must be positive, amplitude and noise non-negative");
        }
        if self.roof_stripe_period.is_some_and(|p| !(p > 1.0)) {
            return bad("stripe period must exceed 1 px");
        }
        Ok(())
    }

    /// Base style shared by the presets.
    pub fn base(name: &str, n_with_pv: usize, n_no_pv: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            n_with_pv,
            n_no_pv,
            roof_size_range: (80, 160),
            roof_hue_range: (20.0, 40.0),
            roof_saturation_range: (0.15, 0.35),
            roof_value_range: (0.55, 0.8),
            roof_texture_scale: 16.0,
            roof_texture_amplitude: 18.0,
            roof_stripe_period: None,
            clutter_count_range: (0, 3),
            pv_panel_count_range: (1, 3),
            pv_cell_grid: ((2, 4), (3, 6)),
            pv_cell_size_range: (5, 7),
            pv_hue_range: (215.0, 235.0),
            pv_value_range: (0.2, 0.35),
            noise_sigma: 4.0,
            seed,
        }
    }
}

/// Three cities scaled 1:5 from the reference class counts (42/507, 73/98,
/// 195/195), each with its own roof and panel style.
pub fn default_benchmark(seed: u64) -> Vec<CitySpec> {
    let rcp = CitySpec {
        roof_size_range: (96, 176),
        roof_hue_range: (15.0, 35.0),
        roof_texture_scale: 20.0,
        pv_panel_count_range: (2, 4),
        pv_cell_grid: ((3, 4), (4, 6)),
        pv_cell_size_range: (6, 8),
        ..CitySpec::base("rcp", 8, 101, seed)
    };
    // Bluish corrugated roofs: a model trained on rcp alone mistakes them for panels.
    let chakan = CitySpec {
        roof_size_range: (80, 150),
        roof_hue_range: (190.0, 215.0),
        roof_saturation_range: (0.05, 0.2),
        roof_value_range: (0.45, 0.7),
        roof_texture_scale: 10.0,
        roof_stripe_period: Some(6.0),
        clutter_count_range: (0, 2),
        pv_panel_count_range: (2, 3),
        pv_cell_grid: ((3, 4), (4, 6)),
        pv_cell_size_range: (6, 8),
        pv_hue_range: (200.0, 220.0),
        pv_value_range: (0.1, 0.18),
        ..CitySpec::base("chakan", 15, 20, seed.wrapping_add(1))
    };
    let pune = CitySpec {
        roof_size_range: (110, 180),
        roof_hue_range: (0.0, 60.0),
        roof_saturation_range: (0.03, 0.15),
        roof_value_range: (0.5, 0.8),
        roof_texture_scale: 12.0,
        clutter_count_range: (1, 4),
        pv_panel_count_range: (2, 4),
        pv_cell_grid: ((3, 4), (4, 6)),
        pv_cell_size_range: (5, 7),
        ..CitySpec::base("pune", 39, 39, seed.wrapping_add(2))
    };
    vec![rcp, chakan, pune]
}

const CITY_FIELDS: &[KeyDef] = &[
    KeyDef { key: "n_with_pv", kind: Kind::Int, default: "5", help: "with-PV rooftops" },
    KeyDef { key: "n_no_pv", kind: Kind::Int, default: "5", help: "no-PV rooftops" },
    KeyDef { key: "roof_size", kind: Kind::IntRange, default: "80,160", help: "rooftop bounding-box side (px)" },
    KeyDef { key: "roof_hue", kind: Kind::FloatRange, default: "20,40", help: "roof hue (degrees)" },
    KeyDef { key: "roof_saturation", kind: Kind::FloatRange, default: "0.15,0.35", help: "roof saturation" },
    KeyDef { key: "roof_value", kind: Kind::FloatRange, default: "0.55,0.8", help: "roof brightness" },
    KeyDef { key: "roof_texture_scale", kind: Kind::Float, default: "16", help: "roof texture lattice spacing (px)" },
    KeyDef { key: "roof_texture_amplitude", kind: Kind::Float, default: "18", help: "roof texture amplitude (8-bit units)" },
    KeyDef { key: "roof_stripe_period", kind: Kind::OptFloat, default: "none", help: "corrugation period (px) or none" },
    KeyDef { key: "clutter_count", kind: Kind::IntRange, default: "0,3", help: "tanks and boxes per roof" },
    KeyDef { key: "pv_panel_count", kind: Kind::IntRange, default: "1,3", help: "panels per with-PV roof" },
    KeyDef { key: "pv_cell_rows", kind: Kind::IntRange, default: "2,4", help: "cell rows per panel" },
    KeyDef { key: "pv_cell_cols", kind: Kind::IntRange, default: "3,6", help: "cell columns per panel" },
    KeyDef { key: "pv_cell_size", kind: Kind::IntRange, default: "5,7", help: "cell pitch (px)" },
    KeyDef { key: "pv_hue", kind: Kind::FloatRange, default: "215,235", help: "panel hue (degrees)" },
    KeyDef { key: "pv_value", kind: Kind::FloatRange, default: "0.2,0.35", help: "panel brightness" },
    KeyDef { key: "noise_sigma", kind: Kind::Float, default: "4", help: "per-pixel Gaussian noise" },
    KeyDef { key: "seed", kind: Kind::Int, default: "", help: "city seed (default: global seed + city index)" },
];

/// Keys accepted by `synth-gen --spec`.
pub const SYNTH_SCHEMA: Schema = Schema {
    keys: &[
        KeyDef { key: "seed", kind: Kind::Int, default: "7", help: "global seed" },
        KeyDef { key: "cities", kind: Kind::StrList, default: "", help: "city names in arrival order" },
    ],
    sections: &[("city.", CITY_FIELDS)],
};

/// Reads city specs from a validated synth config. Unset fields take the
/// schema defaults.
pub fn specs_from_config(cfg: &Config) -> Result<Vec<CitySpec>, SynthError> {
    cfg.validate(&SYNTH_SCHEMA)?;
    let mut full = Config::defaults(&SYNTH_SCHEMA);
    full.merge(cfg);
    let seed: u64 = full.parsed("seed")?;
    let names: Vec<String> = full.list("cities")?;
    if names.is_empty() {
        return Err(ConfigError::BadValue {
            key: "cities".into(),
            message: "at least one city is required".into(),
        }
        .into());
    }
    let mut specs = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let mut c = Config::default();
        for f in CITY_FIELDS.iter().filter(|f| !f.default.is_empty()) {
            c.set(f.key, f.default);
        }
        let prefix = format!("city.{name}.");
        for key in full.keys().filter(|k| k.starts_with(&prefix)) {
            c.set(&key[prefix.len()..], full.get(key).unwrap_or_default());
        }
        let spec = CitySpec {
            name: name.clone(),
            n_with_pv: c.parsed("n_with_pv")?,
            n_no_pv: c.parsed("n_no_pv")?,
            roof_size_range: c.range("roof_size")?,
            roof_hue_range: c.range("roof_hue")?,
            roof_saturation_range: c.range("roof_saturation")?,
            roof_value_range: c.range("roof_value")?,
            roof_texture_scale: c.parsed("roof_texture_scale")?,
            roof_texture_amplitude: c.parsed("roof_texture_amplitude")?,
            roof_stripe_period: c.opt("roof_stripe_period")?,
            clutter_count_range: c.range("clutter_count")?,
            pv_panel_count_range: c.range("pv_panel_count")?,
            pv_cell_grid: (c.range("pv_cell_rows")?, c.range("pv_cell_cols")?),
            pv_cell_size_range: c.range("pv_cell_size")?,
            pv_hue_range: c.range("pv_hue")?,
            pv_value_range: c.range("pv_value")?,
            noise_sigma: c.parsed("noise_sigma")?,
            seed: c.opt("seed")?.unwrap_or(seed.wrapping_add(i as u64)),
        };
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}

const METRES_PER_PIXEL: f64 = 0.25;
const SLOT_MARGIN: usize = 12;

fn io_err(path: &Path, e: impl std::fmt::Display) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn rooftop_id(index: usize) -> String {
    format!("b{index:04}")
}

/// Seeded class assignment: `true` marks a with-PV rooftop.
pub fn class_layout(spec: &CitySpec) -> Vec<bool> {
    let mut flags: Vec<bool> = (0..spec.n_with_pv + spec.n_no_pv).map(|i| i < spec.n_with_pv).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    flags.shuffle(&mut rng);
    flags
}

/// Renders the city mosaic and its footprints. Returns the raster, the
/// footprints (with labels), and the per-rooftop renders.
pub fn render_city(spec: &CitySpec) -> Result<(GeoRaster, FootprintSet, Vec<RenderedRoof>), SynthError> {
    spec.validate()?;
    let layout = class_layout(spec);
    let roofs: Vec<RenderedRoof> = layout
        .par_iter()
        .enumerate()
        .map(|(i, &pv)| render_rooftop(spec, i, pv))
        .collect();
    let n = roofs.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let slot = spec.roof_size_range.1 + 2 * SLOT_MARGIN;
    let (w, h) = (cols * slot, rows * slot);
    let mut mosaic = Image::new(w, h, 3);
    let ground = render::hsv_to_rgb(95.0, 0.2, 0.4).map(|v| v.round() as u8);
    for px in mosaic.data_mut().chunks_exact_mut(3) {
        px.copy_from_slice(&ground);
    }
    // Origin on a round easting/northing; north-up.
    let origin = (500_000.0 + 1000.0 * (spec.seed % 97) as f64, 2_000_000.0);
    let transform = Affine {
        a: METRES_PER_PIXEL,
        b: 0.0,
        c: origin.0,
        d: 0.0,
        e: -METRES_PER_PIXEL,
        f: origin.1,
    };
    let mut entries = Vec::with_capacity(n);
    for (i, roof) in roofs.iter().enumerate() {
        let x0 = (i % cols) * slot + SLOT_MARGIN;
        let y0 = (i / cols) * slot + SLOT_MARGIN;
        for y in 0..roof.image.height() {
            for x in 0..roof.image.width() {
                mosaic.pixel_mut(x0 + x, y0 + y).copy_from_slice(roof.image.pixel(x, y));
            }
        }
        let ring = roof
            .outline
            .iter()
            .map(|&(px, py)| transform.apply(x0 as f64 + px, y0 as f64 + py))
            .collect();
        entries.push(FootprintEntry {
            rooftop_id: rooftop_id(i),
            rings: vec![ring],
            label: Some(if layout[i] { Label::WithPv } else { Label::NoPv }),
        });
    }
    let raster = GeoRaster::new(mosaic, transform)?;
    Ok((raster, FootprintSet { entries }, roofs))
}

/// Writes `<out>/<city>/source/` (mosaic, world file, footprints, labels) and
/// the prepared layout under `<out>/<city>/`, going through the regular
/// loaders and ingest.
pub fn generate_city(spec: &CitySpec, out: &Path) -> Result<CityDataset, SynthError> {
    let (raster, footprints, _) = render_city(spec)?;
    let src = out.join(&spec.name).join("source");
    fs::create_dir_all(&src).map_err(|e| io_err(&src, e))?;
    let png = src.join("city.png");
    raster.pixels().save_png(&png).map_err(|e| io_err(&png, e))?;
    let pgw = src.join("city.pgw");
    fs::write(&pgw, raster.transform().to_world_file()).map_err(|e| io_err(&pgw, e))?;
    let gj = src.join("footprints.geojson");
    let text = serde_json::to_string_pretty(&footprints.to_geojson()).map_err(|e| io_err(&gj, e))?;
    fs::write(&gj, text).map_err(|e| io_err(&gj, e))?;
    let mut labels = String::from("rooftop_id,label\n");
    for e in &footprints.entries {
        labels.push_str(&format!("{},{}\n", e.rooftop_id, e.label.expect("set above")));
    }
    let lp = src.join("labels.csv");
    fs::write(&lp, labels).map_err(|e| io_err(&lp, e))?;

    let raster = geodata::load_raster(&png)?;
    let footprints = geodata::load_footprints(&gj)?;
    let label_map = geodata::read_key_csv(&lp)?;
    let city = geodata::ingest(&spec.name, &raster, &footprints, Some(&label_map), None, spec.seed)?;
    geodata::write_city(out, &city)?;
    Ok(city)
}

/// Appends augmented copies of minority-class training rooftops until both
/// classes have equal training counts. Test rooftops are untouched. Copies are
/// named `<id>_aug<N>` with `N` counting copies of that source from 1.
pub fn balance_minority(city: &CityDataset, seed: u64) -> Result<CityDataset, SynthError> {
    let (pos, neg) = city.class_counts(Split::Train);
    if pos == 0 || neg == 0 {
        return Err(SynthError::MissingClass(city.name.clone()));
    }
    let minority = if pos < neg { Label::WithPv } else { Label::NoPv };
    let deficit = pos.abs_diff(neg);
    let sources: Vec<&RooftopRecord> = city.split(Split::Train).filter(|r| r.label() == minority).collect();
    let mut taken: HashSet<String> = city.rooftops.iter().map(|r| r.id().to_string()).collect();
    let mut copies: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = city.clone();
    for i in 0..deficit {
        let s = i % sources.len();
        let chain = sample_chain(&mut rng);
        let src = sources[s];
        let mut image = augment_rooftop(&src.image, &chain);
        let n = copies.entry(s).or_insert(0);
        let id = loop {
            *n += 1;
            let candidate = format!("{}_aug{}", src.id(), n);
            if taken.insert(candidate.clone()) {
                break candidate;
            }
        };
        image.rooftop_id = id;
        out.rooftops.push(RooftopRecord {
            image,
            split: Split::Train,
        });
    }
    Ok(out)
}

/// Id of the original rooftop an augmented copy came from.
pub fn source_id(id: &str) -> &str {
    match id.rfind("_aug") {
        Some(p) if id[p + 4..].parse::<usize>().is_ok() => &id[..p],
        _ => id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CitySpec {
        CitySpec {
            roof_size_range: (40, 64),
            ..CitySpec::base("tiny", 5, 5, seed)
        }
    }

    #[test]
    fn generates_counts_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let city = generate_city(&small(3), dir.path()).unwrap();
        assert_eq!(city.rooftops.len(), 10);
        let c = dir.path().join("tiny");
        assert_eq!(fs::read_dir(c.join("images")).unwrap().count(), 10);
        let labels = fs::read_to_string(c.join("labels.csv")).unwrap();
        assert_eq!(labels.matches("with_pv").count(), 5);
        assert_eq!(labels.matches("no_pv").count(), 5);
        assert!(c.join("splits.csv").exists());
        let back = geodata::read_city(dir.path(), "tiny").unwrap();
        assert_eq!(back.rooftops.len(), 10);
    }

    #[test]
    fn generation_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_city(&small(11), a.path()).unwrap();
        generate_city(&small(11), b.path()).unwrap();
        for sub in ["labels.csv", "splits.csv", "source/city.png", "source/footprints.geojson", "images/b0003.png"] {
            assert_eq!(
                fs::read(a.path().join("tiny").join(sub)).unwrap(),
                fs::read(b.path().join("tiny").join(sub)).unwrap(),
                "{sub}"
            );
        }
    }

    #[test]
    fn panel_diff_is_confined_to_panels() {
        let spec = CitySpec::base("x", 1, 1, 5);
        for index in 0..12 {
            let with = render_rooftop(&spec, index, true);
            let without = render_rooftop(&spec, index, false);
            assert!(!with.panels.is_empty());
            let mut differs = false;
            for y in 0..with.image.height() {
                for x in 0..with.image.width() {
                    if with.image.pixel(x, y) != without.image.pixel(x, y) {
                        differs = true;
                        assert!(with.panels.iter().any(|p| p.contains(x, y)), "diff at ({x},{y})");
                    }
                }
            }
            assert!(differs);
            for p in &with.panels {
                for y in p.y..p.y + p.h {
                    for x in p.x..p.x + p.w {
                        assert!(with.footprint.get(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn default_ratios_follow_scaled_counts() {
        let specs = default_benchmark(0);
        let reference = [(42.0, 507.0), (73.0, 98.0), (195.0, 195.0)];
        for (s, (p, n)) in specs.iter().zip(reference) {
            assert!((s.n_with_pv as f64 - p / 5.0).abs() <= 1.0);
            assert!((s.n_no_pv as f64 - n / 5.0).abs() <= 1.0);
            s.validate().unwrap();
        }
    }

    #[test]
    fn balancing() {
        let spec = CitySpec {
            roof_size_range: (40, 56),
            ..CitySpec::base("bal", 6, 17, 2)
        };
        let (raster, fps, _) = render_city(&spec).unwrap();
        let city = geodata::ingest("bal", &raster, &fps, None, None, 2).unwrap();
        let (p, n) = city.class_counts(Split::Train);
        assert_eq!((p, n), (4, 12));
        let out = balance_minority(&city, 9).unwrap();
        assert_eq!(out.class_counts(Split::Train), (12, 12));
        assert_eq!(out.rooftops.len(), city.rooftops.len() + 8);
        let test_before: Vec<_> = city.split(Split::Test).map(|r| r.id()).collect();
        let test_after: Vec<_> = out.split(Split::Test).map(|r| r.id()).collect();
        assert_eq!(test_before, test_after);
        let originals: HashSet<&str> = city.rooftops.iter().map(|r| r.id()).collect();
        for r in &out.rooftops[city.rooftops.len()..] {
            assert!(r.id().contains("_aug") && !originals.contains(r.id()));
            assert_eq!(r.split, Split::Train);
            assert!(originals.contains(source_id(r.id())));
        }
        assert_eq!(out, balance_minority(&city, 9).unwrap());
        let balanced = balance_minority(&out, 1).unwrap();
        assert_eq!(balanced.rooftops.len(), out.rooftops.len());
    }

    #[test]
    fn specs_from_config_fill_defaults() {
        let cfg = Config::parse("seed = 4\ncities = a,b\ncity.a.n_with_pv = 2\ncity.b.roof_stripe_period = 5\n").unwrap();
        let specs = specs_from_config(&cfg).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].n_with_pv, 2);
        assert_eq!(specs[0].seed, 4);
        assert_eq!(specs[1].seed, 5);
        assert_eq!(specs[1].roof_stripe_period, Some(5.0));
        let bad = Config::parse("cities = a\ncity.a.colour = red\n").unwrap();
        assert!(specs_from_config(&bad).is_err());
    }
}
