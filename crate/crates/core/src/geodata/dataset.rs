//! Prepared-dataset layout:
//!
//! ```text
//! <root>/<city>/images/<rooftop_id>.png   RGB crop
//! <root>/<city>/masks/<rooftop_id>.png    8-bit, 255 = inside footprint
//! <root>/<city>/labels.csv                rooftop_id,label
//! <root>/<city>/splits.csv                rooftop_id,split
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Affine, FootprintSet, GeoError, GeoRaster, Label, RooftopImage, clip_rooftop};
use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(GeoError::Dataset(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RooftopRecord {
    pub image: RooftopImage,
    pub split: Split,
}

impl RooftopRecord {
    pub fn id(&self) -> &str {
        &self.image.rooftop_id
    }

    pub fn label(&self) -> Label {
        self.image.label.expect("prepared rooftops are labelled")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityDataset {
    pub name: String,
    pub rooftops: Vec<RooftopRecord>,
}

impl CityDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &RooftopRecord> {
        self.rooftops.iter().filter(move |r| r.split == split)
    }

    pub fn class_counts(&self, split: Split) -> (usize, usize) {
        self.split(split).fold((0, 0), |(p, n), r| match r.label() {
            Label::WithPv => (p + 1, n),
            Label::NoPv => (p, n + 1),
        })
    }
}

fn check_id(id: &str) -> Result<(), GeoError> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(GeoError::Dataset(format!("rooftop id {id:?} is not usable as a file name")));
    }
    Ok(())
}

/// Seeded per-class shuffle; the first `round(train_frac · n)` of each class train.
pub fn stratified_split(items: &[(String, Label)], train_frac: f64, seed: u64) -> HashMap<String, Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HashMap::new();
    for class in [Label::WithPv, Label::NoPv] {
        let mut ids: Vec<&String> = items.iter().filter(|(_, l)| *l == class).map(|(i, _)| i).collect();
        ids.shuffle(&mut rng);
        let n_train = (train_frac * ids.len() as f64).round() as usize;
        for (k, id) in ids.into_iter().enumerate() {
            out.insert(id.clone(), if k < n_train { Split::Train } else { Split::Test });
        }
    }
    out
}

/// Reads a two-column CSV with a header row into `first column → second column`.
pub fn read_key_csv(path: &Path) -> Result<BTreeMap<String, String>, GeoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| GeoError::io(path, e))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GeoError::io(path, e))?;
        if rec.len() != 2 {
            return Err(GeoError::Dataset(format!("{}: expected 2 columns", path.display())));
        }
        out.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(out)
}

/// Clips every footprint, resolves labels and splits, and returns the city.
///
/// Labels come from `labels` when given, otherwise from the footprint's `label`
/// property. Without `splits`, a seeded stratified 70/30 split is drawn.
pub fn ingest(
    city: &str,
    raster: &GeoRaster,
    footprints: &FootprintSet,
    labels: Option<&BTreeMap<String, String>>,
    splits: Option<&BTreeMap<String, String>>,
    seed: u64,
) -> Result<CityDataset, GeoError> {
    let mut images = Vec::with_capacity(footprints.len());
    for entry in &footprints.entries {
        check_id(&entry.rooftop_id)?;
        let mut img = clip_rooftop(raster, entry, city)?;
        if let Some(map) = labels {
            img.label = match map.get(&entry.rooftop_id) {
                Some(l) => Some(l.parse()?),
                None => None,
            };
        }
        if img.label.is_none() {
            return Err(GeoError::Dataset(format!("rooftop {} has no label", entry.rooftop_id)));
        }
        images.push(img);
    }
    let split_map: HashMap<String, Split> = match splits {
        Some(map) => map
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.parse()?)))
            .collect::<Result<_, GeoError>>()?,
        None => {
            let items: Vec<_> = images
                .iter()
                .map(|i| (i.rooftop_id.clone(), i.label.expect("checked above")))
                .collect();
            stratified_split(&items, 0.7, seed)
        }
    };
    let rooftops = images
        .into_iter()
        .map(|image| {
            let split = *split_map
                .get(&image.rooftop_id)
                .ok_or_else(|| GeoError::Dataset(format!("rooftop {} has no split", image.rooftop_id)))?;
            Ok(RooftopRecord { image, split })
        })
        .collect::<Result<_, GeoError>>()?;
    Ok(CityDataset {
        name: city.to_string(),
        rooftops,
    })
}

pub fn write_city(root: &Path, city: &CityDataset) -> Result<(), GeoError> {
    let dir = root.join(&city.name);
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| GeoError::io(d, e))?;
    }
    let mut labels = String::from("rooftop_id,label\n");
    let mut splits = String::from("rooftop_id,split\n");
    for r in &city.rooftops {
        let id = r.id();
        check_id(id)?;
        let ip = images.join(format!("{id}.png"));
        r.image.pixels.save_png(&ip).map_err(|e| GeoError::io(&ip, e))?;
        let mp = masks.join(format!("{id}.png"));
        r.image.valid_mask.to_image().save_png(&mp).map_err(|e| GeoError::io(&mp, e))?;
        labels.push_str(&format!("{},{}\n", csv_field(id), r.label()));
        splits.push_str(&format!("{},{}\n", csv_field(id), r.split));
    }
    let lp = dir.join("labels.csv");
    fs::write(&lp, labels).map_err(|e| GeoError::io(&lp, e))?;
    let sp = dir.join("splits.csv");
    fs::write(&sp, splits).map_err(|e| GeoError::io(&sp, e))?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Loads a prepared city. Rooftops keep the order of `labels.csv`.
pub fn read_city(root: &Path, name: &str) -> Result<CityDataset, GeoError> {
    let dir = root.join(name);
    let lp = dir.join("labels.csv");
    let sp = dir.join("splits.csv");
    let mut rdr = csv::Reader::from_path(&lp).map_err(|e| GeoError::io(&lp, e))?;
    let labels: Vec<(String, Label)> = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| GeoError::io(&lp, e))?;
            Ok((rec[0].to_string(), rec[1].parse()?))
        })
        .collect::<Result<_, GeoError>>()?;
    let splits = read_key_csv(&sp)?;

    let mut rooftops = Vec::with_capacity(labels.len());
    for (id, label) in labels {
        check_id(&id)?;
        let split: Split = splits
            .get(&id)
            .ok_or_else(|| GeoError::Dataset(format!("{name}/{id} missing from splits.csv")))?
            .parse()?;
        let ip = dir.join("images").join(format!("{id}.png"));
        let mp = dir.join("masks").join(format!("{id}.png"));
        let pixels = load_rgb(&ip)?;
        let mask_img = Image::load_png(&mp)
            .map_err(|e| GeoError::io(&mp, e))?
            .map_err(|c| GeoError::Dataset(format!("{}: mask must be 8-bit gray, got {c:?}", mp.display())))?;
        let valid_mask = Mask::from_image(&mask_img);
        if (valid_mask.width(), valid_mask.height()) != (pixels.width(), pixels.height()) {
            return Err(GeoError::Dataset(format!("{name}/{id}: mask and image sizes differ")));
        }
        if valid_mask.count() == 0 {
            return Err(GeoError::EmptyMask(id));
        }
        rooftops.push(RooftopRecord {
            image: RooftopImage {
                rooftop_id: id,
                city_id: name.to_string(),
                pixels,
                valid_mask,
                label: Some(label),
                transform: Affine::IDENTITY,
            },
            split,
        });
    }
    Ok(CityDataset {
        name: name.to_string(),
        rooftops,
    })
}

fn load_rgb(path: &Path) -> Result<Image, GeoError> {
    let img = Image::load_png(path)
        .map_err(|e| GeoError::io(path, e))?
        .map_err(|c| GeoError::UnsupportedRaster(format!("{}: {c:?}", path.display())))?;
    Ok(if img.channels() == 1 { img.gray_to_rgb() } else { img })
}
