//! gridpv: rooftop solar panel classification from grid-tiled local features.
//!
//! Pipeline stages:
//!
//! 1. **geodata** – load rasters and footprints, clip masked rooftop crops.
//! 2. **tiler** – split each crop into regular `g × g` tiles.
//! 3. **features** – one local descriptor per tile (or per resized rooftop).
//! 4. **encoding** – VLAD, Fisher-vector, or average pooling into a fixed-length
//!    rooftop descriptor.
//! 5. **classify** – logistic regression, random forest, and linear/RFF SVM.
//! 6. **eval** – city-level, global, and weighted F1.
//! 7. **phases** – the evaluate / re-validate / retrain protocol across cities.
//! 8. **synthcity** – seeded synthetic cities and augmentation.

pub mod binfmt;
pub mod features;
pub mod geodata;
pub mod image;
pub mod matrix;
pub mod synthcity;
pub mod tiler;
pub mod classify;
pub mod config;
pub mod encoding;
pub mod eval;
pub mod phases;
