//! `gridpv` command-line entry point.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridpv_core::config::{Config, Schema, split_list};
use gridpv_core::encoding::{
    GmmParams, KMeansParams, Normalization, Provenance, Quantizer, avg_encode, fv_encode, gmm_fit, kmeans_fit,
    load_quantizer, save_quantizer, subsample_rows, vlad_encode,
};
use gridpv_core::features::{Extractor, load_features, save_features};
use gridpv_core::geodata::{self, CityDataset};
use gridpv_core::matrix::Matrix;
use gridpv_core::phases::{
    Approach, PIPELINE_SCHEMA, Pipeline, PipelineConfig, extract_rooftops, load_registry, run_pipeline, save_registry,
};
use gridpv_core::synthcity::{SYNTH_SCHEMA, generate_city, specs_from_config};
use gridpv_core::tiler::{tile_or_best, tile_stats};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "gridpv", version, about = "Rooftop solar panel classification from grid-tiled local features")]
struct Cli {
    /// Key-value config file (`key = value`, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output path for results; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Config override `key=value`; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Prepared-dataset root.
    #[arg(long, default_value = "data")]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clip rooftops from a raster and footprints into the prepared layout.
    #[command(after_help = pipeline_help())]
    Ingest {
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        footprints: PathBuf,
        #[arg(long)]
        city: String,
        /// CSV `rooftop_id,label`; otherwise the footprint `label` property.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// CSV `rooftop_id,split`; otherwise a seeded stratified 70/30 split.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Tile a prepared city; `--stats` prints kept/total cells per rooftop.
    #[command(after_help = pipeline_help())]
    Tile {
        #[arg(long)]
        city: String,
        /// Grid size; defaults to the first `grid.sizes` value.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        stats: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Extract local features of a prepared city into a feature file.
    #[command(after_help = pipeline_help())]
    Extract {
        #[arg(long)]
        city: String,
        /// Grid size; omit together with `--whole` for whole-rooftop features.
        #[arg(long, conflicts_with = "whole")]
        grid: Option<usize>,
        /// One descriptor per rooftop from the crop resized to `br.input_size`.
        #[arg(long)]
        whole: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit or apply a codebook and write rooftop descriptors as JSON lines.
    #[command(after_help = pipeline_help())]
    Encode {
        /// Feature file(s), comma separated.
        #[arg(long)]
        features: String,
        /// vlad, fv, or avg.
        #[arg(long)]
        method: String,
        /// Cluster count when fitting; defaults to the first `vlad.k` value.
        #[arg(long)]
        k: Option<usize>,
        /// Codebook file: read, or written when `--fit` is given.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        fit: bool,
    },
    /// Grid-search classifiers on the pooled training splits of the given cities.
    #[command(after_help = pipeline_help())]
    Train {
        #[arg(long)]
        cities: String,
        #[arg(long)]
        approach: Option<String>,
        #[arg(long)]
        registry: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score a registry's best model on the pooled test splits of the given cities.
    #[command(after_help = pipeline_help())]
    Evaluate {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        cities: String,
        #[arg(long)]
        approach: Option<String>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run the three-phase protocol over cities in arrival order.
    #[command(after_help = pipeline_help())]
    PhaseRun {
        #[arg(long)]
        cities: String,
        #[arg(long)]
        approach: Option<String>,
        #[arg(long)]
        registry: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate synthetic cities in the prepared layout.
    #[command(after_help = synth_help())]
    SynthGen {
        /// City spec file; the built-in three-city benchmark when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn pipeline_help() -> String {
    format!("Config keys (--config file or --set key=value):\n{}", PIPELINE_SCHEMA.help())
}

fn synth_help() -> String {
    format!("Spec keys (--spec file or --set key=value):\n{}", SYNTH_SCHEMA.help())
}

/// Failure tagged with the module and operation that produced it.
#[derive(Debug)]
struct CliError {
    module: &'static str,
    op: &'static str,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{} failed: {}", self.module, self.op, self.message)
    }
}

trait Context<T> {
    fn ctx(self, module: &'static str, op: &'static str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn ctx(self, module: &'static str, op: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            module,
            op,
            message: e.to_string(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(j) = cli.jobs
        && let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()
    {
        eprintln!("error: cli::jobs failed: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Defaults < config file < `--set` < dedicated flags.
fn layered(cli: &Cli, file: Option<&Path>, schema: &Schema) -> Result<Config, CliError> {
    let mut cfg = match file {
        Some(p) => Config::load(p).ctx("config", "load")?,
        None => Config::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError {
            module: "config",
            op: "set",
            message: format!("expected key=value, got {kv:?}"),
        })?;
        cfg.set(k.trim(), v);
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string());
    }
    cfg.validate(schema).ctx("config", "validate")?;
    Ok(cfg)
}

fn pipeline_config(cli: &Cli, approach: Option<&str>) -> Result<PipelineConfig, CliError> {
    let mut cfg = layered(cli, cli.config.as_deref(), &PIPELINE_SCHEMA)?;
    if let Some(a) = approach {
        cfg.set("approach", a);
    }
    PipelineConfig::from_config(&cfg).ctx("phases", "config")
}

fn emit(cli: &Cli, text: &str) -> Result<(), CliError> {
    match &cli.out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).ctx("cli", "write output")?;
            }
            fs::write(p, text).ctx("cli", "write output")
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).ctx("cli", "write output")
        }
    }
}

fn emit_json<T: Serialize>(cli: &Cli, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).ctx("cli", "serialise")?;
    emit(cli, &(text + "\n"))
}

fn read_cities(data: &Path, names: &str) -> Result<Vec<CityDataset>, CliError> {
    let names = split_list(names);
    if names.is_empty() {
        return Err(CliError {
            module: "cli",
            op: "cities",
            message: "no cities given".into(),
        });
    }
    names
        .iter()
        .map(|n| geodata::read_city(data, n).ctx("geodata", "read_city"))
        .collect()
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Ingest {
            raster,
            footprints,
            city,
            labels,
            splits,
            data,
        } => {
            let seed = layered(cli, cli.config.as_deref(), &PIPELINE_SCHEMA)?
                .opt::<u64>("seed")
                .ctx("config", "seed")?
                .unwrap_or(7);
            let r = geodata::load_raster(raster).ctx("geodata", "load_raster")?;
            let fp = geodata::load_footprints(footprints).ctx("geodata", "load_footprints")?;
            let labels = labels
                .as_deref()
                .map(geodata::read_key_csv)
                .transpose()
                .ctx("geodata", "read labels")?;
            let splits = splits
                .as_deref()
                .map(geodata::read_key_csv)
                .transpose()
                .ctx("geodata", "read splits")?;
            let ds = geodata::ingest(city, &r, &fp, labels.as_ref(), splits.as_ref(), seed).ctx("geodata", "ingest")?;
            geodata::write_city(&data.data, &ds).ctx("geodata", "write_city")?;
            let (tp, tn) = ds.class_counts(geodata::Split::Train);
            let (sp, sn) = ds.class_counts(geodata::Split::Test);
            log::info!("{city}: train {tp}+/{tn}-, test {sp}+/{sn}-");
            emit_json(
                cli,
                &serde_json::json!({"city": city, "rooftops": ds.rooftops.len(),
                    "train": {"with_pv": tp, "no_pv": tn}, "test": {"with_pv": sp, "no_pv": sn}}),
            )?;
            Ok(0)
        }
        Command::Tile {
            city,
            grid,
            stats,
            data,
        } => {
            let pc = pipeline_config(cli, None)?;
            let g = grid.or(pc.grid.grid_sizes.first().copied()).unwrap_or(64);
            let ds = geodata::read_city(&data.data, city).ctx("geodata", "read_city")?;
            if *stats {
                let mut text = String::new();
                for r in &ds.rooftops {
                    let s = tile_stats(&r.image, g, pc.min_coverage);
                    text.push_str(&format!("{city},{},{}/{}\n", r.id(), s.kept, s.total));
                }
                emit(cli, &text)?;
            } else {
                let dir = cli.out.clone().ok_or_else(|| CliError {
                    module: "tiler",
                    op: "tile",
                    message: "--out <dir> is required without --stats".into(),
                })?;
                for r in &ds.rooftops {
                    for t in tile_or_best(&r.image, g, pc.min_coverage).ctx("tiler", "tile")? {
                        let p = dir.join(city).join(format!("{}_r{}_c{}.png", r.id(), t.index.0, t.index.1));
                        fs::create_dir_all(p.parent().expect("has parent")).ctx("tiler", "write tile")?;
                        t.pixels.save_png(&p).ctx("tiler", "write tile")?;
                    }
                }
            }
            Ok(0)
        }
        Command::Extract {
            city,
            grid,
            whole,
            data,
        } => {
            let pc = pipeline_config(cli, None)?;
            let out = cli.out.clone().ok_or_else(|| CliError {
                module: "features",
                op: "extract",
                message: "--out <file> is required".into(),
            })?;
            let grid = match (grid, whole) {
                (_, true) => None,
                (Some(g), false) => Some(*g),
                (None, false) => Some(pc.grid.grid_sizes.first().copied().unwrap_or(64)),
            };
            let ds = geodata::read_city(&data.data, city).ctx("geodata", "read_city")?;
            let extractor = Extractor::from_spec(&pc.extractor).ctx("features", "load extractor")?;
            let roofs: Vec<_> = ds.rooftops.iter().map(|r| &r.image).collect();
            let sets =
                extract_rooftops(&extractor, &roofs, grid, pc.min_coverage, pc.br_input_size).ctx("features", "extract")?;
            save_features(&out, city, &pc.extractor.id(), &sets).ctx("features", "save_features")?;
            Ok(0)
        }
        Command::Encode {
            features,
            method,
            k,
            codebook,
            fit,
        } => encode(cli, features, method, *k, codebook.as_deref(), *fit),
        Command::Train {
            cities,
            approach,
            registry,
            data,
        } => {
            let pc = pipeline_config(cli, approach.as_deref())?;
            let ds = read_cities(&data.data, cities)?;
            let mut p = Pipeline::new(pc).ctx("phases", "train")?;
            let summary = p.train_combined(&ds).ctx("phases", "train")?;
            save_registry(registry, p.registry()).ctx("phases", "save_registry")?;
            emit_json(cli, &summary)?;
            Ok(0)
        }
        Command::Evaluate {
            registry,
            cities,
            approach,
            data,
        } => {
            let reg = load_registry(registry).ctx("phases", "load_registry")?;
            if let Some(a) = approach {
                let want: Approach = a.parse().ctx("phases", "evaluate")?;
                if want != reg.approach {
                    return Err(CliError {
                        module: "phases",
                        op: "evaluate",
                        message: format!("registry holds {} models, not {want}", reg.approach),
                    });
                }
            }
            let ds = read_cities(&data.data, cities)?;
            let p = Pipeline::attach(reg, &ds).ctx("phases", "evaluate")?;
            let report = p.evaluate_best().ctx("phases", "evaluate")?;
            emit_json(cli, &report)?;
            Ok(0)
        }
        Command::PhaseRun {
            cities,
            approach,
            registry,
            data,
        } => {
            let pc = pipeline_config(cli, approach.as_deref())?;
            let ds = read_cities(&data.data, cities)?;
            let (report, p) = run_pipeline(&ds, &pc).ctx("phases", "run_pipeline")?;
            save_registry(registry, p.registry()).ctx("phases", "save_registry")?;
            eprint!("{}", report.to_table());
            emit_json(cli, &report)?;
            Ok(if report.all_passed() { 0 } else { 2 })
        }
        Command::SynthGen { spec } => {
            let file = spec.as_deref().or(cli.config.as_deref());
            let cfg = layered(cli, file, &SYNTH_SCHEMA)?;
            let specs = if file.is_none() && cli.set.is_empty() {
                gridpv_core::synthcity::default_benchmark(cli.seed.unwrap_or(7))
            } else {
                specs_from_config(&cfg).ctx("synthcity", "read spec")?
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            let mut summary = Vec::new();
            for s in &specs {
                let ds = generate_city(s, &out).ctx("synthcity", "generate_city")?;
                log::info!("generated {} ({} rooftops)", s.name, ds.rooftops.len());
                summary.push(serde_json::json!({"city": s.name, "rooftops": ds.rooftops.len()}));
            }
            let text = serde_json::to_string_pretty(&summary).ctx("cli", "serialise")? + "\n";
            std::io::stdout().write_all(text.as_bytes()).ctx("cli", "write output")?;
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct DescriptorLine<'a> {
    city: &'a str,
    id: &'a str,
    label: Option<&'a str>,
    values: Vec<f64>,
}

fn encode(cli: &Cli, features: &str, method: &str, k: Option<usize>, codebook: Option<&Path>, fit: bool) -> Result<u8, CliError> {
    let pc = pipeline_config(cli, None)?;
    let files = split_list(features)
        .iter()
        .map(|f| load_features(Path::new(f)).ctx("features", "load_features"))
        .collect::<Result<Vec<_>, _>>()?;
    let sets: Vec<_> = files.iter().flat_map(|f| f.sets.iter()).collect();
    let method = method.trim().to_ascii_lowercase();
    let norm: Normalization = pc.normalization;
    let quantizer = match method.as_str() {
        "avg" => None,
        "vlad" | "fv" => {
            let path = codebook.ok_or_else(|| CliError {
                module: "encoding",
                op: "encode",
                message: "--codebook is required for vlad and fv".into(),
            })?;
            if fit {
                let k = k.or(pc.grid.ks.first().copied()).unwrap_or(2);
                let dim = sets.first().map_or(0, |s| s.dim());
                let pool = Matrix::from_rows(dim, sets.iter().flat_map(|s| s.vectors.iter_rows())).ok_or_else(|| {
                    CliError {
                        module: "encoding",
                        op: "encode",
                        message: "feature files differ in dimension".into(),
                    }
                })?;
                let pool = subsample_rows(&pool, pc.pool_cap, pc.seed);
                let provenance = Provenance {
                    cities: files.iter().map(|f| f.city.clone()).collect(),
                    extractor: files.first().map(|f| f.extractor.clone()).unwrap_or_default(),
                };
                let q = if method == "fv" {
                    let mut p = GmmParams::new(k, pc.seed);
                    p.max_iter = pc.gmm_max_iter;
                    p.variance_floor = pc.gmm_variance_floor;
                    let mut m = gmm_fit(&pool, &p).ctx("encoding", "gmm_fit")?.model;
                    m.provenance = provenance;
                    Quantizer::Gmm(m)
                } else {
                    let mut p = KMeansParams::new(k, pc.seed);
                    p.max_iter = pc.kmeans_max_iter;
                    let mut cb = kmeans_fit(&pool, &p).ctx("encoding", "kmeans_fit")?.codebook;
                    cb.provenance = provenance;
                    Quantizer::Codebook(cb)
                };
                save_quantizer(path, &q).ctx("encoding", "save codebook")?;
                Some(q)
            } else {
                Some(load_quantizer(path).ctx("encoding", "load codebook")?)
            }
        }
        other => {
            return Err(CliError {
                module: "encoding",
                op: "encode",
                message: format!("unknown method {other:?} (vlad, fv, avg)"),
            });
        }
    };
    let mut text = String::new();
    for s in &sets {
        let d = match &quantizer {
            None => avg_encode(s),
            Some(Quantizer::Codebook(cb)) if method == "vlad" => vlad_encode(cb, s, norm),
            Some(Quantizer::Gmm(g)) if method == "fv" => fv_encode(g, s, norm),
            Some(_) => {
                return Err(CliError {
                    module: "encoding",
                    op: "encode",
                    message: format!("codebook kind does not match method {method}"),
                });
            }
        }
        .ctx("encoding", "encode")?;
        let line = DescriptorLine {
            city: &s.city_id,
            id: &s.rooftop_id,
            label: s.label.map(|l| l.as_str()),
            values: d.values,
        };
        text.push_str(&serde_json::to_string(&line).ctx("cli", "serialise")?);
        text.push('\n');
    }
    emit(cli, &text)?;
    Ok(0)
}
