//! Command-line plumbing: flat key=value configs with flag overrides, the
//! run manifest, and the six subcommands (train, eval, gradcheck, cost,
//! compare, export-text).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::AugmentCfg;
use crate::cost::census;
use crate::data::{load_dir, synthetic_blobs, Dataset};
use crate::error::{Error, Result};
use crate::gradcheck::gradient_suite;
use crate::models::{build, ArchFamily, ArchitectureSpec, ModelGraph, ModelVariant};
use crate::serialize::{export_model, import_model};
use crate::train::{evaluate, train, OptimizerCfg};

#[derive(Parser)]
#[command(
    name = "onebit",
    version,
    about = "Train and run batch-norm-free CNNs with single-bit conv weights"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model; writes model file, metric trace, and run manifest.
    Train(CommonArgs),
    /// Evaluate a model file on a dataset's test split.
    Eval(EvalArgs),
    /// Finite-difference check of every backward rule (64-bit).
    Gradcheck(GradcheckArgs),
    /// Per-layer inference cost census, float vs single-bit side by side.
    Cost(CommonArgs),
    /// Train a (variant, width, bits) matrix at desk scale and summarize.
    Compare(CompareArgs),
    /// Print the layer-by-layer graph listing for a configuration.
    ExportText(CommonArgs),
}

#[derive(Args, Clone, Default)]
pub struct CommonArgs {
    /// Flat key=value config file; flags below override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory, or "synthetic[:N,HW,CLASSES]".
    #[arg(long)]
    pub dataset: Option<String>,
    /// Output directory (default "run").
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread count (0 = library default).
    #[arg(long)]
    pub threads: Option<usize>,
    /// One of baseline1, baseline2, finalbnonly, sreluonly, eluonly,
    /// meanonlyfinal.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub width: Option<f64>,
    /// Weight representation: 32 (float) or 1 (single-bit).
    #[arg(long)]
    pub bits: Option<u32>,
    /// Softmax temperature (default 50 for batch-norm-free variants).
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// cifar or imagenet.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model file produced by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Matrix file: one "variant width bits" row per cell. Without it the
    /// matrix is all six variants at the configured width and bits.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Training runs per cell with derived seeds.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Fully resolved run settings. The manifest serializes exactly these
/// fields, so a manifest is itself a loadable config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: ModelVariant,
    pub family: ArchFamily,
    pub depth: usize,
    pub width: f64,
    pub bits: u32,
    /// None means "apply the default rule at resolution time".
    pub temperature: Option<f64>,
    pub opt: OptimizerCfg,
    pub pad_crop: bool,
    pub hflip: bool,
    /// Cutout square side; 0 disables.
    pub cutout: usize,
    pub seed: u64,
    pub dataset: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: ModelVariant::SreluOnly,
            family: ArchFamily::Cifar,
            depth: 20,
            width: 4.0,
            bits: 32,
            temperature: None,
            opt: OptimizerCfg::default(),
            pad_crop: true,
            hflip: true,
            cutout: 0,
            seed: 1,
            dataset: "synthetic:256,16,2".to_string(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn validate_bits(bits: u32) -> Result<u32> {
    match bits {
        1 | 32 => Ok(bits),
        other => Err(Error::Config(format!("bits: expected 1 or 32, got {other}"))),
    }
}

impl RunConfig {
    /// Apply one config-file entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = ModelVariant::parse(value)?,
            "family" => self.family = ArchFamily::parse(value)?,
            "depth" => self.depth = parse_num(key, value)?,
            "width" => self.width = parse_num(key, value)?,
            "bits" => self.bits = validate_bits(parse_num(key, value)?)?,
            "quantized" => self.bits = if parse_bool(key, value)? { 1 } else { 32 },
            "temperature" => self.temperature = Some(parse_num(key, value)?),
            "epochs" => self.opt.epochs = parse_num(key, value)?,
            "batch_size" => self.opt.batch_size = parse_num(key, value)?,
            "lr_start" => self.opt.lr_start = parse_num(key, value)?,
            "lr_end" => self.opt.lr_end = parse_num(key, value)?,
            "momentum" => self.opt.momentum = parse_num(key, value)?,
            "weight_decay" => self.opt.weight_decay = parse_num(key, value)?,
            "pad_crop" => self.pad_crop = parse_bool(key, value)?,
            "hflip" => self.hflip = parse_bool(key, value)?,
            "cutout" => self.cutout = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Load a flat key=value file ('#' starts a comment).
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Fold command-line flags over the file-loaded settings.
    pub fn apply_flags(&mut self, args: &CommonArgs) -> Result<()> {
        if let Some(v) = &args.variant {
            self.variant = ModelVariant::parse(v)?;
        }
        if let Some(f) = &args.family {
            self.family = ArchFamily::parse(f)?;
        }
        if let Some(d) = args.depth {
            self.depth = d;
        }
        if let Some(w) = args.width {
            self.width = w;
        }
        if let Some(b) = args.bits {
            self.bits = validate_bits(b)?;
        }
        if let Some(t) = args.temperature {
            self.temperature = Some(t);
        }
        if let Some(e) = args.epochs {
            self.opt.epochs = e;
        }
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(d) = &args.dataset {
            self.dataset = d.clone();
        }
        Ok(())
    }

    pub fn from_args(args: &CommonArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            cfg.load_file(path)?;
        }
        cfg.apply_flags(args)?;
        Ok(cfg)
    }

    /// The temperature actually used: explicit value, else 50 for the
    /// batch-norm-free variants and 1 otherwise.
    pub fn resolved_temperature(&self) -> f64 {
        self.temperature
            .unwrap_or(if self.variant.uses_temperature() { 50.0 } else { 1.0 })
    }

    pub fn augment(&self) -> AugmentCfg {
        AugmentCfg {
            pad_crop: self.pad_crop,
            hflip: self.hflip,
            cutout: (self.cutout > 0).then_some(self.cutout),
        }
    }

    pub fn build_graph(&self, num_classes: usize) -> Result<ModelGraph> {
        let spec = ArchitectureSpec {
            family: self.family,
            depth: self.depth,
            width: self.width,
            num_classes,
            quantized: self.bits == 1,
        };
        build(spec, self.variant, self.resolved_temperature())
    }

    /// Serialize every field as key=value lines (a valid config file).
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant.name());
        let _ = writeln!(s, "family={}", self.family.name());
        let _ = writeln!(s, "depth={}", self.depth);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "bits={}", self.bits);
        let _ = writeln!(s, "temperature={}", self.resolved_temperature());
        let _ = writeln!(s, "epochs={}", self.opt.epochs);
        let _ = writeln!(s, "batch_size={}", self.opt.batch_size);
        let _ = writeln!(s, "lr_start={}", self.opt.lr_start);
        let _ = writeln!(s, "lr_end={}", self.opt.lr_end);
        let _ = writeln!(s, "momentum={}", self.opt.momentum);
        let _ = writeln!(s, "weight_decay={}", self.opt.weight_decay);
        let _ = writeln!(s, "pad_crop={}", self.pad_crop);
        let _ = writeln!(s, "hflip={}", self.hflip);
        let _ = writeln!(s, "cutout={}", self.cutout);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "dataset={}", self.dataset);
        s
    }
}

/// Load the dataset named by a config string: a directory path or
/// `synthetic[:N,HW,CLASSES]` (defaults 256,16,2). Synthetic test split is
/// a quarter of the training size.
pub fn load_dataset(spec: &str, seed: u64) -> Result<Dataset> {
    if let Some(rest) = spec.strip_prefix("synthetic") {
        let (n, hw, classes) = if rest.is_empty() {
            (256, 16, 2)
        } else {
            let rest = rest.strip_prefix(':').ok_or_else(|| {
                Error::Config(format!("dataset '{spec}': expected synthetic:N,HW,CLASSES"))
            })?;
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "dataset '{spec}': expected synthetic:N,HW,CLASSES"
                )));
            }
            (
                parse_num("dataset N", parts[0])?,
                parse_num("dataset HW", parts[1])?,
                parse_num("dataset CLASSES", parts[2])?,
            )
        };
        Ok(synthetic_blobs(n, (n / 4).max(8), hw, classes, seed))
    } else {
        load_dir(Path::new(spec))
    }
}

/// CRC-32 over the dataset contents (geometry, images, labels; train then
/// test). Recorded in the manifest so a rerun can prove it saw the same
/// data.
pub fn dataset_checksum(ds: &Dataset) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in [ds.h as u32, ds.w as u32, ds.num_classes as u32] {
        h.update(&v.to_le_bytes());
    }
    for split in [&ds.train, &ds.test] {
        for (img, &label) in split.images.iter().zip(&split.labels) {
            h.update(img);
            h.update(&(label as u32).to_le_bytes());
        }
    }
    h.finalize()
}

fn format_metric(record: &crate::train::EpochRecord) -> String {
    format!(
        "epoch={} lr={} train_loss={} train_err={} test_err=-",
        record.epoch, record.lr, record.train_loss, record.train_err
    )
}

fn format_final(eval: &crate::train::EvalResult) -> String {
    match eval.top5_err {
        Some(t5) => {
            format!("final test_err={} test_top5={} samples={}", eval.top1_err, t5, eval.samples)
        }
        None => format!("final test_err={} samples={}", eval.top1_err, eval.samples),
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("threads: {e}")))?;
        }
    }
    Ok(())
}

fn cmd_train(args: &CommonArgs) -> Result<()> {
    init_threads(args.threads)?;
    let cfg = RunConfig::from_args(args)?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    fs::create_dir_all(&out_dir)?;

    let ds = load_dataset(&cfg.dataset, cfg.seed)?;
    let graph = cfg.build_graph(ds.num_classes)?;
    println!(
        "training {} {}-{} width {} at {} bits on {} ({} train / {} test)",
        cfg.variant.name(),
        cfg.family.name(),
        cfg.depth,
        cfg.width,
        cfg.bits,
        ds.name,
        ds.train.len(),
        ds.test.len()
    );

    let mut trace: Vec<String> = Vec::with_capacity(cfg.opt.epochs + 1);
    let outcome = train(&graph, &ds, &cfg.opt, &cfg.augment(), cfg.seed, |rec| {
        let line = format_metric(rec);
        println!("{line}");
        trace.push(line);
    })?;
    if let Some(eval) = &outcome.final_test {
        let line = format_final(eval);
        println!("{line}");
        trace.push(line);
    }

    let model_path = out_dir.join("model.bnwm");
    export_model(&model_path, &graph, &outcome.params)?;
    let metrics_path = out_dir.join("metrics.txt");
    fs::write(&metrics_path, trace.join("\n") + "\n")?;

    let manifest_path = out_dir.join("manifest.txt");
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# run manifest (loadable as a config file)");
    let _ = writeln!(manifest, "# code_version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "# dataset_checksum={:#010x}", dataset_checksum(&ds));
    let _ = writeln!(manifest, "# model={}", model_path.display());
    let _ = writeln!(manifest, "# metrics={}", metrics_path.display());
    manifest.push_str(&cfg.to_key_values());
    fs::write(&manifest_path, manifest)?;

    println!("wrote {}", model_path.display());
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    let cfg = RunConfig::from_args(&args.common)?;
    let model = import_model(&args.model)?;
    let ds = load_dataset(&cfg.dataset, cfg.seed)?;
    if model.graph.spec.num_classes != ds.num_classes {
        return Err(Error::Model(format!(
            "model expects {} classes but dataset has {}",
            model.graph.spec.num_classes, ds.num_classes
        )));
    }
    let eval = evaluate(&model.graph, &model.params, &ds, &ds.test, cfg.opt.batch_size)?;
    match eval.top5_err {
        Some(t5) => println!("test_err={} test_top5={} samples={}", eval.top1_err, t5, eval.samples),
        None => println!("test_err={} samples={}", eval.top1_err, eval.samples),
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let entries = gradient_suite(args.seed);
    let mut failures = Vec::new();
    println!("{:<28} {:>14}  result", "op", "max rel err");
    for e in &entries {
        let ok = e.passed();
        println!("{:<28} {:>14.3e}  {}", e.name, e.max_rel_err, if ok { "pass" } else { "FAIL" });
        if !ok {
            failures.push(e.name);
        }
    }
    if failures.is_empty() {
        println!("all {} checks passed", entries.len());
        Ok(())
    } else {
        Err(Error::Verification(format!("gradient checks failed: {}", failures.join(", "))))
    }
}

fn cmd_cost(args: &CommonArgs) -> Result<()> {
    let cfg = RunConfig::from_args(args)?;
    // Dataset-free command: class count and input size follow the family.
    let num_classes = match cfg.family {
        ArchFamily::Cifar => 10,
        ArchFamily::ImageNet => 1000,
    };
    let hw = cfg.family.default_input_hw();
    let mut float_cfg = cfg.clone();
    float_cfg.bits = 32;
    let mut packed_cfg = cfg.clone();
    packed_cfg.bits = 1;
    let float = census(&float_cfg.build_graph(num_classes)?, hw);
    let packed = census(&packed_cfg.build_graph(num_classes)?, hw);

    println!(
        "{:<40} {:>13} {:>13} {:>13} {:>13} {:>11}",
        format!("layer (input {hw}x{hw})"),
        "float mults",
        "1-bit mults",
        "float adds",
        "1-bit adds",
        "cmps"
    );
    for (f, p) in float.rows.iter().zip(&packed.rows) {
        println!(
            "{:<40} {:>13} {:>13} {:>13} {:>13} {:>11}",
            f.label, f.cost.mults, p.cost.mults, f.cost.adds, p.cost.adds, f.cost.comparisons
        );
    }
    println!(
        "{:<40} {:>13} {:>13} {:>13} {:>13} {:>11}",
        "total",
        float.total.mults,
        packed.total.mults,
        float.total.adds,
        packed.total.adds,
        float.total.comparisons
    );
    println!(
        "conv weight storage: float {} bits, 1-bit {} bits (ratio {})",
        float.conv_weight_bits,
        packed.conv_weight_bits,
        float.conv_weight_bits / packed.conv_weight_bits.max(1)
    );
    println!("norm parameter storage: {} bits", float.norm_param_bits);
    Ok(())
}

fn cmd_export_text(args: &CommonArgs) -> Result<()> {
    let cfg = RunConfig::from_args(args)?;
    let num_classes = match cfg.family {
        ArchFamily::Cifar => 10,
        ArchFamily::ImageNet => 1000,
    };
    let graph = cfg.build_graph(num_classes)?;
    print!("{}", graph.to_text(cfg.family.default_input_hw()));
    let count = graph.count_parameters();
    println!("learned parameters: {}", count.total);
    Ok(())
}

/// One comparison cell.
#[derive(Clone, Debug)]
pub struct CompareCell {
    pub variant: ModelVariant,
    pub width: f64,
    pub bits: u32,
}

/// Parse a matrix file: one `variant width bits` row per line.
pub fn parse_matrix(text: &str) -> Result<Vec<CompareCell>> {
    let mut cells = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "matrix line {}: expected 'variant width bits'",
                lineno + 1
            )));
        }
        cells.push(CompareCell {
            variant: ModelVariant::parse(parts[0])?,
            width: parse_num("matrix width", parts[1])?,
            bits: validate_bits(parse_num("matrix bits", parts[2])?)?,
        });
    }
    if cells.is_empty() {
        return Err(Error::Config("matrix file has no cells".into()));
    }
    Ok(cells)
}

/// Deterministic per-(cell, repeat) seed derivation.
pub fn derived_seed(base: u64, cell: usize, repeats: usize, repeat: usize) -> u64 {
    base.wrapping_add(((cell * repeats + repeat) as u64 + 1).wrapping_mul(1_000_003))
}

struct CellSummary {
    cell: CompareCell,
    errs: Vec<f64>,
    divergent: usize,
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    let cfg = RunConfig::from_args(&args.common)?;
    let cells = match &args.matrix {
        Some(path) => parse_matrix(&fs::read_to_string(path)?)?,
        None => crate::models::ALL_VARIANTS
            .iter()
            .map(|&variant| CompareCell { variant, width: cfg.width, bits: cfg.bits })
            .collect(),
    };
    let repeats = args.repeats.max(1);
    let ds = load_dataset(&cfg.dataset, cfg.seed)?;
    println!(
        "comparing {} cells x {} repeats on {} ({} epochs each)",
        cells.len(),
        repeats,
        ds.name,
        cfg.opt.epochs
    );

    let mut summaries = Vec::with_capacity(cells.len());
    for (ci, cell) in cells.iter().enumerate() {
        let mut cell_cfg = cfg.clone();
        cell_cfg.variant = cell.variant;
        cell_cfg.width = cell.width;
        cell_cfg.bits = cell.bits;
        let graph = cell_cfg.build_graph(ds.num_classes)?;
        let mut errs = Vec::new();
        let mut divergent = 0;
        for rep in 0..repeats {
            let seed = derived_seed(cfg.seed, ci, repeats, rep);
            match train(&graph, &ds, &cell_cfg.opt, &cell_cfg.augment(), seed, |_| {}) {
                Ok(out) => {
                    let err = out
                        .final_test
                        .as_ref()
                        .map(|e| e.top1_err)
                        .unwrap_or(f64::NAN);
                    println!(
                        "cell {} {} w{} b{} repeat {}: test_err={}",
                        ci,
                        cell.variant.name(),
                        cell.width,
                        cell.bits,
                        rep,
                        err
                    );
                    errs.push(err);
                }
                Err(Error::Divergence { epoch, step }) => {
                    println!(
                        "cell {} {} w{} b{} repeat {}: diverged (epoch {epoch}, step {step})",
                        ci,
                        cell.variant.name(),
                        cell.width,
                        cell.bits,
                        rep
                    );
                    divergent += 1;
                }
                Err(other) => return Err(other),
            }
        }
        summaries.push(CellSummary { cell: cell.clone(), errs, divergent });
    }

    let best = summaries
        .iter()
        .filter(|s| !s.errs.is_empty())
        .map(|s| s.errs.iter().sum::<f64>() / s.errs.len() as f64)
        .fold(f64::INFINITY, f64::min);

    println!(
        "{:<16} {:>6} {:>5} {:>9} {:>9} {:>9} {:>9} {:>10}",
        "variant", "width", "bits", "mean err", "min err", "max err", "gap", "divergent"
    );
    for s in &summaries {
        if s.errs.is_empty() {
            println!(
                "{:<16} {:>6} {:>5} {:>9} {:>9} {:>9} {:>9} {:>10}",
                s.cell.variant.name(),
                s.cell.width,
                s.cell.bits,
                "-",
                "-",
                "-",
                "-",
                s.divergent
            );
            continue;
        }
        let mean = s.errs.iter().sum::<f64>() / s.errs.len() as f64;
        let min = s.errs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = s.errs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{:<16} {:>6} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>10}",
            s.cell.variant.name(),
            s.cell.width,
            s.cell.bits,
            mean,
            min,
            max,
            mean - best,
            s.divergent
        );
    }
    Ok(())
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Cost(args) => cmd_cost(args),
        Command::Compare(args) => cmd_compare(args),
        Command::ExportText(args) => cmd_export_text(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses_and_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(
            &path,
            "# comment\nvariant = baseline2\nwidth=2.5\nbits=1\nepochs=7 # inline\nseed=42\n",
        )
        .unwrap();
        let args = CommonArgs {
            config: Some(path),
            width: Some(3.0),
            ..CommonArgs::default()
        };
        let cfg = RunConfig::from_args(&args).unwrap();
        assert_eq!(cfg.variant, ModelVariant::Baseline2);
        assert_eq!(cfg.width, 3.0); // flag wins over file
        assert_eq!(cfg.bits, 1);
        assert_eq!(cfg.opt.epochs, 7);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_and_variants_are_usage_errors() {
        let mut cfg = RunConfig::default();
        match cfg.set("learning_rate", "0.1") {
            Err(Error::Config(msg)) => assert!(msg.contains("learning_rate")),
            other => panic!("{other:?}"),
        }
        match cfg.set("variant", "vgg16") {
            Err(Error::Config(msg)) => {
                for name in ["baseline1", "baseline2", "finalbnonly", "sreluonly", "eluonly",
                    "meanonlyfinal"]
                {
                    assert!(msg.contains(name), "message must list {name}: {msg}");
                }
            }
            other => panic!("{other:?}"),
        }
        assert!(cfg.set("bits", "8").is_err());
        assert!(cfg.set("bits", "1").is_ok());
        assert!(cfg.set("quantized", "false").is_ok());
        assert_eq!(cfg.bits, 32);
    }

    #[test]
    fn temperature_defaults_by_variant() {
        let mut cfg = RunConfig::default();
        cfg.variant = ModelVariant::SreluOnly;
        assert_eq!(cfg.resolved_temperature(), 50.0);
        cfg.variant = ModelVariant::Baseline1;
        assert_eq!(cfg.resolved_temperature(), 1.0);
        cfg.temperature = Some(30.0);
        assert_eq!(cfg.resolved_temperature(), 30.0);
    }

    #[test]
    fn manifest_round_trips_through_the_config_parser() {
        let mut cfg = RunConfig::default();
        cfg.set("variant", "meanonlyfinal").unwrap();
        cfg.set("bits", "1").unwrap();
        cfg.set("lr_end", "0.00001").unwrap();
        cfg.set("dataset", "synthetic:64,16,2").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        fs::write(&path, format!("# provenance comment\n{}", cfg.to_key_values())).unwrap();

        let mut back = RunConfig::default();
        back.load_file(&path).unwrap();
        // The manifest pins the resolved temperature explicitly.
        assert_eq!(back.temperature, Some(50.0));
        back.temperature = cfg.temperature.or(back.temperature);
        let reresolved = RunConfig { temperature: Some(cfg.resolved_temperature()), ..cfg };
        assert_eq!(back, reresolved);
    }

    #[test]
    fn dataset_specs_parse() {
        let ds = load_dataset("synthetic", 1).unwrap();
        assert_eq!((ds.train.len(), ds.h, ds.num_classes), (256, 16, 2));
        let ds = load_dataset("synthetic:40,8,4", 1).unwrap();
        assert_eq!((ds.train.len(), ds.test.len(), ds.h, ds.num_classes), (40, 10, 8, 4));
        assert!(load_dataset("synthetic:40,8", 1).is_err());
        assert!(load_dataset("/nonexistent/dir", 1).is_err());
    }

    #[test]
    fn matrix_rows_parse_and_reject_garbage() {
        let cells = parse_matrix("# header\nsreluonly 0.5 1\nbaseline1 1 32\n").unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].variant, ModelVariant::SreluOnly);
        assert_eq!(cells[0].bits, 1);
        assert!(parse_matrix("sreluonly 0.5\n").is_err());
        assert!(parse_matrix("sreluonly 0.5 7\n").is_err());
        assert!(parse_matrix("\n").is_err());
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for cell in 0..12 {
            for rep in 0..5 {
                assert!(seen.insert(derived_seed(9, cell, 5, rep)));
            }
        }
    }

    #[test]
    fn checksum_tracks_content() {
        let a = synthetic_blobs(16, 8, 8, 2, 1);
        let b = synthetic_blobs(16, 8, 8, 2, 1);
        assert_eq!(dataset_checksum(&a), dataset_checksum(&b));
        let c = synthetic_blobs(16, 8, 8, 2, 2);
        assert_ne!(dataset_checksum(&a), dataset_checksum(&c));
    }
}
