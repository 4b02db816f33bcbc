//! Command implementations behind the `gacunet` binary. Every command reads a
//! [`RunConfig`] and writes human-readable output to the supplied writer.

mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub use config::{RunConfig, TrainData, Validation, DEFAULTS};

use crate::dataio::netpbm::save_mask;
use crate::dataio::synthetic::{flood_set, write_pairs};
use crate::dataio::{
    augment_expand, discover_pairs, resize_pair, DatasetManifest, ImagePair, Raster, Split,
};
use crate::error::{Error, Result};
use crate::gradsuite::{self, GradCase};
use crate::metrics::{evaluate, MetricReport, Predictor};
use crate::model::{load_model, read_container, save_model, ContainerKind, Model, ModelSpec};
use crate::real::{FloatWidth, Real};
use crate::reprogram::{pretrain_base, reprogram_train, wrapper_loss, ReprogramWrapper};
use crate::train::{train, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Prepare,
    Train,
    Eval,
    Predict,
    Reprogram,
    Gradcheck,
    DatasetStats,
    Synth,
    PretrainBase,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Prepare,
        Command::Train,
        Command::Eval,
        Command::Predict,
        Command::Reprogram,
        Command::Gradcheck,
        Command::DatasetStats,
        Command::Synth,
        Command::PretrainBase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Predict => "predict",
            Command::Reprogram => "reprogram",
            Command::Gradcheck => "gradcheck",
            Command::DatasetStats => "dataset-stats",
            Command::Synth => "synth",
            Command::PretrainBase => "pretrain-base",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

/// Runs `cmd` with arguments in `--key value` form.
pub fn run_args(cmd: Command, args: &[String], out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::from_args(args)?;
    run(cmd, &cfg, out)
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Prepare => cmd_prepare(cfg, out).map(|_| ()),
        Command::Train => match cfg.float_width()? {
            FloatWidth::F32 => cmd_train::<f32>(cfg, out).map(|_| ()),
            FloatWidth::F64 => cmd_train::<f64>(cfg, out).map(|_| ()),
        },
        Command::Eval => cmd_eval(cfg, out).map(|_| ()),
        Command::Predict => cmd_predict(cfg, out).map(|_| ()),
        Command::Reprogram => match cfg.float_width()? {
            FloatWidth::F32 => cmd_reprogram::<f32>(cfg, out).map(|_| ()),
            FloatWidth::F64 => cmd_reprogram::<f64>(cfg, out).map(|_| ()),
        },
        Command::Gradcheck => cmd_gradcheck(out),
        Command::DatasetStats => cmd_dataset_stats(cfg, out),
        Command::Synth => cmd_synth(cfg, out),
        Command::PretrainBase => match cfg.float_width()? {
            FloatWidth::F32 => cmd_pretrain_base::<f32>(cfg, out),
            FloatWidth::F64 => cmd_pretrain_base::<f64>(cfg, out),
        },
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<output>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Append-only text log flushed after every line.
struct LogFile {
    path: PathBuf,
    file: File,
}

impl LogFile {
    fn create(path: PathBuf) -> Result<Self> {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(LogFile { path, file })
    }

    fn line(&mut self, s: impl AsRef<str>) -> Result<()> {
        writeln!(self.file, "{}", s.as_ref())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    fn config(&mut self, cfg: &RunConfig) -> Result<()> {
        for line in cfg.to_text().lines() {
            self.line(format!("# {line}"))?;
        }
        Ok(())
    }
}

fn load_split(manifest: &DatasetManifest, split: Split, size: usize) -> Result<Vec<ImagePair>> {
    manifest
        .of_split(split)
        .map(|e| resize_pair(&ImagePair::load(&e.image, &e.mask)?, size, size))
        .collect()
}

fn load_dir(dir: &Path) -> Result<Vec<ImagePair>> {
    discover_pairs(dir)?
        .iter()
        .map(|(i, m)| ImagePair::load(i, m))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareSummary {
    pub train: usize,
    pub test: usize,
    pub augmented: usize,
    pub positive_fraction: f64,
}

fn positive_fraction(pairs: &[ImagePair]) -> f64 {
    let pixels: usize = pairs.iter().map(|p| p.height() * p.width()).sum();
    let positive: f64 = pairs
        .iter()
        .map(|p| p.mask.data().iter().sum::<f64>())
        .sum();
    if pixels == 0 {
        0.0
    } else {
        positive / pixels as f64
    }
}

/// Splits the corpus, writes the manifest, and writes the 15-fold augmented train
/// corpus: each train pair resized to twice the input size, then cropped and flipped.
pub fn cmd_prepare(cfg: &RunConfig, out: &mut dyn Write) -> Result<PrepareSummary> {
    let data = cfg.data_dir();
    let out_dir = cfg.out_dir();
    let size = cfg.usize("input_size")?;
    if size == 0 {
        return Err(Error::Config("input_size must be positive".into()));
    }
    let pairs = discover_pairs(&data)?;
    create_dir(&out_dir)?;
    let inside = |a: &Path, b: &Path| -> Result<bool> {
        let a = a.canonicalize().map_err(|e| Error::io(a, e))?;
        let b = b.canonicalize().map_err(|e| Error::io(b, e))?;
        Ok(a.starts_with(b))
    };
    if inside(&out_dir, &data)? {
        return Err(Error::Config(format!(
            "out_dir {} lies inside data_dir {}",
            out_dir.display(),
            data.display()
        )));
    }
    let manifest = DatasetManifest::build(&pairs, cfg.seed()?)?;
    let manifest_path = cfg.manifest_path();
    if let Some(dir) = manifest_path.parent() {
        create_dir(dir)?;
    }
    manifest.write(&manifest_path)?;

    let aug_dir = cfg.augmented_dir();
    if aug_dir.exists() {
        fs::remove_dir_all(&aug_dir).map_err(|e| Error::io(&aug_dir, e))?;
    }
    create_dir(&aug_dir)?;
    let mut augmented = 0;
    let mut loaded = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let pair = ImagePair::load(&entry.image, &entry.mask)?;
        if entry.split == Split::Train {
            let big = resize_pair(&pair, 2 * size, 2 * size)?;
            for aug in augment_expand(&big, size)? {
                let name = aug.name();
                aug.pair.save(
                    &aug_dir.join(format!("{name}.ppm")),
                    &aug_dir.join(format!("{name}.pgm")),
                )?;
                augmented += 1;
            }
        }
        loaded.push(pair);
    }
    let summary = PrepareSummary {
        train: manifest.count(Split::Train),
        test: manifest.count(Split::Test),
        augmented,
        positive_fraction: positive_fraction(&loaded),
    };
    say(
        out,
        format!(
            "{} train / {} test, {} augmented train pairs",
            summary.train, summary.test, summary.augmented
        ),
    )?;
    say(
        out,
        format!("positive fraction {:.4}", summary.positive_fraction),
    )?;
    say(out, format!("manifest {}", manifest_path.display()))?;
    Ok(summary)
}

pub fn cmd_dataset_stats(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let pairs = load_dir(&cfg.data_dir())?;
    let dims = |f: fn(&ImagePair) -> usize| {
        let v: Vec<usize> = pairs.iter().map(f).collect();
        (
            v.iter().copied().min().unwrap_or(0),
            v.iter().copied().max().unwrap_or(0),
        )
    };
    let (hmin, hmax) = dims(ImagePair::height);
    let (wmin, wmax) = dims(ImagePair::width);
    say(out, format!("pairs\t{}", pairs.len()))?;
    say(out, format!("height\t{hmin}..{hmax}"))?;
    say(out, format!("width\t{wmin}..{wmax}"))?;
    say(
        out,
        format!("positive_fraction\t{:.4}", positive_fraction(&pairs)),
    )?;
    say(
        out,
        format!(
            "train/test\t{}/{}",
            crate::dataio::train_count(pairs.len()),
            pairs.len() - crate::dataio::train_count(pairs.len())
        ),
    )
}

/// Writes a synthetic flood corpus into `data_dir`.
pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let pairs = flood_set(cfg.usize("count")?, cfg.usize("size")?, cfg.synth_seed()?);
    let written = write_pairs(&cfg.data_dir(), &pairs)?;
    say(
        out,
        format!(
            "wrote {} pairs to {}",
            written.len(),
            cfg.data_dir().display()
        ),
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub best_epoch: usize,
    pub losses: Vec<f64>,
}

/// Trains a fresh model on the prepared corpus and saves the best-validation model.
pub fn cmd_train<T: Real>(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary> {
    let started = Instant::now();
    let spec = cfg.model_spec()?;
    let tcfg = cfg.train_config()?;
    let size = spec.input_size;
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let pairs = match cfg.train_data()? {
        TrainData::Augmented => load_dir(&cfg.augmented_dir())?,
        TrainData::Resized => load_split(&manifest, Split::Train, size)?,
    };
    if let Some(p) = pairs
        .iter()
        .find(|p| (p.height(), p.width()) != (size, size))
    {
        return Err(Error::Dataset(format!(
            "training pair {} is {}x{} but input_size is {size}; rerun prepare with the same input_size",
            p.source_id,
            p.height(),
            p.width()
        )));
    }
    let samples: Vec<Sample<T>> = pairs.iter().map(Sample::from_pair).collect();
    let validation = match cfg.validation()? {
        Validation::Test => load_split(&manifest, Split::Test, size)?,
        Validation::Train => load_split(&manifest, Split::Train, size)?,
        Validation::None => Vec::new(),
    };

    let log_path = cfg.out_dir().join("train.log");
    let mut log = LogFile::create(log_path.clone())?;
    log.config(cfg)?;
    log.line(format!(
        "# samples={} validation={}",
        samples.len(),
        validation.len()
    ))?;
    log.line("# epoch\tloss\tval_iou\tval_dice")?;

    let model = Model::<T>::build(spec)?;
    let mut failure = None;
    let outcome = train(model, &samples, &validation, &tcfg, |r| {
        if failure.is_none() {
            failure = log
                .line(r.to_string())
                .and_then(|_| say(out, r.to_string()))
                .err();
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            log.line(format!("# aborted: {e}"))?;
            return Err(e);
        }
    };
    let model_path = cfg.model_path();
    if let Some(dir) = model_path.parent() {
        create_dir(dir)?;
    }
    save_model(&outcome.best, &model_path)?;
    log.line(format!("# best_epoch={}", outcome.best_epoch))?;
    log.line(format!(
        "# wall_time_s={:.3}",
        started.elapsed().as_secs_f64()
    ))?;
    log.line(format!("# model={}", model_path.display()))?;
    say(
        out,
        format!(
            "best epoch {}, model {}",
            outcome.best_epoch,
            model_path.display()
        ),
    )?;
    Ok(TrainSummary {
        model_path,
        log_path,
        best_epoch: outcome.best_epoch,
        losses: outcome.records.iter().map(|r| r.loss).collect(),
    })
}

/// A model file of either float width.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container(path)?;
        if c.kind != ContainerKind::Model {
            return Err(Error::ModelFile {
                path: path.display().to_string(),
                msg: "expected a model, found a reprogramming wrapper".into(),
            });
        }
        Ok(match c.width {
            FloatWidth::F32 => LoadedModel::F32(load_model(path)?),
            FloatWidth::F64 => LoadedModel::F64(load_model(path)?),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        match self {
            LoadedModel::F32(m) => m.spec(),
            LoadedModel::F64(m) => m.spec(),
        }
    }
}

impl Predictor for LoadedModel {
    fn predict_mask(&self, image: &Raster) -> Result<Raster> {
        match self {
            LoadedModel::F32(m) => m.predict_mask(image),
            LoadedModel::F64(m) => m.predict_mask(image),
        }
    }
}

/// Scores the model on the manifest's test split, resized to the model input size.
pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<MetricReport> {
    let model = LoadedModel::load(&cfg.model_path())?;
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let pairs = load_split(&manifest, Split::Test, model.spec().input_size)?;
    let report = evaluate(&model, &pairs, cfg.pred_threshold()?)?;
    let text = report.to_text();
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<output>", e))?;
    if !cfg.get("report").is_empty() {
        let path = PathBuf::from(cfg.get("report"));
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

/// Writes a {0,255} mask for one image. The image must already match the model input size.
pub fn cmd_predict(cfg: &RunConfig, out: &mut dyn Write) -> Result<Raster> {
    let image_path = PathBuf::from(cfg.get("image"));
    let output = PathBuf::from(cfg.get("output"));
    if image_path.as_os_str().is_empty() || output.as_os_str().is_empty() {
        return Err(Error::Config("predict needs --image and --output".into()));
    }
    let model = LoadedModel::load(&cfg.model_path())?;
    let image = crate::dataio::load_image(&image_path)?;
    let n = model.spec().input_size;
    if (image.height(), image.width()) != (n, n) {
        return Err(Error::Dataset(format!(
            "{} is {}x{}, model expects {n}x{n}",
            image_path.display(),
            image.height(),
            image.width()
        )));
    }
    let threshold = cfg.pred_threshold()?;
    let mask = model
        .predict_mask(&image)?
        .map(|p| if p > threshold { 1.0 } else { 0.0 });
    save_mask(&output, &mask)?;
    say(out, format!("wrote {}", output.display()))?;
    Ok(mask)
}

#[derive(Debug, Clone)]
pub struct ReprogramSummary {
    pub base_checksum: String,
    pub wrapper_path: PathBuf,
    /// Per-step minibatch losses.
    pub trajectory: Vec<f64>,
    /// Mean loss over all samples before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains a reprogramming wrapper around a frozen base model on the flood masks in
/// `data_dir`, resized to the base input size.
pub fn cmd_reprogram<T: Real>(cfg: &RunConfig, out: &mut dyn Write) -> Result<ReprogramSummary> {
    let base_path = match cfg.get("base_model") {
        "" => return Err(Error::Config("reprogram needs --base_model".into())),
        p => PathBuf::from(p),
    };
    let base: Model<T> = load_model(&base_path)?;
    let size = base.spec().input_size;
    let pairs: Vec<ImagePair> = load_dir(&cfg.data_dir())?
        .iter()
        .map(|p| resize_pair(p, size, size))
        .collect::<Result<_>>()?;
    let samples: Vec<Sample<T>> = pairs.iter().map(Sample::from_pair).collect();
    let rcfg = cfg.reprogram_config()?;
    let mut wrapper = ReprogramWrapper::new(
        base,
        cfg.transform_mode()?,
        cfg.usize("reprogram_channels")?,
        rcfg.seed,
    )?;

    let log_path = cfg.out_dir().join("reprogram.log");
    let mut log = LogFile::create(log_path)?;
    log.config(cfg)?;
    let before = format!("base_checksum\t{}", wrapper.base().checksum());
    log.line(&before)?;
    say(out, &before)?;
    let initial_loss = wrapper_loss(&wrapper, &samples, rcfg.loss)?;
    let trajectory = reprogram_train(&mut wrapper, &samples, &rcfg)?;
    let after = format!("base_checksum\t{}", wrapper.base().checksum());
    log.line("# step\tloss")?;
    for (i, l) in trajectory.iter().enumerate() {
        log.line(format!("{}\t{l:.6}", i + 1))?;
    }
    log.line(&after)?;
    say(out, &after)?;
    log.line(format!("# mean_loss_before={initial_loss:.6}"))?;
    let final_loss = wrapper_loss(&wrapper, &samples, rcfg.loss)?;
    log.line(format!("# mean_loss_after={final_loss:.6}"))?;
    say(
        out,
        format!(
            "steps {}, mean loss {initial_loss:.6} -> {final_loss:.6}",
            trajectory.len()
        ),
    )?;

    let wrapper_path = match cfg.get("output") {
        "" => cfg.out_dir().join("wrapper.gacm"),
        p => PathBuf::from(p),
    };
    if let Some(dir) = wrapper_path.parent() {
        create_dir(dir)?;
    }
    fs::write(&wrapper_path, wrapper.to_bytes()).map_err(|e| Error::io(&wrapper_path, e))?;
    say(out, format!("wrapper {}", wrapper_path.display()))?;
    Ok(ReprogramSummary {
        base_checksum: wrapper.base_checksum().to_string(),
        wrapper_path,
        trajectory,
        initial_loss,
        final_loss,
    })
}

/// Pretrains a plain U-Net base on the brightness-band task over the images in `data_dir`.
pub fn cmd_pretrain_base<T: Real>(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let size = cfg.usize("input_size")?;
    let pairs: Vec<ImagePair> = load_dir(&cfg.data_dir())?
        .iter()
        .map(|p| resize_pair(p, size, size))
        .collect::<Result<_>>()?;
    let base: Model<T> = pretrain_base(
        &pairs,
        cfg.usize("base_channels")?,
        cfg.widths("base_widths")?,
        cfg.usize("base_epochs")?,
        cfg.seed()?,
    )?;
    let path = match cfg.get("output") {
        "" => cfg.out_dir().join("base.gacm"),
        p => PathBuf::from(p),
    };
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    save_model(&base, &path)?;
    say(
        out,
        format!("base {} checksum {}", path.display(), base.checksum()),
    )
}

pub fn cmd_gradcheck(out: &mut dyn Write) -> Result<()> {
    gradcheck_with(&gradsuite::default_cases(), out)
}

/// Runs `cases`, prints the table, and fails if any case fails.
pub fn gradcheck_with(cases: &[GradCase], out: &mut dyn Write) -> Result<()> {
    let results = gradsuite::run_cases(cases);
    out.write_all(gradsuite::format_table(&results).as_bytes())
        .map_err(|e| Error::io("<output>", e))?;
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheckFailed(failed.join(", ")))
    }
}
