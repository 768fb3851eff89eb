//! The experiment workflow behind the command-line tool: synth, prepare,
//! train, evaluate and inspect.
//!
//! Output layout under the manifest's output directory:
//!
//! ```text
//! summary.toml                       prepare: per-appliance pair counts
//! shards/{appliance}_{train,test}.shard
//! models/{appliance}.ckpt            final (best-validation) parameters
//! models/{appliance}_epoch{NNNN}.ckpt
//! models/{appliance}_loss.csv
//! reports/report.csv
//! reports/report.txt
//! reports/{appliance}_predictions.csv
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::data::shards::Shard;
use crate::data::synth::synth_generate;
use crate::data::{
    align, generate_pairs, ingest_csv, resample_6s, write_csv, ActivationSpec, ChannelPair, DataError, PairStats,
    PowerSeries, SamplePair, Split,
};
use crate::eval::{self, prediction_csv, EvalError, EvalReport, EvalSpec, ModelPredictor, ModelPredictor64, Predictor, WindowResult};
use crate::manifest::{
    model_digest, ApplianceEntry, ExperimentManifest, ManifestError, ManifestFile, PowerKind, PresetValues, Role, Source,
};
use crate::model::{mix_seed, AnyModel, Architecture, Checkpoint, CheckpointError, ModelConfig, RECEPTIVE_FIELD_NOTE};
use crate::tensor::{Dtype, Scalar};
use crate::training::{self, write_loss_csv, TrainError};

const SYNTH_SALT: u64 = 0x5359_4e54;
const SAMPLE_SALT: u64 = 0x5341_4d50;
const MODEL_SALT: u64 = 0x4d4f_444c;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{0}")]
    Invalid(String),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: DataError,
    },
    #[error("{context}: {source}")]
    Train {
        context: String,
        #[source]
        source: TrainError,
    },
    #[error("{context}: {source}")]
    Eval {
        context: String,
        #[source]
        source: EvalError,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: String,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Missing(String),
}

impl PipelineError {
    /// 1 for bad input, 2 for runtime and data failures, 3 for a numeric
    /// abort during training.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Manifest(_) | PipelineError::Invalid(_) => 1,
            PipelineError::Train {
                source: TrainError::NonFinite { .. },
                ..
            } => 3,
            PipelineError::Train {
                source: TrainError::Config(_),
                ..
            } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn data_err(context: String) -> impl FnOnce(DataError) -> PipelineError {
    move |e| PipelineError::Data { context, source: e }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// FNV-1a, so per-house seeds do not depend on the order of the manifest.
fn stable_hash(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn shard_path(out: &Path, appliance: &str, split: Split) -> PathBuf {
    let tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    out.join("shards").join(format!("{appliance}_{tag}.shard"))
}

pub fn checkpoint_path(out: &Path, appliance: &str) -> PathBuf {
    out.join("models").join(format!("{appliance}.ckpt"))
}

pub fn epoch_checkpoint_path(out: &Path, appliance: &str, epoch: usize) -> PathBuf {
    out.join("models").join(format!("{appliance}_epoch{epoch:04}.ckpt"))
}

pub fn loss_csv_path(out: &Path, appliance: &str) -> PathBuf {
    out.join("models").join(format!("{appliance}_loss.csv"))
}

fn houses(m: &ExperimentManifest) -> Vec<(u32, Split)> {
    m.split
        .train_houses
        .iter()
        .map(|&h| (h, Split::Train))
        .chain(m.split.test_houses.iter().map(|&h| (h, Split::Test)))
        .collect()
}

/// Runs `job` over `items` on up to `workers` threads and returns results in
/// item order.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&job).collect();
    }
    let per = items.len().div_ceil(workers);
    let job = &job;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|group| s.spawn(move || group.iter().map(job).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("pipeline worker panicked"))
            .collect()
    })
}

// ---------------------------------------------------------------- synth

/// Generates the synthetic houses as CSV files and writes `manifest.toml`
/// next to them, listing the files as ordinary sources.
pub fn synth(m: &ExperimentManifest, out: &Path) -> Result<PathBuf> {
    if m.synthetic.is_none() {
        return Err(PipelineError::Invalid("manifest has no [synthetic] section".into()));
    }
    let mut sources = Vec::new();
    for (house, _) in houses(m) {
        let generated = synth_house(m, house)?;
        let dir = out.join("data").join(format!("house_{house}"));
        create_dir(&dir)?;
        let mut emit = |role: Role, name: Option<&str>, series: &PowerSeries| -> Result<()> {
            let file = format!("{}.csv", name.unwrap_or("aggregate"));
            write_csv(&dir.join(&file), series).map_err(data_err(format!("house {house}")))?;
            sources.push(Source {
                house,
                role,
                appliance: name.map(str::to_string),
                path: PathBuf::from("data").join(format!("house_{house}")).join(file),
                power: PowerKind::Active,
                columns: crate::data::ColumnSpec {
                    period: Some(generated.aggregate.period),
                    ..Default::default()
                },
            });
            Ok(())
        };
        emit(Role::Aggregate, None, &generated.aggregate)?;
        for a in &generated.appliances {
            emit(Role::Appliance, Some(&a.name), &a.series)?;
        }
    }
    let file = ManifestFile {
        seed: m.seed,
        output_dir: PathBuf::from("run"),
        model_config: None,
        model: Some(m.model.clone()),
        train_config: None,
        train: Some(m.train.clone()),
        sampling: m.sampling.clone(),
        split: m.split.clone(),
        appliances: m
            .appliances
            .iter()
            .map(|a| ApplianceEntry {
                name: a.name.clone(),
                preset: None,
                values: PresetValues {
                    on_power_threshold: Some(a.activation.on_power_threshold),
                    min_on_duration: Some(a.activation.min_on_duration),
                    min_off_duration: Some(a.activation.min_off_duration),
                    window_length: Some(a.window_length),
                    mae_normalizer: a.mae_normalizer,
                },
            })
            .collect(),
        sources,
        synthetic: None,
    };
    let path = out.join("manifest.toml");
    write_file(&path, file.to_toml())?;
    Ok(path)
}

fn synth_house(m: &ExperimentManifest, house: u32) -> Result<crate::data::synth::SynthHouse> {
    let spec = m.synthetic.as_ref().expect("checked by caller");
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(m.seed, SYNTH_SALT ^ stable_hash(&format!("house/{house}"))));
    synth_generate(&spec.scenario, &mut rng).map_err(data_err(format!("synthetic house {house}")))
}

// -------------------------------------------------------------- prepare

#[derive(Debug, Clone, Serialize)]
pub struct HouseStats {
    pub house: u32,
    pub split: Split,
    pub points: usize,
    pub stats: PairStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApplianceSummary {
    pub name: String,
    pub activation: ActivationSpec,
    pub window_length: usize,
    pub train: PairStats,
    pub test: PairStats,
    pub houses: Vec<HouseStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub seed: u64,
    pub config_digest: String,
    pub warnings: Vec<String>,
    pub appliances: Vec<ApplianceSummary>,
}

impl PrepareSummary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>6} {:>11} {:>9} {:>9} {:>10} {:>10} {:>7} {:>7}",
            "appliance", "thresh_w", "split", "activations", "positive", "negative", "disc_short", "disc_aggr", "skipped", "window"
        );
        for a in &self.appliances {
            for (tag, s) in [("train", &a.train), ("test", &a.test)] {
                let skipped = s.skipped_too_long + s.skipped_out_of_bounds + s.skipped_gap + s.skipped_zero_aggregate;
                let _ = writeln!(
                    out,
                    "{:<16} {:>8} {:>6} {:>11} {:>9} {:>9} {:>10} {:>10} {:>7} {:>7}",
                    a.name,
                    a.activation.on_power_threshold,
                    tag,
                    s.activations,
                    s.positives,
                    s.negatives,
                    s.discarded_short_activation,
                    s.discarded_aggregate_dominant,
                    skipped,
                    a.window_length
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Per-house channels on the 6 s grid: the aggregate and each metered
/// appliance named in the manifest.
struct HouseData {
    aggregate: PowerSeries,
    appliances: Vec<(String, PowerSeries)>,
}

fn load_house(m: &ExperimentManifest, house: u32) -> Result<Option<HouseData>> {
    if m.synthetic.is_some() {
        let g = synth_house(m, house)?;
        let appliances = m
            .appliances
            .iter()
            .filter_map(|a| g.appliance(&a.name).map(|s| (a.name.clone(), s.series.clone())))
            .collect();
        return Ok(Some(HouseData {
            aggregate: g.aggregate,
            appliances,
        }));
    }
    let load = |s: &Source| -> Result<PowerSeries> {
        let ctx = format!("house {house}, {}", s.path.display());
        let raw = ingest_csv(&s.path, &s.columns).map_err(data_err(ctx.clone()))?;
        resample_6s(&raw).map_err(data_err(ctx))
    };
    let metered: Vec<&Source> = m
        .appliances
        .iter()
        .filter(|a| !m.split.excluded(house, &a.name))
        .filter_map(|a| m.appliance_source(house, &a.name))
        .collect();
    if metered.is_empty() {
        return Ok(None);
    }
    let agg = m
        .aggregate_source(house)
        .ok_or_else(|| PipelineError::Invalid(format!("house {house} has no aggregate source")))?;
    let aggregate = load(agg)?;
    let appliances = metered
        .into_iter()
        .map(|s| Ok((s.appliance.clone().expect("validated"), load(s)?)))
        .collect::<Result<_>>()?;
    Ok(Some(HouseData { aggregate, appliances }))
}

type HouseOutput = (u32, Split, Vec<(String, usize, Vec<SamplePair>, PairStats)>);

fn prepare_house(m: &ExperimentManifest, house: u32, split: Split) -> Result<HouseOutput> {
    let mut out = Vec::new();
    let Some(data) = load_house(m, house)? else {
        return Ok((house, split, out));
    };
    let gap = m.sampling.max_gap_seconds;
    let mut aggregate = data.aggregate;
    aggregate.fill_short_gaps(gap);
    for (name, mut series) in data.appliances {
        if m.split.excluded(house, &name) {
            continue;
        }
        let appliance = m.appliance(&name).expect("loaded from manifest");
        let ctx = format!("house {house}, appliance {name}");
        series.fill_short_gaps(gap);
        let mut aligned = align(&[&aggregate, &series]).map_err(data_err(ctx.clone()))?;
        let app = aligned.pop().expect("two series");
        let agg = aligned.pop().expect("two series");
        let points = agg.len();
        let channels = ChannelPair::new(agg, app, gap).map_err(data_err(ctx))?;
        let salt = SAMPLE_SALT ^ stable_hash(&format!("{house}/{name}"));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(m.seed, salt));
        let (pairs, stats) = generate_pairs(&channels, &appliance.activation, &m.sampling_config(appliance), split, &mut rng);
        out.push((name, points, pairs, stats));
    }
    Ok((house, split, out))
}

/// Ingests every house, samples pairs per appliance and writes one train and
/// one test shard per appliance plus `summary.toml`.
pub fn prepare(m: &ExperimentManifest, workers: usize) -> Result<PrepareSummary> {
    let jobs = houses(m);
    let per_house = par_map(&jobs, workers, |&(h, split)| prepare_house(m, h, split))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let out = &m.output_dir;
    create_dir(&out.join("shards"))?;
    let mut warnings = Vec::new();
    let mut appliances = Vec::new();
    for a in &m.appliances {
        let mut summary = ApplianceSummary {
            name: a.name.clone(),
            activation: a.activation,
            window_length: a.window_length,
            train: PairStats::default(),
            test: PairStats::default(),
            houses: Vec::new(),
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (house, split, results) in &per_house {
            let Some((_, points, pairs, stats)) = results.iter().find(|r| r.0 == a.name) else {
                if !m.split.excluded(*house, &a.name) {
                    warnings.push(format!("house {house} has no {} meter", a.name));
                }
                continue;
            };
            summary.houses.push(HouseStats {
                house: *house,
                split: *split,
                points: *points,
                stats: *stats,
            });
            match split {
                Split::Train => {
                    summary.train.merge(stats);
                    train.extend(pairs.iter().cloned());
                }
                Split::Test => {
                    summary.test.merge(stats);
                    test.extend(pairs.iter().cloned());
                }
            }
        }
        for (split, pairs) in [(Split::Train, train), (Split::Test, test)] {
            if pairs.is_empty() {
                warnings.push(format!("{} {:?} shard is empty", a.name, split).to_lowercase());
            }
            let shard = Shard {
                appliance: a.name.clone(),
                window_length: a.window_length as u32,
                seed: m.seed,
                pairs,
            };
            let path = shard_path(out, &a.name, split);
            shard.save(&path).map_err(data_err(path.display().to_string()))?;
        }
        appliances.push(summary);
    }
    let summary = PrepareSummary {
        seed: m.seed,
        config_digest: m.config_digest(),
        warnings,
        appliances,
    };
    write_file(&out.join("summary.toml"), summary.to_toml())?;
    Ok(summary)
}

fn load_shard(m: &ExperimentManifest, appliance: &str, split: Split) -> Result<Shard> {
    let path = shard_path(&m.output_dir, appliance, split);
    if !path.is_file() {
        return Err(PipelineError::Missing(format!(
            "no shard at {}; run `nilm prepare` with this manifest first",
            path.display()
        )));
    }
    let shard = Shard::load(&path).map_err(data_err(path.display().to_string()))?;
    if shard.appliance != appliance {
        return Err(PipelineError::Invalid(format!(
            "{} holds pairs for {:?}, expected {appliance:?}",
            path.display(),
            shard.appliance
        )));
    }
    Ok(shard)
}

fn selected<'a>(m: &'a ExperimentManifest, only: Option<&str>) -> Result<Vec<&'a crate::manifest::Appliance>> {
    match only {
        Some(name) => m
            .appliance(name)
            .map(|a| vec![a])
            .ok_or_else(|| PipelineError::Invalid(format!("appliance {name:?} is not in the manifest"))),
        None => Ok(m.appliances.iter().collect()),
    }
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub appliance: String,
    pub pairs: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub stopped_early: bool,
    pub checkpoint: PathBuf,
    pub warnings: Vec<String>,
}

fn train_typed<S: Scalar>(m: &ExperimentManifest, name: &str, shard: &Shard, workers: usize) -> Result<TrainSummary> {
    let out = &m.output_dir;
    let mut cfg = m.train.clone();
    cfg.seed = m.seed;
    let model_seed = mix_seed(m.seed, MODEL_SALT ^ stable_hash(name));
    let ctx = || format!("training {name}");
    let model = AnyModel::<S>::new(&m.model, model_seed).map_err(|e| PipelineError::Train {
        context: ctx(),
        source: e.into(),
    })?;
    let ckpt_path = checkpoint_path(out, name);
    let save = |model: &AnyModel<S>, path: &Path| -> std::result::Result<(), TrainError> {
        Checkpoint::from_model(model, &m.model, m.seed)
            .save(path)
            .map_err(|e| TrainError::Callback(format!("{}: {e}", path.display())))
    };
    let train_pairs: Vec<SamplePair> = shard
        .pairs
        .iter()
        .filter(|p| p.provenance.split == Split::Train)
        .cloned()
        .collect();
    let mut warnings = Vec::new();
    if shard.seed != m.seed {
        warnings.push(format!("{name} shard was prepared with seed {}, manifest seed is {}", shard.seed, m.seed));
    }

    if cfg.epochs == 0 {
        save(&model, &ckpt_path).map_err(|e| PipelineError::Train {
            context: ctx(),
            source: e,
        })?;
        write_loss_csv(&loss_csv_path(out, name), &[], m.seed).map_err(io_err(&loss_csv_path(out, name)))?;
        return Ok(TrainSummary {
            appliance: name.to_string(),
            pairs: train_pairs.len(),
            epochs_run: 0,
            best_epoch: None,
            best_val_loss: None,
            final_train_loss: None,
            stopped_early: false,
            checkpoint: ckpt_path,
            warnings,
        });
    }

    let outcome = training::train(model, &train_pairs, &cfg, workers, |end| {
        if end.checkpoint_due {
            save(end.model, &epoch_checkpoint_path(out, name, end.epoch + 1))?;
        }
        Ok(())
    })
    .map_err(|e| PipelineError::Train {
        context: ctx(),
        source: e,
    })?;
    save(&outcome.model, &ckpt_path).map_err(|e| PipelineError::Train {
        context: ctx(),
        source: e,
    })?;
    let loss_path = loss_csv_path(out, name);
    write_loss_csv(&loss_path, &outcome.curve, m.seed).map_err(io_err(&loss_path))?;
    Ok(TrainSummary {
        appliance: name.to_string(),
        pairs: train_pairs.len(),
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        final_train_loss: outcome.curve.last().map(|r| r.train_loss),
        stopped_early: outcome.stopped_early,
        checkpoint: ckpt_path,
        warnings,
    })
}

/// Trains one model per appliance (or only `only`) on its train shard.
pub fn train(m: &ExperimentManifest, workers: usize, only: Option<&str>) -> Result<Vec<TrainSummary>> {
    let targets = selected(m, only)?;
    create_dir(&m.output_dir.join("models"))?;
    let mut out = Vec::new();
    for a in targets {
        let shard = load_shard(m, &a.name, Split::Train)?;
        let summary = match m.model.precision {
            Dtype::F32 => train_typed::<f32>(m, &a.name, &shard, workers)?,
            Dtype::F64 => train_typed::<f64>(m, &a.name, &shard, workers)?,
        };
        out.push(summary);
    }
    Ok(out)
}

// ------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutput {
    pub reports: Vec<EvalReport>,
    pub warnings: Vec<String>,
}

/// Scores `predictor` on the appliance's test shard.
pub fn evaluate_appliance(
    m: &ExperimentManifest,
    appliance: &str,
    predictor: &dyn Predictor,
    workers: usize,
) -> Result<(EvalReport, Vec<WindowResult>)> {
    let a = m
        .appliance(appliance)
        .ok_or_else(|| PipelineError::Invalid(format!("appliance {appliance:?} is not in the manifest")))?;
    let shard = load_shard(m, appliance, Split::Test)?;
    let pairs: Vec<&SamplePair> = shard.pairs.iter().filter(|p| p.provenance.split == Split::Test).collect();
    let spec = EvalSpec {
        appliance: appliance.to_string(),
        threshold: a.activation.on_power_threshold,
        mae_normalizer: a.mae_normalizer,
        config_digest: m.config_digest(),
        seed: m.seed,
        batch: m.train.batch_size,
        workers,
    };
    eval::evaluate(predictor, &pairs, &spec).map_err(|e| PipelineError::Eval {
        context: format!("evaluating {appliance}"),
        source: e,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(PipelineError::Missing(format!(
            "no checkpoint at {}; run `nilm train` first or pass --checkpoint",
            path.display()
        )));
    }
    Checkpoint::load(path).map_err(|e| PipelineError::Checkpoint {
        path: path.display().to_string(),
        source: e,
    })
}

fn evaluate_checkpoint(
    m: &ExperimentManifest,
    appliance: &str,
    ckpt: &Checkpoint,
    path: &Path,
    workers: usize,
) -> Result<(EvalReport, Vec<WindowResult>)> {
    let ckpt_err = |e| PipelineError::Checkpoint {
        path: path.display().to_string(),
        source: e,
    };
    match ckpt.dtype {
        Dtype::F32 => {
            let model = AnyModel::<f32>::from_checkpoint(ckpt).map_err(ckpt_err)?;
            let mut p = ModelPredictor::new(&model);
            p.batch_size = m.train.batch_size;
            evaluate_appliance(m, appliance, &p, workers)
        }
        Dtype::F64 => {
            let model = AnyModel::<f64>::from_checkpoint(ckpt).map_err(ckpt_err)?;
            let mut p = ModelPredictor::new(&model);
            p.batch_size = m.train.batch_size;
            evaluate_appliance(m, appliance, &ModelPredictor64(p), workers)
        }
    }
}

/// Evaluates each appliance's checkpoint, or `checkpoint` for a single
/// appliance, and writes the report files. A checkpoint whose model config or
/// seed differs from the manifest only produces a warning.
pub fn evaluate(m: &ExperimentManifest, workers: usize, checkpoint: Option<&Path>, only: Option<&str>) -> Result<EvaluateOutput> {
    let targets = selected(m, only)?;
    if checkpoint.is_some() && targets.len() > 1 {
        return Err(PipelineError::Invalid(
            "--checkpoint needs --appliance when the manifest lists several appliances".into(),
        ));
    }
    let dir = m.output_dir.join("reports");
    create_dir(&dir)?;
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    for a in targets {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(&m.output_dir, &a.name));
        let ckpt = load_checkpoint(&path)?;
        if model_digest(&ckpt.config) != model_digest(&m.model) {
            warnings.push(format!("{}: model config differs from the manifest's", path.display()));
        }
        if ckpt.seed != m.seed {
            warnings.push(format!("{}: trained with seed {}, manifest seed is {}", path.display(), ckpt.seed, m.seed));
        }
        let (report, windows) = evaluate_checkpoint(m, &a.name, &ckpt, &path, workers)?;
        write_file(&dir.join(format!("{}_predictions.csv", a.name)), prediction_csv(&windows, m.seed))?;
        reports.push(report);
    }
    write_file(&dir.join("report.csv"), EvalReport::to_csv(&reports))?;
    write_file(&dir.join("report.txt"), EvalReport::to_table(&reports))?;
    Ok(EvaluateOutput { reports, warnings })
}

// -------------------------------------------------------------- inspect

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub config: ModelConfig,
    pub dtype: Dtype,
    pub seed: u64,
    pub layers: Vec<LayerInfo>,
    /// Per-body receptive fields in points; empty for the baseline.
    pub receptive_fields: Vec<usize>,
    pub total: usize,
}

impl InspectReport {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        let layers: Vec<LayerInfo> = ckpt
            .tensors
            .iter()
            .map(|t| LayerInfo {
                name: t.name.clone(),
                shape: t.shape.clone(),
                count: t.values.len(),
            })
            .collect();
        let receptive_fields = match ckpt.config.architecture {
            Architecture::MultiScale => ckpt.config.receptive_fields().unwrap_or_default(),
            Architecture::BaselineCnn => Vec::new(),
        };
        Self {
            config: ckpt.config.clone(),
            dtype: ckpt.dtype,
            seed: ckpt.seed,
            total: layers.iter().map(|l| l.count).sum(),
            layers,
            receptive_fields,
        }
    }

    /// Summary of a freshly initialized model.
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        let ckpt = match config.precision {
            Dtype::F32 => AnyModel::<f32>::new(config, 0).map(|m| Checkpoint::from_model(&m, config, 0)),
            Dtype::F64 => AnyModel::<f64>::new(config, 0).map(|m| Checkpoint::from_model(&m, config, 0)),
        }
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        Ok(Self::from_checkpoint(&ckpt))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("architecture {:?}, {:?}, seed {}\n", self.config.architecture, self.dtype, self.seed);
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(0);
        for l in &self.layers {
            let _ = writeln!(out, "{:<width$}  {:<16} {:>9}", l.name, format!("{:?}", l.shape), l.count);
        }
        if !self.receptive_fields.is_empty() {
            let _ = writeln!(out, "receptive fields (points, 6 s each):");
            for (i, rf) in self.receptive_fields.iter().enumerate() {
                let _ = writeln!(out, "  body {}: {rf} points ({} s)", i + 1, rf * 6);
            }
            if self.receptive_fields.contains(&249) {
                let _ = writeln!(out, "{RECEPTIVE_FIELD_NOTE}");
            }
        }
        let _ = writeln!(out, "total parameters: {}", self.total);
        out
    }
}

pub fn inspect(path: &Path) -> Result<InspectReport> {
    Ok(InspectReport::from_checkpoint(&load_checkpoint(path)?))
}
