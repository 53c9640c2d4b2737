//! Subcommand implementations. Each is a pure function of its config,
//! seeds and inputs apart from wall-clock fields in logs.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use hydra_core::codec::Codec;
use hydra_core::data::{build_examples, decode_prediction, prepare_example};
use hydra_core::eval::{evaluate_run, predict, EvalRun};
use hydra_core::io::{self, Manifest};
use hydra_core::metrics::{bootstrap_std, METRIC_COLUMNS};
use hydra_core::model::{ModelConfig, RetrievalMode};
use hydra_core::sim::Crop;
use hydra_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::analysis::{empty_tokens, kept_memory_frames, selected_empty};
use crate::checkpoint::{Checkpoint, Header};
use crate::config::RunConfig;
use crate::dataset::{self, check_data_hash, load_dataset, Dataset};
use crate::image::{frame_rgb, side_by_side, write_png};
use crate::train::{self, LogLine};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const FRAME_SCALE: usize = 4;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("step_{step:06}.ckpt"))
}

// ---------------------------------------------------------------- datagen

/// Renders `cfg.dataset.clips` event-bearing clips from master `seed`.
pub fn datagen(cfg: &RunConfig, seed: u64, out: &Path, threads: usize) -> Result<Manifest> {
    cfg.validate()?;
    let clips = dataset::generate_clips(cfg, seed, cfg.dataset.clips, threads, |_| true)?;
    dataset::write_dataset(out, cfg, &clips)
}

// ------------------------------------------------------------------ train

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub allow_mismatch: bool,
    /// Echo log lines to stderr.
    pub progress: bool,
}

/// Reads a training log.
pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Trains on the dataset at `opts.data`, writing the log, periodic
/// checkpoints and `final.ckpt` under `opts.out`. With `opts.resume`
/// training continues from that checkpoint and reproduces the
/// uninterrupted run exactly.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<Checkpoint> {
    cfg.validate()?;
    let ds = load_dataset(&opts.data)?;
    check_data_hash(&cfg.data_hash(), &ds.manifest.config_hash, "training data", opts.allow_mismatch)?;
    let codec = Codec::default();
    let examples = build_examples(ds.clips.iter().map(|(id, c)| (id.as_str(), c)), &cfg.data, &codec)?;
    ensure!(!examples.is_empty(), "no clip in {} admits an event crop", opts.data.display());
    let dims = train::latent_dims(&examples)?;
    create_dir(&opts.out.join(CHECKPOINT_DIR))?;
    let log_path = opts.out.join(TRAIN_LOG);

    let (mut model, mut adam) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut stored = ck.config()?;
            stored.train.steps = cfg.train.steps;
            ensure!(
                stored == *cfg,
                "checkpoint {} was trained under a different config",
                path.display()
            );
            ensure!(ck.header.dims == dims, "checkpoint latent dims differ from the dataset's");
            let adam = ck.adam.ok_or_else(|| anyhow!("checkpoint {} has no optimizer state", path.display()))?;
            // Drop log lines past the checkpoint so the log matches an
            // uninterrupted run.
            let kept: Vec<LogLine> = if log_path.exists() {
                read_log(&log_path)?.into_iter().filter(|l| l.step < adam.step).collect()
            } else {
                Vec::new()
            };
            let text: String = kept.iter().map(|l| serde_json::to_string(l).expect("log line") + "\n").collect();
            write_text(&log_path, &text)?;
            (ck.model, adam)
        }
        None => {
            write_text(&log_path, "")?;
            train::fresh_model(cfg, dims)?
        }
    };
    write_text(&opts.out.join("config.toml"), &cfg.to_text())?;

    let header = |step: u64| Header {
        config: cfg.to_text(),
        config_hash: cfg.hash(),
        data_hash: ds.manifest.config_hash.clone(),
        step,
        dims,
        train_seeds: ds.seeds(),
    };
    let mut log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    train::run(cfg, &mut model, &mut adam, &examples, |stats, line, model, adam| {
        if let Some(line) = line {
            let text = serde_json::to_string(line)?;
            writeln!(log, "{text}").with_context(|| format!("writing {}", log_path.display()))?;
            if opts.progress {
                eprintln!("{text}");
            }
        }
        let done = stats.step + 1;
        let interval = cfg.train.checkpoint_interval;
        if interval > 0 && done % interval == 0 {
            Checkpoint {
                header: header(done),
                model: model.clone(),
                adam: Some(adam.clone()),
            }
            .save(&checkpoint_path(&opts.out, done))?;
        }
        Ok(())
    })?;
    let ck = Checkpoint {
        header: header(adam.step),
        model,
        adam: Some(adam),
    };
    ck.save(&opts.out.join(FINAL_CHECKPOINT))?;
    Ok(ck)
}

// ----------------------------------------------------------------- sample

#[derive(Clone, Debug, Default)]
pub struct SampleOptions {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub clip: String,
    /// Context length in frames; defaults to the clip's event crop.
    pub n_ctx: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub allow_mismatch: bool,
}

pub struct SampleOutput {
    /// Predicted target frames, `3×N×H×W` in `[0, 1]`.
    pub prediction: Tensor,
    pub ground_truth: Tensor,
    pub crop: Crop,
}

/// Predicts the target frames of one clip and writes tensors plus
/// ground-truth|prediction PNG pairs under `opts.out/frames`.
pub fn sample(opts: &SampleOptions) -> Result<SampleOutput> {
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let cfg = ck.config()?;
    let ds = load_dataset(&opts.data)?;
    check_data_hash(&ck.header.data_hash, &ds.manifest.config_hash, "sample data", opts.allow_mismatch)?;
    let (id, clip) = ds
        .clips
        .iter()
        .find(|(id, _)| *id == opts.clip)
        .ok_or_else(|| anyhow!("clip {} not in {}", opts.clip, opts.data.display()))?;
    let crop = match opts.n_ctx {
        Some(n_ctx) => Crop {
            n_ctx,
            end: n_ctx + cfg.data.target_frames,
        },
        None => cfg
            .data
            .crop(clip)
            .ok_or_else(|| anyhow!("clip {id} has no event crop; pass --n-ctx"))?,
    };
    ensure!(
        crop.end <= clip.num_frames(),
        "context {} plus {} target frames exceeds the clip's {} frames",
        crop.n_ctx,
        cfg.data.target_frames,
        clip.num_frames()
    );
    let codec = Codec::default();
    let ex = prepare_example(id, clip, crop, &codec, cfg.data.context_limit)?;
    let s = ex.target.shape();
    let dims = ck.model.dims;
    if (s[0], s[2], s[3]) != (dims.channels, dims.height, dims.width) {
        return Err(hydra_core::Error::Config(format!(
            "clip latents {s:?} do not match checkpoint dims {dims:?}"
        ))
        .into());
    }
    let steps = opts.steps.unwrap_or(cfg.eval.sample_steps);
    let seed = opts.seed.unwrap_or(cfg.eval.seed);
    let (latent, selections) = predict(&ck.model, &ex, steps, seed)?;
    let prediction = decode_prediction(&codec, &latent)?;
    let ground_truth = clip.frames.narrow(1, crop.n_ctx, crop.end - crop.n_ctx)?;

    let frames_dir = opts.out.join("frames");
    create_dir(&frames_dir)?;
    io::write_tensor(&opts.out.join("prediction.tensor"), &prediction)?;
    io::write_tensor(&opts.out.join("ground_truth.tensor"), &ground_truth)?;
    io::write_json(&opts.out.join("selections.json"), &selections)?;
    for f in 0..prediction.shape()[1] {
        let pair = side_by_side(
            &[frame_rgb(&ground_truth, f, FRAME_SCALE)?, frame_rgb(&prediction, f, FRAME_SCALE)?],
            FRAME_SCALE,
        )?;
        write_png(&frames_dir.join(format!("frame_{:03}.png", crop.n_ctx + f)), &pair)?;
    }
    Ok(SampleOutput {
        prediction,
        ground_truth,
        crop,
    })
}

// ------------------------------------------------------------------- eval

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub allow_mismatch: bool,
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub bootstrap_std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub data_hash: String,
    pub checkpoint_step: u64,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub extractor: String,
    pub clips: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Fraction of clips where some retrieval picked a token showing none
    /// of the re-entering subjects.
    pub empty_retrieval_rate: f64,
    /// Per clip, whether an empty token was retrieved.
    pub empty_retrieval: Vec<bool>,
}

pub struct EvalOutcome {
    pub run: EvalRun,
    pub summary: EvalSummary,
}

/// Whether each evaluated clip retrieved an empty memory token at any
/// sampler step, block or target frame.
fn empty_retrievals(ds: &Dataset, run: &EvalRun, cfg: &RunConfig) -> Vec<bool> {
    let crops = ds.clips.iter().filter_map(|(_, c)| cfg.data.crop(c).map(|crop| (c, crop)));
    crops
        .zip(&run.selections)
        .map(|((clip, crop), sel)| {
            let f_mem = kept_memory_frames(crop, cfg.data.context_limit);
            selected_empty(sel, &empty_tokens(clip, crop, f_mem, &cfg.model))
        })
        .collect()
}

/// Scores a checkpoint on a held-out dataset. Refuses data generated
/// under other settings, or clips the checkpoint was trained on, unless
/// `allow_mismatch` is set.
pub fn eval(opts: &EvalOptions) -> Result<EvalOutcome> {
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let mut cfg = ck.config()?;
    if let Some(seed) = opts.seed {
        cfg.eval.seed = seed;
    }
    let ds = load_dataset(&opts.data)?;
    check_data_hash(&ck.header.data_hash, &ds.manifest.config_hash, "evaluation data", opts.allow_mismatch)?;
    let overlap = ds.seeds().iter().filter(|s| ck.header.train_seeds.contains(s)).count();
    if overlap > 0 && !opts.allow_mismatch {
        bail!("{overlap} evaluation clips were used for training (pass --allow-mismatch to override)");
    }
    let extractor = cfg.eval.extractor();
    let run = evaluate_run(
        &ck.model,
        &ds.clips,
        &cfg.data,
        &cfg.eval.sampler(),
        &Codec::default(),
        extractor.as_ref(),
        opts.threads,
    )?;
    let metrics = METRIC_COLUMNS
        .iter()
        .map(|&m| {
            let col = run.report.column(m);
            let s = run.report.summary(m);
            let bs = bootstrap_std(&col, cfg.eval.bootstrap_resamples, cfg.eval.seed);
            (
                m.to_string(),
                MetricSummary {
                    mean: s.mean,
                    std: s.std,
                    bootstrap_std: bs,
                    count: s.count,
                },
            )
        })
        .collect();
    let empty = empty_retrievals(&ds, &run, &cfg);
    let summary = EvalSummary {
        config_hash: ck.header.config_hash.clone(),
        data_hash: ck.header.data_hash.clone(),
        checkpoint_step: ck.header.step,
        train_seed: cfg.seed,
        eval_seed: cfg.eval.seed,
        extractor: run.report.extractor.clone(),
        clips: run.report.rows.len(),
        metrics,
        empty_retrieval_rate: empty.iter().filter(|&&e| e).count() as f64 / empty.len().max(1) as f64,
        empty_retrieval: empty,
    };
    if let Some(out) = &opts.out {
        create_dir(out)?;
        let mut report = format!("# config_hash\t{}\n# data_hash\t{}\n", summary.config_hash, summary.data_hash);
        report.push_str(&run.report.to_text());
        write_text(&out.join("report.tsv"), &report)?;
        io::write_json(&out.join("summary.json"), &summary)?;
        let ids: Vec<&str> = run.report.rows.iter().map(|r| r.clip.as_str()).collect();
        io::write_json(&out.join("selections.json"), &(ids, &run.selections))?;
    }
    Ok(EvalOutcome { run, summary })
}

// ----------------------------------------------------------------- ablate

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Kernel,
    Tokens,
    Retrieval,
}

impl std::str::FromStr for Suite {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Suite::Kernel),
            "tokens" => Ok(Suite::Tokens),
            "retrieval" => Ok(Suite::Retrieval),
            _ => bail!("unknown suite {s:?} (expected kernel, tokens or retrieval)"),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Kernel => "kernel",
            Suite::Tokens => "tokens",
            Suite::Retrieval => "retrieval",
        }
    }
}

/// One grid cell: a named variant of the base config.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub name: String,
    pub config: RunConfig,
}

/// Context kept by the dense baseline in the retrieval suite, in latent
/// frames.
pub const DENSE_CONTEXT_LIMIT: usize = 1;

pub fn cells(suite: Suite, base: &RunConfig) -> Vec<Cell> {
    let with = |name: String, f: &dyn Fn(&mut RunConfig)| {
        let mut config = base.clone();
        f(&mut config);
        Cell { name, config }
    };
    match suite {
        Suite::Kernel => [1, 2]
            .into_iter()
            .flat_map(|kt| [2, 4, 8].into_iter().map(move |s| (kt, s)))
            .map(|(kt, s)| {
                with(format!("{kt}x{s}x{s}"), &|c: &mut RunConfig| {
                    c.model.tokenizer_kernel = [kt, s, s];
                    c.model.tokenizer_stride = [base.model.tokenizer_stride[0], s, s];
                })
            })
            .collect(),
        Suite::Tokens => [5, 10, 15]
            .into_iter()
            .map(|k| with(format!("k{k}"), &|c: &mut RunConfig| c.model.retrieved_tokens = k))
            .collect(),
        Suite::Retrieval => [
            ("fov_overlap", RetrievalMode::FovOverlap),
            ("dynamic_affinity", RetrievalMode::DynamicAffinity),
            ("dense_baseline", RetrievalMode::DenseBaseline),
        ]
        .into_iter()
        .map(|(name, mode)| {
            with(name.to_string(), &|c: &mut RunConfig| {
                c.model.retrieval = mode;
                if mode == RetrievalMode::DenseBaseline {
                    c.data.context_limit = Some(DENSE_CONTEXT_LIMIT);
                }
            })
        })
        .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: String,
    pub model: ModelConfig,
    pub outcome: std::result::Result<EvalSummary, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub suite: Suite,
    pub seed: u64,
    pub eval_seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Tab-separated table: one row per cell, each metric as mean and
    /// bootstrap standard deviation.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# suite\t{}\n# seeds\ttrain={}\teval={}\t(identical across cells)\n",
            self.suite.name(),
            self.seed,
            self.eval_seed
        );
        out.push_str("cell\tstatus");
        for m in METRIC_COLUMNS {
            out.push_str(&format!("\t{m}\t{m}_bootstrap_std"));
        }
        out.push_str("\tempty_retrieval_rate\ttrain_seed\teval_seed\n");
        for r in &self.rows {
            match &r.outcome {
                Ok(s) => {
                    out.push_str(&format!("{}\tok", r.cell));
                    for m in METRIC_COLUMNS {
                        let v = s.metrics[m];
                        out.push_str(&format!("\t{:.6}\t{:.6}", v.mean, v.bootstrap_std));
                    }
                    out.push_str(&format!(
                        "\t{:.4}\t{}\t{}\n",
                        s.empty_retrieval_rate, s.train_seed, s.eval_seed
                    ));
                }
                Err(e) => {
                    let msg = e.replace(['\t', '\n'], " ");
                    out.push_str(&format!("{}\tfailed: {msg}\n", r.cell));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct AblateOptions {
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub out: PathBuf,
    pub threads: usize,
    pub progress: bool,
}

/// Trains and evaluates every cell of `suite` with the base config's seeds,
/// writing each cell's run under `out/<suite>/<cell>` and the comparison
/// table to `out/ablate_<suite>.tsv`. A failing cell is recorded and the
/// suite continues.
pub fn ablate(suite: Suite, base: &RunConfig, opts: &AblateOptions) -> Result<AblationReport> {
    base.validate()?;
    create_dir(&opts.out)?;
    let mut rows = Vec::new();
    for cell in cells(suite, base) {
        let dir = opts.out.join(suite.name()).join(&cell.name);
        let outcome = (|| -> Result<EvalSummary> {
            train(
                &cell.config,
                &TrainOptions {
                    data: opts.train_data.clone(),
                    out: dir.clone(),
                    resume: None,
                    allow_mismatch: false,
                    progress: opts.progress,
                },
            )?;
            Ok(eval(&EvalOptions {
                checkpoint: dir.join(FINAL_CHECKPOINT),
                data: opts.test_data.clone(),
                out: Some(dir.join("eval")),
                seed: None,
                allow_mismatch: false,
                threads: opts.threads,
            })?
            .summary)
        })()
        .map_err(|e| format!("{e:#}"));
        if opts.progress {
            match &outcome {
                Ok(s) => eprintln!("{}: psnr {:.3} dsc_gt {:.4}", cell.name, s.metrics["psnr"].mean, s.metrics["dsc_gt"].mean),
                Err(e) => eprintln!("{}: failed: {e}", cell.name),
            }
        }
        rows.push(AblationRow {
            cell: cell.name,
            model: cell.config.model,
            outcome,
        });
    }
    let report = AblationReport {
        suite,
        seed: base.seed,
        eval_seed: base.eval.seed,
        rows,
    };
    write_text(&opts.out.join(format!("ablate_{}.tsv", suite.name())), &report.to_text())?;
    Ok(report)
}
