//! Adam training of any model variant on phantom patches, with CSV loss
//! logs, periodic checkpoints and exact resume.
//!
//! Patches are enumerated once and visited in a fresh shuffled order each
//! epoch. The order depends only on `(seed, epoch)` and the augmentation of
//! step `s` only on `(seed, s)`, so a resumed run replays the same samples.

mod adam;
mod checkpoint;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{soft_dice_loss, total_loss, LossBreakdown};
use crate::metrics::containment_violation;
use crate::model::ModelGraph;
use crate::phantom::dataset::Case;
use crate::phantom::{derive_regions, Extents, LabelVolume, MultiModalVolume, Region};
use crate::pipeline::{augment, extract_patches, normalize, PatchGrid};

pub use adam::{adam_step, adam_update, clip_global_norm, collect_grads, global_norm, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, Checkpoint, Manifest, TensorEntry, TensorKind, BLOB_FILE,
    MANIFEST_FILE,
};
pub use config::TrainConfig;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_LOG: &str = "loss.csv";

/// One training patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: MultiModalVolume,
    pub labels: LabelVolume,
}

/// Normalizes every case and cuts it into labelled patches.
pub fn prepare_samples(cases: &[Case], patch_extents: Extents) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for case in cases {
        let image = normalize(&case.image)?;
        let grid = PatchGrid::new(image.extents(), patch_extents)?;
        for patch in extract_patches(&image, Some(&case.labels), &grid)? {
            samples.push(Sample {
                image: patch.image,
                labels: patch.labels.expect("labels were supplied"),
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::Data("no training patches".into()));
    }
    Ok(samples)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 2 * epoch));
    order
}

fn augment_seed(seed: u64, step: u64) -> u64 {
    stream_rng(seed, 2 * step + 1).next_u64()
}

pub struct Trainer {
    config: TrainConfig,
    samples: Vec<Sample>,
    graph: ModelGraph,
    adam: AdamState,
    log: Vec<LossBreakdown>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    /// Fresh run with He-initialized weights drawn from `config.seed`.
    pub fn new(config: TrainConfig, samples: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        let graph = ModelGraph::init(config.model(), config.seed)?;
        Self::with_graph(config, samples, graph)
    }

    /// Fresh run starting from the given weights.
    pub fn with_graph(config: TrainConfig, samples: Vec<Sample>, graph: ModelGraph) -> Result<Self> {
        config.validate()?;
        if *graph.config() != config.model() {
            return Err(Error::Config(format!(
                "model {:?} does not match config {:?}",
                graph.config(),
                config.model()
            )));
        }
        if samples.is_empty() {
            return Err(Error::Data("no training patches".into()));
        }
        if let Some(s) = samples.iter().find(|s| s.image.extents() != config.patch_extents) {
            return Err(Error::shape(format!(
                "sample extents {:?} differ from configured patch {:?}",
                s.image.extents(),
                config.patch_extents
            )));
        }
        let adam = AdamState::new(&graph);
        Ok(Trainer {
            config,
            samples,
            graph,
            adam,
            log: Vec::new(),
            out_dir: None,
        })
    }

    /// Continues from `out_dir/checkpoint`, keeping the logged rows that
    /// precede the checkpoint.
    pub fn resume(config: TrainConfig, samples: Vec<Sample>, out_dir: &Path) -> Result<Self> {
        let model = config.model();
        let Checkpoint { graph, adam } = load_checkpoint(&out_dir.join(CHECKPOINT_DIR), Some(&model))?;
        let mut trainer = Self::with_graph(config, samples, graph)?;
        trainer.adam = adam;
        let log_path = out_dir.join(LOSS_LOG);
        let text = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        trainer.log = parse_log(&text)?;
        trainer.log.truncate(trainer.adam.step as usize);
        if trainer.log.len() != trainer.adam.step as usize {
            return Err(Error::Checkpoint(format!(
                "loss log has {} rows but the checkpoint is at step {}",
                trainer.log.len(),
                trainer.adam.step
            )));
        }
        trainer.out_dir = Some(out_dir.to_path_buf());
        Ok(trainer)
    }

    /// Writes checkpoints and the loss log under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Self {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn log(&self) -> &[LossBreakdown] {
        &self.log
    }

    pub fn steps_done(&self) -> usize {
        self.adam.step as usize
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Trains until `config.steps` steps have been taken.
    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.steps)
    }

    /// Trains until `target` steps have been taken. A prefetch thread
    /// prepares the next samples while the current one trains.
    pub fn run_until(&mut self, target: usize) -> Result<()> {
        let start = self.steps_done();
        if target <= start {
            return Ok(());
        }
        let Trainer {
            config,
            samples,
            graph,
            adam,
            log,
            out_dir,
        } = self;
        let samples: &[Sample] = samples;
        let config: &TrainConfig = config;
        let adam_config = AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.betas.0,
            beta2: config.betas.1,
            eps: config.eps,
        };
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel::<Result<Sample>>(2);
            scope.spawn(move || {
                let n = samples.len();
                for step in start..target {
                    let order = epoch_order(config.seed, (step / n) as u64, n);
                    let s = &samples[order[step % n]];
                    let prepared = if config.augment {
                        augment(&s.image, &s.labels, augment_seed(config.seed, step as u64))
                            .map(|(image, labels)| Sample { image, labels })
                    } else {
                        Ok(s.clone())
                    };
                    if tx.send(prepared).is_err() {
                        return;
                    }
                }
            });
            for step in start..target {
                let sample = rx.recv().expect("prefetch thread produces every step")?;
                let breakdown = train_step(graph, adam, &sample, config, &adam_config)?;
                log.push(breakdown);
                let done = step + 1;
                let periodic = config.checkpoint_every > 0 && done % config.checkpoint_every == 0;
                if let Some(dir) = out_dir.as_deref() {
                    if periodic || done == target {
                        write_outputs(dir, graph, adam, log)?;
                    }
                }
            }
            Ok(())
        })
    }
}

/// Forward, loss, backward, optional clipping and one Adam update.
fn train_step(
    graph: &mut ModelGraph,
    adam: &mut AdamState,
    sample: &Sample,
    config: &TrainConfig,
    adam_config: &AdamConfig,
) -> Result<LossBreakdown> {
    let step = adam.step;
    let regions = derive_regions(&sample.labels)?;
    let outputs = graph.forward(&sample.image.to_tensor())?;
    let (loss, breakdown) = total_loss(&outputs, &sample.labels, &regions, &config.weights)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {step} is {}", breakdown.total)));
    }
    graph.zero_grad();
    loss.backward()?;
    let mut grads = collect_grads(graph);
    if let Some(max) = config.grad_clip_norm {
        clip_global_norm(&mut grads, max);
    }
    adam_step(graph, &grads, adam, adam_config)?;
    Ok(breakdown)
}

fn write_outputs(dir: &Path, graph: &ModelGraph, adam: &AdamState, log: &[LossBreakdown]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log_path = dir.join(LOSS_LOG);
    fs::write(&log_path, format_log(log)).map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&dir.join(CHECKPOINT_DIR), graph, adam)
}

pub fn format_log(rows: &[LossBreakdown]) -> String {
    let mut out = String::from(LossBreakdown::CSV_HEADER);
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&row.csv_row(i));
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<LossBreakdown>> {
    let mut lines = text.lines();
    if lines.next() != Some(LossBreakdown::CSV_HEADER) {
        return Err(Error::Data("loss log has an unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("loss log row {i}: {e}")))?;
            match fields[..] {
                [step, bt, wt, tc, et, sc, total] if step == i as f64 => Ok(LossBreakdown { bt, wt, tc, et, sc, total }),
                _ => Err(Error::Data(format!("loss log row {i} is malformed: {line}"))),
            }
        })
        .collect()
}

/// How well the sub-branches fit one sample.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct BranchFit {
    /// Soft Dice of the main head's whole-tumor probability `1 − p(background)`.
    pub main_wt_soft_dice: f64,
    /// `1 − soft Dice loss` of each branch probability map.
    pub wt_soft_dice: f64,
    pub tc_soft_dice: f64,
    pub et_soft_dice: f64,
    /// Containment violations of the branch maps thresholded at 0.5.
    pub containment_wt_tc: f64,
    pub containment_tc_et: f64,
}

pub fn branch_fit(graph: &ModelGraph, sample: &Sample) -> Result<BranchFit> {
    let outputs = graph.frozen().forward(&sample.image.to_tensor())?;
    let (Some(wt), Some(tc), Some(et)) = (&outputs.wt_prob, &outputs.tc_prob, &outputs.et_prob) else {
        return Err(Error::Contract(format!("{} has no sub-branches", graph.variant())));
    };
    let regions = derive_regions(&sample.labels)?;
    let soft = |p: &crate::tensor::Tensor, r: Region| -> Result<f64> {
        Ok(1.0 - soft_dice_loss(p, &regions.tensor(r))?.item()? as f64)
    };
    let n = sample.labels.data().len();
    let main = outputs.main_probs.data();
    let (mut inter, mut mass) = (0f64, 0f64);
    for (i, &g) in regions.wt.iter().enumerate() {
        let p = 1.0 - main[i] as f64;
        inter += if g { p } else { 0.0 };
        mass += p + if g { 1.0 } else { 0.0 };
    }
    debug_assert_eq!(main.len(), 4 * n);
    let eps = crate::loss::EPSILON as f64;
    let main_wt_soft_dice = (2.0 * inter + eps) / (mass + eps);
    let mask = |p: &crate::tensor::Tensor| p.data().iter().map(|&v| v > 0.5).collect::<Vec<_>>();
    let (mw, mt, me) = (mask(wt), mask(tc), mask(et));
    Ok(BranchFit {
        main_wt_soft_dice,
        wt_soft_dice: soft(wt, Region::WholeTumor)?,
        tc_soft_dice: soft(tc, Region::TumorCore)?,
        et_soft_dice: soft(et, Region::Enhancing)?,
        containment_wt_tc: containment_violation(&mw, &mt)?,
        containment_tc_et: containment_violation(&mt, &me)?,
    })
}

/// Trains a fresh model on `cases`, writing `loss.csv` and `checkpoint/`
/// under `out_dir`.
pub fn train(config: &TrainConfig, cases: &[Case], out_dir: &Path) -> Result<Trainer> {
    config.validate()?;
    let samples = prepare_samples(cases, config.patch_extents)?;
    let mut trainer = Trainer::new(config.clone(), samples)?.with_output(out_dir);
    trainer.run()?;
    Ok(trainer)
}
