//! The epoch loop: a prefetch thread feeds augmented patches to a single
//! driver that owns the model and optimizer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};

use ndarray::Array3;
use oarseg_tensor::{mean_of, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::{argmax, load_cases, sliding_window_logits, window_for};
use super::{io_err, save_checkpoint, write_atomic, CheckpointMeta, EngineError, ExperimentConfig, Split};
use crate::data::{augment, derive_seed, list_patients, load_patient, pad_to, preprocess, sample_patch, split_patients};
use crate::data::{LabelMap, SplitAssignment, SplitManifest, Volume};
use crate::metrics::{aggregate, dice_score, ClassRecord};
use crate::model::{Mode, Model};
use crate::optim::{append_lr_rows, combined_loss, loss_node, lr_at, make_optimizer, LossShape};

/// Consecutive non-finite losses tolerated before giving up.
const DIVERGENCE_LIMIT: usize = 10;
const PREFETCH: usize = 4;
const PATCH_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: f64,
    pub mean_dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub val_dice: f64,
    pub path: PathBuf,
}

/// Everything a run has produced so far. Epochs are numbered from 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub run_dir: PathBuf,
    pub epoch: usize,
    /// Optimizer iterations so far, including skipped non-finite steps.
    pub iterations: u64,
    pub lr_trace: Vec<(u64, f64)>,
    pub train_curve: Vec<CurvePoint>,
    pub val_curve: Vec<CurvePoint>,
    /// Foreground class names, the columns of `val_class_dice`.
    pub class_names: Vec<String>,
    pub val_class_dice: Vec<Vec<f64>>,
    pub best: Option<BestCheckpoint>,
}

impl TrainState {
    pub fn load(run_dir: &Path) -> Result<Self, EngineError> {
        let path = run_dir.join("state.json");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| EngineError::Json { path, source })
    }

    /// First epoch whose validation DICE reaches `threshold`, either the
    /// mean over foreground classes or that of `class`.
    pub fn epochs_to(&self, class: Option<&str>, threshold: f64) -> Option<usize> {
        match class {
            None => self.val_curve.iter().find(|p| p.mean_dice >= threshold).map(|p| p.epoch),
            Some(name) => {
                let k = self.class_names.iter().position(|n| n == name)?;
                self.val_class_dice.iter().position(|row| row[k] >= threshold).map(|i| self.val_curve[i].epoch)
            }
        }
    }

    pub fn class_dice(&self, epoch: usize, class: &str) -> Option<f64> {
        let k = self.class_names.iter().position(|n| n == class)?;
        let i = self.val_curve.iter().position(|p| p.epoch == epoch)?;
        Some(self.val_class_dice[i][k])
    }
}

/// What the caller wants after each completed epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

/// Deterministic split of the configured dataset root.
pub(crate) fn resolve_split(cfg: &ExperimentConfig) -> Result<SplitAssignment, EngineError> {
    let ids = list_patients(&cfg.dataset.root)?;
    Ok(split_patients(&ids, cfg.dataset.ratios, cfg.seed)?)
}

/// Trains for `cfg.epochs` epochs, writing artifacts under
/// `runs_root/<run_name>`.
pub fn fit(cfg: &ExperimentConfig, runs_root: &Path) -> Result<TrainState, EngineError> {
    fit_with(cfg, runs_root, |_| EpochControl::Continue)
}

/// [`fit`] with a hook called after every epoch; returning
/// [`EpochControl::Stop`] ends the run with the artifacts written so far.
pub fn fit_with(
    cfg: &ExperimentConfig,
    runs_root: &Path,
    mut observer: impl FnMut(&TrainState) -> EpochControl,
) -> Result<TrainState, EngineError> {
    cfg.validate()?;
    let run_dir = runs_root.join(&cfg.run_name);
    std::fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    let split = resolve_split(cfg)?;
    write_atomic(&run_dir.join("config.json"), cfg.to_json().as_bytes())?;
    let manifest = serde_json::to_string_pretty(&SplitManifest::from(&split)).expect("manifest serializes");
    write_atomic(&run_dir.join("split.json"), manifest.as_bytes())?;

    let spec = cfg.dataset.spec();
    let mut state = TrainState {
        run_dir: run_dir.clone(),
        class_names: spec.class_names(),
        ..Default::default()
    };
    let mut artifacts = Artifacts::create(&run_dir, &state.class_names)?;
    if cfg.epochs == 0 {
        artifacts.write_state(&state)?;
        return Ok(state);
    }
    if split.train_ids.is_empty() || split.val_ids.is_empty() {
        return Err(EngineError::InvalidConfig(format!(
            "need nonempty train and validation splits, got {} and {} patients",
            split.train_ids.len(),
            split.val_ids.len()
        )));
    }

    let train = split
        .train_ids
        .iter()
        .map(|id| {
            let (v, l) = load_patient(&cfg.dataset.root, id, &spec)?;
            Ok(preprocess(&v, &l, &cfg.augmentation)?)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let val = load_cases(cfg, Split::Val)?;

    let model = Model::new(&cfg.model, cfg.seed)?;
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel(PREFETCH);
        let train = &train;
        scope.spawn(move || produce(cfg, train, tx));
        let mut run = Run {
            cfg,
            model: &model,
            val: &val,
            state: &mut state,
            artifacts: &mut artifacts,
        };
        run.epochs(rx, train.len(), &mut observer)
    })?;
    Ok(state)
}

struct Batch {
    x: Tensor,
    target: Vec<u8>,
}

fn sample(cfg: &ExperimentConfig, v: &Volume, l: &LabelMap, seed: u64) -> Result<(Array3<f32>, Array3<u8>), EngineError> {
    let (v, l) = augment(v, l, &cfg.augmentation, seed)?;
    let size = window_for(&cfg.model, cfg.patch_size, v.shape());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PATCH_STREAM);
    Ok(sample_patch(v.voxels(), l.labels(), size, cfg.foreground_prob, &mut rng))
}

fn make_batch(cfg: &ExperimentConfig, train: &[(Volume, LabelMap)], items: &[(usize, usize)], epoch: usize) -> Result<Batch, EngineError> {
    let spv = cfg.samples_per_volume;
    let patches = items
        .iter()
        .map(|&(i, s)| {
            let (v, l) = &train[i];
            sample(cfg, v, l, derive_seed(cfg.seed, v.patient_id(), (epoch * spv + s) as u64))
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    // whole-volume patches may differ between cases; pad to the largest
    let mut extent = [0; 3];
    for (p, _) in &patches {
        for a in 0..3 {
            extent[a] = extent[a].max(p.shape()[a]);
        }
    }
    let mut x = Vec::with_capacity(patches.len() * extent.iter().product::<usize>());
    let mut target = Vec::with_capacity(x.capacity());
    for (v, l) in &patches {
        x.extend(pad_to(v, extent).iter());
        target.extend(pad_to(l, extent).iter());
    }
    let x = Tensor::new(vec![patches.len(), 1, extent[0], extent[1], extent[2]], x);
    Ok(Batch { x, target })
}

/// Visiting order of `(volume, sample)` pairs for one epoch.
fn epoch_order(cfg: &ExperimentConfig, volumes: usize, epoch: usize) -> Vec<(usize, usize)> {
    let spv = cfg.samples_per_volume;
    let mut order: Vec<(usize, usize)> = (0..volumes).flat_map(|i| (0..spv).map(move |s| (i, s))).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch-order", epoch as u64)));
    order
}

fn produce(cfg: &ExperimentConfig, train: &[(Volume, LabelMap)], tx: SyncSender<Result<Batch, EngineError>>) {
    for epoch in 0..cfg.epochs {
        for items in epoch_order(cfg, train.len(), epoch).chunks(cfg.batch_size) {
            let batch = make_batch(cfg, train, items, epoch);
            let failed = batch.is_err();
            if tx.send(batch).is_err() || failed {
                return;
            }
        }
    }
}

/// Mean foreground DICE of the argmax prediction over a whole batch.
fn batch_dice(logits: &Tensor, target: &[u8]) -> f64 {
    let [b, c, d, h, w] = logits.dims5();
    let spatial = d * h * w;
    let data = logits.data();
    let mut inter = vec![0usize; c];
    let mut pred = vec![0usize; c];
    let mut truth = vec![0usize; c];
    for n in 0..b {
        for v in 0..spatial {
            let at = |k: usize| data[(n * c + k) * spatial + v];
            let best = (1..c).fold(0, |best, k| if at(k) > at(best) { k } else { best });
            let t = target[n * spatial + v] as usize;
            pred[best] += 1;
            truth[t] += 1;
            if best == t {
                inter[t] += 1;
            }
        }
    }
    let dice = |k: usize| {
        if pred[k] + truth[k] == 0 {
            1.0
        } else {
            2.0 * inter[k] as f64 / (pred[k] + truth[k]) as f64
        }
    };
    (1..c).map(dice).sum::<f64>() / (c - 1) as f64
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a Model,
    val: &'a [(Volume, LabelMap)],
    state: &'a mut TrainState,
    artifacts: &'a mut Artifacts,
}

impl Run<'_> {
    fn epochs(
        &mut self,
        rx: Receiver<Result<Batch, EngineError>>,
        volumes: usize,
        observer: &mut impl FnMut(&TrainState) -> EpochControl,
    ) -> Result<(), EngineError> {
        let cfg = self.cfg;
        let iters_per_epoch = (volumes * cfg.samples_per_volume).div_ceil(cfg.batch_size);
        let schedule = cfg.scheduler.resolve(iters_per_epoch);
        let mut opt = make_optimizer(self.model.params(), lr_at(&schedule, 0));
        let mut non_finite = 0;
        for epoch in 1..=cfg.epochs {
            let mut losses = Vec::with_capacity(iters_per_epoch);
            let mut dices = Vec::with_capacity(iters_per_epoch);
            let first_row = self.state.lr_trace.len();
            for _ in 0..iters_per_epoch {
                let batch = rx
                    .recv()
                    .map_err(|_| EngineError::InvalidConfig("training data stream ended early".into()))??;
                let t = self.state.iterations;
                let lr = lr_at(&schedule, t);
                opt.lr = lr;
                self.state.lr_trace.push((t, lr));
                self.state.iterations += 1;

                opt.zero_grad();
                let out = self.model.forward(&Var::constant(batch.x), Mode { training: true })?;
                let mut terms = vec![loss_node(&out.logits, &batch.target, &cfg.loss)?];
                for aux in &out.aux {
                    terms.push(loss_node(aux, &batch.target, &cfg.loss)?);
                }
                let loss = if terms.len() == 1 { terms.pop().unwrap() } else { mean_of(&terms) };
                let value = loss.value().data()[0] as f64;
                if !value.is_finite() {
                    non_finite += 1;
                    log::warn!("iteration {t}: non-finite loss, step skipped");
                    if non_finite >= DIVERGENCE_LIMIT {
                        return Err(EngineError::Divergence {
                            iteration: t,
                            consecutive: non_finite,
                        });
                    }
                    continue;
                }
                non_finite = 0;
                loss.backward();
                opt.step();
                losses.push(value);
                dices.push(batch_dice(out.logits.value(), &batch.target));
            }
            let train = CurvePoint {
                epoch,
                loss: mean(&losses),
                mean_dice: mean(&dices),
            };
            let (val, per_class) = self.validate(epoch)?;
            self.state.epoch = epoch;
            self.state.train_curve.push(train);
            self.state.val_curve.push(val);
            self.state.val_class_dice.push(per_class);
            log::info!(
                "{} epoch {epoch}: train loss {:.4} dice {:.4} | val loss {:.4} dice {:.4}",
                cfg.run_name,
                train.loss,
                train.mean_dice,
                val.loss,
                val.mean_dice
            );

            let meta = CheckpointMeta {
                run_name: cfg.run_name.clone(),
                epoch,
                val_dice: Some(val.mean_dice),
                iteration: self.state.iterations,
            };
            if self.state.best.as_ref().is_none_or(|b| val.mean_dice > b.val_dice) {
                let path = self.state.run_dir.join("best.ckpt");
                save_checkpoint(self.model, &meta, &path)?;
                self.state.best = Some(BestCheckpoint {
                    epoch,
                    val_dice: val.mean_dice,
                    path,
                });
            }
            save_checkpoint(self.model, &meta, &self.state.run_dir.join("last.ckpt"))?;
            self.artifacts.append_lr(&self.state.lr_trace[first_row..])?;
            self.artifacts.write_curves(self.state)?;
            self.artifacts.write_state(self.state)?;
            if observer(self.state) == EpochControl::Stop {
                break;
            }
        }
        Ok(())
    }

    /// Validation loss and DICE over whole volumes, computed exactly as
    /// checkpoint evaluation does.
    fn validate(&self, epoch: usize) -> Result<(CurvePoint, Vec<f64>), EngineError> {
        let cfg = self.cfg;
        let mut losses = Vec::with_capacity(self.val.len());
        let mut records = Vec::with_capacity(self.val.len());
        for (v, l) in self.val {
            let window = window_for(&cfg.model, cfg.patch_size, v.shape());
            let logits = sliding_window_logits(self.model, v.voxels(), window)?;
            let (classes, d, h, w) = logits.dim();
            let flat: Vec<f64> = logits.iter().map(|&x| x as f64).collect();
            let shape = LossShape {
                batch: 1,
                classes,
                spatial: d * h * w,
            };
            let target: Vec<u8> = l.labels().iter().copied().collect();
            losses.push(combined_loss(&flat, shape, &target, &cfg.loss)?);
            let pred = argmax(&logits);
            let names = l.class_names();
            let case = (1..classes)
                .map(|c| {
                    Ok(ClassRecord {
                        name: names[c].clone(),
                        dice: dice_score(&pred, l.labels(), c as u8)?,
                        hd95_mm: None,
                    })
                })
                .collect::<Result<Vec<_>, EngineError>>()?;
            records.push(case);
        }
        let report = aggregate(&records)?;
        let point = CurvePoint {
            epoch,
            loss: mean(&losses),
            mean_dice: report.overall_dice,
        };
        Ok((point, report.classes.iter().map(|c| c.dice).collect()))
    }
}

/// Incrementally written run-directory files.
struct Artifacts {
    dir: PathBuf,
    lr: BufWriter<File>,
    class_names: Vec<String>,
}

impl Artifacts {
    fn create(dir: &Path, class_names: &[String]) -> Result<Self, EngineError> {
        let path = dir.join("lr_trace.csv");
        let mut lr = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        writeln!(lr, "iteration,lr").and_then(|_| lr.flush()).map_err(io_err(&path))?;
        let out = Self {
            dir: dir.to_path_buf(),
            lr,
            class_names: class_names.to_vec(),
        };
        out.write_curves(&TrainState::default())?;
        Ok(out)
    }

    fn append_lr(&mut self, rows: &[(u64, f64)]) -> Result<(), EngineError> {
        let path = self.dir.join("lr_trace.csv");
        append_lr_rows(&mut self.lr, rows).and_then(|_| self.lr.flush()).map_err(io_err(&path))
    }

    fn write_curves(&self, state: &TrainState) -> Result<(), EngineError> {
        let mut curves = String::from("epoch,split,loss,mean_dice\n");
        for (t, v) in state.train_curve.iter().zip(&state.val_curve) {
            curves.push_str(&format!("{},train,{},{}\n", t.epoch, t.loss, t.mean_dice));
            curves.push_str(&format!("{},val,{},{}\n", v.epoch, v.loss, v.mean_dice));
        }
        write_atomic(&self.dir.join("curves.csv"), curves.as_bytes())?;
        let mut per_class = format!("epoch,{}\n", self.class_names.join(","));
        for (p, row) in state.val_curve.iter().zip(&state.val_class_dice) {
            let cells: Vec<String> = row.iter().map(|d| d.to_string()).collect();
            per_class.push_str(&format!("{},{}\n", p.epoch, cells.join(",")));
        }
        write_atomic(&self.dir.join("val_class_dice.csv"), per_class.as_bytes())
    }

    fn write_state(&self, state: &TrainState) -> Result<(), EngineError> {
        let json = serde_json::to_string_pretty(state).expect("state serializes");
        write_atomic(&self.dir.join("state.json"), json.as_bytes())
    }
}

/// Reads `curves.csv` back as (train, val) series.
pub fn read_curves(run_dir: &Path) -> Result<(Vec<CurvePoint>, Vec<CurvePoint>), EngineError> {
    let path = run_dir.join("curves.csv");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let bad = |line: &str| EngineError::InvalidConfig(format!("{}: malformed row {line:?}", path.display()));
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let [epoch, split, loss, dice] = f[..] else {
            return Err(bad(line));
        };
        let point = CurvePoint {
            epoch: epoch.parse().map_err(|_| bad(line))?,
            loss: loss.parse().map_err(|_| bad(line))?,
            mean_dice: dice.parse().map_err(|_| bad(line))?,
        };
        match split {
            "train" => train.push(point),
            "val" => val.push(point),
            _ => return Err(bad(line)),
        }
    }
    Ok((train, val))
}
