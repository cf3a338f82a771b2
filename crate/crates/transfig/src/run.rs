//! Training runs on disk.
//!
//! ```text
//! <run>/config.json              resolved config, flat dotted keys
//! <run>/losses.csv               one row per step
//! <run>/checkpoints/step_N.ckpt
//! <run>/samples/epoch_N/{ab,ba}.png   input | translated
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use transfig_core::{DTerm, GeneratorRole, ImageSet, LossBreakdown, TrainConfig, TrainState};

use crate::checkpoint;
use crate::error::{io_at, AppError, Result};
use crate::images;

pub const LOSS_COLUMNS_TAIL: [&str; 4] = ["g_ab_adv", "g_ab_rec", "g_ba_adv", "g_ba_rec"];
const SAMPLE_COUNT: usize = 4;

pub fn loss_header() -> Vec<String> {
    let mut cols = vec!["step".to_string()];
    cols.extend(DTerm::FULL.iter().map(|t| t.column().to_string()));
    cols.extend(LOSS_COLUMNS_TAIL.iter().map(|s| s.to_string()));
    cols
}

/// One CSV row; terms absent from the objective are left empty.
pub fn loss_row(step: u64, l: &LossBreakdown) -> Vec<String> {
    let mut row = vec![step.to_string()];
    row.extend(DTerm::FULL.iter().map(|&t| l.term(t).map(|v| v.to_string()).unwrap_or_default()));
    row.extend([l.g_ab_adv, l.g_ab_rec, l.g_ba_adv, l.g_ba_rec].map(|v| v.to_string()));
    row
}

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn losses(&self) -> PathBuf {
        self.root.join("losses.csv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step_{step}.ckpt"))
    }

    pub fn samples(&self, epoch: usize) -> PathBuf {
        self.root.join("samples").join(format!("epoch_{epoch}"))
    }

    /// Checkpoint with the highest step, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let dir = self.checkpoints();
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in fs::read_dir(&dir).map_err(io_at(&dir))? {
            let path = entry.map_err(io_at(&dir))?.path();
            let step = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("step_")?.strip_suffix(".ckpt")?.parse::<u64>().ok());
            if let Some(s) = step {
                if best.as_ref().is_none_or(|(b, _)| s > *b) {
                    best = Some((s, path));
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Continue from this checkpoint instead of initializing.
    pub resume: Option<PathBuf>,
    pub write_samples: bool,
    /// Extra stop, for tests and partial runs; does not change the config.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub final_checkpoint: PathBuf,
    pub steps: u64,
    pub losses: Vec<LossBreakdown>,
}

/// Keeps the rows with `step <= last_step` and reopens the file for appending.
fn reopen_losses(path: &Path, last_step: u64) -> Result<File> {
    let kept: Vec<String> = match File::open(path) {
        Ok(f) => {
            let mut lines = BufReader::new(f).lines();
            let mut kept = Vec::new();
            if let Some(h) = lines.next() {
                kept.push(h.map_err(io_at(path))?);
            }
            for line in lines {
                let line = line.map_err(io_at(path))?;
                let step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                if step.is_some_and(|s| s <= last_step) {
                    kept.push(line);
                }
            }
            kept
        }
        Err(_) => vec![loss_header().join(",")],
    };
    let mut text = kept.join("\n");
    text.push('\n');
    crate::fsutil::write_atomic(path, text.as_bytes())?;
    OpenOptions::new().append(true).open(path).map_err(io_at(path))
}

pub fn write_samples(state: &TrainState<f32>, data_a: &ImageSet<f32>, data_b: &ImageSet<f32>, dir: &Path) -> Result<()> {
    for (role, data, name) in [(GeneratorRole::AB, data_a, "ab.png"), (GeneratorRole::BA, data_b, "ba.png")] {
        let idx: Vec<usize> = (0..SAMPLE_COUNT.min(data.len())).collect();
        let input = data.as_batch().select(&idx);
        let out = state.generator(role).translate(&input)?;
        images::write_grid(&dir.join(name), &[&input, &out])?;
    }
    Ok(())
}

/// Trains until the config's step budget is used up, writing the run
/// directory as it goes. Returns the losses of the steps run by this call.
pub fn fit(
    cfg: &TrainConfig,
    data_a: Arc<ImageSet<f32>>,
    data_b: Arc<ImageSet<f32>>,
    run: &RunPaths,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    fs::create_dir_all(&run.root).map_err(io_at(&run.root))?;
    let mut state = match &opts.resume {
        Some(path) => {
            let snap = checkpoint::load(path)?;
            if snap.config != *cfg {
                return Err(AppError::Usage(format!(
                    "{} was trained with a different config",
                    path.display()
                )));
            }
            TrainState::restore(snap, data_a.clone(), data_b.clone())?
        }
        None => TrainState::new(cfg.clone(), data_a.clone(), data_b.clone())?,
    };
    crate::config::write(cfg, &run.config())?;
    let mut csv = reopen_losses(&run.losses(), state.step())?;
    let total = state.total_steps();
    let stop = opts.stop_after.map_or(total, |s| s.min(total));
    let per_epoch = state.steps_per_epoch();
    let mut losses = Vec::new();
    log::info!(
        "training {} steps ({} per epoch) from step {} into {}",
        stop,
        per_epoch,
        state.step(),
        run.root.display()
    );
    let mut last_ckpt = None;
    while state.step() < stop {
        let l = state.advance()?;
        let line = loss_row(state.step(), &l).join(",");
        writeln!(csv, "{line}").map_err(io_at(&run.losses()))?;
        losses.push(l);
        let step = state.step();
        if step % per_epoch == 0 {
            let epoch = (step / per_epoch) as usize;
            log::info!("epoch {epoch} done (step {step}, stage {:?})", state.stage());
            if epoch % cfg.checkpoint_every == 0 {
                let path = run.checkpoint(step);
                checkpoint::save(&path, &state.snapshot())?;
                last_ckpt = Some(path);
                if opts.write_samples {
                    write_samples(&state, &data_a, &data_b, &run.samples(epoch))?;
                }
            }
        }
    }
    csv.flush().map_err(io_at(&run.losses()))?;
    let final_path = run.checkpoint(state.step());
    if last_ckpt.as_ref() != Some(&final_path) {
        checkpoint::save(&final_path, &state.snapshot())?;
    }
    Ok(FitOutcome {
        final_checkpoint: final_path,
        steps: state.step(),
        losses,
    })
}

/// Parsed `losses.csv`: step plus every column as an optional value.
pub fn read_losses(path: &Path) -> Result<Vec<(u64, Vec<Option<f64>>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let step = rec[0]
            .parse()
            .map_err(|_| AppError::Usage(format!("{}: bad step `{}`", path.display(), &rec[0])))?;
        out.push((step, rec.iter().skip(1).map(|s| s.parse().ok()).collect()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lists_all_terms() {
        let h = loss_header();
        assert_eq!(h.len(), 1 + 6 + 4);
        assert_eq!(h[0], "step");
        assert_eq!(&h[7..], &LOSS_COLUMNS_TAIL);
    }

    #[test]
    fn reduced_objective_leaves_cells_empty() {
        let l = LossBreakdown {
            d_total: 0.5,
            d_terms: DTerm::REDUCED.iter().map(|&t| (t, 0.5)).collect(),
            g_ab_adv: 1.0,
            g_ab_rec: 0.1,
            g_ba_adv: 1.0,
            g_ba_rec: 0.1,
        };
        let row = loss_row(3, &l);
        assert_eq!(row.iter().skip(1).take(6).filter(|c| c.is_empty()).count(), 2);
    }

    #[test]
    fn latest_checkpoint_by_step() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunPaths::new(dir.path());
        assert!(run.latest_checkpoint().unwrap().is_none());
        fs::create_dir_all(run.checkpoints()).unwrap();
        for s in [50, 100, 9] {
            fs::write(run.checkpoint(s), b"x").unwrap();
        }
        assert_eq!(run.latest_checkpoint().unwrap().unwrap(), run.checkpoint(100));
    }
}
