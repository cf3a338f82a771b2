//! Checkpoint evaluation and embedder weight files.
//!
//! Embedder weight file: JSON
//! `{"id": str, "input_size": n, "tensors": [{"name", "shape", "data"}]}` with
//! tensors named `conv{i}.weight` / `conv{i}.bias`. Without a file the
//! built-in hermetic embedder is used.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use transfig_core::metrics::{evaluate_direction, EvalConfig};
use transfig_core::synth::Split;
use transfig_core::{ConvEmbedder, GeneratorRole, ImageBatch, MetricReport, Tensor, TrainSnapshot};

use crate::data;
use crate::error::{io_at, AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderFile {
    pub id: String,
    pub input_size: usize,
    pub tensors: Vec<WeightTensor>,
}

impl EmbedderFile {
    pub fn from_embedder(id: &str, input_size: usize, e: &ConvEmbedder) -> Self {
        Self {
            id: id.to_string(),
            input_size,
            tensors: e
                .params()
                .iter()
                .map(|(n, t)| WeightTensor {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }
}

pub fn load_embedder(path: Option<&Path>) -> Result<ConvEmbedder> {
    let Some(path) = path else {
        return Ok(ConvEmbedder::hermetic());
    };
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let file: EmbedderFile = serde_json::from_str(&text)
        .map_err(|e| AppError::Usage(format!("{}: bad embedder file: {e}", path.display())))?;
    let weights = file
        .tensors
        .into_iter()
        .map(|t| Ok((t.name, Tensor::from_vec(&t.shape, t.data)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvEmbedder::from_weights(file.id, file.input_size, &weights)?)
}

/// Test images of both domains.
pub struct TestSets {
    pub a: ImageBatch<f32>,
    pub b: ImageBatch<f32>,
}

impl TestSets {
    /// Loads `<root>/testA` and `<root>/testB` at `size`.
    pub fn load(root: &Path, size: usize) -> Result<Self> {
        let (a, b) = data::load_split(root, Split::Test)?;
        Ok(Self {
            a: a.to_batch(size)?,
            b: b.to_batch(size)?,
        })
    }
}

/// Scores both directions of a trained model.
pub fn evaluate_snapshot(
    snap: &TrainSnapshot<f32>,
    tests: &TestSets,
    embedder: &ConvEmbedder,
    cfg: &EvalConfig,
    label: &str,
) -> Result<MetricReport> {
    let ab = evaluate_direction(&snap.g_ab, &tests.a, &tests.b, embedder, cfg)?;
    let ba = evaluate_direction(&snap.g_ba, &tests.b, &tests.a, embedder, cfg)?;
    Ok(MetricReport {
        embedder_id: transfig_core::Embedder::id(embedder).to_string(),
        checkpoint: label.to_string(),
        entries: vec![ab, ba],
    })
}

pub fn direction_label(role: GeneratorRole) -> &'static str {
    match role {
        GeneratorRole::AB => "A->B",
        GeneratorRole::BA => "B->A",
    }
}

/// `report.csv` and `report.txt` in `out_dir`.
pub fn write_report(report: &MetricReport, out_dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["direction", "fid_mean", "fid_std", "kid_x100_mean", "kid_x100_std", "embedder", "checkpoint"])?;
    for e in &report.entries {
        w.write_record([
            direction_label(e.direction).to_string(),
            e.fid_mean.to_string(),
            e.fid_std.to_string(),
            e.kid_mean_x100.to_string(),
            e.kid_std_x100.to_string(),
            report.embedder_id.clone(),
            report.checkpoint.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Usage(e.to_string()))?;
    crate::fsutil::write_atomic(&out_dir.join("report.csv"), &bytes)?;
    crate::fsutil::write_atomic(&out_dir.join("report.txt"), format_report(report).as_bytes())
}

pub fn format_report(report: &MetricReport) -> String {
    let mut s = format!("checkpoint: {}\nembedder:   {}\n\n", report.checkpoint, report.embedder_id);
    s += &format!("{:<10} {:>22} {:>22}\n", "direction", "FID", "KID x100");
    for e in &report.entries {
        s += &format!(
            "{:<10} {:>22} {:>22}\n",
            direction_label(e.direction),
            format!("{:.4} ± {:.4}", e.fid_mean, e.fid_std),
            format!("{:.4} ± {:.4}", e.kid_mean_x100, e.kid_std_x100),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use transfig_core::metrics::{DirectionMetrics, HERMETIC_INPUT};
    use transfig_core::Embedder;

    #[test]
    fn embedder_file_round_trip() {
        let e = ConvEmbedder::hermetic();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        let file = EmbedderFile::from_embedder("copy", HERMETIC_INPUT, &e);
        fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let back = load_embedder(Some(&path)).unwrap();
        assert_eq!(back.id(), "copy");
        assert_eq!(back.dim(), e.dim());
        let x = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i % 17) as f32) / 17.0 - 0.5);
        assert_eq!(back.embed_raw(&x).unwrap(), e.embed_raw(&x).unwrap());
    }

    #[test]
    fn report_files() {
        let report = MetricReport {
            embedder_id: "hermetic-conv32".into(),
            checkpoint: "x.ckpt".into(),
            entries: vec![DirectionMetrics {
                direction: GeneratorRole::AB,
                fid_mean: 1.5,
                fid_std: 0.25,
                kid_mean_x100: 0.5,
                kid_std_x100: 0.125,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        write_report(&report, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("A->B,1.5,0.25,0.5,0.125"));
        assert!(fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("1.5000 ± 0.2500"));
    }
}
