//! Variant and architecture comparisons: one training run per column and
//! seed, each evaluated on the test split, merged into a comparison table.
//!
//! Rows are translation directions, columns are variants (or generator
//! architectures), cells are mean ± std across seeds. The original
//! horse/zebra numbers are carried as reference rows for context.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use transfig_core::metrics::EvalConfig;
use transfig_core::{make_variant, AblationVariant, Arch, GeneratorConfig, GeneratorRole, ImageSet, MetricReport, TrainConfig};

use crate::error::{AppError, Result};
use crate::evaluate::{self, TestSets};
use crate::run::{self, FitOptions, RunPaths};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Variants,
    Architectures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "FID")]
    Fid,
    /// Raw KID, as printed in the comparison tables.
    #[serde(rename = "KID")]
    Kid,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Fid => "FID",
            Metric::Kid => "KID",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "FID" => Some(Metric::Fid),
            "KID" => Some(Metric::Kid),
            _ => None,
        }
    }
}

/// `n == 0` marks a cell whose runs all failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl Cell {
    pub fn failed() -> Self {
        Self {
            mean: None,
            std: None,
            n: 0,
        }
    }

    pub fn reference(mean: f64, std: f64) -> Self {
        Self {
            mean: Some(mean),
            std: Some(std),
            n: 1,
        }
    }

    /// Mean and population std of `values`.
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::failed();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean: Some(mean),
            std: Some(var.sqrt()),
            n: values.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.n > 0 && self.mean.is_some_and(f64::is_finite) && self.std.is_some_and(f64::is_finite)
    }

    fn display(&self, precision: usize) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.precision$} ± {s:.precision$}"),
            _ => "failed".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Measured,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub section: Section,
    pub metric: Metric,
    pub row: String,
    pub column: String,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kind: ReportKind,
    pub columns: Vec<String>,
    pub entries: Vec<Entry>,
}

pub const CSV_HEADER: [&str; 8] = ["kind", "section", "metric", "row", "column", "mean", "std", "n"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComparisonReport {
    pub fn get(&self, section: Section, metric: Metric, row: &str, column: &str) -> Option<&Cell> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.metric == metric && e.row == row && e.column == column)
            .map(|e| &e.cell)
    }

    pub fn measured(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.section == Section::Measured)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        let kind = match self.kind {
            ReportKind::Variants => "variants",
            ReportKind::Architectures => "architectures",
        };
        for e in &self.entries {
            let section = match e.section {
                Section::Measured => "measured",
                Section::Reference => "reference",
            };
            w.write_record([
                kind.to_string(),
                section.to_string(),
                e.metric.name().to_string(),
                e.row.clone(),
                e.column.clone(),
                opt(e.cell.mean),
                opt(e.cell.std),
                e.cell.n.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| AppError::Usage(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses [`Self::to_csv`] output. Column order is order of first appearance.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| AppError::Usage(format!("bad comparison report: {m}"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut kind = None;
        let mut columns: Vec<String> = Vec::new();
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let k = match &rec[0] {
                "variants" => ReportKind::Variants,
                "architectures" => ReportKind::Architectures,
                other => return Err(bad(format!("kind `{other}`"))),
            };
            if kind.replace(k).is_some_and(|prev| prev != k) {
                return Err(bad("mixed report kinds".into()));
            }
            let section = match &rec[1] {
                "measured" => Section::Measured,
                "reference" => Section::Reference,
                other => return Err(bad(format!("section `{other}`"))),
            };
            let metric = Metric::parse(&rec[2]).ok_or_else(|| bad(format!("metric `{}`", &rec[2])))?;
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(format!("number `{s}`")))
                }
            };
            let column = rec[4].to_string();
            if section == Section::Measured && !columns.contains(&column) {
                columns.push(column.clone());
            }
            entries.push(Entry {
                section,
                metric,
                row: rec[3].to_string(),
                column,
                cell: Cell {
                    mean: num(&rec[5])?,
                    std: num(&rec[6])?,
                    n: rec[7].parse().map_err(|_| bad(format!("count `{}`", &rec[7])))?,
                },
            });
        }
        Ok(Self {
            kind: kind.ok_or_else(|| bad("empty report".into()))?,
            columns,
            entries,
        })
    }

    /// One block per metric: rows are directions, then reference rows.
    pub fn format_table(&self) -> String {
        let width = 24;
        let mut s = String::new();
        for metric in [Metric::Fid, Metric::Kid] {
            let _ = write!(s, "{:<16}", metric.name());
            for c in &self.columns {
                let _ = write!(s, "{c:>width$}");
            }
            s.push('\n');
            let mut rows: Vec<(Section, &str)> = Vec::new();
            for e in self.entries.iter().filter(|e| e.metric == metric) {
                if !rows.contains(&(e.section, e.row.as_str())) {
                    rows.push((e.section, e.row.as_str()));
                }
            }
            for (section, row) in rows {
                let label = match section {
                    Section::Measured => row.to_string(),
                    Section::Reference => format!("{row} (ref)"),
                };
                let _ = write!(s, "{label:<16}");
                for c in &self.columns {
                    let text = self
                        .get(section, metric, row, c)
                        .map(|cell| cell.display(if metric == Metric::Kid { 4 } else { 3 }))
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(s, "{text:>width$}");
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s.push_str("ref rows: published horse/zebra results, Horse = B->A outputs, Zebra = A->B outputs.\n");
        s
    }
}

type RefRow = (&'static str, [(f64, f64); 5]);

const VARIANT_FID_REF: [RefRow; 2] = [
    ("Horse", [(207.93, 6.26), (218.74, 4.69), (216.10, 7.659), (221.04, 5.005), (224.02, 6.056)]),
    ("Zebra", [(92.91, 6.58), (100.90, 7.495), (136.63, 10.444), (139.77, 10.643), (119.39, 7.025)]),
];
const VARIANT_KID_REF: [RefRow; 2] = [
    ("Horse", [(0.065, 0.003), (0.084, 0.002), (0.088, 0.002), (0.085, 0.002), (0.107, 0.002)]),
    ("Zebra", [(0.036, 0.002), (0.047, 0.003), (0.063, 0.003), (0.067, 0.003), (0.050, 0.002)]),
];
/// Columns resnet, unet.
const ARCH_FID_REF: [(&str, [(f64, f64); 2]); 2] = [
    ("Horse", [(210.37, 5.10), (211.76, 3.65)]),
    ("Zebra", [(97.47, 7.85), (119.99, 14.01)]),
];
const ARCH_KID_REF: [(&str, [(f64, f64); 2]); 2] = [
    ("Horse", [(0.058, 0.002), (0.063, 0.002)]),
    ("Zebra", [(0.030, 0.002), (0.046, 0.003)]),
];

fn reference_entries(kind: ReportKind, columns: &[String]) -> Vec<Entry> {
    let mut out = Vec::new();
    let mut add = |metric, row: &str, cells: &[(f64, f64)]| {
        for (c, &(m, s)) in columns.iter().zip(cells) {
            out.push(Entry {
                section: Section::Reference,
                metric,
                row: row.to_string(),
                column: c.clone(),
                cell: Cell::reference(m, s),
            });
        }
    };
    match kind {
        ReportKind::Variants => {
            for (row, cells) in VARIANT_FID_REF {
                add(Metric::Fid, row, &cells);
            }
            for (row, cells) in VARIANT_KID_REF {
                add(Metric::Kid, row, &cells);
            }
        }
        ReportKind::Architectures => {
            for (row, cells) in ARCH_FID_REF {
                add(Metric::Fid, row, &cells);
            }
            for (row, cells) in ARCH_KID_REF {
                add(Metric::Kid, row, &cells);
            }
        }
    }
    out
}

/// Training and test data shared by every run.
#[derive(Clone)]
pub struct SuiteData {
    pub train_a: Arc<ImageSet<f32>>,
    pub train_b: Arc<ImageSet<f32>>,
    pub tests: Arc<TestSets>,
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

/// Outcome of one (column, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub column: String,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
    /// Discriminator terms per step, from the first logged step.
    pub d_terms: usize,
    /// Share of generator inputs drawn from the pools' buffers.
    pub generated_fraction: f64,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub report: ComparisonReport,
    pub runs: Vec<RunRecord>,
}

struct Job {
    column: String,
    seed: u64,
    cfg: TrainConfig,
}

fn run_one(job: &Job, data: &SuiteData, opts: &SuiteOptions) -> RunRecord {
    let run_dir = opts.out_dir.join("runs").join(format!("{}_seed{}", job.column, job.seed));
    let mut record = RunRecord {
        column: job.column.clone(),
        seed: job.seed,
        run_dir: run_dir.clone(),
        metrics: None,
        error: None,
        d_terms: 0,
        generated_fraction: 0.0,
        steps: 0,
    };
    let result = (|| -> Result<()> {
        let outcome = run::fit(
            &job.cfg,
            data.train_a.clone(),
            data.train_b.clone(),
            &RunPaths::new(&run_dir),
            &FitOptions::default(),
        )?;
        record.steps = outcome.steps;
        record.d_terms = outcome.losses.first().map_or(0, |l| l.d_terms.len());
        let snap = crate::checkpoint::load(&outcome.final_checkpoint)?;
        record.generated_fraction = snap.provenance.generated_fraction();
        let label = outcome.final_checkpoint.display().to_string();
        let report = evaluate::evaluate_snapshot(&snap, &data.tests, &transfig_core::ConvEmbedder::hermetic(), &opts.eval, &label)?;
        evaluate::write_report(&report, &run_dir)?;
        record.metrics = Some(report);
        Ok(())
    })();
    if let Err(e) = result {
        log::error!("{} seed {} failed: {e}", job.column, job.seed);
        record.error = Some(e.to_string());
    }
    record
}

fn run_jobs(jobs: Vec<Job>, data: &SuiteData, opts: &SuiteOptions) -> Vec<RunRecord> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = opts.jobs.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                log::info!("run {}/{}: {} seed {}", i + 1, jobs.len(), job.column, job.seed);
                let rec = run_one(job, data, opts);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(rec);
            });
        }
    });
    results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn row_name(role: GeneratorRole) -> &'static str {
    evaluate::direction_label(role)
}

fn merge(kind: ReportKind, columns: Vec<String>, runs: &[RunRecord]) -> ComparisonReport {
    let mut entries = Vec::new();
    for metric in [Metric::Fid, Metric::Kid] {
        for role in [GeneratorRole::AB, GeneratorRole::BA] {
            for c in &columns {
                let values: Vec<f64> = runs
                    .iter()
                    .filter(|r| &r.column == c)
                    .filter_map(|r| r.metrics.as_ref()?.entry(role).copied())
                    .map(|m| match metric {
                        Metric::Fid => m.fid_mean,
                        Metric::Kid => m.kid_mean_x100 / 100.0,
                    })
                    .collect();
                entries.push(Entry {
                    section: Section::Measured,
                    metric,
                    row: row_name(role).to_string(),
                    column: c.clone(),
                    cell: Cell::from_values(&values),
                });
            }
        }
    }
    entries.extend(reference_entries(kind, &columns));
    ComparisonReport { kind, columns, entries }
}

fn write_outputs(outcome: &SuiteOutcome, out_dir: &Path) -> Result<()> {
    let fs = crate::fsutil::write_atomic;
    fs(&out_dir.join("report.csv"), outcome.report.to_csv()?.as_bytes())?;
    fs(&out_dir.join("report.txt"), outcome.report.format_table().as_bytes())?;
    fs(&out_dir.join("runs.json"), &serde_json::to_vec_pretty(&outcome.runs)?)?;
    Ok(())
}

fn run_suite(kind: ReportKind, configs: Vec<(String, TrainConfig)>, data: &SuiteData, opts: &SuiteOptions) -> Result<SuiteOutcome> {
    if opts.seeds.is_empty() {
        return Err(AppError::Usage("at least one seed is required".into()));
    }
    let columns: Vec<String> = configs.iter().map(|(c, _)| c.clone()).collect();
    let mut jobs = Vec::new();
    for &seed in &opts.seeds {
        for (column, cfg) in &configs {
            jobs.push(Job {
                column: column.clone(),
                seed,
                cfg: TrainConfig { seed, ..cfg.clone() },
            });
        }
    }
    let runs = run_jobs(jobs, data, opts);
    let outcome = SuiteOutcome {
        report: merge(kind, columns, &runs),
        runs,
    };
    write_outputs(&outcome, &opts.out_dir)?;
    Ok(outcome)
}

/// All five variants per seed, identical seeds across variants.
pub fn run_ablation_suite(base: &TrainConfig, data: &SuiteData, opts: &SuiteOptions) -> Result<SuiteOutcome> {
    base.validate()?;
    let configs = AblationVariant::ALL
        .iter()
        .map(|&v| (v.name().to_string(), make_variant(v, base)))
        .collect();
    run_suite(ReportKind::Variants, configs, data, opts)
}

/// `base` with its generator architecture swapped, everything else kept.
pub fn with_arch(base: &TrainConfig, arch: Arch) -> TrainConfig {
    let generator = if base.generator.arch == arch {
        base.generator
    } else {
        GeneratorConfig { arch, ..base.generator }
    };
    TrainConfig { generator, ..base.clone() }
}

/// ResNet against UNet generators.
pub fn run_arch_comparison(base: &TrainConfig, data: &SuiteData, opts: &SuiteOptions) -> Result<SuiteOutcome> {
    let configs = vec![
        ("resnet".to_string(), with_arch(base, Arch::Resnet)),
        ("unet".to_string(), with_arch(base, Arch::Unet)),
    ];
    for (_, c) in &configs {
        c.validate()?;
    }
    run_suite(ReportKind::Architectures, configs, data, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use transfig_core::metrics::DirectionMetrics;

    fn record(column: &str, seed: u64, fid: f64) -> RunRecord {
        let m = |direction| DirectionMetrics {
            direction,
            fid_mean: fid,
            fid_std: 0.0,
            kid_mean_x100: fid / 10.0,
            kid_std_x100: 0.0,
        };
        RunRecord {
            column: column.into(),
            seed,
            run_dir: PathBuf::new(),
            metrics: Some(MetricReport {
                embedder_id: "e".into(),
                checkpoint: "c".into(),
                entries: vec![m(GeneratorRole::AB), m(GeneratorRole::BA)],
            }),
            error: None,
            d_terms: 6,
            generated_fraction: 0.5,
            steps: 1,
        }
    }

    fn sample_report() -> ComparisonReport {
        let columns: Vec<String> = AblationVariant::ALL.iter().map(|v| v.name().to_string()).collect();
        let mut runs = vec![record("baseline", 0, 1.0), record("baseline", 1, 3.0)];
        runs.push(RunRecord {
            metrics: None,
            error: Some("boom".into()),
            ..record("no_pool", 0, 0.0)
        });
        merge(ReportKind::Variants, columns, &runs)
    }

    #[test]
    fn cells_are_mean_and_population_std() {
        let r = sample_report();
        let c = r.get(Section::Measured, Metric::Fid, "A->B", "baseline").unwrap();
        assert_eq!((c.mean, c.std, c.n), (Some(2.0), Some(1.0), 2));
        let k = r.get(Section::Measured, Metric::Kid, "B->A", "baseline").unwrap();
        assert!((k.mean.unwrap() - 0.002).abs() < 1e-15);
        assert_eq!(r.get(Section::Measured, Metric::Fid, "A->B", "no_pool").unwrap().n, 0);
    }

    #[test]
    fn reference_rows_follow_columns() {
        let r = sample_report();
        let c = r.get(Section::Reference, Metric::Fid, "Zebra", "no_pool").unwrap();
        assert_eq!((c.mean, c.std), (Some(136.63), Some(10.444)));
        let c = r.get(Section::Reference, Metric::Fid, "Zebra", "baseline").unwrap();
        assert_eq!((c.mean, c.std), (Some(92.91), Some(6.58)));
        assert_eq!(r.get(Section::Reference, Metric::Kid, "Horse", "no_stage2").unwrap().mean, Some(0.107));
    }

    #[test]
    fn csv_round_trip() {
        let r = sample_report();
        assert_eq!(ComparisonReport::from_csv(&r.to_csv().unwrap()).unwrap(), r);
        let table = r.format_table();
        assert!(table.contains("2.000 ± 1.000"));
        assert!(table.contains("failed"));
        assert!(table.contains("Zebra (ref)"));
    }

    #[test]
    fn arch_swap_changes_only_the_generator_arch() {
        let base = TrainConfig::desk(32);
        let unet = with_arch(&base, Arch::Unet);
        assert_eq!(unet.generator.arch, Arch::Unet);
        let mut flat_a = crate::config::flatten(&base).unwrap();
        let flat_b = crate::config::flatten(&unet).unwrap();
        let diff: Vec<_> = flat_b.iter().filter(|(k, v)| flat_a.remove(*k).as_ref() != Some(*v)).map(|(k, _)| k.clone()).collect();
        assert_eq!(diff, vec!["generator.arch".to_string()]);
    }
}
