//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p transfig --test acceptance` runs everything. Criterion
//! numbers given as arguments (`-- 1 4 8`) select a subset.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use transfig::ablation::{self, SuiteData, SuiteOptions};
use transfig::evaluate::{self, TestSets};
use transfig::run::{self, FitOptions, RunPaths};
use transfig::{checkpoint, data};
use transfig_core::metrics::{self, embed, fid_from_moments, EvalConfig, FeatureSet, Moments};
use transfig_core::nn::{gradients_for, ParamStore, Tape};
use transfig_core::objectives::{discriminator_loss, generator_loss, reconstruction_loss};
use transfig_core::pool::{route_push, Mixing};
use transfig_core::synth::{self, background_change, color_progress, masked_mean, unit_color, Split};
use transfig_core::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-formula BCE of one logit.
fn bce_oracle(x: f64, t: f64) -> f64 {
    -(t * sigmoid(x).ln() + (1.0 - t) * (1.0 - sigmoid(x)).ln())
}

fn random_batch(domain: DomainTag, n: usize, size: usize, seed: u64) -> ImageBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::from_fn(&[n, 3, size, size], |_| rng.random_range(-1.0..1.0));
    ImageBatch::new(t, domain, Provenance::Dataset).unwrap()
}

fn criterion_1() -> Outcome {
    let expected = [
        ("b|a'", 1.0),
        ("a|a'", 0.0),
        ("G_AB(a')|a'", 0.0),
        ("a|b'", 0.0),
        ("b|b'", 1.0),
        ("G_BA(b')|b'", 1.0),
    ];
    let got: Vec<(&str, f64)> = DTerm::FULL.iter().map(|t| (t.name(), t.target())).collect();
    ensure(got == expected, format!("term table {got:?}"))?;

    let d = build_discriminator::<f64>(&DiscriminatorConfig::miniature(), 21).map_err(err)?;
    let g_ab = build_generator::<f64>(&GeneratorConfig::miniature(Arch::Resnet), GeneratorRole::AB, 22).map_err(err)?;
    let g_ba = build_generator::<f64>(&GeneratorConfig::miniature(Arch::Resnet), GeneratorRole::BA, 23).map_err(err)?;
    let ap = random_batch(DomainTag::A, 2, 32, 1);
    let bp = random_batch(DomainTag::B, 2, 32, 2);
    let a = random_batch(DomainTag::A, 2, 32, 3);
    let b = random_batch(DomainTag::B, 2, 32, 4);
    let out = discriminator_loss(&d, &g_ab, &g_ba, &ap, &bp, &a, &b, &DTerm::FULL).map_err(err)?;

    // Each pair scored on its own, outside the stacked batch.
    let fake_b = g_ab.translate(&ap).map_err(err)?;
    let fake_a = g_ba.translate(&bp).map_err(err)?;
    let pairs = [(&b, &ap), (&a, &ap), (&fake_b, &ap), (&a, &bp), (&b, &bp), (&fake_a, &bp)];
    let mut worst = 0.0f64;
    let mut total = 0.0;
    for (k, ((cand, cond), (_, target))) in pairs.iter().zip(expected).enumerate() {
        let logits = d.discriminate(cand, cond).map_err(err)?;
        let v: f64 = logits.data().iter().map(|&x| bce_oracle(x, target)).sum::<f64>() / logits.len() as f64;
        worst = worst.max((v - out.terms[k].1).abs());
        total += v / 6.0;
    }
    worst = worst.max((total - out.total).abs());
    ensure(worst < 1e-6, format!("max deviation {worst:e}"))?;
    Ok(format!("6 terms, max |loss - oracle| = {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

const D_EPS: f64 = 1e-7;
const G_EPS: f64 = 1e-6;
const GC_SAMPLES: usize = 120;

fn sample_coords(store: &ParamStore<f64>, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = rng.random_range(0..store.len());
            (t, rng.random_range(0..store.get(t).len()))
        })
        .collect()
}

/// Worst relative error over `coords`, central differences with step `eps`.
fn gradcheck(
    store: &mut ParamStore<f64>,
    analytic: &[Tensor<f64>],
    coords: &[(usize, usize)],
    eps: f64,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for &(t, i) in coords {
        let orig = store.get(t).data()[i];
        store.tensors_mut()[t].data_mut()[i] = orig + eps;
        let up = loss(store);
        store.tensors_mut()[t].data_mut()[i] = orig - eps;
        let down = loss(store);
        store.tensors_mut()[t].data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[t].data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7));
    }
    worst
}

fn criterion_2() -> Outcome {
    let mut report = Vec::new();
    let mut d = build_discriminator::<f64>(&DiscriminatorConfig::miniature(), 1).map_err(err)?;
    let g_cfg = GeneratorConfig::miniature(Arch::Resnet);
    let g_ab = build_generator::<f64>(&g_cfg, GeneratorRole::AB, 2).map_err(err)?;
    let g_ba = build_generator::<f64>(&g_cfg, GeneratorRole::BA, 3).map_err(err)?;
    let (ap, bp) = (random_batch(DomainTag::A, 2, 32, 4), random_batch(DomainTag::B, 2, 32, 5));
    let (a, b) = (random_batch(DomainTag::A, 2, 32, 6), random_batch(DomainTag::B, 2, 32, 7));
    let terms = &DTerm::FULL;
    let mut out = discriminator_loss(&d, &g_ab, &g_ba, &ap, &bp, &a, &b, terms).map_err(err)?;
    let analytic = gradients_for(d.params(), &mut out.grads);
    let coords = sample_coords(d.params(), GC_SAMPLES, 8);
    let mut store = d.params().clone();
    let worst = gradcheck(&mut store, &analytic, &coords, D_EPS, |p| {
        d.params_mut().load_from(p).unwrap();
        discriminator_loss(&d, &g_ab, &g_ba, &ap, &bp, &a, &b, terms).unwrap().total
    });
    ensure(worst < 1e-3, format!("discriminator worst relative error {worst:e}"))?;
    report.push(format!("D {worst:.1e}"));

    for arch in [Arch::Resnet, Arch::Unet] {
        let d = build_discriminator::<f64>(&DiscriminatorConfig::miniature(), 11).map_err(err)?;
        let mut g = build_generator::<f64>(&GeneratorConfig::miniature(arch), GeneratorRole::BA, 12).map_err(err)?;
        let input = random_batch(DomainTag::B, 2, 32, 13);
        let w = LossWeights::default();
        let analytic = generator_loss(&g, &d, &input, &w, None).map_err(err)?.grads;
        let coords = sample_coords(g.params(), GC_SAMPLES, 14);
        let mut store = g.params().clone();
        let worst = gradcheck(&mut store, &analytic, &coords, G_EPS, |p| {
            g.params_mut().load_from(p).unwrap();
            generator_loss(&g, &d, &input, &w, None).unwrap().values.total
        });
        ensure(worst < 1e-3, format!("{arch:?} generator worst relative error {worst:e}"))?;
        report.push(format!("G {arch:?} {worst:.1e}"));
    }
    Ok(format!("{GC_SAMPLES} params each, worst rel err: {}", report.join(", ")))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let d = build_discriminator::<f64>(&DiscriminatorConfig::miniature(), 31).map_err(err)?;
    let g_cfg = GeneratorConfig::miniature(Arch::Resnet);
    let g_ab = build_generator::<f64>(&g_cfg, GeneratorRole::AB, 32).map_err(err)?;
    let g_ba = build_generator::<f64>(&g_cfg, GeneratorRole::BA, 33).map_err(err)?;
    let (ap, bp) = (random_batch(DomainTag::A, 2, 32, 34), random_batch(DomainTag::B, 2, 32, 35));
    let (a, b) = (random_batch(DomainTag::A, 2, 32, 36), random_batch(DomainTag::B, 2, 32, 37));
    let mut out = discriminator_loss(&d, &g_ab, &g_ba, &ap, &bp, &a, &b, &DTerm::FULL).map_err(err)?;
    for g in [&g_ab, &g_ba] {
        let grads = gradients_for(g.params(), &mut out.grads);
        ensure(
            grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)),
            "generator gradient under discriminator_loss is non-zero",
        )?;
    }
    let d_grads = gradients_for(d.params(), &mut out.grads);
    ensure(d_grads.iter().any(|t| t.data().iter().any(|&v| v != 0.0)), "discriminator received no gradient")?;

    // Reconstruction only: D is on the tape with trainable parameters, but
    // only the L1 seed is propagated.
    let mut tape = Tape::new();
    let x = tape.input(ap.data.clone(), false);
    let y = g_ab.forward(&mut tape, x, false, None).map_err(err)?;
    let _logits = d.forward(&mut tape, y, x, false).map_err(err)?;
    let (_, g_rec) = reconstruction_loss(tape.value(y), tape.value(x)).map_err(err)?;
    let seed = Tensor::from_vec(tape.shape(y), g_rec).map_err(err)?;
    let mut grads = tape.backward(&[(y, &seed)]);
    let g_grads = gradients_for(g_ab.params(), &mut grads);
    let d_grads = gradients_for(d.params(), &mut grads);
    ensure(
        d_grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)),
        "discriminator gradient under reconstruction_loss is non-zero",
    )?;
    ensure(g_grads.iter().any(|t| t.data().iter().any(|&v| v != 0.0)), "generator received no L1 gradient")?;
    Ok("G grads under D loss and D grads under L1 are exactly zero".into())
}

// ---------------------------------------------------------------- 4

fn gaussian_features(n: usize, mean: &[f64], std: &[f64], seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = mean.len();
    let dists: Vec<Normal<f64>> = (0..d).map(|k| Normal::new(mean[k], std[k]).unwrap()).collect();
    let mut f = Vec::with_capacity(n * d);
    for _ in 0..n {
        for dist in &dists {
            f.push(dist.sample(&mut rng));
        }
    }
    FeatureSet::new(n, d, f, "gaussian").unwrap()
}

/// Diagonal covariances commute, so the trace term is elementwise.
fn diagonal_fid(m1: &[f64], v1: &[f64], m2: &[f64], v2: &[f64]) -> f64 {
    let mean: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    let trace: f64 = v1.iter().zip(v2).map(|(a, b)| a + b - 2.0 * (a * b).sqrt()).sum();
    mean + trace
}

/// Exact FID of two 2-D Gaussians. For a 2x2 matrix M with positive
/// eigenvalues, tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)).
fn fid_2d(m1: [f64; 2], c1: [[f64; 2]; 2], m2: [f64; 2], c2: [[f64; 2]; 2]) -> f64 {
    let prod = [
        [c1[0][0] * c2[0][0] + c1[0][1] * c2[1][0], c1[0][0] * c2[0][1] + c1[0][1] * c2[1][1]],
        [c1[1][0] * c2[0][0] + c1[1][1] * c2[1][0], c1[1][0] * c2[0][1] + c1[1][1] * c2[1][1]],
    ];
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let tr_sqrt = (prod[0][0] + prod[1][1] + 2.0 * (det(c1) * det(c2)).sqrt()).sqrt();
    (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2) + c1[0][0] + c1[1][1] + c2[0][0] + c2[1][1] - 2.0 * tr_sqrt
}

fn moments_2d(m: [f64; 2], c: [[f64; 2]; 2]) -> Moments {
    Moments {
        mean: DVector::from_row_slice(&m),
        cov: DMatrix::from_row_slice(2, 2, &[c[0][0], c[0][1], c[1][0], c[1][1]]),
    }
}

fn poly_kernel(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (dot / u.len() as f64 + 1.0).powi(3)
}

fn mmd_oracle(x: &FeatureSet, y: &FeatureSet) -> f64 {
    let (m, n) = (x.n(), y.n());
    let mut kxx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += poly_kernel(x.row(i), x.row(j));
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy += poly_kernel(y.row(i), y.row(j));
            }
        }
    }
    let mut kxy = 0.0;
    for i in 0..m {
        for j in 0..n {
            kxy += poly_kernel(x.row(i), y.row(j));
        }
    }
    kxx / (m * (m - 1)) as f64 + kyy / (n * (n - 1)) as f64 - 2.0 * kxy / (m * n) as f64
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    let x = gaussian_features(500, &[0.0, 1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 2.0], &[1.0, 0.5, 2.0, 1.0, 0.3, 1.5, 1.0, 0.7], 1);
    let self_fid = metrics::fid(&x, &x).map_err(err)?;
    ensure(self_fid.abs() < 1e-8, format!("fid(x, x) = {self_fid:e}"))?;
    notes.push(format!("fid(x,x)={self_fid:.1e}"));

    let (m1, c1) = ([0.5, -1.0], [[2.0, 0.5], [0.5, 1.0]]);
    let (m2, c2) = ([1.5, 0.25], [[1.0, -0.3], [-0.3, 3.0]]);
    let exact = fid_2d(m1, c1, m2, c2);
    let got = fid_from_moments(&moments_2d(m1, c1), &moments_2d(m2, c2)).map_err(err)?;
    ensure((got - exact).abs() < 1e-6, format!("2-D analytic: {got} vs {exact}"))?;
    let (dm1, dv1, dm2, dv2) = ([0.0, 1.0, 2.0, -1.0], [1.0, 4.0, 0.25, 2.0], [1.0, 0.0, 2.5, -1.0], [2.0, 1.0, 1.0, 0.5]);
    let diag = |m: &[f64], v: &[f64]| Moments {
        mean: DVector::from_row_slice(m),
        cov: DMatrix::from_diagonal(&DVector::from_row_slice(v)),
    };
    let exact_diag = diagonal_fid(&dm1, &dv1, &dm2, &dv2);
    let got_diag = fid_from_moments(&diag(&dm1, &dv1), &diag(&dm2, &dv2)).map_err(err)?;
    ensure((got_diag - exact_diag).abs() < 1e-6, format!("4-D analytic: {got_diag} vs {exact_diag}"))?;
    notes.push(format!("analytic |err|={:.1e}", (got - exact).abs().max((got_diag - exact_diag).abs())));

    let sd = |v: &[f64; 4]| v.map(f64::sqrt);
    let xs = gaussian_features(50_000, &dm1, &sd(&dv1), 2);
    let ys = gaussian_features(50_000, &dm2, &sd(&dv2), 3);
    let sampled = metrics::fid(&xs, &ys).map_err(err)?;
    let rel = (sampled - exact_diag).abs() / exact_diag;
    ensure(rel < 0.05, format!("sampled 4-D FID {sampled} vs {exact_diag} ({:.1}%)", 100.0 * rel))?;
    notes.push(format!("sampled {:.2}% off", 100.0 * rel));

    let kx = gaussian_features(60, &[0.0; 6], &[1.0; 6], 4);
    let ky = gaussian_features(60, &[0.3; 6], &[1.2; 6], 5);
    let one = metrics::kid(&kx, &ky, 60, 1, 9).map_err(err)?;
    let oracle = mmd_oracle(&kx, &ky);
    ensure((one.mean - oracle).abs() < 1e-10, format!("kid {} vs oracle {oracle}", one.mean))?;
    notes.push(format!("kid-oracle |err|={:.1e}", (one.mean - oracle).abs()));

    let sx = gaussian_features(1000, &[0.0; 8], &[1.0; 8], 6);
    let sy = gaussian_features(1000, &[0.0; 8], &[1.0; 8], 7);
    let same = metrics::kid(&sx, &sy, 500, metrics::KID_ITERATIONS, 10).map_err(err)?;
    ensure(same.mean.abs() < 0.01, format!("same-distribution kid {}", same.mean))?;
    notes.push(format!("same-dist kid={:.1e}", same.mean));
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------- 5

#[derive(Debug, Clone)]
enum PoolOp {
    /// Generator output of `role`, `n` items, routed under `stage`.
    Push { role: GeneratorRole, stage: TrainingStage, n: usize },
    Sample { task: GeneratorRole, n: usize },
}

fn pool_op() -> impl Strategy<Value = PoolOp> {
    let role = prop_oneof![Just(GeneratorRole::AB), Just(GeneratorRole::BA)];
    let stage = prop_oneof![Just(TrainingStage::Stage1), Just(TrainingStage::Stage2)];
    prop_oneof![
        (role.clone(), stage, 1usize..6).prop_map(|(role, stage, n)| PoolOp::Push { role, stage, n }),
        (role, 1usize..6).prop_map(|(task, n)| PoolOp::Sample { task, n }),
    ]
}

const POOL_IMG: [usize; 3] = [3, 4, 4];

fn small_set(domain: DomainTag) -> Arc<ImageSet<f32>> {
    // Dataset values are all below 0; generated values are positive markers.
    let t = Tensor::from_fn(&[6, 3, 4, 4], |i| -1.0 + (i / 48) as f32 * 0.1);
    Arc::new(ImageSet::new(domain, t).unwrap())
}

/// Generated batch whose every value encodes (producer, push counter).
fn marked(role: GeneratorRole, n: usize, counter: &mut u32) -> (ImageBatch<f32>, Vec<f32>) {
    let mut marks = Vec::new();
    let mut data = Vec::new();
    for _ in 0..n {
        *counter += 1;
        let m = (*counter * 2 + if role == GeneratorRole::AB { 0 } else { 1 }) as f32;
        marks.push(m);
        data.extend(std::iter::repeat_n(m, POOL_IMG.iter().product()));
    }
    let t = Tensor::from_vec(&[n, 3, 4, 4], data).unwrap();
    (ImageBatch::new(t, role.target(), Provenance::Generated).unwrap(), marks)
}

fn run_trace(ops: &[PoolOp], capacity: usize, seed: u64) -> Result<(), TestCaseError> {
    let cfg = PoolConfig {
        capacity,
        ..PoolConfig::default()
    };
    let mut ab = init_pool(GeneratorRole::AB, small_set(DomainTag::A), cfg, None).unwrap();
    let mut ba = init_pool(GeneratorRole::BA, small_set(DomainTag::B), cfg, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counter = 0;
    for op in ops {
        match *op {
            PoolOp::Push { role, stage, n } => {
                let (batch, marks) = marked(role, n, &mut counter);
                route_push(&mut ab, &mut ba, role, &batch, stage).unwrap();
                let expected = match (stage, role) {
                    (TrainingStage::Stage1, GeneratorRole::AB) | (TrainingStage::Stage2, GeneratorRole::BA) => GeneratorRole::AB,
                    _ => GeneratorRole::BA,
                };
                let (dest, other) = if expected == GeneratorRole::AB { (&ab, &ba) } else { (&ba, &ab) };
                let last = *marks.last().unwrap();
                if capacity > 0 {
                    prop_assert!(dest.state().buffer.back().is_some_and(|v| v[0] == last), "routing");
                }
                prop_assert!(!other.state().buffer.iter().any(|v| marks.contains(&v[0])), "routing leak");
            }
            PoolOp::Sample { task, n } => {
                let pool = if task == GeneratorRole::AB { &mut ab } else { &mut ba };
                let batch = pool.sample(n, &mut rng).unwrap();
                prop_assert_eq!(batch.domain, task.source());
                prop_assert_eq!(batch.len(), n);
                for (i, p) in batch.provenance.iter().enumerate() {
                    let v = batch.data.item(i)[0];
                    prop_assert_eq!(*p == Provenance::Generated, v > 0.0, "provenance tag");
                }
            }
        }
        for pool in [&ab, &ba] {
            prop_assert!(pool.buffered() <= capacity, "capacity");
        }
    }
    Ok(())
}

fn criterion_5() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 10_000,
            failure_persistence: None,
            ..PropConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strat = (proptest::collection::vec(pool_op(), 1..40), 0usize..8, any::<u64>());
    runner
        .run(&strat, |(ops, cap, seed)| run_trace(&ops, cap, seed))
        .map_err(|e| format!("property failed: {e}"))?;

    let matrix: Vec<_> = [TrainingStage::Stage1, TrainingStage::Stage2]
        .iter()
        .flat_map(|&s| [GeneratorRole::AB, GeneratorRole::BA].map(|r| route_target(r, s)))
        .collect();
    let expected = [GeneratorRole::AB, GeneratorRole::BA, GeneratorRole::BA, GeneratorRole::AB];
    ensure(matrix == expected, format!("routing matrix {matrix:?}"))?;

    let cfg = PoolConfig {
        mixing: Mixing::Probabilistic,
        ..PoolConfig::default()
    };
    let mut pool = init_pool(GeneratorRole::AB, small_set(DomainTag::A), cfg, None).map_err(err)?;
    let mut c = 0;
    pool.push(&marked(GeneratorRole::BA, 10, &mut c).0).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let n = 10_000;
    let batch = pool.sample(n, &mut rng).map_err(err)?;
    let rate = batch.generated_fraction();
    ensure((rate - 0.5).abs() <= 0.02, format!("p_generated empirical rate {rate}"))?;
    Ok(format!("10000 traces, routing matrix ok, generated rate {rate:.4} at n={n}"))
}

// ---------------------------------------------------------------- shared synthetic data

const SYN_TRAIN: usize = 200;
const SYN_TEST: usize = 50;
const SYN_SIZE: usize = 32;

fn synthetic_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_per_domain: SYN_TRAIN,
        n_test: SYN_TEST,
        image_size: SYN_SIZE,
        ..SyntheticSpec::default()
    }
}

struct Synthetic {
    root: tempfile::TempDir,
    train_a: Arc<ImageSet<f32>>,
    train_b: Arc<ImageSet<f32>>,
}

fn synthetic() -> Result<Synthetic, String> {
    let root = tempfile::tempdir().map_err(err)?;
    data::make_synthetic(&synthetic_spec(), root.path()).map_err(err)?;
    let (a, b) = data::load_split(root.path(), Split::Train).map_err(err)?;
    Ok(Synthetic {
        train_a: a.to_image_set(SYN_SIZE).map_err(err)?,
        train_b: b.to_image_set(SYN_SIZE).map_err(err)?,
        root,
    })
}

// ---------------------------------------------------------------- 6

struct DirectionCheck {
    progress: f64,
    background: f64,
    fid_translated: f64,
    fid_source: f64,
}

impl DirectionCheck {
    fn passes(&self) -> bool {
        self.progress >= 0.5 && self.background <= 0.15 && self.fid_translated <= 0.7 * self.fid_source
    }

    fn describe(&self) -> String {
        format!(
            "progress {:.3}, bg {:.3}, fid {:.4} vs 0.7x{:.4}",
            self.progress, self.background, self.fid_translated, self.fid_source
        )
    }
}

fn check_direction(
    g: &Generator<f32>,
    source: &ImageBatch<f32>,
    target: &ImageBatch<f32>,
    source_masks: &[u8],
    embedder: &ConvEmbedder,
) -> Result<DirectionCheck, String> {
    let spec = synthetic_spec();
    let translated = g.translate(source).map_err(err)?;
    let observed = masked_mean(&translated, source_masks, |m| m == 1);
    let from = unit_color(spec.fg_color(source.domain));
    let to = unit_color(spec.fg_color(target.domain));
    let (ft, fs, ftg) = (
        embed(embedder, &translated).map_err(err)?,
        embed(embedder, source).map_err(err)?,
        embed(embedder, target).map_err(err)?,
    );
    Ok(DirectionCheck {
        progress: color_progress(observed, from, to),
        background: background_change(source, &translated, source_masks),
        fid_translated: metrics::fid(&ft, &ftg).map_err(err)?,
        fid_source: metrics::fid(&fs, &ftg).map_err(err)?,
    })
}

fn criterion_6() -> Outcome {
    let syn = synthetic()?;
    let root = syn.root.path();
    let (ta, tb) = data::load_split(root, Split::Test).map_err(err)?;
    let (test_a, test_b) = (ta.to_batch(SYN_SIZE).map_err(err)?, tb.to_batch(SYN_SIZE).map_err(err)?);
    let masks_a = data::load_masks(root, Split::Test, DomainTag::A, SYN_SIZE).map_err(err)?;
    let masks_b = data::load_masks(root, Split::Test, DomainTag::B, SYN_SIZE).map_err(err)?;
    ensure(test_a.len() == SYN_TEST && test_b.len() == SYN_TEST, "held-out set size")?;
    let embedder = ConvEmbedder::hermetic();
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in [0u64, 1, 2] {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::desk(SYN_SIZE)
        };
        let run_dir = tempfile::tempdir().map_err(err)?;
        let outcome = run::fit(&cfg, syn.train_a.clone(), syn.train_b.clone(), &RunPaths::new(run_dir.path()), &FitOptions::default())
            .map_err(err)?;
        ensure(outcome.steps == 2000, format!("ran {} steps", outcome.steps))?;
        let snap = checkpoint::load(&outcome.final_checkpoint).map_err(err)?;
        let ab = check_direction(&snap.g_ab, &test_a, &test_b, &masks_a, &embedder)?;
        let ba = check_direction(&snap.g_ba, &test_b, &test_a, &masks_b, &embedder)?;
        let ok = ab.passes() && ba.passes();
        passed += ok as usize;
        let line = format!(
            "seed {seed} {} ({:.0}s): A->B {}; B->A {}",
            if ok { "pass" } else { "fail" },
            t0.elapsed().as_secs_f64(),
            ab.describe(),
            ba.describe()
        );
        println!("    {line}");
        lines.push(line);
    }
    ensure(passed >= 2, format!("{passed}/3 seeds passed"))?;
    Ok(format!("{passed}/3 seeds passed"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let syn = synthetic()?;
    let out = tempfile::tempdir().map_err(err)?;
    let suite = SuiteData {
        train_a: syn.train_a.clone(),
        train_b: syn.train_b.clone(),
        tests: Arc::new(TestSets::load(syn.root.path(), SYN_SIZE).map_err(err)?),
    };
    let opts = SuiteOptions {
        seeds: vec![0],
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()).min(5),
        eval: EvalConfig {
            eval_size: SYN_SIZE,
            ..EvalConfig::default()
        },
        out_dir: out.path().to_path_buf(),
    };
    let outcome = ablation::run_ablation_suite(&TrainConfig::desk(SYN_SIZE), &suite, &opts).map_err(err)?;
    let report = &outcome.report;
    ensure(report.columns.len() == 5, format!("{} columns", report.columns.len()))?;
    let cells: Vec<_> = report.measured().collect();
    ensure(cells.len() == 5 * 2 * 2, format!("{} measured cells", cells.len()))?;
    if let Some(bad) = cells.iter().find(|e| !e.cell.is_finite()) {
        return Err(format!("non-finite cell {} / {} / {:?}", bad.column, bad.row, bad.metric));
    }
    for r in &outcome.runs {
        if let Some(e) = &r.error {
            return Err(format!("{} failed: {e}", r.column));
        }
        let want = if r.column == "d_shared1" { 4 } else { 6 };
        ensure(r.d_terms == want, format!("{} ran {} discriminator terms", r.column, r.d_terms))?;
        if r.column == "no_pool" {
            ensure(r.generated_fraction == 0.0, format!("no_pool generated fraction {}", r.generated_fraction))?;
        }
    }
    let reparsed = ablation::ComparisonReport::from_csv(&std::fs::read_to_string(out.path().join("report.csv")).map_err(err)?)
        .map_err(err)?;
    ensure(&reparsed == report, "report CSV does not round-trip")?;
    println!("{}", report.format_table().lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n"));
    let baseline = outcome.runs.iter().find(|r| r.column == "baseline").unwrap();
    Ok(format!(
        "5 variants x 2 directions finite; d_shared1 4 terms; no_pool 0% generated (baseline {:.1}%)",
        100.0 * baseline.generated_fraction
    ))
}

// ---------------------------------------------------------------- 8

fn small_synthetic(n: usize) -> Result<(Arc<ImageSet<f32>>, Arc<ImageSet<f32>>), String> {
    let spec = SyntheticSpec {
        n_per_domain: n,
        ..SyntheticSpec::default()
    };
    let set = |d| -> Result<Arc<ImageSet<f32>>, String> {
        let s = synth::generate(&spec, d, Split::Train).map_err(err)?;
        Ok(Arc::new(ImageSet::from_batch(s.to_batch().map_err(err)?).map_err(err)?))
    };
    Ok((set(DomainTag::A)?, set(DomainTag::B)?))
}

fn criterion_8() -> Outcome {
    let (a, b) = small_synthetic(24)?;
    let cfg = TrainConfig {
        seed: 42,
        checkpoint_every: 1,
        ..TrainConfig::desk(SYN_SIZE)
    };
    let stream = |cfg: &TrainConfig| -> Result<Vec<LossBreakdown>, String> {
        let mut st = TrainState::new(cfg.clone(), a.clone(), b.clone()).map_err(err)?;
        (0..10).map(|_| st.advance().map_err(err)).collect()
    };
    let (s1, s2) = (stream(&cfg)?, stream(&cfg)?);
    ensure(s1 == s2, "loss streams differ between identical runs")?;

    // Uninterrupted 10 steps against 5 + resume + 5, both through the run directory.
    let dir = tempfile::tempdir().map_err(err)?;
    let full = RunPaths::new(dir.path().join("full"));
    let split = RunPaths::new(dir.path().join("split"));
    let opts = |stop, resume| FitOptions {
        resume,
        write_samples: false,
        stop_after: Some(stop),
    };
    let whole = run::fit(&cfg, a.clone(), b.clone(), &full, &opts(10, None)).map_err(err)?;
    let first = run::fit(&cfg, a.clone(), b.clone(), &split, &opts(5, None)).map_err(err)?;
    let second = run::fit(&cfg, a.clone(), b.clone(), &split, &opts(10, Some(first.final_checkpoint))).map_err(err)?;
    ensure(whole.losses[5..] == second.losses[..], "resumed losses differ from uninterrupted run")?;
    let read = |p: &Path| std::fs::read(p).map_err(err);
    ensure(
        read(&full.losses())? == read(&split.losses())?,
        "losses.csv differs between resumed and uninterrupted runs",
    )?;
    ensure(
        read(&whole.final_checkpoint)? == read(&second.final_checkpoint)?,
        "final checkpoints differ",
    )?;
    ensure(s1 == whole.losses, "run directory losses differ from in-memory stream")?;
    Ok("10-step streams identical; resume at step 5 bit-identical (losses and checkpoint bytes)".into())
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let root = tempfile::tempdir().map_err(err)?;
    let spec = SyntheticSpec {
        n_per_domain: 16,
        n_test: 12,
        ..SyntheticSpec::default()
    };
    data::make_synthetic(&spec, root.path()).map_err(err)?;
    let (a, b) = data::load_split(root.path(), Split::Train).map_err(err)?;
    let cfg = TrainConfig {
        max_steps: Some(20),
        ..TrainConfig::desk(32)
    };
    let run_dir = tempfile::tempdir().map_err(err)?;
    let outcome = run::fit(
        &cfg,
        a.to_image_set(32).map_err(err)?,
        b.to_image_set(32).map_err(err)?,
        &RunPaths::new(run_dir.path()),
        &FitOptions::default(),
    )
    .map_err(err)?;
    let snap = checkpoint::load(&outcome.final_checkpoint).map_err(err)?;
    let tests = TestSets::load(root.path(), 64).map_err(err)?;
    let eval = EvalConfig {
        eval_size: 64,
        ..EvalConfig::default()
    };
    let report = evaluate::evaluate_snapshot(&snap, &tests, &ConvEmbedder::hermetic(), &eval, "32px").map_err(err)?;
    ensure(report.entries.len() == 2, "expected two directions")?;
    ensure(report.entries.iter().all(|e| e.all_finite()), format!("non-finite metrics {report:?}"))?;
    let translated = metrics::translate_all(&snap.g_ab, &tests.a, 64).map_err(err)?;
    ensure(translated.dims() == (12, 3, 64, 64), format!("translated dims {:?}", translated.dims()))?;
    let e = &report.entries;
    Ok(format!(
        "trained 32px, evaluated 64px: FID {:.4}/{:.4}, KIDx100 {:.4}/{:.4}",
        e[0].fid_mean, e[1].fid_mean, e[0].kid_mean_x100, e[1].kid_mean_x100
    ))
}

// ---------------------------------------------------------------- harness

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "loss oracle equivalence", criterion_1),
        (2, "gradient checks", criterion_2),
        (3, "gradient isolation", criterion_3),
        (4, "metric oracles", criterion_4),
        (5, "pool invariants", criterion_5),
        (6, "synthetic end-to-end", criterion_6),
        (7, "ablation harness completeness", criterion_7),
        (8, "determinism and resume", criterion_8),
        (9, "resolution transfer", criterion_9),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{n}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{n}] {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
