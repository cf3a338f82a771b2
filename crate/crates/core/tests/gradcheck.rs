//! Analytic gradients against central finite differences, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transfig_core::nn::ParamStore;
use transfig_core::objectives::{discriminator_loss, generator_loss};
use transfig_core::*;

/// Finite-difference steps. The discriminator loss is O(1) with LeakyReLU
/// kinks close to the operating point, so it needs the smaller step; the
/// generator loss is O(10..100) and loses precision to roundoff below 1e-6.
const D_EPS: f64 = 1e-7;
const G_EPS: f64 = 1e-6;
const SIZE: usize = 32;

fn batch(domain: DomainTag, n: usize, seed: u64) -> ImageBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::from_fn(&[n, 3, SIZE, SIZE], |_| rng.random_range(-1.0..1.0));
    ImageBatch::new(t, domain, Provenance::Dataset).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Picks `count` random (tensor, element) coordinates of `store`.
fn sample_coords(store: &ParamStore<f64>, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = rng.random_range(0..store.len());
            (t, rng.random_range(0..store.get(t).len()))
        })
        .collect()
}

fn check(
    store: &mut ParamStore<f64>,
    analytic: &[Tensor<f64>],
    coords: &[(usize, usize)],
    eps: f64,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> (usize, f64) {
    let mut worst = 0.0f64;
    let mut bad = 0;
    for &(t, i) in coords {
        let orig = store.get(t).data()[i];
        store.tensors_mut()[t].data_mut()[i] = orig + eps;
        let up = loss(store);
        store.tensors_mut()[t].data_mut()[i] = orig - eps;
        let down = loss(store);
        store.tensors_mut()[t].data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let e = rel_err(analytic[t].data()[i], numeric);
        if e >= 1e-3 {
            bad += 1;
            eprintln!("{} [{i}]: analytic {} numeric {numeric}", store.names()[t], analytic[t].data()[i]);
        }
        worst = worst.max(e);
    }
    (bad, worst)
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let d_cfg = DiscriminatorConfig::miniature();
    let g_cfg = GeneratorConfig::miniature(Arch::Resnet);
    let mut d = build_discriminator::<f64>(&d_cfg, 1).unwrap();
    let g_ab = build_generator::<f64>(&g_cfg, GeneratorRole::AB, 2).unwrap();
    let g_ba = build_generator::<f64>(&g_cfg, GeneratorRole::BA, 3).unwrap();
    let (ap, bp) = (batch(DomainTag::A, 2, 4), batch(DomainTag::B, 2, 5));
    let (a, b) = (batch(DomainTag::A, 2, 6), batch(DomainTag::B, 2, 7));
    let terms = DiscriminatorObjective::Full.terms();
    let mut out = discriminator_loss(&d, &g_ab, &g_ba, &ap, &bp, &a, &b, terms).unwrap();
    let analytic = transfig_core::nn::gradients_for(d.params(), &mut out.grads);
    let coords = sample_coords(d.params(), 120, 8);
    let mut store = d.params().clone();
    let (bad, worst) = check(&mut store, &analytic, &coords, D_EPS, |p| {
        d.params_mut().load_from(p).unwrap();
        discriminator_loss(&d, &g_ab, &g_ba, &ap, &bp, &a, &b, terms).unwrap().total
    });
    assert_eq!(bad, 0, "worst relative error {worst}");
}

#[test]
fn generator_gradients_match_finite_differences() {
    for arch in [Arch::Resnet, Arch::Unet] {
        let d = build_discriminator::<f64>(&DiscriminatorConfig::miniature(), 11).unwrap();
        let mut g = build_generator::<f64>(&GeneratorConfig::miniature(arch), GeneratorRole::BA, 12).unwrap();
        let input = batch(DomainTag::B, 2, 13);
        let w = LossWeights::default();
        let analytic = generator_loss(&g, &d, &input, &w, None).unwrap().grads;
        let coords = sample_coords(g.params(), 120, 14);
        let mut store = g.params().clone();
        let (bad, worst) = check(&mut store, &analytic, &coords, G_EPS, |p| {
            g.params_mut().load_from(p).unwrap();
            generator_loss(&g, &d, &input, &w, None).unwrap().values.total
        });
        assert_eq!(bad, 0, "{arch:?}: worst relative error {worst}");
    }
}
