//! FID and KID over embedded feature sets, plus the embedders that produce them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{resize_batch, ImageBatch};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorRole};
use crate::nn::{Conv2d, ConvGeom, ParamStore, Tape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Tolerance of the eigen-solver behind the matrix square root.
pub const SQRT_TOLERANCE: f64 = 1e-6;
pub const FID_ITERATIONS: usize = 10;
pub const KID_ITERATIONS: usize = 100;
pub const KID_MAX_SUBSET: usize = 1000;

/// `n x d` row-major embedded features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    n: usize,
    d: usize,
    features: Vec<f64>,
    embedder_id: String,
}

impl FeatureSet {
    pub fn new(n: usize, d: usize, features: Vec<f64>, embedder_id: impl Into<String>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("a feature set needs at least 2 rows, got {n}")));
        }
        if d == 0 || features.len() != n * d {
            return Err(Error::Dimension {
                axis: "features",
                expected: n * d,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(Self {
            n,
            d,
            features,
            embedder_id: embedder_id.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    /// Rows at `idx`, repeats allowed.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut f = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            f.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.d, f, self.embedder_id.clone())
    }

    /// Mean and unbiased covariance.
    pub fn moments(&self) -> Moments {
        let x = DMatrix::from_row_slice(self.n, self.d, &self.features);
        let mean = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (self.n as f64 - 1.0);
        Moments { mean, cov }
    }
}

/// Gaussian fit of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn sym_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::try_new(sym, SQRT_TOLERANCE * 1e-6, 10_000).ok_or_else(|| {
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Error::Numerical(format!(
            "eigendecomposition of {what} did not converge (dim {}, max |entry| {scale:e})",
            m.nrows()
        ))
    })
}

/// Square root of a symmetric positive semi-definite matrix, negative
/// eigenvalues clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m, "covariance")?;
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Frechet distance between two Gaussians.
pub fn fid_from_moments(x: &Moments, y: &Moments) -> Result<f64> {
    if x.mean.len() != y.mean.len() {
        return Err(Error::Dimension {
            axis: "feature",
            expected: x.mean.len(),
            found: y.mean.len(),
        });
    }
    let dmu = (&x.mean - &y.mean).norm_squared();
    // Tr sqrt(Cx Cy) = Tr sqrt(sqrt(Cx) Cy sqrt(Cx)), and the latter is symmetric.
    let sx = sqrtm_psd(&x.cov)?;
    let inner = &sx * &y.cov * &sx;
    let eig = sym_eigen(&inner, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|&l| libm::sqrt(l.max(0.0))).sum();
    let value = dmu + x.cov.trace() + y.cov.trace() - 2.0 * tr_sqrt;
    Ok(value.max(0.0))
}

pub fn fid(x: &FeatureSet, y: &FeatureSet) -> Result<f64> {
    if x.d != y.d {
        return Err(Error::Dimension {
            axis: "feature",
            expected: x.d,
            found: y.d,
        });
    }
    fid_from_moments(&x.moments(), &y.moments())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Population standard deviation over iterations.
    pub std: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: libm::sqrt(var),
        }
    }
}

/// FID with the generated set resampled with replacement each iteration.
pub fn fid_bootstrap(generated: &FeatureSet, target: &FeatureSet, iterations: usize, seed: u64) -> Result<Estimate> {
    if iterations == 0 {
        return Err(Error::Config("fid needs at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target_m = target.moments();
    let mut values = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let idx: Vec<usize> = (0..generated.n).map(|_| rng.random_range(0..generated.n)).collect();
        values.push(fid_from_moments(&generated.select(&idx)?.moments(), &target_m)?);
    }
    Ok(Estimate::from_samples(&values))
}

fn poly_kernel(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let k = dot / u.len() as f64 + 1.0;
    k * k * k
}

/// Unbiased MMD^2 between the rows `ix` of `x` and `iy` of `y`.
pub fn mmd2_unbiased(x: &FeatureSet, ix: &[usize], y: &FeatureSet, iy: &[usize]) -> f64 {
    let m = ix.len() as f64;
    let n = iy.len() as f64;
    let within = |s: &FeatureSet, idx: &[usize]| {
        let mut acc = 0.0;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                acc += poly_kernel(s.row(i), s.row(j));
            }
        }
        2.0 * acc
    };
    let mut cross = 0.0;
    for &i in ix {
        for &j in iy {
            cross += poly_kernel(x.row(i), y.row(j));
        }
    }
    within(x, ix) / (m * (m - 1.0)) + within(y, iy) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

/// Mean and spread of the unbiased MMD^2 over random equal-size subsets.
pub fn kid(x: &FeatureSet, y: &FeatureSet, subset_size: usize, iterations: usize, seed: u64) -> Result<Estimate> {
    if subset_size < 2 {
        return Err(Error::Config(format!("kid subset size must be at least 2, got {subset_size}")));
    }
    if subset_size > x.n.min(y.n) {
        return Err(Error::Config(format!(
            "kid subset size {subset_size} exceeds the smaller set ({})",
            x.n.min(y.n)
        )));
    }
    if x.d != y.d {
        return Err(Error::Dimension {
            axis: "feature",
            expected: x.d,
            found: y.d,
        });
    }
    if iterations == 0 {
        return Err(Error::Config("kid needs at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<(Vec<usize>, Vec<usize>)> = (0..iterations)
        .map(|_| {
            (
                sample(&mut rng, x.n, subset_size).into_vec(),
                sample(&mut rng, y.n, subset_size).into_vec(),
            )
        })
        .collect();
    let values: Vec<f64> = subsets.iter().map(|(ix, iy)| mmd2_unbiased(x, ix, y, iy)).collect();
    Ok(Estimate::from_samples(&values))
}

pub fn default_kid_subset(x: &FeatureSet, y: &FeatureSet) -> usize {
    x.n.min(y.n).min(KID_MAX_SUBSET)
}

/// Maps images in [-1, 1] to fixed-length feature vectors.
pub trait Embedder {
    fn id(&self) -> &str;
    /// Edge length images are resized to before embedding.
    fn input_size(&self) -> usize;
    fn dim(&self) -> usize;
    /// Features of an `n x 3 x s x s` batch at the input size, row-major.
    fn embed_raw(&self, images: &Tensor<f32>) -> Result<Vec<f64>>;
}

/// Embeds a batch, resizing it to the embedder's input size first.
pub fn embed<T: Scalar, E: Embedder + ?Sized>(embedder: &E, images: &ImageBatch<T>) -> Result<FeatureSet> {
    let resized = resize_batch(&images.cast::<f32>(), embedder.input_size());
    let n = resized.len();
    let mut features = Vec::with_capacity(n * embedder.dim());
    const CHUNK: usize = 64;
    let item = resized.data.item_len();
    let (_, c, h, w) = resized.dims();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let chunk = Tensor::from_vec(
            &[end - start, c, h, w],
            resized.data.data()[start * item..end * item].to_vec(),
        )?;
        features.extend(embedder.embed_raw(&chunk)?);
    }
    FeatureSet::new(n, embedder.dim(), features, embedder.id())
}

/// Stride-2 convolution stack with ReLU and global average pooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvEmbedder {
    id: String,
    input_size: usize,
    channels: Vec<usize>,
    layers: Vec<Conv2d>,
    params: ParamStore<f32>,
}

/// Seed and widths of the committed hermetic embedder.
pub const HERMETIC_SEED: u64 = 0x5eed_e3bd;
pub const HERMETIC_CHANNELS: [usize; 4] = [3, 16, 32, 32];
pub const HERMETIC_INPUT: usize = 32;

impl ConvEmbedder {
    /// He-initialized random weights; fixed for a fixed seed.
    pub fn random(id: impl Into<String>, input_size: usize, channels: &[usize], seed: u64) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::Config("an embedder needs at least one layer".into()));
        }
        let mut params = ParamStore::new();
        let mut init = crate::nn::Init::new(seed);
        let mut layers = Vec::new();
        for (i, pair) in channels.windows(2).enumerate() {
            let (ci, co) = (pair[0], pair[1]);
            let std = libm::sqrt(2.0 / (ci * 9) as f64);
            let weight = params.push(format!("conv{i}.weight"), init.normal(&[co, ci, 3, 3], std));
            let bias = params.push(format!("conv{i}.bias"), init.normal(&[co], 0.1));
            layers.push(Conv2d {
                weight,
                bias: Some(bias),
                geom: ConvGeom::new(3, 2, 1),
            });
        }
        Ok(Self {
            id: id.into(),
            input_size,
            channels: channels.to_vec(),
            layers,
            params,
        })
    }

    /// The fixed-seed embedder used for desk-scale evaluation.
    pub fn hermetic() -> Self {
        Self::random("hermetic-conv32", HERMETIC_INPUT, &HERMETIC_CHANNELS, HERMETIC_SEED).expect("valid widths")
    }

    /// Builds an embedder from externally trained weights, named
    /// `conv{i}.weight` (`c_out x c_in x 3 x 3`) and `conv{i}.bias`.
    pub fn from_weights(id: impl Into<String>, input_size: usize, weights: &[(String, Tensor<f32>)]) -> Result<Self> {
        let n_layers = weights.len() / 2;
        if n_layers == 0 || weights.len() % 2 != 0 {
            return Err(Error::DataCorruption("embedder weights must come in weight/bias pairs".into()));
        }
        let lookup = |name: &str| {
            weights
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::DataCorruption(format!("embedder weights lack {name}")))
        };
        let mut channels = Vec::new();
        for i in 0..n_layers {
            let w = lookup(&format!("conv{i}.weight"))?;
            if w.shape().len() != 4 || w.shape()[2] != 3 || w.shape()[3] != 3 {
                return Err(Error::DataCorruption(format!("conv{i}.weight has shape {:?}", w.shape())));
            }
            if i == 0 {
                channels.push(w.shape()[1]);
            } else if channels[i] != w.shape()[1] {
                return Err(Error::DataCorruption(format!("conv{i}.weight input width mismatch")));
            }
            channels.push(w.shape()[0]);
        }
        let mut embedder = Self::random(id, input_size, &channels, 0)?;
        for (i, layer) in embedder.layers.clone().iter().enumerate() {
            let w = lookup(&format!("conv{i}.weight"))?;
            let b = lookup(&format!("conv{i}.bias"))?;
            if b.shape() != [channels[i + 1]] {
                return Err(Error::DataCorruption(format!("conv{i}.bias has shape {:?}", b.shape())));
            }
            embedder.params.tensors_mut()[layer.weight] = w;
            embedder.params.tensors_mut()[layer.bias.expect("embedder layers carry bias")] = b;
        }
        Ok(embedder)
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
}

impl Embedder for ConvEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn dim(&self) -> usize {
        *self.channels.last().expect("non-empty widths")
    }

    fn embed_raw(&self, images: &Tensor<f32>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut x = tape.input(images.clone(), false);
        for layer in &self.layers {
            x = layer.forward(&mut tape, &self.params, true, x)?;
            x = tape.relu(x);
        }
        let out = tape.value(x);
        let (n, c, h, w) = out.dims4();
        let plane = h * w;
        let mut features = Vec::with_capacity(n * c);
        for chunk in out.data().chunks(plane) {
            features.push(chunk.iter().map(|&v| v as f64).sum::<f64>() / plane as f64);
        }
        Ok(features)
    }
}

/// One direction's scores; KID in the x100 convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub direction: GeneratorRole,
    pub fid_mean: f64,
    pub fid_std: f64,
    pub kid_mean_x100: f64,
    pub kid_std_x100: f64,
}

impl DirectionMetrics {
    pub fn all_finite(&self) -> bool {
        [self.fid_mean, self.fid_std, self.kid_mean_x100, self.kid_std_x100]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub embedder_id: String,
    pub checkpoint: String,
    pub entries: Vec<DirectionMetrics>,
}

impl MetricReport {
    pub fn entry(&self, direction: GeneratorRole) -> Option<&DirectionMetrics> {
        self.entries.iter().find(|e| e.direction == direction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Edge length test images are resized to before translation.
    pub eval_size: usize,
    pub fid_iterations: usize,
    pub kid_iterations: usize,
    /// `None` picks `min(n, 1000)`.
    pub kid_subset: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eval_size: 256,
            fid_iterations: FID_ITERATIONS,
            kid_iterations: KID_ITERATIONS,
            kid_subset: None,
            seed: 0,
        }
    }
}

/// Scores already translated images against real target images.
pub fn score_translated<T: Scalar, E: Embedder + ?Sized>(
    direction: GeneratorRole,
    translated: &ImageBatch<T>,
    target: &ImageBatch<T>,
    embedder: &E,
    cfg: &EvalConfig,
) -> Result<DirectionMetrics> {
    let x = embed(embedder, translated)?;
    let y = embed(embedder, target)?;
    let f = fid_bootstrap(&x, &y, cfg.fid_iterations, cfg.seed)?;
    let subset = cfg.kid_subset.unwrap_or_else(|| default_kid_subset(&x, &y));
    let k = kid(&x, &y, subset, cfg.kid_iterations, cfg.seed)?;
    Ok(DirectionMetrics {
        direction,
        fid_mean: f.mean,
        fid_std: f.std,
        kid_mean_x100: 100.0 * k.mean,
        kid_std_x100: 100.0 * k.std,
    })
}

/// Translates `source` at the evaluation size in chunks.
pub fn translate_all<T: Scalar>(generator: &Generator<T>, source: &ImageBatch<T>, eval_size: usize) -> Result<ImageBatch<T>> {
    generator.config().check_size(eval_size)?;
    let resized = resize_batch(source, eval_size);
    let n = resized.len();
    const CHUNK: usize = 16;
    let mut parts = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        parts.push(generator.translate(&resized.select(&idx))?);
    }
    let refs: Vec<&Tensor<T>> = parts.iter().map(|p| &p.data).collect();
    Ok(ImageBatch {
        data: Tensor::concat_batch(&refs)?,
        domain: generator.role().target(),
        provenance: alloc::vec![crate::domain::Provenance::Generated; n],
    })
}

/// Translates every source test image and scores it against the target set.
pub fn evaluate_direction<T: Scalar, E: Embedder + ?Sized>(
    generator: &Generator<T>,
    source: &ImageBatch<T>,
    target: &ImageBatch<T>,
    embedder: &E,
    cfg: &EvalConfig,
) -> Result<DirectionMetrics> {
    if source.domain != generator.role().source() || target.domain != generator.role().target() {
        return Err(Error::Contract("test sets do not match the generator's direction".into()));
    }
    let translated = translate_all(generator, source, cfg.eval_size)?;
    score_translated(generator.role(), &translated, &resize_batch(target, cfg.eval_size), embedder, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian_set(n: usize, mean: &[f64], std: &[f64], seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = mean.len();
        let mut f = Vec::with_capacity(n * d);
        for _ in 0..n {
            for k in 0..d {
                f.push(Normal::new(mean[k], std[k]).unwrap().sample(&mut rng));
            }
        }
        FeatureSet::new(n, d, f, "test").unwrap()
    }

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let x = gaussian_set(200, &[0.0, 1.0, -2.0], &[1.0, 0.5, 2.0], 1);
        assert!(fid(&x, &x).unwrap().abs() < 1e-8);
    }

    #[test]
    fn fid_of_shifted_unit_moments() {
        let m = |mu: f64| Moments {
            mean: DVector::from_element(1, mu),
            cov: DMatrix::from_element(1, 1, 1.0),
        };
        assert!((fid_from_moments(&m(0.0), &m(1.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fid_is_symmetric() {
        let x = gaussian_set(300, &[0.0, 0.0], &[1.0, 2.0], 2);
        let y = gaussian_set(300, &[0.5, -1.0], &[0.7, 1.5], 3);
        let a = fid(&x, &y).unwrap();
        let b = fid(&y, &x).unwrap();
        assert!((a - b).abs() < 1e-8 * a.max(1.0));
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(FeatureSet::new(1, 2, alloc::vec![0.0, 1.0], "t").is_err());
        assert!(FeatureSet::new(2, 1, alloc::vec![0.0, f64::NAN], "t").is_err());
    }

    #[test]
    fn kid_rejects_tiny_subsets() {
        let x = gaussian_set(10, &[0.0], &[1.0], 4);
        assert!(kid(&x, &x, 1, 1, 0).is_err());
        assert!(kid(&x, &x, 11, 1, 0).is_err());
    }

    #[test]
    fn kid_is_reproducible() {
        let x = gaussian_set(60, &[0.0, 0.0], &[1.0, 1.0], 5);
        let y = gaussian_set(60, &[0.3, 0.0], &[1.0, 1.0], 6);
        assert_eq!(kid(&x, &y, 20, 100, 9).unwrap(), kid(&x, &y, 20, 100, 9).unwrap());
    }

    #[test]
    fn embedder_rows_match_inputs() {
        let e = ConvEmbedder::hermetic();
        let img: Vec<f32> = (0..3 * 32 * 32).map(|i| ((i % 17) as f32 / 8.5) - 1.0).collect();
        let mut data = img.clone();
        data.extend(&img);
        data.extend(img.iter().map(|v| -v));
        let t = Tensor::from_vec(&[3, 3, 32, 32], data).unwrap();
        let f = e.embed_raw(&t).unwrap();
        assert_eq!(f.len(), 3 * e.dim());
        assert_eq!(f[..32], f[32..64]);
        assert_ne!(f[..32], f[64..]);
    }

    #[test]
    fn embedder_weights_round_trip() {
        let e = ConvEmbedder::hermetic();
        let weights: Vec<(String, Tensor<f32>)> = e.params.iter().map(|(n, t)| (n.into(), t.clone())).collect();
        let back = ConvEmbedder::from_weights("copy", 32, &weights).unwrap();
        assert_eq!(back.params().tensors(), e.params().tensors());
        assert!(ConvEmbedder::from_weights("bad", 32, &weights[..3]).is_err());
    }
}
