//! One-hidden-layer classifiers of crack presence and the train-test
//! learning protocol with noisy test features.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature z-scoring from training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for r in x {
            for k in 0..d {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v.sqrt() > 1e-300 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

/// `n -> hidden (tanh) -> 2 (softmax)` network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Gradient of the mean cross-entropy with respect to every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

impl Mlp {
    /// Glorot-uniform initialization.
    pub fn new(n_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let r1 = (6.0 / (n_in + hidden) as f64).sqrt();
        let r2 = (6.0 / (hidden + 2) as f64).sqrt();
        Self {
            w1: DMatrix::from_fn(hidden, n_in, |_, _| rng.random_range(-r1..r1)),
            b1: DVector::zeros(hidden),
            w2: DMatrix::from_fn(2, hidden, |_, _| rng.random_range(-r2..r2)),
            b2: DVector::zeros(2),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.w1.ncols()
    }

    /// Class probabilities `[p(label 1), p(label 2)]`.
    pub fn probabilities(&self, x: &[f64]) -> [f64; 2] {
        let h = (&self.w1 * DVector::from_column_slice(x) + &self.b1).map(f64::tanh);
        let z = &self.w2 * h + &self.b2;
        softmax2([z[0], z[1]])
    }

    /// Predicted label in {1, 2}; exact ties go to 1.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let p = self.probabilities(x);
        if p[1] > p[0] {
            2
        } else {
            1
        }
    }

    /// Mean cross-entropy over `(x, label)` pairs.
    pub fn loss(&self, x: &[Vec<f64>], labels: &[u8]) -> f64 {
        let mut l = 0.0;
        for (xi, &y) in x.iter().zip(labels) {
            let p = self.probabilities(xi)[(y as usize) - 1];
            l -= p.max(1e-300).ln();
        }
        l / x.len() as f64
    }

    pub fn loss_and_gradient(&self, x: &[Vec<f64>], labels: &[u8]) -> (f64, MlpGradient) {
        let n = x.len() as f64;
        let mut g = MlpGradient {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(2, self.w2.ncols()),
            b2: DVector::zeros(2),
        };
        let mut loss = 0.0;
        for (xi, &y) in x.iter().zip(labels) {
            let xv = DVector::from_column_slice(xi);
            let h = (&self.w1 * &xv + &self.b1).map(f64::tanh);
            let z = &self.w2 * &h + &self.b2;
            let p = softmax2([z[0], z[1]]);
            let k = (y as usize) - 1;
            loss -= p[k].max(1e-300).ln();
            let mut dz = DVector::from_column_slice(&p);
            dz[k] -= 1.0;
            g.w2 += &dz * h.transpose();
            g.b2 += &dz;
            let dh = self.w2.transpose() * &dz;
            let da = dh.zip_map(&h, |d, hv| d * (1.0 - hv * hv));
            g.w1 += &da * xv.transpose();
            g.b1 += &da;
        }
        let s = 1.0 / n;
        g.w1 *= s;
        g.b1 *= s;
        g.w2 *= s;
        g.b2 *= s;
        (loss / n, g)
    }

    fn stepped(&self, g: &MlpGradient, eta: f64) -> Self {
        Self {
            w1: &self.w1 - &g.w1 * eta,
            b1: &self.b1 - &g.b1 * eta,
            w2: &self.w2 - &g.w2 * eta,
            b2: &self.b2 - &g.b2 * eta,
        }
    }
}

/// Training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Stop after this many validation checks without improvement.
    pub patience: usize,
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { hidden: 10, max_epochs: 1000, validation_fraction: 0.2, patience: 6, initial_step: 0.5, seed: 1 }
    }
}

/// A fitted classifier with its input scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub mlp: Mlp,
    pub scaler: Standardizer,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub epochs: usize,
}

impl TrainedClassifier {
    pub fn predict(&self, x: &[f64]) -> u8 {
        self.mlp.predict(&self.scaler.apply(x))
    }
}

/// Full-batch gradient descent with step halving on loss increase and
/// validation early stopping.
pub fn train_classifier(x: &[Vec<f64>], labels: &[u8], cfg: &TrainConfig) -> Result<TrainedClassifier> {
    if x.is_empty() || x.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} samples, {} labels", x.len(), labels.len())));
    }
    if labels.iter().any(|&y| y != 1 && y != 2) {
        return Err(Error::InvalidParameter("labels must be 1 or 2".into()));
    }
    if !labels.contains(&1) || !labels.contains(&2) {
        return Err(Error::InvalidParameter("single-class training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((x.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_val = if x.len() - n_val < 1 { 0 } else { n_val };
    let (vi, ti) = idx.split_at(n_val);
    let scaler = Standardizer::fit(&ti.iter().map(|&i| x[i].clone()).collect::<Vec<_>>());
    let xs = |set: &[usize]| set.iter().map(|&i| scaler.apply(&x[i])).collect::<Vec<_>>();
    let (xt, xv) = (xs(ti), xs(vi));
    let yt: Vec<u8> = ti.iter().map(|&i| labels[i]).collect();
    let yv: Vec<u8> = vi.iter().map(|&i| labels[i]).collect();

    let mut mlp = Mlp::new(x[0].len(), cfg.hidden, &mut rng);
    let mut eta = cfg.initial_step;
    let (mut loss, mut grad) = mlp.loss_and_gradient(&xt, &yt);
    let mut best = (if xv.is_empty() { loss } else { mlp.loss(&xv, &yv) }, mlp.clone());
    let mut stale = 0;
    let mut train_loss = vec![loss];
    let mut validation_loss = vec![best.0];
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = mlp.stepped(&grad, eta);
            let (l, g) = cand.loss_and_gradient(&xt, &yt);
            if l.is_finite() && l <= loss {
                mlp = cand;
                loss = l;
                grad = g;
                eta *= 1.1;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        train_loss.push(loss);
        if !accepted {
            break;
        }
        let vl = if xv.is_empty() { loss } else { mlp.loss(&xv, &yv) };
        validation_loss.push(vl);
        if vl < best.0 {
            best = (vl, mlp.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainedClassifier { mlp: best.1, scaler, train_loss, validation_loss, epochs })
}

/// Binary structure label (2 if any component is damaged) and the full tuple.
pub fn derive_structure_predictions(per_component: &[u8]) -> (u8, Vec<u8>) {
    let any = if per_component.contains(&2) { 2 } else { 1 };
    (any, per_component.to_vec())
}

/// Zero-one loss.
pub fn zero_one_loss(a: u8, b: u8) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

/// Errors of one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionErrors {
    pub per_component: Vec<f64>,
    pub structure: f64,
    pub full_state: f64,
}

/// Misclassification rates from true and predicted label tuples.
pub fn partition_errors(truth: &[Vec<u8>], pred: &[Vec<u8>]) -> Result<PartitionErrors> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::DimensionMismatch(format!("{} true vs {} predicted tuples", truth.len(), pred.len())));
    }
    let n = truth.len() as f64;
    let nc = truth[0].len();
    let mut per_component = vec![0.0; nc];
    let (mut s, mut a) = (0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        for c in 0..nc {
            per_component[c] += zero_one_loss(t[c], p[c]) / n;
        }
        let (tb, _) = derive_structure_predictions(t);
        let (pb, _) = derive_structure_predictions(p);
        s += zero_one_loss(tb, pb) / n;
        a += if t == p { 0.0 } else { 1.0 / n };
    }
    Ok(PartitionErrors { per_component, structure: s, full_state: a })
}

/// Feature source for the train-test protocol.
pub trait FeatureSource {
    fn n_samples(&self) -> usize;
    fn n_components(&self) -> usize;
    fn labels(&self, sample: usize) -> Vec<u8>;
    /// Noiseless features of a component.
    fn clean(&self, sample: usize, comp: usize) -> &[f64];
    /// Test features of a component in partition `p` at noise level index `noise`.
    fn noisy(&self, sample: usize, comp: usize, noise: usize, p: usize) -> &[f64];
}

/// Settings of the train-test protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtConfig {
    pub n_tt: usize,
    pub phi: f64,
    pub n_part: usize,
    /// Index of the noise level in the source, `None` for noiseless tests.
    pub noise: Option<usize>,
    pub noise_factor: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl TtConfig {
    pub fn validate(&self, n_available: usize) -> Result<()> {
        if !(self.phi > 0.0 && self.phi < 1.0) || self.n_part == 0 || self.n_tt < 2 {
            return Err(Error::Config(format!("train-test config phi={} n_part={} n_tt={}", self.phi, self.n_part, self.n_tt)));
        }
        if self.n_tt > n_available {
            return Err(Error::Config(format!("n_tt={} exceeds the {} available samples", self.n_tt, n_available)));
        }
        Ok(())
    }

    /// Error level corresponding to one misclassified test point.
    pub fn reference_error(&self) -> f64 {
        1.0 / ((1.0 - self.phi) * self.n_tt as f64)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Aggregated errors over partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub config: TtConfig,
    pub partitions: Vec<PartitionErrors>,
    pub mean_component: Vec<f64>,
    pub std_component: Vec<f64>,
    pub mean_structure: f64,
    pub std_structure: f64,
    pub mean_full_state: f64,
    pub std_full_state: f64,
    pub reference_error: f64,
    pub resampled_partitions: usize,
}

impl ClassificationReport {
    /// Mean over components of the per-component mean error.
    pub fn mean_error(&self) -> f64 {
        self.mean_component.iter().sum::<f64>() / self.mean_component.len() as f64
    }
    /// Standard deviation over partitions of the component-averaged error.
    pub fn std_error(&self) -> f64 {
        let v: Vec<f64> = self
            .partitions
            .iter()
            .map(|p| p.per_component.iter().sum::<f64>() / p.per_component.len() as f64)
            .collect();
        mean_std(&v).1
    }
}

/// Runs the train-test protocol on the first `n_tt` samples of `src`.
pub fn tt_learning<S: FeatureSource + Sync>(src: &S, cfg: &TtConfig) -> Result<ClassificationReport> {
    use rayon::prelude::*;
    cfg.validate(src.n_samples())?;
    let n_train = ((cfg.phi * cfg.n_tt as f64).round() as usize).clamp(1, cfg.n_tt - 1);
    let nc = src.n_components();
    let results: Vec<Result<(PartitionErrors, usize)>> = (0..cfg.n_part)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(p as u64 + 1)));
            let mut resampled = 0;
            for _attempt in 0..100 {
                let mut idx: Vec<usize> = (0..cfg.n_tt).collect();
                idx.shuffle(&mut rng);
                let (tr, te) = idx.split_at(n_train);
                let single = (0..nc).any(|c| {
                    let first = src.labels(tr[0])[c];
                    tr.iter().all(|&s| src.labels(s)[c] == first)
                });
                if single {
                    resampled += 1;
                    log::warn!("partition {p}: single-class training set, resampling");
                    continue;
                }
                let mut preds = vec![vec![0u8; nc]; te.len()];
                for c in 0..nc {
                    let x: Vec<Vec<f64>> = tr.iter().map(|&s| src.clean(s, c).to_vec()).collect();
                    let y: Vec<u8> = tr.iter().map(|&s| src.labels(s)[c]).collect();
                    let tc = TrainConfig { seed: cfg.train.seed.wrapping_add(1000 * p as u64 + c as u64), ..cfg.train.clone() };
                    let clf = train_classifier(&x, &y, &tc)?;
                    for (k, &s) in te.iter().enumerate() {
                        let f = match cfg.noise {
                            Some(q) => src.noisy(s, c, q, p),
                            None => src.clean(s, c),
                        };
                        preds[k][c] = clf.predict(f);
                    }
                }
                let truth: Vec<Vec<u8>> = te.iter().map(|&s| src.labels(s)).collect();
                return Ok((partition_errors(&truth, &preds)?, resampled));
            }
            Err(Error::InvalidParameter(format!("partition {p}: could not draw a two-class training set")))
        })
        .collect();
    let mut partitions = Vec::with_capacity(cfg.n_part);
    let mut resampled_partitions = 0;
    for r in results {
        let (e, k) = r?;
        partitions.push(e);
        resampled_partitions += k;
    }
    let mut mean_component = Vec::with_capacity(nc);
    let mut std_component = Vec::with_capacity(nc);
    for c in 0..nc {
        let (m, s) = mean_std(&partitions.iter().map(|p| p.per_component[c]).collect::<Vec<_>>());
        mean_component.push(m);
        std_component.push(s);
    }
    let (mean_structure, std_structure) = mean_std(&partitions.iter().map(|p| p.structure).collect::<Vec<_>>());
    let (mean_full_state, std_full_state) = mean_std(&partitions.iter().map(|p| p.full_state).collect::<Vec<_>>());
    Ok(ClassificationReport {
        config: cfg.clone(),
        partitions,
        mean_component,
        std_component,
        mean_structure,
        std_structure,
        mean_full_state,
        std_full_state,
        reference_error: cfg.reference_error(),
        resampled_partitions,
    })
}
