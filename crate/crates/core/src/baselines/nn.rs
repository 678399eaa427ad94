//! One-hidden-layer network with sigmoid units trained by minibatch Adam,
//! with the step size picked by k-fold cross-validation on the training
//! split.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{labels_at, SplitAccuracy, Standardized};
use crate::data::{Dataset, Split};
use crate::predictor::{decide, sigmoid};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnConfig {
    pub hidden: usize,
    pub step_sizes: Vec<f64>,
    pub batch_size: usize,
    pub iterations: usize,
    pub folds: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden: 3,
            step_sizes: vec![0.001, 0.01, 0.1, 1.0],
            batch_size: 32,
            iterations: 1000,
            folds: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl NnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Spec("hidden width and batch size must be positive".into()));
        }
        if self.step_sizes.is_empty() || self.step_sizes.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Spec("step-size grid must be nonempty and positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Spec("cross-validation needs at least 2 folds".into()));
        }
        Ok(())
    }
}

/// `p(y=1|x) = sigmoid(w2 . sigmoid(x W1 + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl Mlp {
    /// Glorot-uniform input weights, zero output weights and an output bias
    /// at the log-odds of `base_rate`, so the untrained network predicts the
    /// base rate everywhere.
    pub fn init(inputs: usize, hidden: usize, base_rate: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let a = (6.0 / (inputs + hidden) as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((inputs, hidden), || rng.random_range(-a..a));
        let p = base_rate.clamp(1e-6, 1.0 - 1e-6);
        Mlp {
            w1,
            b1: Array1::zeros(hidden),
            w2: Array1::zeros(hidden),
            b2: (p / (1.0 - p)).ln(),
        }
    }

    fn hidden(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (x.dot(&self.w1) + &self.b1).mapv(sigmoid)
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.hidden(x).dot(&self.w2) + self.b2
    }

    /// Mean logistic loss and its gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> (f64, MlpGrad) {
        let n = x.nrows() as f64;
        let h = self.hidden(x);
        let z = h.dot(&self.w2) + self.b2;
        let loss = z
            .iter()
            .zip(y)
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum::<f64>()
            / n;
        let dz = (z.mapv(sigmoid) - &y) / n;
        let w2 = h.t().dot(&dz);
        let b2 = dz.sum();
        // back through the hidden sigmoid
        let mut dh = dz.insert_axis(Axis(1)).dot(&self.w2.view().insert_axis(Axis(0)));
        dh.zip_mut_with(&h, |g, &s| *g *= s * (1.0 - s));
        let w1 = x.t().dot(&dh);
        let b1 = dh.sum_axis(Axis(0));
        (loss, MlpGrad { w1, b1, w2, b2 })
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[u8]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let z = self.logits(x);
        let ok = z.iter().zip(y).filter(|(z, &t)| decide(**z) == (t == 1)).count();
        ok as f64 / y.len() as f64
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite()) && self.b2.is_finite()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Adam {
    m: MlpGrad,
    v: MlpGrad,
    t: i32,
}

impl Adam {
    fn new(model: &Mlp) -> Self {
        let zero = MlpGrad {
            w1: Array2::zeros(model.w1.raw_dim()),
            b1: Array1::zeros(model.b1.len()),
            w2: Array1::zeros(model.w2.len()),
            b2: 0.0,
        };
        Adam {
            m: zero.clone(),
            v: zero,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Mlp, g: &MlpGrad, lr: f64, cfg: &NnConfig) {
        self.t += 1;
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        ndarray::Zip::from(&mut model.w1)
            .and(&mut self.m.w1)
            .and(&mut self.v.w1)
            .and(&g.w1)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut model.b1)
            .and(&mut self.m.b1)
            .and(&mut self.v.b1)
            .and(&g.b1)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut model.w2)
            .and(&mut self.m.w2)
            .and(&mut self.v.w2)
            .and(&g.w2)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        update(&mut model.b2, &mut self.m.b2, &mut self.v.b2, g.b2);
    }
}

/// Trains for `cfg.iterations` minibatch steps of size `cfg.batch_size`,
/// reshuffling each epoch. A non-finite loss or parameter is an error.
pub fn train_mlp(x: ArrayView2<f64>, y: &[u8], lr: f64, cfg: &NnConfig, seed: u64) -> Result<Mlp> {
    cfg.validate()?;
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::Dimension(format!("{} rows, {} labels", x.nrows(), y.len())));
    }
    let base = y.iter().filter(|&&t| t == 1).count() as f64 / y.len() as f64;
    let mut model = Mlp::init(x.ncols(), cfg.hidden, base, derive_seed(seed, 0));
    let mut adam = Adam::new(&model);
    let mut rng = seeded(derive_seed(seed, 1));
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut cursor = order.len();
    let yf: Array1<f64> = y.iter().map(|&t| t as f64).collect();
    for _ in 0..cfg.iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;
        let xb = x.select(Axis(0), batch);
        let yb = yf.select(Axis(0), batch);
        let (loss, g) = model.loss_and_grad(xb.view(), yb.view());
        if !loss.is_finite() {
            return Err(Error::Diverged);
        }
        adam.step(&mut model, &g, lr, cfg);
    }
    if !model.is_finite() {
        return Err(Error::Diverged);
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnResult {
    pub model: Mlp,
    pub step_size: f64,
    /// Mean held-out accuracy per step size; `None` where training diverged.
    pub cv_accuracy: Vec<(f64, Option<f64>)>,
    pub accuracy: SplitAccuracy,
}

/// Picks the step size by cross-validation on the training split, then
/// retrains on the whole training split.
pub fn run_nn_baseline_with(d: &Dataset, data: &Standardized, cfg: &NnConfig) -> Result<NnResult> {
    cfg.validate()?;
    let train = data.rows(Split::Train);
    if train.len() < cfg.folds {
        return Err(Error::Invalid(format!("{} training rows for {} folds", train.len(), cfg.folds)));
    }
    let mut shuffled = train.to_vec();
    shuffled.shuffle(&mut seeded(derive_seed(cfg.seed, 2)));
    let folds: Vec<Vec<usize>> = (0..cfg.folds)
        .map(|f| shuffled.iter().skip(f).step_by(cfg.folds).copied().collect())
        .collect();

    let cv_accuracy: Vec<(f64, Option<f64>)> = cfg
        .step_sizes
        .par_iter()
        .map(|&lr| {
            let mut total = 0.0;
            for (f, held) in folds.iter().enumerate() {
                let fit_rows: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|(g, _)| *g != f)
                    .flat_map(|(_, rows)| rows.iter().copied())
                    .collect();
                let x = data.select(&fit_rows);
                let seed = derive_seed(cfg.seed, 10 + f as u64);
                match train_mlp(x.view(), &labels_at(&d.y, &fit_rows), lr, cfg, seed) {
                    Ok(m) => total += m.accuracy(data.select(held).view(), &labels_at(&d.y, held)),
                    Err(_) => return (lr, None),
                }
            }
            (lr, Some(total / cfg.folds as f64))
        })
        .collect();

    let (step_size, _) = cv_accuracy
        .iter()
        .filter_map(|(lr, acc)| acc.map(|a| (*lr, a)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .ok_or(Error::Diverged)?;
    let x = data.select(train);
    let model = train_mlp(x.view(), &labels_at(&d.y, train), step_size, cfg, derive_seed(cfg.seed, 3))?;
    let logits = model.logits(data.x.view()).to_vec();
    Ok(NnResult {
        accuracy: SplitAccuracy::from_logits(&logits, &d.y, &data.splits),
        model,
        step_size,
        cv_accuracy,
    })
}

pub fn run_nn_baseline(d: &Dataset, cfg: &NnConfig) -> Result<NnResult> {
    run_nn_baseline_with(d, &Standardized::new(d), cfg)
}
