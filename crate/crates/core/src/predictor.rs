//! Binary logistic regression over a design matrix, with an optional l1
//! penalty on the weights (never on the bias).
//!
//! The objective is the mean logistic loss plus `l1_weight * ||w||_1`.
//! Unpenalized fits use damped Newton steps with a backtracking line
//! search; penalized fits use accelerated proximal gradient with
//! soft-thresholding. Both stop when the infinity norm of the (sub)gradient
//! optimality residual drops below the tolerance.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Convergence tolerance on the gradient infinity norm.
    pub tol: f64,
    pub max_iter: usize,
    pub l1_weight: f64,
    /// Z-score columns on the fitting data before optimizing.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-6,
            max_iter: 1000,
            l1_weight: 0.0,
            standardize: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.l1_weight >= 0.0) {
            return Err(Error::Spec(format!("invalid fit configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Column z-scoring fitted on training rows. Zero-variance columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 1e-24 { var.sqrt() } else { 0.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            if s == 0.0 {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        out
    }
}

/// Weights `w`, bias `b`; predicts `sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l1_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Standardizer>,
    #[serde(default)]
    pub diagnostics: FitDiagnostics,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Class decision for a logit; probability exactly 0.5 counts as positive.
#[inline]
pub fn decide(z: f64) -> bool {
    sigmoid(z) >= 0.5
}

impl LinearPredictor {
    pub fn zeros(n_inputs: usize) -> Self {
        LinearPredictor {
            weights: vec![0.0; n_inputs],
            bias: 0.0,
            l1_weight: 0.0,
            scaler: None,
            diagnostics: FitDiagnostics::default(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.weights.len()
    }

    pub fn nonzeros(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    /// Logit for a binary input row given as activation flags. Accumulates
    /// from the bias in input order, which matches [`logits`](Self::logits)
    /// on the same 0/1 row.
    #[inline]
    pub fn logit_binary(&self, active: impl Iterator<Item = bool>) -> f64 {
        let mut z = self.bias;
        for (w, on) in self.weights.iter().zip(active) {
            if on {
                z += w;
            }
        }
        z
    }

    fn check_cols(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "design has {} columns, predictor expects {}",
                x.ncols(),
                self.weights.len()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_cols(&x)?;
        let scaled;
        let x = match &self.scaler {
            Some(s) => {
                scaled = s.transform(x);
                scaled.view()
            }
            None => x,
        };
        Ok(x.axis_iter(Axis(0))
            .map(|row| {
                let mut z = self.bias;
                for (w, v) in self.weights.iter().zip(row) {
                    if *v != 0.0 {
                        z += w * v;
                    }
                }
                z
            })
            .collect())
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[u8]) -> Result<f64> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} rows, {} labels", x.nrows(), y.len())));
        }
        if y.is_empty() {
            return Ok(0.0);
        }
        let correct = self
            .logits(x)?
            .into_iter()
            .zip(y)
            .filter(|(z, &t)| decide(*z) == (t == 1))
            .count();
        Ok(correct as f64 / y.len() as f64)
    }
}

/// Mean logistic loss and its gradient `(d/dw, d/db)` at `(w, b)`.
pub fn loss_and_grad(x: ArrayView2<f64>, y: &[u8], w: ArrayView1<f64>, b: f64) -> (f64, Array1<f64>, f64) {
    let n = x.nrows().max(1) as f64;
    let z = x.dot(&w) + b;
    let mut loss = 0.0;
    let mut gw = Array1::zeros(x.ncols());
    let mut gb = 0.0;
    // row-wise accumulation beats a strided transposed product
    for ((&zk, &yk), row) in z.iter().zip(y).zip(x.rows()) {
        let t = yk as f64;
        loss += softplus(zk) - t * zk;
        let r = sigmoid(zk) - t;
        gw.scaled_add(r, &row);
        gb += r;
    }
    (loss / n, gw / n, gb / n)
}

fn loss(x: ArrayView2<f64>, y: &[u8], w: ArrayView1<f64>, b: f64) -> f64 {
    let n = x.nrows().max(1) as f64;
    let z = x.dot(&w) + b;
    z.iter().zip(y).map(|(&zk, &yk)| softplus(zk) - yk as f64 * zk).sum::<f64>() / n
}

fn l1_norm(w: &Array1<f64>) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// Infinity norm of the optimality residual of the penalized objective.
fn residual_norm(w: &Array1<f64>, gw: &Array1<f64>, gb: f64, l1: f64) -> f64 {
    let mut r = gb.abs();
    for (&wj, &gj) in w.iter().zip(gw) {
        let rj = if l1 == 0.0 {
            gj.abs()
        } else if wj != 0.0 {
            (gj + l1 * wj.signum()).abs()
        } else {
            (gj.abs() - l1).max(0.0)
        };
        r = r.max(rj);
    }
    r
}

/// Fits the predictor. `warm_start` seeds the optimizer; the result does not
/// depend on it beyond the tolerance when the problem has a unique optimum.
pub fn fit(
    x: ArrayView2<f64>,
    y: &[u8],
    cfg: &FitConfig,
    warm_start: Option<&LinearPredictor>,
) -> Result<LinearPredictor> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows, {} labels", x.nrows(), y.len())));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Invalid("fitting needs both classes in the labels".into()));
    }
    let scaler = cfg.standardize.then(|| Standardizer::fit(x));
    let scaled;
    let design = match &scaler {
        Some(s) => {
            scaled = s.transform(x);
            scaled.view()
        }
        None => x,
    };

    let p = design.ncols();
    let (mut w, mut b) = match warm_start {
        Some(m) if m.weights.len() == p && m.weights.iter().chain([&m.bias]).all(|v| v.is_finite()) => {
            (Array1::from(m.weights.clone()), m.bias)
        }
        Some(m) if m.weights.len() != p => {
            return Err(Error::Dimension(format!(
                "warm start has {} weights, design has {p} columns",
                m.weights.len()
            )))
        }
        _ => (Array1::zeros(p), 0.0),
    };

    let diagnostics = if cfg.l1_weight == 0.0 {
        newton(design, y, cfg, &mut w, &mut b)
    } else {
        proximal(design, y, cfg, &mut w, &mut b)
    };
    if !diagnostics.converged {
        log::debug!(
            "logistic fit stopped after {} iterations with residual {:.3e}",
            diagnostics.iterations,
            diagnostics.grad_norm
        );
    }
    Ok(LinearPredictor {
        weights: w.to_vec(),
        bias: b,
        l1_weight: cfg.l1_weight,
        scaler,
        diagnostics,
    })
}

/// Solves `(h + damping I) d = g` by Cholesky, raising the damping until the
/// factorization succeeds.
fn damped_solve(h: &Array2<f64>, g: &Array1<f64>) -> Array1<f64> {
    let n = g.len();
    let max_diag = (0..n).map(|k| h[[k, k]]).fold(0.0f64, f64::max).max(1e-300);
    let mut damping = 0.0;
    loop {
        if let Some(l) = cholesky(h, damping) {
            // forward then backward substitution
            let mut z = Array1::zeros(n);
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[[i, k]] * z[k]).sum();
                z[i] = (g[i] - s) / l[[i, i]];
            }
            let mut d = Array1::zeros(n);
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|k| l[[k, i]] * d[k]).sum();
                d[i] = (z[i] - s) / l[[i, i]];
            }
            return d;
        }
        damping = if damping == 0.0 { max_diag * 1e-12 } else { damping * 10.0 };
    }
}

fn cholesky(h: &Array2<f64>, damping: f64) -> Option<Array2<f64>> {
    let n = h.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                let v = h[[i, i]] + damping - s;
                if !(v > 0.0) || !v.is_finite() {
                    return None;
                }
                l[[i, i]] = v.sqrt();
            } else {
                l[[i, j]] = (h[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    // reject numerically singular factors
    let diag_min = (0..n).map(|k| l[[k, k]]).fold(f64::INFINITY, f64::min);
    let diag_max = (0..n).map(|k| l[[k, k]]).fold(0.0f64, f64::max);
    (diag_min > diag_max * 1e-8).then_some(l)
}

fn newton(x: ArrayView2<f64>, y: &[u8], cfg: &FitConfig, w: &mut Array1<f64>, b: &mut f64) -> FitDiagnostics {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut iterations = 0;
    let mut stalled = false;
    let (mut loss, mut gw, mut gb) = loss_and_grad(x, y, w.view(), *b);
    loop {
        let grad_norm = residual_norm(w, &gw, gb, 0.0);
        if grad_norm <= cfg.tol || iterations >= cfg.max_iter || stalled {
            return FitDiagnostics {
                iterations,
                grad_norm,
                converged: grad_norm <= cfg.tol,
            };
        }
        iterations += 1;

        // Hessian of the mean loss, intercept last.
        let z = x.dot(&*w) + *b;
        let mut h = Array2::<f64>::zeros((p + 1, p + 1));
        for (row, &zk) in x.axis_iter(Axis(0)).zip(z.iter()) {
            let s = sigmoid(zk);
            let wt = s * (1.0 - s);
            if wt == 0.0 {
                continue;
            }
            for a in 0..p {
                let va = row[a];
                if va == 0.0 {
                    continue;
                }
                for c in 0..=a {
                    h[[a, c]] += wt * va * row[c];
                }
                h[[p, a]] += wt * va;
            }
            h[[p, p]] += wt;
        }
        for a in 0..=p {
            for c in 0..a {
                h[[a, c]] /= n;
                h[[c, a]] = h[[a, c]];
            }
            h[[a, a]] /= n;
        }
        let mut g = Array1::zeros(p + 1);
        g.slice_mut(ndarray::s![..p]).assign(&gw);
        g[p] = gb;
        let d = damped_solve(&h, &g);
        let slope = g.dot(&d);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new = &*w - &(d.slice(ndarray::s![..p]).to_owned() * t);
            let b_new = *b - t * d[p];
            let (l_new, gw_new, gb_new) = loss_and_grad(x, y, w_new.view(), b_new);
            if l_new <= loss - 1e-4 * t * slope || (l_new <= loss && t < 1e-8) {
                *w = w_new;
                *b = b_new;
                stalled = l_new >= loss && residual_norm(w, &gw_new, gb_new, 0.0) >= residual_norm(w, &gw, gb, 0.0);
                loss = l_new;
                gw = gw_new;
                gb = gb_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            stalled = true;
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn proximal(x: ArrayView2<f64>, y: &[u8], cfg: &FitConfig, w: &mut Array1<f64>, b: &mut f64) -> FitDiagnostics {
    let l1 = cfg.l1_weight;
    let mut lipschitz = 1.0f64;
    let (mut vw, mut vb) = (w.clone(), *b);
    let mut momentum = 1.0f64;
    let mut obj = loss(x, y, w.view(), *b) + l1 * l1_norm(w);
    let mut iterations = 0;
    loop {
        let (_, gw, gb) = loss_and_grad(x, y, w.view(), *b);
        let grad_norm = residual_norm(w, &gw, gb, l1);
        if grad_norm <= cfg.tol || iterations >= cfg.max_iter {
            return FitDiagnostics {
                iterations,
                grad_norm,
                converged: grad_norm <= cfg.tol,
            };
        }
        iterations += 1;

        let (fv, gvw, gvb) = loss_and_grad(x, y, vw.view(), vb);
        let (w_new, b_new, f_new) = loop {
            let step = 1.0 / lipschitz;
            let w_new = Array1::from_iter(
                vw.iter()
                    .zip(&gvw)
                    .map(|(&v, &g)| soft_threshold(v - step * g, step * l1)),
            );
            let b_new = vb - step * gvb;
            let dw = &w_new - &vw;
            let db = b_new - vb;
            let f_new = loss(x, y, w_new.view(), b_new);
            let bound = fv + gvw.dot(&dw) + gvb * db + 0.5 * lipschitz * (dw.dot(&dw) + db * db);
            if f_new <= bound + 1e-12 || lipschitz > 1e12 {
                break (w_new, b_new, f_new);
            }
            lipschitz *= 2.0;
        };

        let obj_new = f_new + l1 * l1_norm(&w_new);
        if obj_new > obj {
            // restart momentum from the current iterate
            momentum = 1.0;
            vw = w.clone();
            vb = *b;
            continue;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next;
        vw = &w_new + &((&w_new - &*w) * beta);
        vb = b_new + beta * (b_new - *b);
        momentum = next;
        *w = w_new;
        *b = b_new;
        obj = obj_new;
        lipschitz = (lipschitz * 0.9).max(1e-6);
    }
}
