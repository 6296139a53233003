//! Logistic-regression classifiers on frozen embeddings.
//!
//! All modes minimize the mean negative log-likelihood plus
//! `reg / 2 * |W|^2` (biases unregularized) by full-batch gradient descent
//! with Barzilai-Borwein steps and an Armijo backtracking safeguard.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Multinomial,
    #[serde(rename = "ovr")]
    OneVsRest,
    Binary,
}

/// Training targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<'a> {
    /// One class id per row. `Binary` expects ids 0/1.
    Classes(&'a [usize]),
    /// Binary membership rows, `OneVsRest` only.
    MultiLabel(&'a [Vec<bool>]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub reg: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            reg: 1e-4,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub mode: Mode,
    pub dim: usize,
    /// `rows x dim`, row-major. One row for `Binary`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub reg: f64,
    /// Gradient norm at the returned solution (max over binary subproblems).
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Hadamard product of two endpoint embeddings.
pub fn edge_feature(z_u: &[f64], z_v: &[f64]) -> Result<Vec<f64>> {
    if z_u.len() != z_v.len() {
        return Err(Error::Argument(format!(
            "edge endpoints have dims {} and {}",
            z_u.len(),
            z_v.len()
        )));
    }
    Ok(z_u.iter().zip(z_v).map(|(a, b)| a * b).collect())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A smooth objective over a flat parameter vector (`rows * (dim + 1)`,
/// weights first, then biases).
trait Objective {
    fn len(&self) -> usize;
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

struct BinaryProblem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    dim: usize,
    reg: f64,
}

impl Objective for BinaryProblem<'_> {
    fn len(&self) -> usize {
        self.dim + 1
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (w, b) = theta.split_at(self.dim);
        grad.fill(0.0);
        let inv = 1.0 / self.x.len() as f64;
        let mut f = 0.0;
        for (row, &y) in self.x.iter().zip(&self.y) {
            let s = b[0] + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            f += softplus(s) - y * s;
            let r = (sigmoid(s) - y) * inv;
            for (g, xi) in grad[..self.dim].iter_mut().zip(row) {
                *g += r * xi;
            }
            grad[self.dim] += r;
        }
        f *= inv;
        for (g, wi) in grad[..self.dim].iter_mut().zip(w) {
            *g += self.reg * wi;
            f += 0.5 * self.reg * wi * wi;
        }
        f
    }
}

struct SoftmaxProblem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    dim: usize,
    classes: usize,
    reg: f64,
}

impl Objective for SoftmaxProblem<'_> {
    fn len(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (c, d) = (self.classes, self.dim);
        let (w, b) = theta.split_at(c * d);
        grad.fill(0.0);
        let inv = 1.0 / self.x.len() as f64;
        let mut f = 0.0;
        let mut s = vec![0.0; c];
        for (row, &y) in self.x.iter().zip(self.y) {
            for k in 0..c {
                s[k] = b[k]
                    + w[k * d..(k + 1) * d]
                        .iter()
                        .zip(row)
                        .map(|(a, x)| a * x)
                        .sum::<f64>();
            }
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            f += m + z.ln() - s[y];
            for k in 0..c {
                let r = ((s[k] - m).exp() / z - f64::from(u8::from(k == y))) * inv;
                for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(row) {
                    *g += r * xi;
                }
                grad[c * d + k] += r;
            }
        }
        f *= inv;
        for (g, wi) in grad[..c * d].iter_mut().zip(w) {
            *g += self.reg * wi;
            f += 0.5 * self.reg * wi * wi;
        }
        f
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Returns (theta, gradient norm, iterations).
fn minimize(obj: &dyn Objective, opts: &FitOptions) -> (Vec<f64>, f64, usize) {
    let n = obj.len();
    let mut theta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut f = obj.eval(&theta, &mut grad);
    let mut step = 1.0;
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    for it in 0..opts.max_iter {
        let gnorm = norm(&grad);
        if gnorm < opts.tol {
            return (theta, gnorm, it);
        }
        let gg = gnorm * gnorm;
        let mut t = step;
        let f_new = loop {
            for i in 0..n {
                trial[i] = theta[i] - t * grad[i];
            }
            let fv = obj.eval(&trial, &mut trial_grad);
            if fv <= f - 1e-4 * t * gg || t < 1e-20 {
                break fv;
            }
            t *= 0.5;
        };
        // Barzilai-Borwein step for the next iteration.
        let mut sy = 0.0;
        let mut ss = 0.0;
        for i in 0..n {
            let s = trial[i] - theta[i];
            sy += s * (trial_grad[i] - grad[i]);
            ss += s * s;
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            t * 2.0
        };
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        f = f_new;
    }
    let gnorm = norm(&grad);
    (theta, gnorm, opts.max_iter)
}

fn check_rows(x: &[Vec<f64>], labels: usize) -> Result<usize> {
    if x.len() != labels {
        return Err(Error::Argument(format!(
            "{} rows but {labels} targets",
            x.len()
        )));
    }
    let dim = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::Argument("ragged feature rows".into()));
    }
    if x.is_empty() {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    Ok(dim)
}

fn fit_binary(
    x: &[Vec<f64>],
    y: Vec<f64>,
    dim: usize,
    opts: &FitOptions,
) -> (Vec<f64>, f64, f64, usize) {
    let p = BinaryProblem {
        x,
        y,
        dim,
        reg: opts.reg,
    };
    let (theta, g, it) = minimize(&p, opts);
    (theta[..dim].to_vec(), theta[dim], g, it)
}

pub fn fit(
    x: &[Vec<f64>],
    y: Targets<'_>,
    mode: Mode,
    opts: &FitOptions,
) -> Result<LinearClassifier> {
    let (classes, rows) = match y {
        Targets::Classes(c) => (c.iter().max().map_or(0, |m| m + 1), c.len()),
        Targets::MultiLabel(m) => (m.first().map_or(0, Vec::len), m.len()),
    };
    let dim = check_rows(x, rows)?;
    let mut clf = LinearClassifier {
        mode,
        dim,
        weight: Vec::new(),
        bias: Vec::new(),
        reg: opts.reg,
        grad_norm: 0.0,
        iterations: 0,
    };
    match (mode, y) {
        (Mode::Binary, Targets::Classes(c)) => {
            if c.iter().any(|&k| k > 1) {
                return Err(Error::Argument("binary targets must be 0 or 1".into()));
            }
            require_two_classes(c)?;
            let (w, b, g, it) = fit_binary(x, c.iter().map(|&k| k as f64).collect(), dim, opts);
            clf.weight = w;
            clf.bias = vec![b];
            clf.grad_norm = g;
            clf.iterations = it;
        }
        (Mode::Multinomial, Targets::Classes(c)) => {
            require_two_classes(c)?;
            let p = SoftmaxProblem {
                x,
                y: c,
                dim,
                classes,
                reg: opts.reg,
            };
            let (theta, g, it) = minimize(&p, opts);
            clf.weight = theta[..classes * dim].to_vec();
            clf.bias = theta[classes * dim..].to_vec();
            clf.grad_norm = g;
            clf.iterations = it;
        }
        (Mode::OneVsRest, targets) => {
            let membership = |k: usize| -> Vec<f64> {
                match targets {
                    Targets::Classes(c) => c.iter().map(|&v| f64::from(u8::from(v == k))).collect(),
                    Targets::MultiLabel(m) => m.iter().map(|r| f64::from(u8::from(r[k]))).collect(),
                }
            };
            if let Targets::Classes(c) = targets {
                require_two_classes(c)?;
            }
            if let Targets::MultiLabel(m) = targets {
                if m.iter().any(|r| r.len() != classes) {
                    return Err(Error::Argument("ragged label rows".into()));
                }
            }
            for k in 0..classes {
                let (w, b, g, it) = fit_binary(x, membership(k), dim, opts);
                clf.weight.extend(w);
                clf.bias.push(b);
                clf.grad_norm = clf.grad_norm.max(g);
                clf.iterations = clf.iterations.max(it);
            }
        }
        (m, Targets::MultiLabel(_)) => {
            return Err(Error::Argument(format!(
                "{m:?} does not take multi-label targets"
            )))
        }
    }
    Ok(clf)
}

fn require_two_classes(c: &[usize]) -> Result<()> {
    let first = c[0];
    if c.iter().all(|&k| k == first) {
        return Err(Error::DegenerateData(format!("only class {first} present")));
    }
    Ok(())
}

impl LinearClassifier {
    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    /// Raw scores, one per weight row.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Argument(format!(
                "input has dim {}, classifier expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok((0..self.rows())
            .map(|k| {
                self.bias[k]
                    + self.weight[k * self.dim..(k + 1) * self.dim]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect())
    }

    /// Hard labels. Binary: class 1 iff `sigmoid(score) >= 0.5`. Otherwise
    /// argmax over rows, ties to the lower class id.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        x.iter()
            .map(|row| {
                let s = self.scores(row)?;
                Ok(match self.mode {
                    Mode::Binary => usize::from(sigmoid(s[0]) >= 0.5),
                    _ => argmax(&s),
                })
            })
            .collect()
    }

    /// Per-class decisions at `sigmoid(score) >= 0.5`.
    pub fn predict_multilabel(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<bool>>> {
        if self.mode != Mode::OneVsRest {
            return Err(Error::Argument(
                "multi-label prediction needs a one-vs-rest model".into(),
            ));
        }
        x.iter()
            .map(|row| {
                Ok(self
                    .scores(row)?
                    .into_iter()
                    .map(|s| sigmoid(s) >= 0.5)
                    .collect())
            })
            .collect()
    }
}

fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in s.iter().enumerate().skip(1) {
        if v > s[best] {
            best = k;
        }
    }
    best
}
