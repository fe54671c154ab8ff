//! Reference classifiers: k-nearest neighbours, multinomial logistic
//! regression, and self-training on top of logistic regression.

use crate::error::{ensure, Error, Result};
use crate::losses::{log_sum_exp, softmax};
use crate::synth::{ClutterClass, Dataset, SignalBatch};
use crate::trainer::accuracy;

fn labeled(batch: &SignalBatch) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (s, l) in batch.iter() {
        if let Some(c) = l {
            xs.push(s.iter().map(|&v| v as f64).collect());
            ys.push(c.label());
        }
    }
    ensure!(!xs.is_empty(), Empty, "no labeled samples");
    Ok((xs, ys))
}

fn test_labels(test: &SignalBatch) -> Result<Vec<usize>> {
    ensure!(!test.is_empty(), Empty, "empty test set");
    test.labels()
        .iter()
        .map(|l| l.map(ClutterClass::label).ok_or_else(|| Error::Label("unlabeled test sample".into())))
        .collect()
}

fn to_f64(s: &[f32]) -> Vec<f64> {
    s.iter().map(|&v| v as f64).collect()
}

/// Majority vote among the `k` nearest stored samples (L2).
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    signals: Vec<Vec<f64>>,
    labels: Vec<usize>,
    k: usize,
    num_classes: usize,
}

impl KnnModel {
    pub const DEFAULT_K: usize = 5;

    pub fn new(signals: Vec<Vec<f64>>, labels: Vec<usize>, k: usize, num_classes: usize) -> Result<Self> {
        ensure!(!signals.is_empty(), Empty, "kNN needs training samples");
        ensure!(signals.len() == labels.len(), Dimension, "signal and label counts differ");
        ensure!(k >= 1 && k % 2 == 1, Parameter, "k must be positive and odd, got {k}");
        ensure!(
            k <= signals.len(),
            Parameter,
            "k = {k} exceeds the {} training samples",
            signals.len()
        );
        let len = signals[0].len();
        ensure!(signals.iter().all(|s| s.len() == len), Dimension, "ragged training signals");
        ensure!(
            labels.iter().all(|&l| l < num_classes),
            Label,
            "label outside 0..{num_classes}"
        );
        Ok(Self {
            signals,
            labels,
            k,
            num_classes,
        })
    }

    /// Stores the labeled samples of `batch`.
    pub fn from_batch(batch: &SignalBatch, k: usize) -> Result<Self> {
        let (xs, ys) = labeled(batch)?;
        Self::new(xs, ys, k, ClutterClass::COUNT)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        ensure!(
            x.len() == self.signals[0].len(),
            Dimension,
            "query of length {}, model expects {}",
            x.len(),
            self.signals[0].len()
        );
        let mut dist: Vec<(f64, usize)> = self
            .signals
            .iter()
            .enumerate()
            .map(|(i, s)| (s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        // Ties in distance resolve by sample index for determinism.
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; self.num_classes];
        for &(_, i) in &dist[..self.k] {
            votes[self.labels[i]] += 1;
        }
        let best = *votes.iter().max().expect("at least one class");
        Ok(votes.iter().position(|&v| v == best).expect("maximum exists"))
    }

    pub fn accuracy(&self, test: &SignalBatch) -> Result<f64> {
        let truth = test_labels(test)?;
        let pred = test
            .iter()
            .map(|(s, _)| self.classify(&to_f64(s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(accuracy(&pred, &truth))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRegConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Coefficient of `0.5 * ||W||^2` (bias not penalised).
    pub l2: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            iterations: 300,
            l2: 1e-3,
        }
    }
}

/// Multinomial logistic regression, `logits = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    /// Row-major `[K, D]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
}

impl LogRegModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
            num_classes,
            dim,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|k| {
                let w = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Argmax of the logits, lowest class on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for (k, &v) in l.iter().enumerate() {
            if v > l[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, test: &SignalBatch) -> Result<f64> {
        let truth = test_labels(test)?;
        let pred: Vec<usize> = test.iter().map(|(s, _)| self.predict(&to_f64(s))).collect();
        Ok(accuracy(&pred, &truth))
    }

    /// Mean cross-entropy plus the L2 penalty, and its gradient
    /// `(dW, db)`.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = xs.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.num_classes];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let l = self.logits(x);
            loss += log_sum_exp(&l) - l[y];
            let p = softmax(&l);
            for k in 0..self.num_classes {
                let d = (p[k] - if k == y { 1.0 } else { 0.0 }) / n;
                gb[k] += d;
                for (g, xi) in gw[k * self.dim..(k + 1) * self.dim].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        loss /= n;
        loss += 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (loss, gw, gb)
    }

    /// Full-batch gradient descent from zero weights. Returns the model and
    /// the loss before every step plus the final loss.
    pub fn train(xs: &[Vec<f64>], ys: &[usize], num_classes: usize, cfg: &LogRegConfig) -> Result<(Self, Vec<f64>)> {
        ensure!(!xs.is_empty(), Empty, "logistic regression needs samples");
        ensure!(xs.len() == ys.len(), Dimension, "signal and label counts differ");
        ensure!(cfg.lr > 0.0 && cfg.l2 >= 0.0, Parameter, "invalid logistic regression settings {cfg:?}");
        for c in 0..num_classes {
            ensure!(ys.contains(&c), Label, "class {c} has no training sample");
        }
        ensure!(ys.iter().all(|&y| y < num_classes), Label, "label outside 0..{num_classes}");
        let dim = xs[0].len();
        ensure!(xs.iter().all(|x| x.len() == dim), Dimension, "ragged training signals");
        let mut model = Self::zeros(num_classes, dim);
        let mut trace = Vec::with_capacity(cfg.iterations + 1);
        for _ in 0..cfg.iterations {
            let (loss, gw, gb) = model.loss_and_grad(xs, ys, cfg.l2);
            trace.push(loss);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.lr * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= cfg.lr * g;
            }
        }
        trace.push(model.loss_and_grad(xs, ys, cfg.l2).0);
        ensure!(
            model.weights.iter().chain(&model.bias).all(|v| v.is_finite()),
            Contract,
            "logistic regression diverged; lower the learning rate"
        );
        Ok((model, trace))
    }

    pub fn from_batch(batch: &SignalBatch, cfg: &LogRegConfig) -> Result<(Self, Vec<f64>)> {
        let (xs, ys) = labeled(batch)?;
        Self::train(&xs, &ys, ClutterClass::COUNT, cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfTrainingConfig {
    pub logreg: LogRegConfig,
    /// Unlabeled samples whose top class probability reaches this value are
    /// pseudo-labeled. At 1.0 or above nothing is ever added.
    pub threshold: f64,
    pub max_rounds: usize,
}

impl Default for SelfTrainingConfig {
    fn default() -> Self {
        Self {
            logreg: LogRegConfig::default(),
            threshold: 0.95,
            max_rounds: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfTrainingResult {
    pub model: LogRegModel,
    pub accuracy: f64,
    /// Pseudo-labels added in each round.
    pub added: Vec<usize>,
}

/// Iterative pseudo-labeling on top of logistic regression. Labeled train
/// samples seed the model; confident unlabeled ones are added each round.
pub fn self_training_baseline(dataset: &Dataset, cfg: &SelfTrainingConfig) -> Result<SelfTrainingResult> {
    ensure!(cfg.threshold > 0.0, Parameter, "threshold must be positive");
    let train = dataset.train();
    let test = dataset.test();
    let (mut xs, mut ys) = labeled(&train)?;
    let mut pool: Vec<Vec<f64>> = train
        .iter()
        .filter(|(_, l)| l.is_none())
        .map(|(s, _)| to_f64(s))
        .collect();
    ensure!(!test.is_empty(), Empty, "empty test set");

    let (mut model, _) = LogRegModel::train(&xs, &ys, ClutterClass::COUNT, &cfg.logreg)?;
    let mut added = Vec::new();
    for _ in 0..cfg.max_rounds {
        if pool.is_empty() || cfg.threshold >= 1.0 {
            break;
        }
        let mut keep = Vec::with_capacity(pool.len());
        let mut n = 0;
        for x in pool {
            let p = model.probabilities(&x);
            let k = model.predict(&x);
            if p[k] >= cfg.threshold {
                xs.push(x);
                ys.push(k);
                n += 1;
            } else {
                keep.push(x);
            }
        }
        pool = keep;
        added.push(n);
        if n == 0 {
            break;
        }
        model = LogRegModel::train(&xs, &ys, ClutterClass::COUNT, &cfg.logreg)?.0;
    }
    let accuracy = model.accuracy(&test)?;
    Ok(SelfTrainingResult { model, accuracy, added })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_votes() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0], vec![6.0, 5.0]];
        let m = KnnModel::new(xs.clone(), vec![0, 1, 1, 2, 2], 3, 3).unwrap();
        assert_eq!(m.classify(&[0.1, 0.1]).unwrap(), 1);
        let m1 = KnnModel::new(xs.clone(), vec![0, 1, 1, 2, 2], 1, 3).unwrap();
        assert_eq!(m1.classify(&[5.0, 5.0]).unwrap(), 2);
        assert!(KnnModel::new(xs.clone(), vec![0; 5], 2, 3).is_err());
        assert!(KnnModel::new(xs, vec![0; 5], 7, 3).is_err());
    }

    #[test]
    fn logreg_requires_every_class() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(LogRegModel::train(&xs, &[0, 1], 3, &LogRegConfig::default()).is_err());
        assert!(LogRegModel::train(&xs, &[0, 1], 2, &LogRegConfig::default()).is_ok());
    }
}
