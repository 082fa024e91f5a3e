//! Small fully connected network: tanh hidden layers, linear output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_VERSION: u32 = 1;
pub const URGENCY_LAYERS: [usize; 4] = [4, 16, 16, 1];

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite target at sample {0}")]
    BadTarget(usize),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major, `n_out × n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel {
    pub format_version: u32,
    pub layers: Vec<Layer>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let r = (6.0 / (n_in + n_out) as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.gen_range(-r..=r)).collect(),
                    biases: vec![0.0; n_out],
                }
            })
            .collect();
        MlpModel {
            format_version: MODEL_VERSION,
            layers,
            mean: vec![0.0; sizes[0]],
            std: vec![1.0; sizes[0]],
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let mut m = MlpModel::new(sizes, 0);
        m.layers.iter_mut().for_each(|l| l.weights.fill(0.0));
        m
    }

    pub fn n_inputs(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.format_version != MODEL_VERSION {
            return Err(MlpError::Version(self.format_version));
        }
        let bad = |m: &str| Err(MlpError::Malformed(m.to_string()));
        if self.layers.is_empty() {
            return bad("no layers");
        }
        if self.layers.last().unwrap().n_out != 1 {
            return bad("output layer must have one unit");
        }
        let mut n = self.n_inputs();
        if self.std.len() != n {
            return bad("mean and std lengths differ");
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("std must be positive");
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.n_in != n || l.weights.len() != l.n_in * l.n_out || l.biases.len() != l.n_out {
                return Err(MlpError::Malformed(format!(
                    "layer {k} has inconsistent dimensions"
                )));
            }
            n = l.n_out;
        }
        if self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .chain(&self.mean)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite parameter");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, MlpError> {
        let m: MlpModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String, MlpError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Activations of every layer, input first.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![self.normalize(x)];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let a = acts.last().unwrap();
            let z: Vec<f64> = (0..l.n_out)
                .map(|o| {
                    let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                    l.biases[o] + row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect();
            acts.push(if k < last {
                z.into_iter().map(f64::tanh).collect()
            } else {
                z
            });
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, MlpError> {
        if x.len() != self.n_inputs() {
            return Err(MlpError::Dimension {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        Ok(self.predict(x))
    }

    /// Forward pass without the dimension check.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.activations(x).last().unwrap()[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.biases.iter_mut())
                .for_each(|w| *w = it.next().unwrap());
        }
    }

    /// Output and its gradient with respect to the flattened parameters.
    pub fn gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let acts = self.activations(x);
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut delta = vec![1.0];
        for (k, l) in self.layers.iter().enumerate().rev() {
            let a = &acts[k];
            let mut g = Vec::with_capacity(l.weights.len() + l.biases.len());
            for d in &delta {
                g.extend(a.iter().map(|x| d * x));
            }
            g.extend(&delta);
            grads.push(g);
            if k > 0 {
                delta = (0..l.n_in)
                    .map(|i| {
                        let back: f64 = (0..l.n_out)
                            .map(|o| l.weights[o * l.n_in + i] * delta[o])
                            .sum();
                        back * (1.0 - a[i] * a[i])
                    })
                    .collect();
            }
        }
        grads.reverse();
        (acts.last().unwrap()[0], grads.concat())
    }
}

/// Largest relative difference between the analytic parameter gradient and a
/// central difference.
pub fn grad_check(model: &MlpModel, x: &[f64], eps: f64) -> f64 {
    let (_, analytic) = model.gradient(x);
    let base = model.params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + eps;
        probe.set_params(&p);
        let up = probe.predict(x);
        p[k] = base[k] - eps;
        probe.set_params(&p);
        let down = probe.predict(x);
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((a - numeric).abs() / a.abs().max(1e-8));
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub x_i: Vec<f64>,
    pub x_j: Vec<f64>,
    /// Desired `u_i - u_j`.
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            momentum: 0.9,
            batch: 64,
            seed: 0,
        }
    }
}

pub fn pair_loss(model: &MlpModel, s: &PairSample) -> f64 {
    let d = model.predict(&s.x_i) - model.predict(&s.x_j) - s.target;
    d * d
}

pub fn mean_pair_loss(model: &MlpModel, data: &[PairSample]) -> f64 {
    data.iter().map(|s| pair_loss(model, s)).sum::<f64>() / data.len().max(1) as f64
}

/// Fraction of nonzero-target pairs whose predicted difference has the
/// target's sign.
pub fn sign_accuracy(model: &MlpModel, data: &[PairSample]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for s in data.iter().filter(|s| s.target != 0.0) {
        n += 1;
        let d = model.predict(&s.x_i) - model.predict(&s.x_j);
        if d * s.target > 0.0 {
            hit += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        hit as f64 / n as f64
    }
}

/// Per-feature mean and std over both members of every pair.
pub fn feature_stats(data: &[PairSample]) -> (Vec<f64>, Vec<f64>) {
    let n_in = data[0].x_i.len();
    let rows: Vec<&Vec<f64>> = data.iter().flat_map(|s| [&s.x_i, &s.x_j]).collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..n_in)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    let std = (0..n_in)
        .map(|k| {
            let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 1e-12 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Fits `f(x_i) - f(x_j)` to the targets with minibatch SGD and momentum.
/// Normalization statistics are taken from the data. Returns the model and
/// the mean loss of every epoch.
pub fn train_pairwise(
    model: &MlpModel,
    data: &[PairSample],
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<f64>), MlpError> {
    if data.is_empty() {
        return Err(MlpError::EmptyDataset);
    }
    for (k, s) in data.iter().enumerate() {
        if !s.target.is_finite() {
            return Err(MlpError::BadTarget(k));
        }
        for x in [&s.x_i, &s.x_j] {
            if x.len() != model.n_inputs() {
                return Err(MlpError::Dimension {
                    expected: model.n_inputs(),
                    got: x.len(),
                });
            }
        }
    }
    let mut model = model.clone();
    (model.mean, model.std) = feature_stats(data);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch.max(1)).enumerate() {
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for &idx in chunk {
                let s = &data[idx];
                let (fi, gi) = model.gradient(&s.x_i);
                let (fj, gj) = model.gradient(&s.x_j);
                let d = fi - fj - s.target;
                loss += d * d;
                for ((g, a), c) in grad.iter_mut().zip(&gi).zip(&gj) {
                    *g += 2.0 * d * (a - c);
                }
            }
            if !loss.is_finite() {
                return Err(MlpError::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            total += loss;
            let scale = 1.0 / chunk.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.lr * g * scale;
                *p += *v;
            }
            model.set_params(&params);
        }
        history.push(total / data.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros(&URGENCY_LAYERS);
        assert_eq!(m.forward(&[3.0, -1.0, 7.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(MlpError::Dimension {
                expected: 4,
                got: 1
            })
        ));
    }

    #[test]
    fn hand_set_single_feature_net() {
        let mut m = MlpModel::zeros(&[1, 1, 1, 1]);
        m.layers[0].weights = vec![0.5];
        m.layers[0].biases = vec![0.1];
        m.layers[1].weights = vec![2.0];
        m.layers[2].weights = vec![3.0];
        m.layers[2].biases = vec![-1.0];
        m.mean = vec![1.0];
        m.std = vec![2.0];
        // x̂ = (5 - 1) / 2 = 2
        let expect = 3.0 * (2.0 * (0.5f64 * 2.0 + 0.1).tanh()).tanh() - 1.0;
        assert!((m.forward(&[5.0]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn input_at_mean_matches_zero_input() {
        let mut m = MlpModel::new(&URGENCY_LAYERS, 3);
        let base = m.predict(&[0.0; 4]);
        m.mean = vec![10.0, 5.0, 1.0, 2.0];
        m.std = vec![3.0, 2.0, 1.0, 4.0];
        assert_eq!(m.predict(&[10.0, 5.0, 1.0, 2.0]), base);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10 {
            let mut m = MlpModel::new(&URGENCY_LAYERS, seed);
            let p: Vec<f64> = m
                .params()
                .iter()
                .map(|w| w + rng.gen_range(-0.3..0.3))
                .collect();
            m.set_params(&p);
            let x = random_x(&mut rng, 4);
            let err = grad_check(&m, &x, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
        assert_eq!(
            grad_check(
                &MlpModel::zeros(&URGENCY_LAYERS),
                &[1.0, 2.0, 3.0, 4.0],
                1e-5
            ),
            0.0
        );
    }

    #[test]
    fn gradient_check_holds_after_training_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<PairSample> = (0..64)
            .map(|_| PairSample {
                x_i: random_x(&mut rng, 4),
                x_j: random_x(&mut rng, 4),
                target: rng.gen_range(-1.0..1.0),
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let (m, _) = train_pairwise(&MlpModel::new(&URGENCY_LAYERS, 1), &data, &cfg).unwrap();
        assert!(grad_check(&m, &data[0].x_i, 1e-5) < 1e-4);
    }

    #[test]
    fn identical_pair_with_zero_target_has_zero_loss() {
        let m = MlpModel::new(&URGENCY_LAYERS, 2);
        let s = PairSample {
            x_i: vec![1.0, 2.0, 3.0, 4.0],
            x_j: vec![1.0, 2.0, 3.0, 4.0],
            target: 0.0,
        };
        assert_eq!(pair_loss(&m, &s), 0.0);
        let (_, hist) = train_pairwise(
            &m,
            &[s],
            &TrainConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(hist[0], 0.0);
    }

    #[test]
    fn loss_is_antisymmetric_in_the_pair() {
        let m = MlpModel::new(&URGENCY_LAYERS, 4);
        let s = PairSample {
            x_i: vec![1.0, 0.5, 3.0, 0.0],
            x_j: vec![-2.0, 1.0, 0.0, 1.0],
            target: 0.7,
        };
        let swapped = PairSample {
            x_i: s.x_j.clone(),
            x_j: s.x_i.clone(),
            target: -s.target,
        };
        assert!((pair_loss(&m, &s) - pair_loss(&m, &swapped)).abs() < 1e-12);
    }

    fn linear_dataset(n: usize, seed: u64) -> Vec<PairSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (x_i, x_j) = (random_x(&mut rng, 4), random_x(&mut rng, 4));
                let target = 1.5 * (x_i[0] - x_j[0]);
                PairSample { x_i, x_j, target }
            })
            .collect()
    }

    #[test]
    fn learns_linear_target() {
        let data = linear_dataset(2000, 9);
        let (m, hist) = train_pairwise(
            &MlpModel::new(&URGENCY_LAYERS, 0),
            &data,
            &TrainConfig::default(),
        )
        .unwrap();
        let t: Vec<f64> = data.iter().map(|s| s.target).collect();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let std = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
        let rmse = mean_pair_loss(&m, &data).sqrt();
        assert!(rmse < 0.05 * std, "rmse {rmse}, std {std}");
        assert!(hist.last().unwrap() < &hist[0]);
        assert!(sign_accuracy(&m, &data) > 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let data = linear_dataset(200, 1);
        let cfg = TrainConfig {
            epochs: 5,
            seed: 7,
            ..Default::default()
        };
        let a = train_pairwise(&MlpModel::new(&URGENCY_LAYERS, 0), &data, &cfg).unwrap();
        let b = train_pairwise(&MlpModel::new(&URGENCY_LAYERS, 0), &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_data() {
        let m = MlpModel::new(&URGENCY_LAYERS, 0);
        assert!(matches!(
            train_pairwise(&m, &[], &TrainConfig::default()),
            Err(MlpError::EmptyDataset)
        ));
        let s = PairSample {
            x_i: vec![0.0; 4],
            x_j: vec![0.0; 4],
            target: f64::NAN,
        };
        assert!(matches!(
            train_pairwise(&m, &[s], &TrainConfig::default()),
            Err(MlpError::BadTarget(0))
        ));
        let s = PairSample {
            x_i: vec![1e200; 4],
            x_j: vec![-1e200; 4],
            target: 1e300,
        };
        assert!(matches!(
            train_pairwise(&m, &[s.clone(), s], &TrainConfig::default()),
            Err(MlpError::Diverged { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let m = MlpModel::new(&URGENCY_LAYERS, 8);
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.clone();
        bad.std[0] = 0.0;
        assert!(MlpModel::from_json(&bad.to_json().unwrap()).is_err());
        let mut bad = m;
        bad.format_version = 9;
        assert!(matches!(
            MlpModel::from_json(&bad.to_json().unwrap()),
            Err(MlpError::Version(9))
        ));
    }
}
