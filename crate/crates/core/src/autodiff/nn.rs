use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{relaxed_sample, BatchStats, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Standard Gumbel(0, 1) noise.
pub fn sample_gumbel(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// Draws one Gumbel-Softmax sample outside of a tape.
pub fn gumbel_softmax(logits: &Tensor, tau: f64, hard: bool, rng: &mut Rng) -> Result<Tensor> {
    let noise = sample_gumbel(logits.rows(), logits.cols(), rng);
    let soft = relaxed_sample(logits, &noise, tau)?;
    Ok(if hard { soft.one_hot_argmax() } else { soft })
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// `Linear -> BatchNorm -> ReLU -> Linear`. Without batch norm the middle step is skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub batch_norm: bool,
}

/// Tape handles for the six trainable tensors of an [`Mlp`], in [`Mlp::PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct MlpVars(pub [Var; 6]);

impl Mlp {
    pub const PARAM_NAMES: [&'static str; 6] = ["w1", "b1", "gamma", "beta", "w2", "b2"];

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        let k1 = 1.0 / (input.max(1) as f64).sqrt();
        let k2 = 1.0 / (hidden as f64).sqrt();
        Mlp {
            w1: uniform(input, hidden, k1, rng),
            b1: uniform(1, hidden, k1, rng),
            gamma: Tensor::filled(1, hidden, 1.0),
            beta: Tensor::zeros(1, hidden),
            w2: uniform(hidden, output, k2, rng),
            b2: uniform(1, output, k2, rng),
            running_mean: vec![0.0; hidden],
            running_var: vec![1.0; hidden],
            batch_norm: true,
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_width(&self) -> usize {
        self.w2.cols()
    }

    pub fn params(&self) -> [&Tensor; 6] {
        [&self.w1, &self.b1, &self.gamma, &self.beta, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.gamma,
            &mut self.beta,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn bind<'g>(&self, tape: &mut Tape<'g>) -> MlpVars {
        MlpVars(self.params().map(|p| tape.leaf(p.clone())))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_width() {
            return Err(Error::Shape(format!(
                "MLP expects width {}, got {cols}",
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Training-mode forward on a tape. Returns the batch statistics for
    /// [`Mlp::update_running_stats`] when batch norm is on.
    pub fn forward_train<'g>(
        &self,
        tape: &mut Tape<'g>,
        vars: &MlpVars,
        x: Var,
    ) -> Result<(Var, Option<BatchStats>)> {
        self.check_input(tape.value(x).cols())?;
        let [w1, b1, gamma, beta, w2, b2] = vars.0;
        let h = tape.matmul(x, w1)?;
        let mut h = tape.add_bias(h, b1)?;
        let mut stats = None;
        if self.batch_norm {
            let (normed, s) = tape.batch_norm(h, gamma, beta, BN_EPS)?;
            h = normed;
            stats = Some(s);
        }
        let h = tape.relu(h);
        let out = tape.matmul(h, w2)?;
        Ok((tape.add_bias(out, b2)?, stats))
    }

    /// Evaluation-mode forward; batch norm uses the running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.cols())?;
        let mut h = x.matmul(&self.w1)?;
        let hidden = self.hidden_width();
        let (g, b) = (self.gamma.data(), self.beta.data());
        for r in 0..h.rows() {
            let row = h.row_mut(r);
            for c in 0..hidden {
                let mut v = row[c] + self.b1.data()[c];
                if self.batch_norm {
                    v = g[c] * (v - self.running_mean[c]) / (self.running_var[c] + BN_EPS).sqrt() + b[c];
                }
                row[c] = v.max(0.0);
            }
        }
        let mut out = h.matmul(&self.w2)?;
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(self.b2.data()) {
                *o += bv;
            }
        }
        Ok(out)
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update_running_stats(&mut self, stats: &BatchStats, momentum: f64) {
        let n = stats.count as f64;
        let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (1.0 - momentum) * self.running_mean[c] + momentum * stats.mean[c];
            self.running_var[c] =
                (1.0 - momentum) * self.running_var[c] + momentum * stats.var[c] * correction;
        }
    }
}
