//! Randomized finite-difference checks for every differentiable tape op.

use dtgnn::autodiff::gradcheck::{check_gradients, DEFAULT_STEP};
use dtgnn::autodiff::{sample_gumbel, Mlp, Tensor, BN_EPS};
use dtgnn::graph::Csr;
use dtgnn::rng::{self, Rng};
use rand::Rng as _;

pub const OPS: [&str; 12] = [
    "matmul",
    "add_bias",
    "add",
    "relu",
    "batch_norm",
    "softmax",
    "gumbel_softmax_soft",
    "gumbel_softmax_straight_through",
    "sum_aggregate",
    "concat",
    "cross_entropy",
    "mlp",
];

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Entries bounded away from zero so the finite-difference stencil never crosses a kink.
fn away_from_zero(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Smallest `|h|` over the MLP's pre-ReLU activations.
fn min_pre_activation(mlp: &Mlp, x: &Tensor) -> f64 {
    let mut t = dtgnn::autodiff::Tape::new();
    let vars = mlp.bind(&mut t);
    let xv = t.leaf(x.clone());
    let h = t.matmul(xv, vars.0[0]).unwrap();
    let h = t.add_bias(h, vars.0[1]).unwrap();
    let (h, _) = t.batch_norm(h, vars.0[2], vars.0[3], BN_EPS).unwrap();
    t.value(h).data().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()))
}

/// Maximum relative error of `op` on one randomized shape drawn from `case`.
pub fn check_op(op: &str, seed: u64, case: u64) -> f64 {
    let mut r = rng::substream(seed, op, case);
    let n = r.random_range(2..7);
    let k = r.random_range(1..6);
    let m = r.random_range(1..6);
    let w_out = random(n, m, &mut r);
    let step = DEFAULT_STEP;
    let result = match op {
        "matmul" => {
            let inputs = [random(n, k, &mut r), random(k, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                t.weighted_sum(y, w_out.clone())
            })
        }
        "add_bias" => {
            let inputs = [random(n, m, &mut r), random(1, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                t.weighted_sum(y, w_out.clone())
            })
        }
        "add" => {
            let inputs = [random(n, m, &mut r), random(n, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.add(v[0], v[1])?;
                t.weighted_sum(y, w_out.clone())
            })
        }
        "relu" => {
            let inputs = [away_from_zero(n, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.relu(v[0]);
                t.weighted_sum(y, w_out.clone())
            })
        }
        "batch_norm" => {
            let inputs = [random(n, m, &mut r), random(1, m, &mut r), random(1, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], BN_EPS)?;
                t.weighted_sum(y, w_out.clone())
            })
        }
        "softmax" => {
            let inputs = [random(n, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.softmax(v[0]);
                t.weighted_sum(y, w_out.clone())
            })
        }
        "gumbel_softmax_soft" => {
            let noise = sample_gumbel(n, m, &mut r);
            let tau = r.random_range(0.5..2.0);
            let inputs = [random(n, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.gumbel_softmax(v[0], &noise, tau, false)?;
                t.weighted_sum(y, w_out.clone())
            })
        }
        "gumbel_softmax_straight_through" => {
            // the hard path's gradient is the soft path's: compare against a soft-path
            // finite difference of the same scalar
            let noise = sample_gumbel(n, m, &mut r);
            let tau = r.random_range(0.5..2.0);
            let logits = random(n, m, &mut r);
            let mut tape = dtgnn::autodiff::Tape::new();
            let x = tape.leaf(logits.clone());
            let y = tape.gumbel_softmax(x, &noise, tau, true).unwrap();
            let s = tape.weighted_sum(y, w_out.clone()).unwrap();
            let hard_grad = tape.backward(s).unwrap().get(x).unwrap().clone();
            let soft = |l: &Tensor| {
                let p = dtgnn::autodiff::relaxed_sample(l, &noise, tau).unwrap();
                p.data().iter().zip(w_out.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut worst = 0.0f64;
            let (mut d2, mut a2) = (0.0, 0.0);
            let mut probe = logits.clone();
            for j in 0..logits.len() {
                let o = logits.data()[j];
                probe.data_mut()[j] = o + step;
                let plus = soft(&probe);
                probe.data_mut()[j] = o - step;
                let minus = soft(&probe);
                probe.data_mut()[j] = o;
                let num = (plus - minus) / (2.0 * step);
                let a = hard_grad.data()[j];
                d2 += (a - num) * (a - num);
                a2 += a.abs().max(num.abs()).powi(2);
            }
            if a2 > 0.0 {
                worst = (d2 / a2).sqrt();
            }
            Ok(worst)
        }
        "sum_aggregate" => {
            let targets = r.random_range(1..6);
            let pairs: Vec<(usize, usize)> = (0..targets)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|_| r.random_bool(0.5))
                .collect();
            let csr = Csr::from_pairs(targets, n, pairs);
            let w = random(targets, m, &mut r);
            let inputs = [random(n, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.sum_aggregate(v[0], &csr)?;
                t.weighted_sum(y, w.clone())
            })
        }
        "concat" => {
            let w = random(n, k + m, &mut r);
            let inputs = [random(n, k, &mut r), random(n, m, &mut r)];
            check_gradients(&inputs, step, |t, v| {
                let y = t.concat(&[v[0], v[1]])?;
                t.weighted_sum(y, w.clone())
            })
        }
        "cross_entropy" => {
            let classes = m.max(2);
            let targets: Vec<Option<usize>> = (0..n)
                .map(|i| (i == 0 || r.random_bool(0.7)).then(|| r.random_range(0..classes)))
                .collect();
            let inputs = [random(n, classes, &mut r)];
            check_gradients(&inputs, step, |t, v| t.cross_entropy(v[0], &targets))
        }
        "mlp" => {
            let (mlp, x) = loop {
                let hidden = r.random_range(2..6);
                let mlp = Mlp::new(k, hidden, m, &mut r);
                let x = random(n, k, &mut r);
                if min_pre_activation(&mlp, &x) > 0.01 {
                    break (mlp, x);
                }
            };
            let mut inputs: Vec<Tensor> = mlp.params().iter().map(|p| (*p).clone()).collect();
            inputs.push(x);
            check_gradients(&inputs, step, |t, v| {
                let vars = dtgnn::autodiff::MlpVars([v[0], v[1], v[2], v[3], v[4], v[5]]);
                let (y, _) = mlp.forward_train(t, &vars, v[6])?;
                t.weighted_sum(y, w_out.clone())
            })
        }
        other => panic!("unknown op {other}"),
    };
    result.unwrap()
}
