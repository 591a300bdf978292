//! Finite-difference oracles for gradient tests.
//!
//! Only forward values are evaluated here, so these checks stay independent
//! of the backward rules they verify.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, ParamSet, Tape};
use crate::models::{Model, ModelKind, TimeSeriesBatch};
use crate::training::mse_loss;
use crate::data::IrregularSeries;

/// Perturbation used by the gradient suites.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error floor so that gradients which are zero up to rounding
/// are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_difference(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let minus = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Central differences of `loss` with respect to every parameter entry.
pub fn param_central_difference(
    params: &ParamSet,
    h: f64,
    loss: impl Fn(&ParamSet) -> f64,
) -> Vec<Matrix> {
    let mut probe = params.clone();
    let ids: Vec<_> = params.ids().collect();
    ids.iter()
        .map(|&id| {
            let n = params.value(id).len();
            let mut g = Matrix::zeros(params.value(id).rows(), params.value(id).cols());
            for i in 0..n {
                let orig = params.value(id).as_slice()[i];
                probe.value_mut(id).as_mut_slice()[i] = orig + h;
                let plus = loss(&probe);
                probe.value_mut(id).as_mut_slice()[i] = orig - h;
                let minus = loss(&probe);
                probe.value_mut(id).as_mut_slice()[i] = orig;
                g.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
            }
            g
        })
        .collect()
}

/// Worst relative error between two gradient lists, with the location.
pub fn worst_rel_err(analytic: &[Matrix], numeric: &[Matrix]) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (x, y)) in a.as_slice().iter().zip(n.as_slice()).enumerate() {
            let e = rel_err(*x, *y);
            if e > worst.0 || e.is_nan() {
                worst = (e, p, i);
            }
        }
    }
    worst
}

/// `exp(A)` by scaling and squaring a truncated Taylor series.
pub fn expm(a: &Matrix) -> Matrix {
    assert_eq!(a.rows(), a.cols(), "expm needs a square matrix");
    let norm = a.as_slice().iter().map(|v| v.abs()).sum::<f64>();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a.map(|v| v / f64::from(2u32.pow(squarings)));
    let n = a.rows();
    let mut identity = Matrix::zeros(n, n);
    for i in 0..n {
        identity.set(i, i, 1.0);
    }
    let mut sum = identity.clone();
    let mut term = identity;
    for k in 1..=30 {
        term = term.matmul(&scaled).unwrap().map(|v| v / k as f64);
        sum = Matrix::from_vec(n, n, sum.as_slice().iter().zip(term.as_slice()).map(|(x, y)| x + y).collect()).unwrap();
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum).unwrap();
    }
    sum
}

/// A small random batch of `rows` series with `points` observations each,
/// times on a 0.1 grid in `[0, 3]`, optionally sharing one grid.
pub fn random_batch(rng: &mut impl Rng, rows: usize, points: usize, shared_grid: bool) -> TimeSeriesBatch {
    let draw_times = |rng: &mut dyn rand::RngCore| {
        let mut ticks: Vec<u32> = Vec::new();
        while ticks.len() < points + 1 {
            let k = rng.random_range(0..=30);
            if !ticks.contains(&k) {
                ticks.push(k);
            }
        }
        ticks.sort_unstable();
        ticks.iter().map(|&k| f64::from(k) * 0.1).collect::<Vec<_>>()
    };
    let grid = draw_times(rng);
    let series: Vec<IrregularSeries> = (0..rows)
        .map(|_| {
            let times = if shared_grid { grid.clone() } else { draw_times(rng) };
            let values = times.iter().map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
            IrregularSeries {
                times,
                values,
                target: None,
            }
        })
        .collect();
    let refs: Vec<&IrregularSeries> = series.iter().collect();
    TimeSeriesBatch::from_series(&refs).unwrap()
}

/// Builds a small random instance of `kind` and returns the worst relative
/// error between the tape gradient of the batch MSE and central
/// differences.
pub fn model_gradient_error(kind: ModelKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(kind, 1, 1, 3, seed).unwrap();
    let batch = random_batch(&mut rng, 3, 4, false);

    let loss_of = |params: &ParamSet| {
        let mut m = model.clone();
        *m.params_mut() = params.clone();
        let mut tape = Tape::new();
        let fp = m.forward(&mut tape, &batch).unwrap();
        let t = tape.constant(batch.targets().clone());
        let l = mse_loss(&mut tape, fp.prediction, t).unwrap();
        tape.value(l).get(0, 0)
    };

    let mut params = model.params().clone();
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, &batch).unwrap();
    let t = tape.constant(batch.targets().clone());
    let l = mse_loss(&mut tape, fp.prediction, t).unwrap();
    tape.backward(l).unwrap();
    params.zero_grad();
    params.accumulate_grads(&tape);
    let analytic: Vec<Matrix> = params.iter().map(|(_, p)| p.grad().clone()).collect();
    let numeric = param_central_difference(model.params(), FD_STEP, loss_of);
    worst_rel_err(&analytic, &numeric).0
}
