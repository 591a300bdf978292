//! MSE loss, Adam, and the early-stopping training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, NodeId, ParamSet, Tape};
use crate::data::{DatasetSplit, IrregularSeries};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, TimeSeriesBatch};

/// Mean squared error over all `B · d_y` entries.
pub fn mse_loss(tape: &mut Tape, pred: NodeId, target: NodeId) -> Result<NodeId> {
    let (p, t) = (tape.value(pred).shape(), tape.value(target).shape());
    if p != t {
        return Err(Error::Dimension {
            op: "mse (pred vs target)",
            lhs: p,
            rhs: t,
        });
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|(_, p)| Matrix::zeros(p.value().rows(), p.value().cols()))
            .collect();
        Adam {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPSILON,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the gradients stored in `params`. Nothing is
    /// changed if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, registry has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (_, p) in params.iter() {
            if !p.grad().is_finite() {
                return Err(Error::NonFiniteGradient {
                    name: p.name().to_string(),
                });
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.for_each_mut(|i, _, value, grad| {
            let (m, v) = (ms[i].as_mut_slice(), vs[i].as_mut_slice());
            for (k, w) in value.as_mut_slice().iter_mut().enumerate() {
                let g = grad.as_slice()[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 50,
            min_epochs: 50,
            max_epochs: 1000,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Default settings for `kind`; combined-time trains at 0.01.
    pub fn for_model(kind: &ModelKind) -> Self {
        let learning_rate = match kind {
            ModelKind::CombinedTime { .. } => 0.01,
            _ => 0.001,
        };
        TrainConfig {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.min_epochs == 0 || self.max_epochs == 0 {
            return Err(Error::Config("epoch bounds must be positive".into()));
        }
        if self.min_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "min_epochs {} exceeds max_epochs {}",
                self.min_epochs, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mean_secs: f64,
    pub sd_secs: f64,
    /// Number of epochs aggregated.
    pub epochs: usize,
}

/// Mean and sample standard deviation of per-epoch wall time, skipping the
/// first epoch. `None` when fewer than two epochs were recorded.
pub fn timing_summary(wall_times: &[f64]) -> Option<TimingSummary> {
    let rest = wall_times.get(1..).filter(|r| !r.is_empty())?;
    let n = rest.len() as f64;
    let mean = rest.iter().sum::<f64>() / n;
    let sd = if rest.len() > 1 {
        (rest.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(TimingSummary {
        mean_secs: mean,
        sd_secs: sd,
        epochs: rest.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Test MSE with the best-validation parameters restored.
    pub test_mse: f64,
}

impl TrainOutcome {
    pub fn epochs(&self) -> usize {
        self.records.len()
    }

    pub fn timing(&self) -> Option<TimingSummary> {
        let times: Vec<f64> = self.records.iter().map(|r| r.wall_time_secs).collect();
        timing_summary(&times)
    }
}

/// Splits `indices` into consecutive batches of at most `batch_size` rows.
pub fn make_batches(data: &[IrregularSeries], indices: &[usize], batch_size: usize) -> Result<Vec<TimeSeriesBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    indices
        .chunks(batch_size)
        .map(|chunk| {
            let rows = chunk
                .iter()
                .map(|&i| {
                    data.get(i)
                        .ok_or_else(|| Error::Data(format!("index {i} out of range for {} series", data.len())))
                })
                .collect::<Result<Vec<_>>>()?;
            TimeSeriesBatch::from_series(&rows)
        })
        .collect()
}

/// MSE over every entry of every batch.
pub fn evaluate_mse(model: &Model, batches: &[TimeSeriesBatch]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let pred = model.predict(batch)?;
        let target = batch.targets();
        sum += pred
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
        count += target.len();
    }
    if count == 0 {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    Ok(sum / count as f64)
}

/// Trains `model` in place. See [`train_with`].
pub fn train(model: &mut Model, data: &[IrregularSeries], split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, split, cfg, |_| {})
}

/// Mini-batch Adam with early stopping on validation MSE.
///
/// Training stops after `patience` epochs without a strict improvement,
/// never before `min_epochs`, and always at `max_epochs`. Epochs before
/// `min_epochs` do not count towards patience. The best parameters are
/// restored before the test split is scored.
///
/// `wall_time_secs` covers forward, backward and optimizer work over the
/// train split. Shuffling, batch assembly and validation are outside it.
pub fn train_with(
    model: &mut Model,
    data: &[IrregularSeries],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Data(format!("every split must be non-empty, got sizes {:?}", split.sizes())));
    }
    let val = make_batches(data, &split.val, cfg.batch_size)?;
    let test = make_batches(data, &split.test, cfg.batch_size)?;
    let mut order = split.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.learning_rate);

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, Vec<Matrix>)> = None;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let batches = make_batches(data, &order, cfg.batch_size)?;

        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut entries = 0usize;
        for batch in &batches {
            let mut tape = Tape::new();
            let fp = model.forward(&mut tape, batch)?;
            let target = tape.constant(batch.targets().clone());
            let loss = mse_loss(&mut tape, fp.prediction, target)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("training loss is {value}"),
                    records,
                });
            }
            tape.backward(loss)?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate_grads(&tape);
            adam.step(params).map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
                records: records.clone(),
            })?;
            let n = batch.targets().len();
            loss_sum += value * n as f64;
            entries += n;
        }
        let wall_time_secs = start.elapsed().as_secs_f64();

        let val_loss = evaluate_mse(model, &val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("validation loss is {val_loss}"),
                records,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / entries as f64,
            val_loss,
            wall_time_secs,
        };
        on_epoch(&record);
        records.push(record);

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, model.params().snapshot()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        let stale = epoch - best_epoch.max(cfg.min_epochs - 1).min(epoch);
        if epoch + 1 >= cfg.min_epochs && stale >= cfg.patience {
            break;
        }
    }

    let (best_epoch, best_val_loss, snapshot) = best.ok_or_else(|| Error::Contract("no epoch completed".into()))?;
    model.params_mut().restore(&snapshot)?;
    let test_mse = evaluate_mse(model, &test)?;
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_val_loss,
        test_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sine_dataset, split_dataset, SineDatasetConfig};
    use crate::evolver::EvolverConfig;

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.var(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = tape.constant(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let l = mse_loss(&mut tape, p, t).unwrap();
        assert_eq!(tape.value(l).get(0, 0), 0.0);

        let mut tape = Tape::new();
        let p = tape.var(Matrix::from_vec(2, 2, vec![2.0, 3.0, 4.0, 5.0]).unwrap());
        let t = tape.constant(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let l = mse_loss(&mut tape, p, t).unwrap();
        assert_eq!(tape.value(l).get(0, 0), 1.0);
        tape.backward(l).unwrap();
        // 2 (pred − target) / (B·d_y)
        assert!(tape.grad(p).unwrap().as_slice().iter().all(|g| (g - 0.5).abs() < 1e-15));

        let mut tape = Tape::new();
        let p = tape.var(Matrix::zeros(2, 1));
        let t = tape.constant(Matrix::zeros(1, 2));
        assert!(matches!(mse_loss(&mut tape, p, t), Err(Error::Dimension { .. })));
    }

    fn scalar_params(w: f64) -> (ParamSet, crate::autodiff::ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Matrix::filled(1, 1, w)).unwrap();
        (ps, id)
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let (mut ps, id) = scalar_params(1.5);
        let mut adam = Adam::new(&ps, 0.1);
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.value(id).get(0, 0), 1.5);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Matrix::zeros(1, 3)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&ps, id);
        let c = tape.constant(Matrix::from_vec(1, 3, vec![2.0, -0.01, 300.0]).unwrap());
        let prod = tape.mul(w, c).unwrap();
        let s = tape.sum(prod);
        tape.backward(s).unwrap();
        ps.accumulate_grads(&tape);
        let mut adam = Adam::new(&ps, 0.01);
        adam.step(&mut ps).unwrap();
        for (v, sign) in ps.value(id).as_slice().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * 0.01).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        let (mut ps, id) = scalar_params(0.0);
        let mut adam = Adam::new(&ps, 0.1);
        for _ in 0..100 {
            // d/dw (w − 3)² computed by hand, independent of the tape.
            let w = ps.value(id).get(0, 0);
            let mut tape = Tape::new();
            let node = tape.param(&ps, id);
            let shift = tape.constant(Matrix::filled(1, 1, 3.0));
            let d = tape.sub(node, shift).unwrap();
            let sq = tape.mul(d, d).unwrap();
            tape.backward(sq).unwrap();
            assert!((tape.grad(node).unwrap().get(0, 0) - 2.0 * (w - 3.0)).abs() < 1e-12);
            ps.zero_grad();
            ps.accumulate_grads(&tape);
            adam.step(&mut ps).unwrap();
        }
        assert!((ps.value(id).get(0, 0) - 3.0).abs() < 0.1);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", Matrix::zeros(1, 1)).unwrap();
        let b = ps.add("bad", Matrix::zeros(1, 1)).unwrap();
        let mut tape = Tape::new();
        let na = tape.param(&ps, a);
        let nb = tape.param(&ps, b);
        let big = tape.constant(Matrix::filled(1, 1, f64::INFINITY));
        let x = tape.mul(nb, big).unwrap();
        let y = tape.add(x, na).unwrap();
        tape.backward(y).unwrap();
        ps.accumulate_grads(&tape);
        let mut adam = Adam::new(&ps, 0.1);
        match adam.step(&mut ps) {
            Err(Error::NonFiniteGradient { name }) => assert_eq!(name, "bad"),
            other => panic!("{other:?}"),
        }
        assert_eq!(ps.value(a).get(0, 0), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            min_epochs: 5,
            max_epochs: 4,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(TrainConfig::for_model(&ModelKind::CombinedTime { step_size: 0.1 }).learning_rate, 0.01);
        assert_eq!(TrainConfig::for_model(&ModelKind::SimpleRnn).learning_rate, 0.001);
    }

    #[test]
    fn timing_summary_skips_first_epoch() {
        let s = timing_summary(&[100.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.epochs, 3);
        assert!((s.mean_secs - 2.0).abs() < 1e-12);
        assert!((s.sd_secs - 1.0).abs() < 1e-12);
        assert!(timing_summary(&[1.0]).is_none());
    }

    fn tiny_data() -> (Vec<IrregularSeries>, DatasetSplit) {
        let cfg = SineDatasetConfig {
            num_sequences: 20,
            points_per_sequence: 6,
            rounding: 0.1,
            ..SineDatasetConfig::default()
        };
        let data = generate_sine_dataset(&cfg).unwrap();
        let split = split_dataset(data.len(), 0).unwrap();
        (data, split)
    }

    #[test]
    fn zero_learning_rate_stops_at_min_plus_patience() {
        let (data, split) = tiny_data();
        let mut model = Model::new(ModelKind::SimpleRnn, 1, 1, 4, 0).unwrap();
        let before = model.params().snapshot();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train(&mut model, &data, &split, &cfg).unwrap();
        assert_eq!(out.epochs(), cfg.min_epochs + cfg.patience);
        assert_eq!(model.params().snapshot(), before);
        assert!(out.records.iter().all(|r| r.wall_time_secs > 0.0));
    }

    #[test]
    fn restores_best_parameters_and_recomputes_test_mse() {
        let (data, split) = tiny_data();
        let kind = ModelKind::Odernn {
            evolver: EvolverConfig::FixedDt { step_size: 0.5 },
        };
        let mut model = Model::new(kind, 1, 1, 4, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 8,
            min_epochs: 5,
            max_epochs: 15,
            patience: 3,
            seed: 9,
        };
        let out = train(&mut model, &data, &split, &cfg).unwrap();
        assert!(out.epochs() >= 5 && out.epochs() <= 15);
        let min_val = out.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_loss, min_val);

        // Independent recomputation, one series at a time.
        let score = |idx: &[usize]| {
            let mut sum = 0.0;
            for &i in idx {
                let b = TimeSeriesBatch::from_series(&[&data[i]]).unwrap();
                let p = model.predict(&b).unwrap().get(0, 0);
                sum += (p - b.targets().get(0, 0)).powi(2);
            }
            sum / idx.len() as f64
        };
        assert!((score(&split.val) - min_val).abs() < 1e-12);
        assert!((score(&split.test) - out.test_mse).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, split) = tiny_data();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 8,
            min_epochs: 3,
            max_epochs: 3,
            patience: 1,
            seed: 4,
        };
        let run = || {
            let mut m = Model::new(ModelKind::CombinedTime { step_size: 0.2 }, 1, 1, 3, 1).unwrap();
            let out = train(&mut m, &data, &split, &cfg).unwrap();
            (
                out.records.iter().map(|r| (r.train_loss, r.val_loss)).collect::<Vec<_>>(),
                out.test_mse,
                m.params().snapshot(),
            )
        };
        assert_eq!(run(), run());
    }
}
