//! Sequence models for irregular series.
//!
//! * [`odernn_forward`] evolves every row by its own gap with one evolver
//!   call per observation, so the loop runs `N + 1` times whatever the
//!   time values are.
//! * [`combined_time_forward`] walks the sorted union of all rows' times,
//!   evolving the whole batch between consecutive union points and
//!   applying the RNN only to rows observed at the current time.
//! * [`simple_rnn_forward`] feeds `Δt` to a GRU as an extra input feature.
//!
//! All three start from `h = 0` and predict through a linear head.

mod batch;
mod gru;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::TimeSeriesBatch;
pub use gru::{GruCell, OutputNet};

use crate::autodiff::{Matrix, NodeId, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::evolver::{evolve, DynamicsNet, EvolverConfig, StepSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelKind {
    SimpleRnn,
    Odernn { evolver: EvolverConfig },
    /// Combined-time baseline with fixed-step Euler between union points.
    CombinedTime { step_size: f64 },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::SimpleRnn => "simple-rnn",
            ModelKind::Odernn { .. } => "odernn",
            ModelKind::CombinedTime { .. } => "combined-time",
        }
    }

    pub fn has_dynamics(&self) -> bool {
        !matches!(self, ModelKind::SimpleRnn)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelKind::SimpleRnn => Ok(()),
            ModelKind::Odernn { evolver } => evolver.validate(),
            ModelKind::CombinedTime { step_size } => EvolverConfig::FixedDt { step_size: *step_size }.validate(),
        }
    }
}

/// Loop counters recorded by a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// Iterations of the outer loop (observations or union time points).
    pub outer_iterations: usize,
    pub evolver_calls: usize,
    /// Euler iterations summed over every evolver call.
    pub euler_iterations: usize,
    pub rnn_steps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub prediction: NodeId,
    pub hidden: NodeId,
    pub stats: ForwardStats,
}

#[derive(Clone, Debug)]
pub struct Model {
    kind: ModelKind,
    input_dim: usize,
    output_dim: usize,
    hidden: usize,
    params: ParamSet,
    cell: GruCell,
    dynamics: Option<DynamicsNet>,
    head: OutputNet,
}

impl Model {
    /// Builds a model with weights drawn from `seed`. Parameters are
    /// registered cell first, then dynamics, then head, so ODE models of
    /// either kind built from the same seed share their weights.
    pub fn new(kind: ModelKind, input_dim: usize, output_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        kind.validate()?;
        if hidden == 0 {
            return Err(Error::Config("hidden size must be non-zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let cell_input = match kind {
            ModelKind::SimpleRnn => input_dim + 1,
            _ => input_dim,
        };
        let cell = GruCell::new(&mut params, cell_input, hidden, &mut rng)?;
        let dynamics = if kind.has_dynamics() {
            Some(DynamicsNet::new(&mut params, hidden, &mut rng)?)
        } else {
            None
        };
        let head = OutputNet::new(&mut params, hidden, output_dim, &mut rng)?;
        Ok(Model {
            kind,
            input_dim,
            output_dim,
            hidden,
            params,
            cell,
            dynamics,
            head,
        })
    }

    /// Same weights, different forward strategy. Only switches between
    /// ODE-based kinds, which share a parameter layout.
    pub fn with_kind(&self, kind: ModelKind) -> Result<Model> {
        kind.validate()?;
        if kind.has_dynamics() != self.kind.has_dynamics() || !kind.has_dynamics() && kind != self.kind {
            return Err(Error::Config(format!(
                "cannot reuse {} weights for {}",
                self.kind.name(),
                kind.name()
            )));
        }
        Ok(Model { kind, ..self.clone() })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn cell(&self) -> &GruCell {
        &self.cell
    }

    pub fn dynamics(&self) -> Option<&DynamicsNet> {
        self.dynamics.as_ref()
    }

    pub fn forward(&self, tape: &mut Tape, batch: &TimeSeriesBatch) -> Result<ForwardPass> {
        match self.kind {
            ModelKind::SimpleRnn => simple_rnn_forward(tape, self, batch),
            ModelKind::Odernn { evolver } => odernn_forward(tape, self, batch, &evolver),
            ModelKind::CombinedTime { step_size } => combined_time_forward(tape, self, batch, step_size),
        }
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, batch: &TimeSeriesBatch) -> Result<Matrix> {
        let mut tape = Tape::new();
        let fp = self.forward(&mut tape, batch)?;
        Ok(tape.value(fp.prediction).clone())
    }

    fn check_batch(&self, batch: &TimeSeriesBatch) -> Result<()> {
        if batch.input_dim() != self.input_dim || batch.output_dim() != self.output_dim {
            return Err(Error::Dimension {
                op: "model input/output widths",
                lhs: (self.input_dim, self.output_dim),
                rhs: (batch.input_dim(), batch.output_dim()),
            });
        }
        Ok(())
    }

    fn require_dynamics(&self) -> Result<&DynamicsNet> {
        self.dynamics
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} model has no dynamics net", self.kind.name())))
    }
}

/// Applies the GRU cell once. See [`GruCell::step`].
pub fn rnn_cell(tape: &mut Tape, model: &Model, h: NodeId, x: NodeId) -> Result<NodeId> {
    model.cell.step(tape, &model.params, h, x)
}

/// Batch-efficient ODE-RNN: evolve each row by its own gap, update with the
/// RNN, repeat for every observation, then take the final jump.
pub fn odernn_forward(
    tape: &mut Tape,
    model: &Model,
    batch: &TimeSeriesBatch,
    evolver: &EvolverConfig,
) -> Result<ForwardPass> {
    model.check_batch(batch)?;
    evolver.validate()?;
    let f = model.require_dynamics()?.bind(&model.params);
    let mut stats = ForwardStats::default();
    let mut h = tape.constant(Matrix::zeros(batch.rows(), model.hidden));

    for j in 0..=batch.steps() {
        let schedule = evolver.schedule(batch.deltas(j))?;
        h = evolve(tape, h, &schedule, &f)?;
        stats.evolver_calls += 1;
        stats.euler_iterations += schedule.iterations();
        if j == batch.steps() {
            break;
        }
        let x = tape.constant(batch.features(j).clone());
        h = rnn_cell(tape, model, h, x)?;
        stats.rnn_steps += 1;
        stats.outer_iterations += 1;
    }
    let prediction = model.head.apply(tape, &model.params, h)?;
    Ok(ForwardPass {
        prediction,
        hidden: h,
        stats,
    })
}

/// Sorted distinct values of every row's real times, prediction times
/// included. Times are compared exactly.
pub fn combined_times(batch: &TimeSeriesBatch) -> Vec<f64> {
    let mut ct: Vec<f64> = (0..batch.rows())
        .flat_map(|i| batch.times(i)[batch.first_observation(i)..].iter().copied())
        .collect();
    ct.sort_by(f64::total_cmp);
    ct.dedup();
    ct
}

/// Combined-time baseline. Iterates over [`combined_times`]; at each point
/// the batch is Euler-integrated from the previous point (rows already past
/// their prediction time get a zero gap), then the RNN is applied and
/// blended in through a 0/1 row mask for rows observed at that time.
pub fn combined_time_forward(
    tape: &mut Tape,
    model: &Model,
    batch: &TimeSeriesBatch,
    step_size: f64,
) -> Result<ForwardPass> {
    model.check_batch(batch)?;
    EvolverConfig::FixedDt { step_size }.validate()?;
    let f = model.require_dynamics()?.bind(&model.params);
    let (rows, n) = (batch.rows(), batch.steps());
    let ct = combined_times(batch);
    let ends: Vec<f64> = (0..rows).map(|i| batch.times(i)[n]).collect();
    let mut next_obs: Vec<usize> = (0..rows).map(|i| batch.first_observation(i)).collect();

    let mut stats = ForwardStats::default();
    let mut h = tape.constant(Matrix::zeros(rows, model.hidden));
    let mut t_prev = 0.0;
    let d_x = batch.input_dim();

    for &t_cur in &ct {
        stats.outer_iterations += 1;
        let segment = t_cur - t_prev;
        let gaps: Vec<f64> = ends
            .iter()
            .map(|&end| if t_cur <= end { segment } else { 0.0 })
            .collect();
        if gaps.iter().any(|&g| g > 0.0) {
            let schedule = StepSchedule::fixed_dt(&gaps, step_size)?;
            h = evolve(tape, h, &schedule, &f)?;
            stats.evolver_calls += 1;
            stats.euler_iterations += schedule.iterations();
        }

        let mut mask = vec![0.0; rows];
        let mut x = Matrix::zeros(rows, d_x);
        for i in 0..rows {
            let j = next_obs[i];
            if j < n && batch.times(i)[j] == t_cur {
                mask[i] = 1.0;
                for c in 0..d_x {
                    x.set(i, c, batch.features(j).get(i, c));
                }
                next_obs[i] += 1;
            }
        }
        if mask.contains(&1.0) {
            let x = tape.constant(x);
            let updated = rnn_cell(tape, model, h, x)?;
            let keep: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
            let m = tape.constant(Matrix::column(&mask));
            let keep = tape.constant(Matrix::column(&keep));
            let a = tape.scale_rows(updated, m)?;
            let b = tape.scale_rows(h, keep)?;
            h = tape.add(a, b)?;
            stats.rnn_steps += 1;
        }
        t_prev = t_cur;
    }
    let prediction = model.head.apply(tape, &model.params, h)?;
    Ok(ForwardPass {
        prediction,
        hidden: h,
        stats,
    })
}

/// GRU over `[x_j ‖ Δt_j]`, plus one step on `[0 ‖ Δt_N]` for the final jump.
pub fn simple_rnn_forward(tape: &mut Tape, model: &Model, batch: &TimeSeriesBatch) -> Result<ForwardPass> {
    model.check_batch(batch)?;
    if model.cell.input() != batch.input_dim() + 1 {
        return Err(Error::Dimension {
            op: "simple rnn input (cell vs features + Δt)",
            lhs: (batch.rows(), model.cell.input()),
            rhs: (batch.rows(), batch.input_dim() + 1),
        });
    }
    let (rows, d_x) = (batch.rows(), batch.input_dim());
    let mut stats = ForwardStats::default();
    let mut h = tape.constant(Matrix::zeros(rows, model.hidden));
    for j in 0..=batch.steps() {
        let dt = batch.deltas(j);
        let mut input = Vec::with_capacity(rows * (d_x + 1));
        for (i, &gap) in dt.iter().enumerate() {
            if j < batch.steps() {
                input.extend_from_slice(batch.features(j).row(i));
            } else {
                input.extend(std::iter::repeat_n(0.0, d_x));
            }
            input.push(gap);
        }
        let x = tape.constant(Matrix::from_vec(rows, d_x + 1, input)?);
        h = rnn_cell(tape, model, h, x)?;
        stats.rnn_steps += 1;
        stats.outer_iterations += 1;
    }
    let prediction = model.head.apply(tape, &model.params, h)?;
    Ok(ForwardPass {
        prediction,
        hidden: h,
        stats,
    })
}
