//! Batched forward-Euler evolution of hidden states under learned dynamics.
//!
//! Every row of the batch is advanced by its own time gap `Δtᵢ`. The loop
//! length is shared across the batch; rows that have already reached their
//! target are held in place by a zero step rather than by control flow, so
//! each iteration records the same rectangular operations on the tape:
//!
//! ```text
//! h ← h + diag(stepⱼ) · f(h)
//! ```
//!
//! The three modes differ only in how the per-row steps are laid out, which
//! is captured by [`StepSchedule`]:
//!
//! * fixed-dt: constant step `s`, `⌈Δtᵢ/s⌉` steps per row, the last one
//!   clamped so the row lands exactly on `Δtᵢ`;
//! * adaptive-fixed: `N` steps of `Δtᵢ/N` for every row;
//! * adaptive-geometric: steps `s₀, s₀r, s₀r², …`, the step that would
//!   overshoot `Δtᵢ` clamped to land on it.
//!
//! In every mode the steps applied to a row sum to that row's `Δtᵢ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, NodeId, ParamId, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::init;

/// Time derivative `dh/dt = f(h)` evaluated on a tape.
pub trait Dynamics {
    fn derivative(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId>;
}

impl<F> Dynamics for F
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    fn derivative(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        self(tape, h)
    }
}

/// Feed-forward `f_θ`: `linear(H → 2H) → tanh → linear(2H → H)`.
///
/// The output layer starts at a tenth of the usual initialisation scale so
/// that early trajectories are close to constant.
#[derive(Clone, Debug)]
pub struct DynamicsNet {
    hidden: usize,
    width: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl DynamicsNet {
    pub const OUTPUT_INIT_SCALE: f64 = 0.1;

    pub fn new<R: Rng>(params: &mut ParamSet, hidden: usize, rng: &mut R) -> Result<Self> {
        Self::with_width(params, hidden, 2 * hidden, rng)
    }

    pub fn with_width<R: Rng>(
        params: &mut ParamSet,
        hidden: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 || width == 0 {
            return Err(Error::Config("dynamics net needs non-zero widths".into()));
        }
        let w1 = params.add("dynamics.w1", init::uniform(rng, hidden, width, hidden))?;
        let b1 = params.add("dynamics.b1", init::uniform(rng, 1, width, hidden))?;
        let scaled = |m: Matrix| m.map(|v| v * Self::OUTPUT_INIT_SCALE);
        let w2 = params.add("dynamics.w2", scaled(init::uniform(rng, width, hidden, width)))?;
        let b2 = params.add("dynamics.b2", scaled(init::uniform(rng, 1, hidden, width)))?;
        Ok(DynamicsNet {
            hidden,
            width,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Pairs the net with the registry holding its weights.
    pub fn bind<'a>(&'a self, params: &'a ParamSet) -> BoundDynamics<'a> {
        BoundDynamics { net: self, params }
    }
}

pub struct BoundDynamics<'a> {
    net: &'a DynamicsNet,
    params: &'a ParamSet,
}

impl Dynamics for BoundDynamics<'_> {
    fn derivative(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        let w1 = tape.param(self.params, self.net.w1);
        let b1 = tape.param(self.params, self.net.b1);
        let w2 = tape.param(self.params, self.net.w2);
        let b2 = tape.param(self.params, self.net.b2);
        let z = tape.matmul(h, w1)?;
        let z = tape.add(z, b1)?;
        let a = tape.tanh(z);
        let out = tape.matmul(a, w2)?;
        tape.add(out, b2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolverMode {
    FixedDt,
    AdaptiveFixed,
    AdaptiveGeometric,
}

impl EvolverMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvolverMode::FixedDt => "fixed-dt",
            EvolverMode::AdaptiveFixed => "adaptive-fixed",
            EvolverMode::AdaptiveGeometric => "adaptive-geometric",
        }
    }
}

impl std::str::FromStr for EvolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed-dt" => Ok(EvolverMode::FixedDt),
            "adaptive-fixed" => Ok(EvolverMode::AdaptiveFixed),
            "adaptive-geometric" => Ok(EvolverMode::AdaptiveGeometric),
            other => Err(Error::Config(format!("unknown evolver mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EvolverConfig {
    FixedDt { step_size: f64 },
    AdaptiveFixed { num_steps: usize },
    AdaptiveGeometric { initial_step: f64, growth_factor: f64 },
}

impl EvolverConfig {
    pub fn mode(&self) -> EvolverMode {
        match self {
            EvolverConfig::FixedDt { .. } => EvolverMode::FixedDt,
            EvolverConfig::AdaptiveFixed { .. } => EvolverMode::AdaptiveFixed,
            EvolverConfig::AdaptiveGeometric { .. } => EvolverMode::AdaptiveGeometric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EvolverConfig::FixedDt { step_size } => check_positive("step size", step_size),
            EvolverConfig::AdaptiveFixed { num_steps } if num_steps < 1 => {
                Err(Error::Config("adaptive-fixed needs at least one step".into()))
            }
            EvolverConfig::AdaptiveFixed { .. } => Ok(()),
            EvolverConfig::AdaptiveGeometric {
                initial_step,
                growth_factor,
            } => {
                check_positive("initial step", initial_step)?;
                check_growth(growth_factor)
            }
        }
    }

    pub fn schedule(&self, dt: &[f64]) -> Result<StepSchedule> {
        match *self {
            EvolverConfig::FixedDt { step_size } => StepSchedule::fixed_dt(dt, step_size),
            EvolverConfig::AdaptiveFixed { num_steps } => StepSchedule::adaptive_fixed(dt, num_steps),
            EvolverConfig::AdaptiveGeometric {
                initial_step,
                growth_factor,
            } => StepSchedule::adaptive_geometric(dt, initial_step, growth_factor),
        }
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive and finite, got {v}")))
    }
}

fn check_growth(r: f64) -> Result<()> {
    if r.is_finite() && r > 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("growth factor must be > 1, got {r}")))
    }
}

fn check_deltas(dt: &[f64]) -> Result<()> {
    match dt.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(i) => Err(Error::Data(format!(
            "time gap {} at row {i} must be finite and non-negative",
            dt[i]
        ))),
        None => Ok(()),
    }
}

/// Relative slack when deciding whether `Δt/s` is a whole number, so that
/// gaps like `3 × 0.1` are not charged a fourth sliver step.
const WHOLE_STEP_SLACK: f64 = 1e-9;

/// Number of fixed-size steps needed to cover `dt`.
pub fn fixed_step_count(dt: f64, step: f64) -> usize {
    if dt <= 0.0 {
        return 0;
    }
    let q = dt / step;
    let nearest = q.round();
    if nearest >= 1.0 && (q - nearest).abs() <= WHOLE_STEP_SLACK * nearest {
        nearest as usize
    } else {
        (q.ceil() as usize).max(1)
    }
}

/// `s₀ + s₀r + … + s₀rⁿ⁻¹`
pub fn geometric_partial_sum(n: usize, initial_step: f64, growth: f64) -> f64 {
    initial_step * (growth.powi(n as i32) - 1.0) / (growth - 1.0)
}

/// Smallest `N` with `s₀(rᴺ − 1)/(r − 1) ≥ dt_max`.
///
/// Returns 0 for `dt_max = 0`. For `s₀ = 0.001, r = 1.5` this gives 5 steps
/// for `dt_max = 0.01`, 16 for `1` and 39 for `10000`.
pub fn geometric_step_count(dt_max: f64, initial_step: f64, growth: f64) -> Result<usize> {
    check_positive("initial step", initial_step)?;
    check_growth(growth)?;
    check_deltas(&[dt_max])?;
    if dt_max == 0.0 {
        return Ok(0);
    }
    if dt_max <= initial_step {
        return Ok(1);
    }
    let estimate = ((1.0 + (growth - 1.0) * dt_max / initial_step).ln() / growth.ln()).ceil();
    let mut n = (estimate as usize).max(1);
    while n > 1 && geometric_partial_sum(n - 1, initial_step, growth) >= dt_max {
        n -= 1;
    }
    while geometric_partial_sum(n, initial_step, growth) < dt_max {
        n += 1;
    }
    Ok(n)
}

/// Per-iteration, per-row Euler step sizes with masking folded in: a row
/// that has arrived gets a step of exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    rows: usize,
    steps: Vec<Vec<f64>>,
}

impl StepSchedule {
    /// Lays out `counts[i]` steps for row `i`, where the `j`-th step is
    /// `base(j, i)` except the last, which lands exactly on `dt[i]`.
    fn build(dt: &[f64], counts: &[usize], base: impl Fn(usize, usize) -> f64) -> Self {
        let iterations = counts.iter().copied().max().unwrap_or(0);
        let mut elapsed = vec![0.0; dt.len()];
        let steps = (0..iterations)
            .map(|j| {
                (0..dt.len())
                    .map(|i| {
                        let n = counts[i];
                        if j + 1 < n {
                            let s = base(j, i);
                            elapsed[i] += s;
                            s
                        } else if j + 1 == n {
                            (dt[i] - elapsed[i]).max(0.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        StepSchedule {
            rows: dt.len(),
            steps,
        }
    }

    pub fn fixed_dt(dt: &[f64], step_size: f64) -> Result<Self> {
        check_positive("step size", step_size)?;
        check_deltas(dt)?;
        let counts: Vec<usize> = dt.iter().map(|&d| fixed_step_count(d, step_size)).collect();
        Ok(Self::build(dt, &counts, |_, _| step_size))
    }

    /// Always `num_steps` iterations; rows with `Δt = 0` stay masked.
    pub fn adaptive_fixed(dt: &[f64], num_steps: usize) -> Result<Self> {
        if num_steps < 1 {
            return Err(Error::Config("adaptive-fixed needs at least one step".into()));
        }
        check_deltas(dt)?;
        let counts: Vec<usize> = dt.iter().map(|&d| if d > 0.0 { num_steps } else { 0 }).collect();
        let mut schedule = Self::build(dt, &counts, |_, i| dt[i] / num_steps as f64);
        schedule.steps.resize(num_steps, vec![0.0; dt.len()]);
        Ok(schedule)
    }

    pub fn adaptive_geometric(dt: &[f64], initial_step: f64, growth: f64) -> Result<Self> {
        check_positive("initial step", initial_step)?;
        check_growth(growth)?;
        check_deltas(dt)?;
        let counts = dt
            .iter()
            .map(|&d| geometric_step_count(d, initial_step, growth))
            .collect::<Result<Vec<_>>>()?;
        let iterations = counts.iter().copied().max().unwrap_or(0);
        let mut sizes = Vec::with_capacity(iterations);
        let mut s = initial_step;
        for _ in 0..iterations {
            sizes.push(s);
            s *= growth;
        }
        Ok(Self::build(dt, &counts, |j, _| sizes[j]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Loop length shared by the whole batch.
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, iteration: usize) -> &[f64] {
        &self.steps[iteration]
    }

    /// Sum of the steps applied to one row, in application order.
    pub fn row_total(&self, row: usize) -> f64 {
        self.steps.iter().map(|s| s[row]).sum()
    }

    /// Number of iterations that actually move one row.
    pub fn row_updates(&self, row: usize) -> usize {
        self.steps.iter().filter(|s| s[row] != 0.0).count()
    }
}

/// Applies a precomputed schedule to `h`, recording every step on the tape.
pub fn evolve(
    tape: &mut Tape,
    h: NodeId,
    schedule: &StepSchedule,
    f: &impl Dynamics,
) -> Result<NodeId> {
    let shape = tape.value(h).shape();
    if shape.0 != schedule.rows() {
        return Err(Error::Dimension {
            op: "evolve",
            lhs: shape,
            rhs: (schedule.rows(), 1),
        });
    }
    let mut h = h;
    for j in 0..schedule.iterations() {
        let dh = f.derivative(tape, h)?;
        let step = tape.constant(Matrix::column(schedule.step(j)));
        let update = tape.scale_rows(dh, step)?;
        h = tape.add(h, update)?;
    }
    Ok(h)
}

pub fn evolve_fixed_dt(
    tape: &mut Tape,
    h: NodeId,
    dt: &[f64],
    f: &impl Dynamics,
    step_size: f64,
) -> Result<NodeId> {
    evolve(tape, h, &StepSchedule::fixed_dt(dt, step_size)?, f)
}

pub fn evolve_adaptive_fixed(
    tape: &mut Tape,
    h: NodeId,
    dt: &[f64],
    f: &impl Dynamics,
    num_steps: usize,
) -> Result<NodeId> {
    evolve(tape, h, &StepSchedule::adaptive_fixed(dt, num_steps)?, f)
}

pub fn evolve_adaptive_geometric(
    tape: &mut Tape,
    h: NodeId,
    dt: &[f64],
    f: &impl Dynamics,
    initial_step: f64,
    growth: f64,
) -> Result<NodeId> {
    evolve(tape, h, &StepSchedule::adaptive_geometric(dt, initial_step, growth)?, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_one(tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        let shape = tape.value(h).shape();
        Ok(tape.constant(Matrix::filled(shape.0, shape.1, 1.0)))
    }

    fn identity(_: &mut Tape, h: NodeId) -> Result<NodeId> {
        Ok(h)
    }

    fn run(dt: &[f64], start: &[f64], cfg: EvolverConfig, f: &impl Dynamics) -> Vec<f64> {
        let mut tape = Tape::new();
        let h = tape.var(Matrix::column(start));
        let out = evolve(&mut tape, h, &cfg.schedule(dt).unwrap(), f).unwrap();
        tape.value(out).as_slice().to_vec()
    }

    #[test]
    fn step_counts_from_worked_examples() {
        assert_eq!(geometric_step_count(0.01, 0.001, 1.5).unwrap(), 5);
        assert_eq!(geometric_step_count(10000.0, 0.001, 1.5).unwrap(), 39);
        // The closed form needs 16 steps to reach t = 1.
        assert_eq!(geometric_step_count(1.0, 0.001, 1.5).unwrap(), 16);
        assert_eq!(geometric_step_count(0.0005, 0.001, 1.5).unwrap(), 1);
        assert_eq!(geometric_step_count(0.001, 0.001, 1.5).unwrap(), 1);
        assert!(geometric_step_count(1.0, 0.001, 1.0).is_err());
    }

    #[test]
    fn geometric_reaches_worked_targets() {
        let s = StepSchedule::adaptive_geometric(&[0.01], 0.001, 1.5).unwrap();
        assert_eq!(s.iterations(), 5);
        assert_eq!(s.row_updates(0), 5);
        let s = StepSchedule::adaptive_geometric(&[10000.0], 0.001, 1.5).unwrap();
        assert_eq!(s.iterations(), 39);
        assert!((s.row_total(0) - 10000.0).abs() <= 1e-9 * 10000.0);
    }

    #[test]
    fn whole_multiples_do_not_get_sliver_steps() {
        assert_eq!(fixed_step_count(3.0 * 0.1, 0.1), 3);
        assert_eq!(fixed_step_count(0.3, 0.1), 3);
        assert_eq!(fixed_step_count(0.45, 0.1), 5);
        assert_eq!(fixed_step_count(0.0, 0.1), 0);
        assert_eq!(fixed_step_count(1e-12, 0.1), 1);
    }

    #[test]
    fn zero_gaps_leave_state_unchanged() {
        let start = [0.3, -1.7];
        for cfg in [
            EvolverConfig::FixedDt { step_size: 0.1 },
            EvolverConfig::AdaptiveFixed { num_steps: 5 },
            EvolverConfig::AdaptiveGeometric {
                initial_step: 0.001,
                growth_factor: 1.5,
            },
        ] {
            assert_eq!(run(&[0.0, 0.0], &start, cfg, &identity), start.to_vec(), "{cfg:?}");
        }
    }

    #[test]
    fn fixed_dt_constant_field_masks_and_clamps() {
        let out = run(&[0.3, 0.45], &[1.0, 2.0], EvolverConfig::FixedDt { step_size: 0.1 }, &constant_one);
        assert!((out[0] - 1.3).abs() < 1e-12, "{out:?}");
        assert!((out[1] - 2.45).abs() < 1e-12, "{out:?}");
        let s = StepSchedule::fixed_dt(&[0.3, 0.45], 0.1).unwrap();
        assert_eq!(s.iterations(), 5);
        assert_eq!(s.row_updates(0), 3);
        assert!((s.step(4)[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn adaptive_fixed_constant_field() {
        let out = run(&[1.0, 0.5], &[0.0, 0.0], EvolverConfig::AdaptiveFixed { num_steps: 5 }, &constant_one);
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12, "{out:?}");
        let s = StepSchedule::adaptive_fixed(&[1.0, 0.5, 0.0], 5).unwrap();
        assert_eq!(s.iterations(), 5);
        assert!((s.step(0)[0] - 0.2).abs() < 1e-15 && (s.step(0)[1] - 0.1).abs() < 1e-15);
        assert_eq!(s.row_updates(2), 0);
    }

    #[test]
    fn adaptive_fixed_exponential_closed_form() {
        for n in [1, 2, 5, 10, 100] {
            let out = run(&[1.0], &[1.0], EvolverConfig::AdaptiveFixed { num_steps: n }, &identity);
            let expected = (1.0 + 1.0 / n as f64).powi(n as i32);
            assert!((out[0] - expected).abs() < 1e-12, "n={n}: {} vs {expected}", out[0]);
        }
    }

    #[test]
    fn config_errors() {
        assert!(StepSchedule::fixed_dt(&[0.1], 0.0).is_err());
        assert!(StepSchedule::fixed_dt(&[0.1], -1.0).is_err());
        assert!(matches!(StepSchedule::fixed_dt(&[-0.1], 0.1), Err(Error::Data(_))));
        assert!(StepSchedule::adaptive_fixed(&[0.1], 0).is_err());
        assert!(StepSchedule::adaptive_geometric(&[0.1], 0.001, 1.0).is_err());
        assert!(StepSchedule::adaptive_geometric(&[0.1], 0.0, 1.5).is_err());
        assert!(EvolverConfig::AdaptiveGeometric {
            initial_step: 0.001,
            growth_factor: 0.9
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [EvolverMode::FixedDt, EvolverMode::AdaptiveFixed, EvolverMode::AdaptiveGeometric] {
            assert_eq!(m.as_str().parse::<EvolverMode>().unwrap(), m);
        }
    }
}
