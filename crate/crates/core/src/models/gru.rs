use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::init;

/// GRU cell:
///
/// ```text
/// r  = σ(x·W_r + h·U_r + b_r)
/// z  = σ(x·W_z + h·U_z + b_z)
/// n  = tanh(x·W_n + b_in + r ⊙ (h·U_n + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    input: usize,
    hidden: usize,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_n: ParamId,
    b_in: ParamId,
    u_n: ParamId,
    b_hn: ParamId,
}

impl GruCell {
    pub fn new<R: Rng>(params: &mut ParamSet, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config("GRU needs non-zero input and hidden sizes".into()));
        }
        let mut add = |name: &str, rows: usize, cols: usize| {
            params.add(format!("gru.{name}"), init::uniform(rng, rows, cols, hidden))
        };
        Ok(GruCell {
            input,
            hidden,
            w_r: add("w_r", input, hidden)?,
            u_r: add("u_r", hidden, hidden)?,
            b_r: add("b_r", 1, hidden)?,
            w_z: add("w_z", input, hidden)?,
            u_z: add("u_z", hidden, hidden)?,
            b_z: add("b_z", 1, hidden)?,
            w_n: add("w_n", input, hidden)?,
            b_in: add("b_in", 1, hidden)?,
            u_n: add("u_n", hidden, hidden)?,
            b_hn: add("b_hn", 1, hidden)?,
        })
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn gate(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: NodeId,
        h: NodeId,
        (w, u, b): (ParamId, ParamId, ParamId),
    ) -> Result<NodeId> {
        let (w, u, b) = (tape.param(params, w), tape.param(params, u), tape.param(params, b));
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        let s = tape.add(s, b)?;
        Ok(tape.sigmoid(s))
    }

    /// One update of `h` (`B × H`) from `x` (`B × input`).
    pub fn step(&self, tape: &mut Tape, params: &ParamSet, h: NodeId, x: NodeId) -> Result<NodeId> {
        let (hs, xs) = (tape.value(h).shape(), tape.value(x).shape());
        if hs.1 != self.hidden || xs.1 != self.input || hs.0 != xs.0 {
            return Err(Error::Dimension {
                op: "gru step (h vs x)",
                lhs: hs,
                rhs: xs,
            });
        }
        let r = self.gate(tape, params, x, h, (self.w_r, self.u_r, self.b_r))?;
        let z = self.gate(tape, params, x, h, (self.w_z, self.u_z, self.b_z))?;

        let (w_n, b_in) = (tape.param(params, self.w_n), tape.param(params, self.b_in));
        let (u_n, b_hn) = (tape.param(params, self.u_n), tape.param(params, self.b_hn));
        let xn = tape.matmul(x, w_n)?;
        let xn = tape.add(xn, b_in)?;
        let hn = tape.matmul(h, u_n)?;
        let hn = tape.add(hn, b_hn)?;
        let gated = tape.mul(r, hn)?;
        let pre = tape.add(xn, gated)?;
        let n = tape.tanh(pre);

        // (1 − z)·n + z·h  =  n + z·(h − n)
        let diff = tape.sub(h, n)?;
        let keep = tape.mul(z, diff)?;
        tape.add(n, keep)
    }
}

/// Linear prediction head `H → d_y`.
#[derive(Clone, Debug)]
pub struct OutputNet {
    w: ParamId,
    b: ParamId,
}

impl OutputNet {
    pub fn new<R: Rng>(params: &mut ParamSet, hidden: usize, output: usize, rng: &mut R) -> Result<Self> {
        if output == 0 {
            return Err(Error::Config("output width must be non-zero".into()));
        }
        Ok(OutputNet {
            w: params.add("output.w", init::uniform(rng, hidden, output, hidden))?,
            b: params.add("output.b", init::uniform(rng, 1, output, hidden))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamSet, h: NodeId) -> Result<NodeId> {
        let (w, b) = (tape.param(params, self.w), tape.param(params, self.b));
        let o = tape.matmul(h, w)?;
        tape.add(o, b)
    }
}
