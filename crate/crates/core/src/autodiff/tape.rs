use super::matrix::kernels;
use super::{Matrix, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `b` is either the same shape as `a` or a `1 × cols` row broadcast down `a`.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row `r` of `a` times `scale[r]`, with `scale` a `rows × 1` column.
    ScaleRows(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only kept for leaves, `None` means zero.
    grad: Option<Matrix>,
}

/// Records one forward pass for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the graph is acyclic by
/// construction and a reverse sweep over the node list is a valid
/// topological order. Leaves created with [`Tape::var`] or bound with
/// [`Tape::param`] receive gradients; [`Tape::constant`] leaves and every
/// node depending only on constants are skipped during `backward`.
///
/// A tape is rebuilt for every training step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<Option<NodeId>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn var(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation (data, masks, step sizes).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a registered parameter to this tape, copying its value once.
    /// Later calls with the same id return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        if self.bindings.len() <= id.index() {
            self.bindings.resize(id.index() + 1, None);
        }
        if let Some(node) = self.bindings[id.index()] {
            return node;
        }
        let node = self.var(params.value(id).clone());
        self.bindings[id.index()] = Some(node);
        node
    }

    pub fn binding(&self, id: ParamId) -> Option<NodeId> {
        self.bindings.get(id.index()).copied().flatten()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a leaf, `None` if nothing reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Resets every accumulated gradient to exactly zero.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.matmul(vb)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Checks that `b` matches `a` or is a row vector of `a`'s width.
    /// Returns whether `b` is broadcast.
    fn broadcast_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Ok(true)
        } else {
            Err(Error::Dimension { op, lhs: sa, rhs: sb })
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bcast = self.broadcast_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = if bcast {
            kernels::zip_row_broadcast(va, vb, |x, y| x + y)
        } else {
            kernels::zip_with(va, vb, |x, y| x + y)
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op: "sub",
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        let out = kernels::zip_with(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Entrywise product; `b` may be a broadcast row vector.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bcast = self.broadcast_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = if bcast {
            kernels::zip_row_broadcast(va, vb, |x, y| x * y)
        } else {
            kernels::zip_with(va, vb, |x, y| x * y)
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Scales each row of `a` by the matching entry of the column `scale`.
    pub fn scale_rows(&mut self, a: NodeId, scale: NodeId) -> Result<NodeId> {
        let (sa, ss) = (self.shape(a), self.shape(scale));
        if ss != (sa.0, 1) {
            return Err(Error::Dimension {
                op: "scale_rows",
                lhs: sa,
                rhs: ss,
            });
        }
        let out = kernels::scale_rows(self.value(a), self.value(scale));
        let rg = self.needs(&[a, scale]);
        Ok(self.push(out, Op::ScaleRows(a, scale), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        let rg = self.needs(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        let rg = self.needs(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).as_slice().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Matrix::from_raw(1, 1, vec![total]), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mean = v.as_slice().iter().sum::<f64>() / v.len() as f64;
        let rg = self.needs(&[a]);
        self.push(Matrix::from_raw(1, 1, vec![mean]), Op::Mean(a), rg)
    }

    /// Back-propagates from a `1 × 1` node and adds the resulting gradients
    /// into every differentiable leaf. Gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adjoint: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adjoint[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let op = node.op;
            match op {
                Op::Leaf => {
                    let slot = &mut self.nodes[i].grad;
                    match slot {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let ga = kernels::matmul_nt(&g, self.value(b));
                        accumulate(&mut adjoint, a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = kernels::matmul_tn(self.value(a), &g);
                        accumulate(&mut adjoint, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].requires_grad {
                        let gb = if self.shape(b) == g.shape() {
                            g.clone()
                        } else {
                            kernels::column_sums(&g)
                        };
                        accumulate(&mut adjoint, b, gb);
                    }
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adjoint, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut adjoint, b, g.map(|x| -x));
                    }
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adjoint, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let bcast = self.shape(b) != g.shape();
                    if self.nodes[a.0].requires_grad {
                        let ga = if bcast {
                            kernels::zip_row_broadcast(&g, self.value(b), |x, y| x * y)
                        } else {
                            kernels::zip_with(&g, self.value(b), |x, y| x * y)
                        };
                        accumulate(&mut adjoint, a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let prod = kernels::zip_with(&g, self.value(a), |x, y| x * y);
                        let gb = if bcast { kernels::column_sums(&prod) } else { prod };
                        accumulate(&mut adjoint, b, gb);
                    }
                }
                Op::ScaleRows(a, s) => {
                    if self.nodes[s.0].requires_grad {
                        let gs = kernels::row_dots(&g, self.value(a));
                        accumulate(&mut adjoint, s, gs);
                    }
                    if self.nodes[a.0].requires_grad {
                        let ga = kernels::scale_rows(&g, self.value(s));
                        accumulate(&mut adjoint, a, ga);
                    }
                }
                Op::Scale(a, k) => accumulate(&mut adjoint, a, g.map(|x| x * k)),
                Op::Tanh(a) => {
                    let ga = kernels::zip_with(&g, &self.nodes[i].value, |x, y| x * (1.0 - y * y));
                    accumulate(&mut adjoint, a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = kernels::zip_with(&g, &self.nodes[i].value, |x, y| x * y * (1.0 - y));
                    accumulate(&mut adjoint, a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(a);
                    accumulate(&mut adjoint, a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(a);
                    let share = g.get(0, 0) / (r * c) as f64;
                    accumulate(&mut adjoint, a, Matrix::filled(r, c, share));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adjoint: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut adjoint[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
