use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::real::Real;

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Operation recorded for a node.
///
/// Every node keeps its input ids and the local partial derivative with
/// respect to each input, so the reverse sweep needs no dispatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    /// Free independent variable.
    Leaf,
    /// Independent variable bound to an external parameter slot.
    Param(u32),
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Square,
    Sigmoid,
    Softplus,
    /// max(x, 0) with subgradient 0 at x = 0.
    Relu,
    Min,
    Max,
    Sum,
    /// Σ cᵢ·xᵢ + bias with constant coefficients.
    LinComb,
    /// Σ xᵢ·yᵢ over two equally long input runs.
    Dot,
}

#[derive(Clone, Copy, Debug)]
struct Node<F> {
    op: OpKind,
    start: u32,
    len: u32,
    aux: F,
}

/// Unary operation for [`Tape::map`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Square,
    Sigmoid,
    Softplus,
    Relu,
}

/// Scalar-node reverse-mode tape.
///
/// Node ids are handed out in creation order, so every input id is smaller
/// than the id of the node that consumes it.
#[derive(Clone, Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    values: Vec<F>,
    args: Vec<u32>,
    partials: Vec<F>,
}

/// Per-node adjoints from one reverse sweep.
#[derive(Clone, Debug)]
pub struct Adjoints<F> {
    pub values: Vec<F>,
    /// Number of nodes the sweep visited.
    pub visited: usize,
}

impl<F: Real> Adjoints<F> {
    #[inline]
    pub fn get(&self, id: NodeId) -> F {
        self.values.get(id.index()).copied().unwrap_or_else(F::zero)
    }
}

/// Accumulated gradient for a set of requested node ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap<F> {
    entries: BTreeMap<NodeId, F>,
}

impl<F: Real> GradientMap<F> {
    pub fn get(&self, id: NodeId) -> Option<F> {
        self.entries.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, F)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    /// Sums another map into this one, key by key.
    pub fn merge(&mut self, other: &GradientMap<F>) {
        for (k, v) in other.iter() {
            let e = self.entries.entry(k).or_insert_with(F::zero);
            *e = *e + v;
        }
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), values: Vec::new(), args: Vec::new(), partials: Vec::new() }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(nodes),
            args: Vec::with_capacity(nodes * 2),
            partials: Vec::with_capacity(nodes * 2),
        }
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.args.clear();
        self.partials.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, id: NodeId) -> F {
        self.values[id.index()]
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn op(&self, id: NodeId) -> OpKind {
        self.nodes[id.index()].op
    }

    /// Input ids of a node.
    pub fn inputs(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let n = &self.nodes[id.index()];
        self.args[n.start as usize..(n.start + n.len) as usize].iter().map(|&a| NodeId(a))
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.index() < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Structural(format!("node {} not on tape of {} nodes", id.0, self.nodes.len())))
        }
    }

    #[inline]
    fn push(&mut self, op: OpKind, value: F, aux: F, inputs: &[(NodeId, F)]) -> NodeId {
        let id = self.nodes.len() as u32;
        let start = self.args.len() as u32;
        for &(a, p) in inputs {
            debug_assert!(a.0 < id);
            self.args.push(a.0);
            self.partials.push(p);
        }
        self.nodes.push(Node { op, start, len: inputs.len() as u32, aux });
        self.values.push(value);
        NodeId(id)
    }

    pub fn leaf(&mut self, value: F) -> NodeId {
        self.push(OpKind::Leaf, value, F::zero(), &[])
    }

    pub fn param(&mut self, slot: usize, value: F) -> NodeId {
        self.push(OpKind::Param(slot as u32), value, F::zero(), &[])
    }

    pub fn constant(&mut self, value: F) -> NodeId {
        self.push(OpKind::Const, value, F::zero(), &[])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(OpKind::Add, v, F::zero(), &[(a, F::one()), (b, F::one())])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(OpKind::Sub, v, F::zero(), &[(a, F::one()), (b, -F::one())])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        self.push(OpKind::Mul, x * y, F::zero(), &[(a, y), (b, x)])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        let v = x / y;
        self.push(OpKind::Div, v, F::zero(), &[(a, F::one() / y), (b, -v / y)])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = -self.value(a);
        self.push(OpKind::Neg, v, F::zero(), &[(a, -F::one())])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).exp();
        self.push(OpKind::Exp, v, F::zero(), &[(a, v)])
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        self.push(OpKind::Ln, x.ln(), F::zero(), &[(a, F::one() / x)])
    }

    /// Square root with derivative 0 at the origin.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = x.sqrt();
        let d = if x > F::zero() { F::of(0.5) / v } else { F::zero() };
        self.push(OpKind::Sqrt, v, F::zero(), &[(a, d)])
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let d = if x > F::zero() {
            F::one()
        } else if x < F::zero() {
            -F::one()
        } else {
            F::zero()
        };
        self.push(OpKind::Abs, x.abs(), F::zero(), &[(a, d)])
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        self.push(OpKind::Square, x * x, F::zero(), &[(a, x + x)])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = sigmoid(self.value(a));
        self.push(OpKind::Sigmoid, v, F::zero(), &[(a, v * (F::one() - v))])
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        self.push(OpKind::Softplus, softplus(x), F::zero(), &[(a, sigmoid(x))])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (v, d) = if x > F::zero() { (x, F::one()) } else { (F::zero(), F::zero()) };
        self.push(OpKind::Relu, v, F::zero(), &[(a, d)])
    }

    /// Smaller input; ties route the gradient to `a`.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        if x <= y {
            self.push(OpKind::Min, x, F::zero(), &[(a, F::one()), (b, F::zero())])
        } else {
            self.push(OpKind::Min, y, F::zero(), &[(a, F::zero()), (b, F::one())])
        }
    }

    /// Larger input; ties route the gradient to `a`.
    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        if x >= y {
            self.push(OpKind::Max, x, F::zero(), &[(a, F::one()), (b, F::zero())])
        } else {
            self.push(OpKind::Max, y, F::zero(), &[(a, F::zero()), (b, F::one())])
        }
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> NodeId {
        let id = self.nodes.len() as u32;
        let start = self.args.len() as u32;
        let mut acc = F::zero();
        for &x in xs {
            acc = acc + self.values[x.index()];
            self.args.push(x.0);
            self.partials.push(F::one());
        }
        self.nodes.push(Node { op: OpKind::Sum, start, len: xs.len() as u32, aux: F::zero() });
        self.values.push(acc);
        NodeId(id)
    }

    /// Σ cᵢ·xᵢ + bias with constant coefficients.
    pub fn lin_comb(&mut self, terms: &[(NodeId, F)], bias: F) -> NodeId {
        let id = self.nodes.len() as u32;
        let start = self.args.len() as u32;
        let mut acc = bias;
        for &(x, c) in terms {
            acc = acc + c * self.values[x.index()];
            self.args.push(x.0);
            self.partials.push(c);
        }
        self.nodes.push(Node { op: OpKind::LinComb, start, len: terms.len() as u32, aux: bias });
        self.values.push(acc);
        NodeId(id)
    }

    /// c·x
    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        self.lin_comb(&[(x, c)], F::zero())
    }

    /// x + c
    pub fn add_const(&mut self, x: NodeId, c: F) -> NodeId {
        self.lin_comb(&[(x, F::one())], c)
    }

    /// Σ xᵢ·yᵢ
    pub fn dot(&mut self, xs: &[NodeId], ys: &[NodeId]) -> NodeId {
        assert_eq!(xs.len(), ys.len(), "dot of unequal lengths");
        let id = self.nodes.len() as u32;
        let start = self.args.len() as u32;
        let mut acc = F::zero();
        for (&x, &y) in xs.iter().zip(ys) {
            acc = acc + self.values[x.index()] * self.values[y.index()];
        }
        for &x in xs {
            self.args.push(x.0);
        }
        for &y in ys {
            self.args.push(y.0);
        }
        for &y in ys {
            self.partials.push(self.values[y.index()]);
        }
        for &x in xs {
            self.partials.push(self.values[x.index()]);
        }
        self.nodes.push(Node { op: OpKind::Dot, start, len: 2 * xs.len() as u32, aux: F::zero() });
        self.values.push(acc);
        NodeId(id)
    }

    pub fn unary(&mut self, op: Unary, x: NodeId) -> NodeId {
        match op {
            Unary::Neg => self.neg(x),
            Unary::Exp => self.exp(x),
            Unary::Ln => self.ln(x),
            Unary::Sqrt => self.sqrt(x),
            Unary::Abs => self.abs(x),
            Unary::Square => self.square(x),
            Unary::Sigmoid => self.sigmoid(x),
            Unary::Softplus => self.softplus(x),
            Unary::Relu => self.relu(x),
        }
    }

    /// Element-wise map.
    pub fn map(&mut self, xs: &[NodeId], op: Unary) -> Vec<NodeId> {
        xs.iter().map(|&x| self.unary(op, x)).collect()
    }

    /// One reverse sweep from `output`, returning the adjoint of every node.
    pub fn backward(&self, output: NodeId) -> Result<Adjoints<F>> {
        self.check(output)?;
        let n = output.index() + 1;
        let mut adj = vec![F::zero(); n];
        adj[output.index()] = F::one();
        let mut visited = 0usize;
        for i in (0..n).rev() {
            visited += 1;
            let a = adj[i];
            if a == F::zero() {
                continue;
            }
            let node = &self.nodes[i];
            let s = node.start as usize;
            let e = s + node.len as usize;
            for (&arg, &p) in self.args[s..e].iter().zip(&self.partials[s..e]) {
                let j = arg as usize;
                adj[j] = adj[j] + a * p;
            }
        }
        Ok(Adjoints { values: adj, visited })
    }

    /// ∂output/∂p for each requested node.
    pub fn grad(&self, output: NodeId, params: &[NodeId]) -> Result<GradientMap<F>> {
        for &p in params {
            self.check(p)?;
        }
        let adj = self.backward(output)?;
        let entries = params.iter().map(|&p| (p, adj.get(p))).collect();
        Ok(GradientMap { entries })
    }

    /// Gradient contributions of every `Param` leaf, in tape order.
    pub fn param_grads<'a>(&'a self, adj: &'a Adjoints<F>) -> impl Iterator<Item = (usize, F)> + 'a {
        adj.values.iter().enumerate().filter_map(move |(i, &g)| match self.nodes[i].op {
            OpKind::Param(slot) if g != F::zero() => Some((slot as usize, g)),
            _ => None,
        })
    }

    /// Scatter-adds all parameter gradients into a dense buffer.
    pub fn accumulate_param_grads(&self, adj: &Adjoints<F>, dense: &mut [F]) {
        for (slot, g) in self.param_grads(adj) {
            dense[slot] = dense[slot] + g;
        }
    }

    /// Re-evaluates every node from its inputs.
    pub fn replay(&self) -> Vec<F> {
        let mut out: Vec<F> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let s = node.start as usize;
            let e = s + node.len as usize;
            let args = &self.args[s..e];
            let x = |k: usize| out[args[k] as usize];
            let v = match node.op {
                OpKind::Leaf | OpKind::Param(_) | OpKind::Const => self.values[i],
                OpKind::Add => x(0) + x(1),
                OpKind::Sub => x(0) - x(1),
                OpKind::Mul => x(0) * x(1),
                OpKind::Div => x(0) / x(1),
                OpKind::Neg => -x(0),
                OpKind::Exp => x(0).exp(),
                OpKind::Ln => x(0).ln(),
                OpKind::Sqrt => x(0).sqrt(),
                OpKind::Abs => x(0).abs(),
                OpKind::Square => x(0) * x(0),
                OpKind::Sigmoid => sigmoid(x(0)),
                OpKind::Softplus => softplus(x(0)),
                OpKind::Relu => {
                    if x(0) > F::zero() {
                        x(0)
                    } else {
                        F::zero()
                    }
                }
                OpKind::Min => {
                    if x(0) <= x(1) {
                        x(0)
                    } else {
                        x(1)
                    }
                }
                OpKind::Max => {
                    if x(0) >= x(1) {
                        x(0)
                    } else {
                        x(1)
                    }
                }
                OpKind::Sum => args.iter().fold(F::zero(), |acc, &a| acc + out[a as usize]),
                OpKind::LinComb => args
                    .iter()
                    .zip(&self.partials[s..e])
                    .fold(node.aux, |acc, (&a, &c)| acc + c * out[a as usize]),
                OpKind::Dot => {
                    let h = args.len() / 2;
                    (0..h).fold(F::zero(), |acc, k| acc + x(k) * x(h + k))
                }
            };
            out.push(v);
        }
        out
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    // log(1 + e^x) = max(x, 0) + log(1 + e^{-|x|})
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}
