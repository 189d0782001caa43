use super::{matmul_raw, Tensor};
use crate::error::{contract_err, dim_err, Error, Result};

/// Handle to a node in a [`Graph`]. Ids are assigned in creation order, which
/// is also a topological order of the recorded computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a custom op: given the input values, the output
/// value and the upstream gradient, returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Tensor> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// A single `1×D` row repeated across every row of an `N×D` operand.
    Row,
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Sigmoid,
    Silu,
    Softplus,
    Exp,
    Log,
}

// Every op's backward reads its inputs' and its own forward values straight
// from the node list; the only extra saved state is what `Custom` closures keep.
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        ba: Bcast,
        bb: Bcast,
    },
    Unary(UnaryKind, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Reshape(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        backward: BackwardFn,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for reverse-mode differentiation.
///
/// Leaf gradients persist across [`Graph::backward`] calls and accumulate until
/// [`Graph::zero_grad`]. A graph is single-threaded; build one per sample when
/// parallelising over a batch.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 || k != k2 {
            return dim_err(format!("matmul {:?} x {:?}", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul(a, b),
            rg,
            "matmul",
        )
    }

    fn bcast_kinds(&self, a: Var, b: Var) -> Result<(Bcast, Bcast, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok((Bcast::Same, Bcast::Same, sa.to_vec()));
        }
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        if nb == 1 {
            return Ok((Bcast::Same, Bcast::Scalar, sa.to_vec()));
        }
        if na == 1 {
            return Ok((Bcast::Scalar, Bcast::Same, sb.to_vec()));
        }
        let is_row =
            |s: &[usize], full: &[usize]| full.len() == 2 && (s == [1, full[1]] || s == [full[1]]);
        if is_row(sb, sa) {
            return Ok((Bcast::Same, Bcast::Row, sa.to_vec()));
        }
        if is_row(sa, sb) {
            return Ok((Bcast::Row, Bcast::Same, sb.to_vec()));
        }
        dim_err(format!("cannot broadcast {sa:?} with {sb:?}"))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ba, bb, shape) = self.bcast_kinds(a, b)?;
        let numel: usize = shape.iter().product();
        let cols = *shape.last().unwrap();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = (0..numel)
            .map(|i| {
                let x = pick(va, ba, i, cols);
                let y = pick(vb, bb, i, cols);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        self.push(
            Tensor::new(shape, out)?,
            Op::Binary { kind, a, b, ba, bb },
            rg,
            name,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v * factor).collect(),
        )?;
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg, "scale")
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let UnaryKind::Log = kind {
            if let Some(bad) = t.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Numeric(format!("log of non-positive value {bad}")));
            }
        }
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Silu => |v| v * sigmoid(v),
            UnaryKind::Softplus => softplus,
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
        };
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.rg(x);
        self.push(
            out,
            Op::Unary(kind, x),
            rg,
            &format!("{kind:?}").to_lowercase(),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Silu, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg, "mean")
    }

    /// Column means of an `N×D` matrix, giving a `1×D` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        let data = self.value(x).data();
        let mut out = vec![0.0; d];
        for row in data.chunks_exact(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![1, d], out)?,
            Op::MeanRows(x),
            rg,
            "mean_rows",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    /// `out[i] = x[index[i]]` over flat storage; the output takes `shape`.
    /// Expresses slicing, row selection and patch rearrangement.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return dim_err(format!("gather index {bad} out of range {}", src.len()));
        }
        let out: Vec<f64> = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(shape.to_vec(), out)?;
        let rg = self.rg(x);
        self.push(out, Op::Gather { x, index }, rg, "gather")
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if start >= end || end > cols {
            return dim_err(format!("column slice {start}..{end} of {cols}"));
        }
        let index = (0..rows)
            .flat_map(|r| (start..end).map(move |c| r * cols + c))
            .collect();
        self.gather(x, index, &[rows, end - start])
    }

    /// Row `r` of a matrix as a `1×D` tensor.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if r >= rows {
            return dim_err(format!("row {r} of {rows}"));
        }
        self.gather(x, (r * cols..(r + 1) * cols).collect(), &[1, cols])
    }

    /// Records an op whose value was computed by the caller, with a
    /// caller-supplied vector-Jacobian product.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Result<Var> {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            rg,
            "custom op",
        )
    }

    /// Reverse pass from a one-element `loss`. Nodes are visited once each in
    /// reverse creation order; fan-out contributions are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return contract_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let Graph { nodes, grads } = self;
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, grad: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut adj[v.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => match &mut grads[id] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2()?;
                    let n = val(*b).dims2()?.1;
                    let (ad, bd, gd) = (val(*a).data(), val(*b).data(), g.data());
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let grow = &gd[i * n..(i + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    let (a, b) = (*a, *b);
                    send(a, Tensor::new(vec![m, k], ga)?);
                    send(b, Tensor::new(vec![k, n], gb)?);
                }
                Op::Binary { kind, a, b, ba, bb } => {
                    let cols = *g.shape().last().unwrap();
                    let (ad, bd) = (val(*a).data(), val(*b).data());
                    let (mut da, mut db) = (vec![0.0; ad.len()], vec![0.0; bd.len()]);
                    for (i, &gv) in g.data().iter().enumerate() {
                        let (pa, pb) = match kind {
                            BinaryKind::Add => (gv, gv),
                            BinaryKind::Sub => (gv, -gv),
                            BinaryKind::Mul => {
                                (gv * pick(bd, *bb, i, cols), gv * pick(ad, *ba, i, cols))
                            }
                        };
                        da[slot(*ba, i, cols)] += pa;
                        db[slot(*bb, i, cols)] += pb;
                    }
                    let (a, b) = (*a, *b);
                    let (sa, sb) = (val(a).shape().to_vec(), val(b).shape().to_vec());
                    send(a, Tensor::new(sa, da)?);
                    send(b, Tensor::new(sb, db)?);
                }
                Op::Unary(kind, x) => {
                    let (xd, yd) = (val(*x).data(), node.value.data());
                    let dx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(xd.iter().zip(yd))
                        .map(|(&gv, (&xv, &yv))| {
                            gv * match kind {
                                UnaryKind::Sigmoid => yv * (1.0 - yv),
                                UnaryKind::Silu => {
                                    let s = sigmoid(xv);
                                    s * (1.0 + xv * (1.0 - s))
                                }
                                UnaryKind::Softplus => sigmoid(xv),
                                UnaryKind::Exp => yv,
                                UnaryKind::Log => 1.0 / xv,
                            }
                        })
                        .collect();
                    let x = *x;
                    send(x, Tensor::new(val(x).shape().to_vec(), dx)?);
                }
                Op::Scale(x, f) => {
                    let x = *x;
                    let d = g.data().iter().map(|v| v * f).collect();
                    send(x, Tensor::new(val(x).shape().to_vec(), d)?);
                }
                Op::Sum(x) | Op::Mean(x) => {
                    let x = *x;
                    let n = val(x).numel();
                    let per = match node.op {
                        Op::Mean(_) => g.data()[0] / n as f64,
                        _ => g.data()[0],
                    };
                    send(x, Tensor::full(val(x).shape(), per));
                }
                Op::MeanRows(x) => {
                    let x = *x;
                    let (n, d) = val(x).dims2()?;
                    let gd = g.data();
                    let dx = Tensor::from_fn(&[n, d], |i| gd[i % d] / n as f64);
                    send(x, dx.reshaped(val(x).shape())?);
                }
                Op::Reshape(x) => {
                    let x = *x;
                    send(x, g.reshaped(val(x).shape())?);
                }
                Op::Gather { x, index } => {
                    let x = *x;
                    let mut dx = val(x).zeros_like();
                    let dd = dx.data_mut();
                    for (&src, &gv) in index.iter().zip(g.data()) {
                        dd[src] += gv;
                    }
                    send(x, dx);
                }
                Op::Custom { inputs, backward } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                    let input_grads = backward(&vals, &node.value, &g);
                    if input_grads.len() != inputs.len() {
                        return contract_err(
                            "custom backward returned the wrong number of gradients",
                        );
                    }
                    for (&v, gi) in inputs.iter().zip(input_grads) {
                        if gi.shape() != val(v).shape() {
                            return dim_err(format!(
                                "custom backward gradient {:?} for input {:?}",
                                gi.shape(),
                                val(v).shape()
                            ));
                        }
                        send(v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn pick(data: &[f64], b: Bcast, i: usize, cols: usize) -> f64 {
    data[slot(b, i, cols)]
}

#[inline]
fn slot(b: Bcast, i: usize, cols: usize) -> usize {
    match b {
        Bcast::Same => i,
        Bcast::Scalar => 0,
        Bcast::Row => i % cols,
    }
}
