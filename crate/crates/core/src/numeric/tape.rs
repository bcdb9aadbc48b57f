//! Tape-based reverse-mode differentiation over [`NumArray`] values.
//!
//! Every primitive evaluates eagerly and appends one node to the tape. The
//! backward pass walks the nodes in reverse and accumulates adjoints; named
//! parameter leaves expose their accumulated gradient through [`Gradients`].

use std::collections::BTreeMap;

use super::array::{self, dot, sigmoid, NumArray, SOFTPLUS_GUARD};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// `a + 1 · row`
    AddRow(Var, Var),
    /// `a + col · row`
    AddOuter(Var, Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    LogSigmoid(Var),
    /// scaled softplus with a `1 x cols` timescale row
    Softplus(Var, Var),
    MaskedSoftmax(Var, Vec<bool>),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    GatherRows(Var, Vec<usize>),
    /// `out[i, k] = Σ_l g[i, k·block + l] · w[k·block + l]`
    BlockDot(Var, Var, usize),
    RowSum(Var),
    Sum(Var),
    /// gather single entries into a `1 x n` row
    Pick(Var, Vec<(usize, usize)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddOuter(..) => "add_outer",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Softplus(..) => "scaled_softplus",
            Op::MaskedSoftmax(..) => "masked_softmax_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::BlockDot(..) => "block_dot",
            Op::RowSum(..) => "row_sum",
            Op::Sum(..) => "sum",
            Op::Pick(..) => "pick",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: NumArray,
}

/// Gradients of a scalar with respect to every named parameter on the tape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_name: BTreeMap<String, NumArray>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&NumArray> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NumArray)> {
        self.by_name.iter()
    }

    pub fn insert(&mut self, name: String, grad: NumArray) {
        self.by_name.insert(name, grad);
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|g| g.values().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Record of primitive operations for one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &NumArray {
        &self.nodes[v.0].value
    }

    /// A leaf that receives no gradient slot.
    pub fn constant(&mut self, value: NumArray) -> Var {
        self.push_raw(Op::Leaf, value)
    }

    /// A named parameter leaf. Requesting the same name twice returns the
    /// existing node.
    pub fn param(&mut self, name: &str, value: &NumArray) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push_raw(Op::Leaf, value.clone());
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    fn push_raw(&mut self, op: Op, value: NumArray) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.nodes)?;
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        Ok(self.push_raw(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.push(Op::AddRow(a, row))
    }

    pub fn add_outer(&mut self, a: Var, col: Var, row: Var) -> Result<Var> {
        self.push(Op::AddOuter(a, col, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::AddScalar(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Ln(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSigmoid(a))
    }

    pub fn scaled_softplus(&mut self, x: Var, phi: Var) -> Result<Var> {
        self.push(Op::Softplus(x, phi))
    }

    pub fn masked_softmax_rows(&mut self, scores: Var, mask: Vec<bool>) -> Result<Var> {
        self.push(Op::MaskedSoftmax(scores, mask))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::ConcatRows(a, b))
    }

    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        self.push(Op::GatherRows(table, idx))
    }

    pub fn block_dot(&mut self, g: Var, w: Var, block: usize) -> Result<Var> {
        self.push(Op::BlockDot(g, w, block))
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn pick(&mut self, a: Var, idx: Vec<(usize, usize)>) -> Result<Var> {
        self.push(Op::Pick(a, idx))
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<NumArray>> {
        let mut replayed: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, &replayed)?,
            };
            replayed.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        Ok(replayed.into_iter().map(|n| n.value).collect())
    }

    /// Values of every node in recording order.
    pub fn values(&self) -> Vec<&NumArray> {
        self.nodes.iter().map(|n| &n.value).collect()
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut adj: Vec<Option<NumArray>> = vec![None; output.0 + 1];
        adj[output.0] = Some(NumArray::new(
            self.value(output).shape().to_vec(),
            vec![1.0],
        )?);
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        let mut grads = Gradients::default();
        for (name, v) in &self.params {
            let g = match adj.get(v.0).and_then(Option::as_ref) {
                Some(g) => g.clone(),
                None => {
                    let val = self.value(*v);
                    NumArray::new(val.shape().to_vec(), vec![0.0; val.len()])?
                }
            };
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &NumArray, adj: &mut [Option<NumArray>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = array::matmul_nt(g, bv)?;
                let gb = array::matmul_tn(av, g)?;
                add_into(adj, *a, ga);
                add_into(adj, *b, gb);
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = array::matmul(g, bv)?;
                let gb = array::matmul_tn(g, av)?;
                add_into(adj, *a, ga);
                add_into(adj, *b, gb);
            }
            Op::Add(a, b) => {
                add_into(adj, *a, g.clone());
                add_into(adj, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                add_into(adj, *a, zip_map(g, bv, |x, y| x * y));
                add_into(adj, *b, zip_map(g, av, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                add_into(adj, *a, g.clone());
                add_into(adj, *row, col_sums(g));
            }
            Op::AddOuter(a, col, row) => {
                add_into(adj, *a, g.clone());
                let (cv, rv) = (self.value(*col), self.value(*row));
                let (r, c) = (g.rows(), g.cols());
                let mut gc = vec![0.0; r];
                let mut gr = vec![0.0; c];
                for ii in 0..r {
                    let grow = g.row(ii);
                    gc[ii] = dot(grow, rv.values());
                    let ci = cv.values()[ii];
                    for (acc, &gij) in gr.iter_mut().zip(grow) {
                        *acc += gij * ci;
                    }
                }
                add_into(adj, *col, NumArray::new(cv.shape().to_vec(), gc)?);
                add_into(adj, *row, NumArray::new(rv.shape().to_vec(), gr)?);
            }
            Op::Scale(a, s) => add_into(adj, *a, g.map(|v| v * s)),
            Op::AddScalar(a, _) => add_into(adj, *a, g.clone()),
            Op::Tanh(a) => add_into(adj, *a, zip_map(g, y, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Exp(a) => add_into(adj, *a, zip_map(g, y, |gi, yi| gi * yi)),
            Op::Ln(a) => {
                let x = self.value(*a);
                add_into(adj, *a, zip_map(g, x, |gi, xi| gi / xi));
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a);
                add_into(adj, *a, zip_map(g, x, |gi, xi| gi * sigmoid(-xi)));
            }
            Op::Softplus(x, phi) => {
                let (xv, pv) = (self.value(*x), self.value(*phi));
                let cols = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                let mut gp = vec![0.0; cols];
                for (idx, (&gi, &xi)) in g.values().iter().zip(xv.values()).enumerate() {
                    let p = pv.values()[idx % cols];
                    let z = xi / p;
                    let s = sigmoid(z);
                    gx[idx] = gi * s;
                    let sp = if z > SOFTPLUS_GUARD {
                        z + (-z).exp().ln_1p()
                    } else {
                        z.exp().ln_1p()
                    };
                    gp[idx % cols] += gi * (sp - z * s);
                }
                add_into(adj, *x, NumArray::new(xv.shape().to_vec(), gx)?);
                add_into(adj, *phi, NumArray::new(pv.shape().to_vec(), gp)?);
            }
            Op::MaskedSoftmax(a, _) => {
                let (r, c) = (y.rows(), y.cols());
                let mut ga = vec![0.0; r * c];
                for ii in 0..r {
                    let yr = y.row(ii);
                    let gr = g.row(ii);
                    let inner = dot(yr, gr);
                    for j in 0..c {
                        ga[ii * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                add_into(adj, *a, NumArray::new(y.shape().to_vec(), ga)?);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let r = g.rows();
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * cb);
                for ii in 0..r {
                    let row = g.row(ii);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                add_into(adj, *a, NumArray::new(vec![r, ca], ga)?);
                add_into(adj, *b, NumArray::new(vec![r, cb], gb)?);
            }
            Op::ConcatRows(a, b) => {
                let ra = self.value(*a).rows();
                let rb = self.value(*b).rows();
                let c = g.cols();
                let (top, bottom) = g.values().split_at(ra * c);
                add_into(adj, *a, NumArray::new(vec![ra, c], top.to_vec())?);
                add_into(adj, *b, NumArray::new(vec![rb, c], bottom.to_vec())?);
            }
            Op::GatherRows(table, idx) => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut gt = vec![0.0; tv.len()];
                for (ii, &src) in idx.iter().enumerate() {
                    for (acc, &gv) in gt[src * c..(src + 1) * c].iter_mut().zip(g.row(ii)) {
                        *acc += gv;
                    }
                }
                add_into(adj, *table, NumArray::new(tv.shape().to_vec(), gt)?);
            }
            Op::BlockDot(gv, w, block) => {
                let (gm, wv) = (self.value(*gv), self.value(*w));
                let (r, heads) = (y.rows(), y.cols());
                let mut gg = vec![0.0; gm.len()];
                let mut gw = vec![0.0; wv.len()];
                let wc = gm.cols();
                for ii in 0..r {
                    for k in 0..heads {
                        let up = g.get(ii, k);
                        let off = k * block;
                        for l in 0..*block {
                            gg[ii * wc + off + l] = up * wv.values()[off + l];
                            gw[off + l] += up * gm.values()[ii * wc + off + l];
                        }
                    }
                }
                add_into(adj, *gv, NumArray::new(gm.shape().to_vec(), gg)?);
                add_into(adj, *w, NumArray::new(wv.shape().to_vec(), gw)?);
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut ga = Vec::with_capacity(av.len());
                for ii in 0..av.rows() {
                    ga.extend(std::iter::repeat(g.values()[ii]).take(c));
                }
                add_into(adj, *a, NumArray::new(av.shape().to_vec(), ga)?);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                let s = g.item();
                add_into(adj, *a, NumArray::new(av.shape().to_vec(), vec![s; av.len()])?);
            }
            Op::Pick(a, idx) => {
                let av = self.value(*a);
                let mut ga = NumArray::new(av.shape().to_vec(), vec![0.0; av.len()])?;
                for (n, &(r, c)) in idx.iter().enumerate() {
                    let cur = ga.get(r, c);
                    ga.set(r, c, cur + g.values()[n]);
                }
                add_into(adj, *a, ga);
            }
        }
        Ok(())
    }
}

fn add_into(adj: &mut [Option<NumArray>], v: Var, g: NumArray) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &NumArray, b: &NumArray, f: impl Fn(f64, f64) -> f64) -> NumArray {
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    NumArray::new(a.shape().to_vec(), values).expect("same shape")
}

fn col_sums(g: &NumArray) -> NumArray {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    NumArray::row_vector(out)
}

fn same_shape(a: &NumArray, b: &NumArray, what: &str) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn eval(op: &Op, nodes: &[Node]) -> Result<NumArray> {
    let val = |v: &Var| &nodes[v.0].value;
    match op {
        Op::Leaf => unreachable!("leaves are never re-evaluated"),
        Op::MatMul(a, b) => array::matmul(val(a), val(b)),
        Op::MatMulNt(a, b) => array::matmul_nt(val(a), val(b)),
        Op::Add(a, b) => {
            same_shape(val(a), val(b), "add")?;
            Ok(zip_map(val(a), val(b), |x, y| x + y))
        }
        Op::Mul(a, b) => {
            same_shape(val(a), val(b), "mul")?;
            Ok(zip_map(val(a), val(b), |x, y| x * y))
        }
        Op::AddRow(a, row) => {
            let (av, rv) = (val(a), val(row));
            if rv.len() != av.cols() {
                return Err(Error::Dimension(format!(
                    "add_row: row of {} for {} columns",
                    rv.len(),
                    av.cols()
                )));
            }
            let c = av.cols();
            let values = av
                .values()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + rv.values()[i % c])
                .collect();
            NumArray::new(av.shape().to_vec(), values)
        }
        Op::AddOuter(a, col, row) => {
            let (av, cv, rv) = (val(a), val(col), val(row));
            if cv.len() != av.rows() || rv.len() != av.cols() {
                return Err(Error::Dimension(format!(
                    "add_outer: {}-vector by {}-vector for shape {:?}",
                    cv.len(),
                    rv.len(),
                    av.shape()
                )));
            }
            let c = av.cols();
            let values = av
                .values()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + cv.values()[i / c] * rv.values()[i % c])
                .collect();
            NumArray::new(av.shape().to_vec(), values)
        }
        Op::Scale(a, s) => Ok(val(a).map(|x| x * s)),
        Op::AddScalar(a, s) => Ok(val(a).map(|x| x + s)),
        Op::Tanh(a) => Ok(val(a).map(f64::tanh)),
        Op::Exp(a) => Ok(val(a).map(f64::exp)),
        Op::Ln(a) => {
            if val(a).values().iter().any(|&x| x <= 0.0) {
                return Err(Error::ParameterDomain("ln of a non-positive value".into()));
            }
            Ok(val(a).map(f64::ln))
        }
        Op::LogSigmoid(a) => Ok(val(a).map(|x| -softplus_unit(-x))),
        Op::Softplus(x, phi) => array::scaled_softplus(val(x), val(phi).values()),
        Op::MaskedSoftmax(a, mask) => array::masked_softmax_rows(val(a), mask),
        Op::ConcatCols(a, b) => {
            let (av, bv) = (val(a), val(b));
            if av.rows() != bv.rows() {
                return Err(Error::Dimension(format!(
                    "concat_cols: {} rows and {} rows",
                    av.rows(),
                    bv.rows()
                )));
            }
            let mut out = Vec::with_capacity(av.len() + bv.len());
            for i in 0..av.rows() {
                out.extend_from_slice(av.row(i));
                out.extend_from_slice(bv.row(i));
            }
            NumArray::new(vec![av.rows(), av.cols() + bv.cols()], out)
        }
        Op::ConcatRows(a, b) => {
            let (av, bv) = (val(a), val(b));
            if av.cols() != bv.cols() {
                return Err(Error::Dimension(format!(
                    "concat_rows: {} cols and {} cols",
                    av.cols(),
                    bv.cols()
                )));
            }
            let mut out = av.values().to_vec();
            out.extend_from_slice(bv.values());
            NumArray::new(vec![av.rows() + bv.rows(), av.cols()], out)
        }
        Op::GatherRows(table, idx) => {
            let tv = val(table);
            let mut out = Vec::with_capacity(idx.len() * tv.cols());
            for &i in idx {
                if i >= tv.rows() {
                    return Err(Error::Vocabulary(format!(
                        "row {i} outside table of {} rows",
                        tv.rows()
                    )));
                }
                out.extend_from_slice(tv.row(i));
            }
            NumArray::new(vec![idx.len(), tv.cols()], out)
        }
        Op::BlockDot(g, w, block) => {
            let (gv, wv) = (val(g), val(w));
            if *block == 0 || gv.cols() % block != 0 || wv.len() != gv.cols() {
                return Err(Error::Dimension(format!(
                    "block_dot: {} columns, {} weights, block {}",
                    gv.cols(),
                    wv.len(),
                    block
                )));
            }
            let heads = gv.cols() / block;
            let mut out = Vec::with_capacity(gv.rows() * heads);
            for i in 0..gv.rows() {
                let row = gv.row(i);
                for k in 0..heads {
                    let r = k * block..(k + 1) * block;
                    out.push(dot(&row[r.clone()], &wv.values()[r]));
                }
            }
            NumArray::new(vec![gv.rows(), heads], out)
        }
        Op::RowSum(a) => {
            let av = val(a);
            let sums = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
            Ok(NumArray::col_vector(sums))
        }
        Op::Sum(a) => Ok(NumArray::scalar(val(a).values().iter().sum())),
        Op::Pick(a, idx) => {
            let av = val(a);
            let mut out = Vec::with_capacity(idx.len());
            for &(r, c) in idx {
                if r >= av.rows() || c >= av.cols() {
                    return Err(Error::Dimension(format!(
                        "pick ({r}, {c}) outside shape {:?}",
                        av.shape()
                    )));
                }
                out.push(av.get(r, c));
            }
            Ok(NumArray::row_vector(out))
        }
    }
}

fn softplus_unit(x: f64) -> f64 {
    if x > SOFTPLUS_GUARD {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param("x", &NumArray::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.value(y).item(), 9.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().item(), 6.0);
    }

    #[test]
    fn sum_of_params_has_unit_gradients() {
        let mut t = Tape::new();
        let a = t.param("a", &NumArray::row_vector(vec![0.3, -1.2, 4.0]));
        let s = t.sum(a).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get("a").unwrap().values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn softplus_gradient_at_zero_is_half() {
        let mut t = Tape::new();
        let x = t.param("x", &NumArray::scalar(0.0));
        let phi = t.constant(NumArray::scalar(1.0));
        let y = t.scaled_softplus(x, phi).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().item(), 0.5);
    }

    #[test]
    fn unused_parameters_get_zero_slots() {
        let mut t = Tape::new();
        let a = t.param("a", &NumArray::scalar(2.0));
        t.param("unused", &NumArray::zeros(2, 2));
        let g = t.backward(a).unwrap();
        assert_eq!(g.get("unused").unwrap().values(), &[0.0; 4]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let a = t.param("a", &NumArray::zeros(1, 2));
        assert!(matches!(t.backward(a), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_outputs_are_rejected() {
        let mut t = Tape::new();
        let a = t.constant(NumArray::scalar(800.0));
        assert!(matches!(t.exp(a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn replay_reproduces_forward_values() {
        let mut t = Tape::new();
        let a = t.param("a", &NumArray::from_rows(&[vec![0.1, 0.7], vec![-0.4, 1.3]]).unwrap());
        let b = t.constant(NumArray::from_rows(&[vec![1.5, -0.5], vec![0.2, 0.9]]).unwrap());
        let c = t.matmul_nt(a, b).unwrap();
        let s = t.masked_softmax_rows(c, vec![true, false, true, true]).unwrap();
        let h = t.tanh(s).unwrap();
        t.sum(h).unwrap();
        let replayed = t.replay().unwrap();
        for (orig, again) in t.values().into_iter().zip(&replayed) {
            assert_eq!(orig, again);
        }
    }
}
