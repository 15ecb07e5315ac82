//! A small reverse-mode automatic differentiation tape over row-major `f64`
//! matrices.
//!
//! Every value is a 2-D matrix; vectors are `1 x n` rows and scalars are
//! `1 x 1`. A [`Graph`] is built once per forward pass, then [`Graph::backward`]
//! walks the nodes in reverse creation order. Parameters are borrowed, not
//! copied, so a graph can be built per sample on several threads against one
//! shared parameter store.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, CowArray, Ix2};

pub type Mat = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Smallest value `Ln` evaluates; keeps `ln(0)` finite.
const LN_FLOOR: f64 = 1e-300;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Sqrt(Var),
    Softmax(Var),
    LogSoftmax(Var),
    CausalSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Transpose(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    Kl { input_logp: Var, target: Mat },
    Focal { probs: Var, targets: Vec<usize>, alpha: f64, gamma: f64 },
}

struct Node<'p> {
    value: CowArray<'p, f64, Ix2>,
    op: Op,
}

/// Reverse-mode tape. `'p` is the lifetime of borrowed parameter storage.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<usize, Var>,
}

/// Gradients of one scalar root with respect to the leaves of the graph.
/// Interior nodes do not keep their gradients.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every parameter node registered with [`Graph::param`];
    /// parameters the root does not depend on are absent.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Mat)> + '_ {
        self.params
            .iter()
            .filter_map(move |(id, v)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }

    /// Gradient for the parameter with external id `id`, if the root reaches it.
    pub fn param(&self, id: usize) -> Option<&Mat> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|(_, v)| self.grads[v.0].as_ref())
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256), param_vars: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: CowArray::from(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// A constant input; receives a gradient but is not a parameter.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Registers borrowed parameter storage under an external id. Registering
    /// the same id twice returns the existing node.
    pub fn param(&mut self, id: usize, value: &'p Mat) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: CowArray::from(value.view()), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Registers an owned parameter value under an external id.
    pub fn param_owned(&mut self, id: usize, value: Mat) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(value, Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) - &self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) * &self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) / &self.value(b);
        self.push(v, Op::Div(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a 1 x n row");
        let v = &self.value(a) + &self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(LN_FLOOR).ln());
        self.push(v, Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    /// Row softmax where row `i` only sees columns `j <= i`; hidden entries are 0.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, m) = x.dim();
        let mut out = Array2::zeros((n, m));
        for i in 0..n {
            let end = (i + 1).min(m);
            let row = x.slice(s![i, ..end]);
            let max = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut sum = 0.0;
            for j in 0..end {
                let e = (x[[i, j]] - max).exp();
                out[[i, j]] = e;
                sum += e;
            }
            for j in 0..end {
                out[[i, j]] /= sum;
            }
        }
        self.push(out, Op::CausalSoftmax(a))
    }

    /// Row-wise layer normalization with affine `1 x n` gamma and beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let mut xhat = Array2::zeros((n, m));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..m {
                xhat[[i, j]] = (row[j] - mean) * is;
            }
        }
        let out = &(&xhat * &self.value(gamma)) + &self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.ncols();
        let mut out = Array2::zeros((ids.len(), cols));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("reshape: size mismatch");
        self.push(out, Op::Reshape(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(out, Op::MeanAll(a))
    }

    /// Column means: `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v.mean_axis(Axis(0)).expect("mean_rows of empty matrix").insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// `Σ t (ln t − x)` over entries with `t > 0`, where `x` holds log-probabilities.
    /// Equal to `KL(t ‖ exp(x))` summed over rows; exactly zero when `x == ln t`.
    pub fn kl_to(&mut self, input_logp: Var, target: &Mat) -> Var {
        let target_logp = target.mapv(|t| if t > 0.0 { t.ln() } else { f64::NEG_INFINITY });
        self.kl_to_logp(input_logp, target.clone(), &target_logp)
    }

    /// Like [`Graph::kl_to`] with the target given as log-probabilities;
    /// exactly zero when `x == target_logp`.
    pub fn kl_to_log_target(&mut self, input_logp: Var, target_logp: &Mat) -> Var {
        self.kl_to_logp(input_logp, target_logp.mapv(f64::exp), target_logp)
    }

    fn kl_to_logp(&mut self, input_logp: Var, target: Mat, target_logp: &Mat) -> Var {
        let x = self.value(input_logp);
        assert_eq!(x.dim(), target.dim(), "kl: shape mismatch");
        let mut total = 0.0;
        for ((t, lt), xi) in target.iter().zip(target_logp.iter()).zip(x.iter()) {
            if *t > 0.0 {
                total += t * (lt - xi);
            }
        }
        let out = Array2::from_elem((1, 1), total);
        self.push(out, Op::Kl { input_logp, target })
    }

    /// `Σ_i −α (1 − p_i)^γ ln p_i` with `p_i = probs[i, targets[i]]`.
    pub fn focal(&mut self, probs: Var, targets: &[usize], alpha: f64, gamma: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.nrows(), targets.len(), "focal: target count mismatch");
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let pt = p[[i, t]].clamp(LN_FLOOR, 1.0);
            total += -alpha * (1.0 - pt).powf(gamma) * pt.ln();
        }
        let out = Array2::from_elem((1, 1), total);
        self.push(out, Op::Focal { probs, targets: targets.to_vec(), alpha, gamma })
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let n = root.0 + 1;
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.dot(&self.value(*b));
                    let db = g.t().dot(&self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.value(*b);
                    let db = &g * &self.value(*a);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let da = &g / &bv;
                    let db = -(&g * y) / &bv;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, dr);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.mapv(|v| v * k)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Gelu(a) => {
                    let d = ndarray::Zip::from(&g).and(&self.value(*a)).map_collect(|&gi, &x| gi * gelu_grad(x));
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = ndarray::Zip::from(&g).and(y).map_collect(|&gi, &s| gi * s * (1.0 - s));
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * y),
                Op::Ln(a) => {
                    let d = ndarray::Zip::from(&g).and(&self.value(*a)).map_collect(|&gi, &x| gi / x.max(LN_FLOOR));
                    acc(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let d = ndarray::Zip::from(&g).and(&self.value(*a)).map_collect(|&gi, &x| {
                        if x > 0.0 {
                            gi
                        } else if x < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Sqrt(a) => {
                    let d = ndarray::Zip::from(&g).and(y).map_collect(|&gi, &r| if r > 0.0 { gi * 0.5 / r } else { 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::Softmax(a) | Op::CausalSoftmax(a) => {
                    let gy = &g * y;
                    let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let d = &gy - &(y * &dot);
                    acc(&mut grads, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let sm = y.mapv(f64::exp);
                    let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let d = &g - &(&sm * &gs);
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gv = self.value(*gamma);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * &gv;
                    let m = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for i in 0..xhat.nrows() {
                        let dr = dxhat.row(i);
                        let xr = xhat.row(i);
                        let mean_d = dr.sum() / m;
                        let mean_dx = dr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum::<f64>() / m;
                        for j in 0..xhat.ncols() {
                            dx[[i, j]] = inv_std[i] * (dr[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::Gather { table, ids } => {
                    let mut dt = Array2::zeros(self.shape(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(id);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        acc(&mut grads, *p, g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.shape(*p).1;
                        acc(&mut grads, *p, g.slice(s![.., start..start + cols]).to_owned());
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::Reshape(a) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let d = Array2::from_shape_vec(self.shape(*a), flat).expect("reshape grad");
                    acc(&mut grads, *a, d);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SumAll(a) => {
                    let d = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::MeanAll(a) => {
                    let (r, c) = self.shape(*a);
                    let d = Array2::from_elem((r, c), g[[0, 0]] / (r * c) as f64);
                    acc(&mut grads, *a, d);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let row = g.mapv(|v| v / r as f64);
                    let d = row.broadcast((r, c)).expect("mean_rows grad").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::Kl { input_logp, target } => {
                    let k = g[[0, 0]];
                    acc(&mut grads, *input_logp, target.mapv(|t| -t * k));
                }
                Op::Focal { probs, targets, alpha, gamma } => {
                    let k = g[[0, 0]];
                    let p = self.value(*probs);
                    let mut d = Array2::zeros(p.dim());
                    for (i, &t) in targets.iter().enumerate() {
                        let pt = p[[i, t]].clamp(LN_FLOOR, 1.0);
                        let one_minus = 1.0 - pt;
                        let first = if one_minus > 0.0 && *gamma != 0.0 {
                            -gamma * one_minus.powf(gamma - 1.0) * pt.ln()
                        } else {
                            0.0
                        };
                        let second = one_minus.powf(*gamma) / pt;
                        d[[i, t]] = -alpha * (first + second) * k;
                    }
                    acc(&mut grads, *probs, d);
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &d,
        slot @ None => *slot = Some(d),
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise log-softmax; `-inf` entries stay `-inf`.
pub fn log_softmax_rows(x: ArrayView2<'_, f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: ArrayView2<'_, f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
