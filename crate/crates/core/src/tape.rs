//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every tensor on the tape is a 2-D array. Batched quantities fold the batch
//! dimension into rows (`batch * agents` or `batch * edges`), which keeps the
//! hot path inside a handful of GEMM calls. Gradient checks in the test suite
//! compare every operation against central finite differences.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Zip};
use std::rc::Rc;

use crate::params::{GradStore, ModelParameters, ParamId};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Cached activations for the fused GRU cell, reused by the backward pass.
struct GruCache {
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    /// Hidden-to-candidate pre-activation (the part multiplied by the reset gate).
    hg_n: Array2<f64>,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a + bias` where bias is `[1, c]`, broadcast over rows.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    /// Row-wise squared Euclidean norm: `[r, c] -> [r, 1]`.
    SqNormRows(Var),
    SumAll(Var),
    /// Row `r` of the input is added into row `group[r]` of the output.
    SumGroups(Var, Rc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    /// Row `r` of the input is added into row `target[r]` of a zeroed output.
    ScatterAddRows(Var, Rc<Vec<usize>>),
    /// `a * w` where `w` is `[r, 1]`, broadcast over columns.
    MulColBroadcast(Var, Var),
    /// Row-wise selection among K same-shaped inputs.
    SelectK(Vec<Var>, Rc<Vec<usize>>),
    GruCell {
        x: Var,
        h: Var,
        wx: Var,
        wh: Var,
        b: Var,
        cache: GruCache,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradient tape. Operations record enough state to run one backward sweep.
pub struct Tape {
    nodes: Vec<Node>,
    /// One node per distinct parameter so gradients accumulate naturally.
    param_nodes: Vec<(ParamId, Var)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(1024), param_nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.dim();
        (s.0, s.1)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Node for a model parameter. Repeated lookups return the same node.
    pub fn param(&mut self, params: &ModelParameters, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param(id));
        self.param_nodes.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        debug_assert_eq!(self.shape(bias).0, 1);
        let value = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::MulElem(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value + c;
        // Constant shift backs straight through; reuse the scale-by-one rule.
        self.push(value, Op::Scale(a, 1.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| if x >= 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(&self.nodes[a.0].value);
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let inp = &self.nodes[a.0].value;
        let mut out = Array2::zeros((inp.nrows(), 1));
        for (i, row) in inp.rows().into_iter().enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            out[[i, 0]] = m + s.ln();
        }
        self.push(out, Op::LogSumExpRows(a))
    }

    pub fn sq_norm_rows(&mut self, a: Var) -> Var {
        let inp = &self.nodes[a.0].value;
        let mut out = Array2::zeros((inp.nrows(), 1));
        for (i, row) in inp.rows().into_iter().enumerate() {
            out[[i, 0]] = row.iter().map(|&x| x * x).sum();
        }
        self.push(out, Op::SqNormRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    /// Sums rows into `num_groups` buckets given a per-row group index.
    pub fn sum_groups(&mut self, a: Var, groups: Rc<Vec<usize>>, num_groups: usize) -> Var {
        let inp = &self.nodes[a.0].value;
        debug_assert_eq!(groups.len(), inp.nrows());
        let mut out = Array2::zeros((num_groups, inp.ncols()));
        for (r, &g) in groups.iter().enumerate() {
            let row = inp.row(r);
            let mut dst = out.row_mut(g);
            dst += &row;
        }
        self.push(out, Op::SumGroups(a, groups))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let w = self.shape(p).1;
            out.slice_mut(ndarray::s![.., at..at + w]).assign(&self.nodes[p.0].value);
            at += w;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.nodes[a.0].value.slice(ndarray::s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end))
    }

    /// Row-major reshape; element order is preserved.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.nodes[a.0]
            .value
            .clone()
            .into_shape_with_order((rows, cols))
            .expect("reshape must preserve element count");
        self.push(value, Op::Reshape(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let inp = &self.nodes[a.0].value;
        let mut out = Array2::zeros((idx.len(), inp.ncols()));
        for (r, &src) in idx.iter().enumerate() {
            out.row_mut(r).assign(&inp.row(src));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Adds row `r` of `a` into row `target[r]` of a zero-initialized `[num_rows, c]` output.
    pub fn scatter_add_rows(&mut self, a: Var, target: Rc<Vec<usize>>, num_rows: usize) -> Var {
        let inp = &self.nodes[a.0].value;
        debug_assert_eq!(target.len(), inp.nrows());
        let mut out = Array2::zeros((num_rows, inp.ncols()));
        for (r, &dst) in target.iter().enumerate() {
            let row = inp.row(r);
            let mut d = out.row_mut(dst);
            d += &row;
        }
        self.push(out, Op::ScatterAddRows(a, target))
    }

    pub fn mul_col_broadcast(&mut self, a: Var, w: Var) -> Var {
        debug_assert_eq!(self.shape(w).1, 1);
        let value = &self.nodes[a.0].value * &self.nodes[w.0].value;
        self.push(value, Op::MulColBroadcast(a, w))
    }

    /// Picks row `r` from `parts[choice[r]]`; used for mixture-component selection.
    pub fn select_k(&mut self, parts: &[Var], choice: Rc<Vec<usize>>) -> Var {
        let (rows, cols) = self.shape(parts[0]);
        debug_assert_eq!(choice.len(), rows);
        let mut out = Array2::zeros((rows, cols));
        for r in 0..rows {
            out.row_mut(r).assign(&self.nodes[parts[choice[r]].0].value.row(r));
        }
        self.push(out, Op::SelectK(parts.to_vec(), choice))
    }

    /// Fused GRU cell (reset-applied-after-projection form):
    ///
    /// ```text
    /// [xr|xz|xn] = x*Wx + b      [hr|hz|hn] = h*Wh
    /// r = sigmoid(xr + hr)       z = sigmoid(xz + hz)
    /// n = tanh(xn + r .* hn)     h' = (1 - z) .* n + z .* h
    /// ```
    pub fn gru_cell(&mut self, x: Var, h: Var, wx: Var, wh: Var, b: Var) -> Var {
        let hd = self.shape(h).1;
        let xv = &self.nodes[x.0].value;
        let hv = &self.nodes[h.0].value;
        let mut xg = xv.dot(&self.nodes[wx.0].value);
        xg += &self.nodes[b.0].value;
        let hg = hv.dot(&self.nodes[wh.0].value);

        let rows = xg.nrows();
        let len = rows * hd;
        let mut r = vec![0.0; len];
        let mut z = vec![0.0; len];
        let mut n = vec![0.0; len];
        let mut hg_n = vec![0.0; len];
        let mut hnew = vec![0.0; len];
        let xgs = xg.as_slice().expect("standard layout");
        let hgs = hg.as_slice().expect("standard layout");
        let hvs = hv.as_slice().expect("standard layout");
        for i in 0..rows {
            let g3 = i * 3 * hd;
            let g1 = i * hd;
            let xr = &xgs[g3..g3 + hd];
            let xz = &xgs[g3 + hd..g3 + 2 * hd];
            let xn = &xgs[g3 + 2 * hd..g3 + 3 * hd];
            let hr = &hgs[g3..g3 + hd];
            let hz = &hgs[g3 + hd..g3 + 2 * hd];
            let hn = &hgs[g3 + 2 * hd..g3 + 3 * hd];
            let hp = &hvs[g1..g1 + hd];
            let rr = &mut r[g1..g1 + hd];
            let zz = &mut z[g1..g1 + hd];
            let nn = &mut n[g1..g1 + hd];
            let gg = &mut hg_n[g1..g1 + hd];
            let oo = &mut hnew[g1..g1 + hd];
            for j in 0..hd {
                let rv = sigmoid(xr[j] + hr[j]);
                let zv = sigmoid(xz[j] + hz[j]);
                let nv = fast_tanh(xn[j] + rv * hn[j]);
                rr[j] = rv;
                zz[j] = zv;
                nn[j] = nv;
                gg[j] = hn[j];
                oo[j] = (1.0 - zv) * nv + zv * hp[j];
            }
        }
        let dim = (rows, hd);
        let arr = |v: Vec<f64>| Array2::from_shape_vec(dim, v).expect("length matches");
        let cache = GruCache { r: arr(r), z: arr(z), n: arr(n), hg_n: arr(hg_n) };
        self.push(arr(hnew), Op::GruCell { x, h, wx, wh, b, cache })
    }

    /// Runs the backward sweep from scalar node `loss` and accumulates
    /// parameter gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut GradStore) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward seed must be scalar");
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    {
                        let ga = ensure(&mut adj, a.0, av.dim());
                        general_mat_mul(1.0, &g, &bv.t(), 1.0, ga);
                    }
                    let gb = ensure(&mut adj, b.0, bv.dim());
                    general_mat_mul(1.0, &av.t(), &g, 1.0, gb);
                }
                Op::AddBias(a, bias) => {
                    add_into(&mut adj, a.0, &g);
                    let col = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_into(&mut adj, bias.0, &col);
                }
                Op::Add(a, b) => {
                    add_into(&mut adj, a.0, &g);
                    add_into(&mut adj, b.0, &g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut adj, a.0, &g);
                    sub_into(&mut adj, b.0, &g);
                }
                Op::MulElem(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    add_into(&mut adj, a.0, &da);
                    add_into(&mut adj, b.0, &db);
                }
                Op::Scale(a, c) => {
                    let da = &g * *c;
                    add_into(&mut adj, a.0, &da);
                }
                Op::Relu(a) => {
                    let da = Zip::from(&g)
                        .and(&self.nodes[a.0].value)
                        .map_collect(|&gy, &x| if x > 0.0 { gy } else { 0.0 });
                    add_into(&mut adj, a.0, &da);
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let da = Zip::from(&g)
                        .and(&self.nodes[a.0].value)
                        .map_collect(|&gy, &x| if x >= 0.0 { gy } else { s * gy });
                    add_into(&mut adj, a.0, &da);
                }
                Op::Tanh(a) => {
                    let da = Zip::from(&g)
                        .and(&self.nodes[i].value)
                        .map_collect(|&gy, &y| gy * (1.0 - y * y));
                    add_into(&mut adj, a.0, &da);
                }
                Op::Sigmoid(a) => {
                    let da = Zip::from(&g)
                        .and(&self.nodes[i].value)
                        .map_collect(|&gy, &y| gy * y * (1.0 - y));
                    add_into(&mut adj, a.0, &da);
                }
                Op::Log(a) => {
                    let da = &g / &self.nodes[a.0].value;
                    add_into(&mut adj, a.0, &da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 =
                            y.row(r).iter().zip(g.row(r).iter()).map(|(&p, &gy)| p * gy).sum();
                        for c in 0..y.ncols() {
                            da[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    add_into(&mut adj, a.0, &da);
                }
                Op::LogSumExpRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let lse = &self.nodes[i].value;
                    let mut da = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        for c in 0..x.ncols() {
                            da[[r, c]] = g[[r, 0]] * (x[[r, c]] - lse[[r, 0]]).exp();
                        }
                    }
                    add_into(&mut adj, a.0, &da);
                }
                Op::SqNormRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        for c in 0..x.ncols() {
                            da[[r, c]] = 2.0 * g[[r, 0]] * x[[r, c]];
                        }
                    }
                    add_into(&mut adj, a.0, &da);
                }
                Op::SumAll(a) => {
                    let da = Array2::from_elem(self.nodes[a.0].value.dim(), g[[0, 0]]);
                    add_into(&mut adj, a.0, &da);
                }
                Op::SumGroups(a, groups) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(x.dim());
                    for (r, &grp) in groups.iter().enumerate() {
                        da.row_mut(r).assign(&g.row(grp));
                    }
                    add_into(&mut adj, a.0, &da);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let dp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        add_into(&mut adj, p.0, &dp);
                        at += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let dim = self.nodes[a.0].value.dim();
                    let da = ensure(&mut adj, a.0, dim);
                    let mut sl = da.slice_mut(ndarray::s![.., *start..*end]);
                    sl += &g;
                }
                Op::Reshape(a) => {
                    let dim = self.nodes[a.0].value.dim();
                    let da = g.clone().into_shape_with_order(dim).expect("reshape grad");
                    add_into(&mut adj, a.0, &da);
                }
                Op::GatherRows(a, idx) => {
                    let dim = self.nodes[a.0].value.dim();
                    let da = ensure(&mut adj, a.0, dim);
                    for (r, &src) in idx.iter().enumerate() {
                        let row = g.row(r);
                        let mut d = da.row_mut(src);
                        d += &row;
                    }
                }
                Op::ScatterAddRows(a, target) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(x.dim());
                    for (r, &dst) in target.iter().enumerate() {
                        da.row_mut(r).assign(&g.row(dst));
                    }
                    add_into(&mut adj, a.0, &da);
                }
                Op::MulColBroadcast(a, w) => {
                    let da = &g * &self.nodes[w.0].value;
                    add_into(&mut adj, a.0, &da);
                    let prod = &g * &self.nodes[a.0].value;
                    let dw = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
                    add_into(&mut adj, w.0, &dw);
                }
                Op::SelectK(parts, choice) => {
                    for (k, &p) in parts.iter().enumerate() {
                        let dim = self.nodes[p.0].value.dim();
                        let dp = ensure(&mut adj, p.0, dim);
                        for (r, &ch) in choice.iter().enumerate() {
                            if ch == k {
                                let row = g.row(r);
                                let mut d = dp.row_mut(r);
                                d += &row;
                            }
                        }
                    }
                }
                Op::GruCell { x, h, wx, wh, b, cache } => {
                    let hd = cache.r.ncols();
                    let rows = cache.r.nrows();
                    let xv = &self.nodes[x.0].value;
                    let hv = &self.nodes[h.0].value;
                    let mut dxg = Array2::zeros((rows, 3 * hd));
                    let mut dhg = Array2::zeros((rows, 3 * hd));
                    let mut dh_direct = Array2::zeros((rows, hd));
                    for i2 in 0..rows {
                        for j in 0..hd {
                            let gy = g[[i2, j]];
                            let rv = cache.r[[i2, j]];
                            let zv = cache.z[[i2, j]];
                            let nv = cache.n[[i2, j]];
                            let hn = cache.hg_n[[i2, j]];
                            let dz = gy * (hv[[i2, j]] - nv);
                            let dn = gy * (1.0 - zv);
                            dh_direct[[i2, j]] = gy * zv;
                            let dn_pre = dn * (1.0 - nv * nv);
                            let dr = dn_pre * hn;
                            let dr_pre = dr * rv * (1.0 - rv);
                            let dz_pre = dz * zv * (1.0 - zv);
                            dxg[[i2, j]] = dr_pre;
                            dxg[[i2, hd + j]] = dz_pre;
                            dxg[[i2, 2 * hd + j]] = dn_pre;
                            dhg[[i2, j]] = dr_pre;
                            dhg[[i2, hd + j]] = dz_pre;
                            dhg[[i2, 2 * hd + j]] = dn_pre * rv;
                        }
                    }
                    {
                        let gx = ensure(&mut adj, x.0, xv.dim());
                        general_mat_mul(1.0, &dxg, &self.nodes[wx.0].value.t(), 1.0, gx);
                    }
                    {
                        let gwx = ensure(&mut adj, wx.0, self.nodes[wx.0].value.dim());
                        general_mat_mul(1.0, &xv.t(), &dxg, 1.0, gwx);
                    }
                    {
                        let gh = ensure(&mut adj, h.0, hv.dim());
                        general_mat_mul(1.0, &dhg, &self.nodes[wh.0].value.t(), 1.0, gh);
                        *gh += &dh_direct;
                    }
                    {
                        let gwh = ensure(&mut adj, wh.0, self.nodes[wh.0].value.dim());
                        general_mat_mul(1.0, &hv.t(), &dhg, 1.0, gwh);
                    }
                    let db = dxg.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_into(&mut adj, b.0, &db);
                }
            }
        }
    }
}

fn ensure<'a>(
    adj: &'a mut [Option<Array2<f64>>],
    idx: usize,
    dim: (usize, usize),
) -> &'a mut Array2<f64> {
    if adj[idx].is_none() {
        adj[idx] = Some(Array2::zeros(dim));
    }
    adj[idx].as_mut().unwrap()
}

fn add_into(adj: &mut [Option<Array2<f64>>], idx: usize, delta: &Array2<f64>) {
    match &mut adj[idx] {
        Some(g) => *g += delta,
        None => adj[idx] = Some(delta.clone()),
    }
}

fn sub_into(adj: &mut [Option<Array2<f64>>], idx: usize, delta: &Array2<f64>) {
    match &mut adj[idx] {
        Some(g) => *g -= delta,
        None => adj[idx] = Some(-delta),
    }
}

/// exp(x) from Cody–Waite range reduction and a degree-13 polynomial.
/// Plain IEEE arithmetic end to end — no libm call — so it is bit-identical
/// across platforms and vectorizes; relative error stays within a few ulp.
/// Inputs are clamped to the finite range of f64 exponents.
#[inline]
pub fn fast_exp(x: f64) -> f64 {
    const INV_LN2: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // 1.5·2^52; adding it rounds to nearest even and parks the integer in
    // the low mantissa bits, which keeps the whole path branchless.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 708.0);
    let t = x * INV_LN2 + SHIFT;
    let kf = t - SHIFT;
    let ki = (t.to_bits() as i64 & 0x000F_FFFF_FFFF_FFFF) - (1 << 51);
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (1.0 / 2.0
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0
                            + r * (1.0 / 720.0
                                + r * (1.0 / 5040.0
                                    + r * (1.0 / 40320.0
                                        + r * (1.0 / 362880.0
                                            + r * (1.0 / 3628800.0
                                                + r * (1.0 / 39916800.0
                                                    + r * (1.0 / 479001600.0
                                                        + r / 6227020800.0))))))))))));
    p * f64::from_bits(((ki + 1023) << 52) as u64)
}

/// tanh through [`fast_exp`]; saturates past |x| = 20 where tanh is 1 to
/// within one ulp.
#[inline]
pub fn fast_tanh(x: f64) -> f64 {
    let e = fast_exp(-2.0 * x.abs().clamp(0.0, 20.0));
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + fast_exp(-x))
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for j in 0..row.len() {
            out[[i, j]] /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParameters;
    use ndarray::arr2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fast_exp_stays_within_ulps_of_libm() {
        let mut worst = 0.0f64;
        let mut x = -700.0;
        while x <= 700.0 {
            let rel = (fast_exp(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 1e-14, "worst relative error {worst}");
        assert_eq!(fast_exp(0.0), 1.0);
        assert!(fast_exp(f64::NAN).is_nan());
        assert!(fast_exp(-1000.0) < 1e-300);
        assert!(fast_exp(1000.0) > 1e300 && fast_exp(1000.0).is_finite());
    }

    #[test]
    fn fast_tanh_stays_within_ulps_of_libm() {
        let mut worst = 0.0f64;
        let mut x = -25.0;
        while x <= 25.0 {
            let abs = (fast_tanh(x) - x.tanh()).abs();
            worst = worst.max(abs);
            x += 0.0041;
        }
        assert!(worst < 1e-14, "worst absolute error {worst}");
        assert_eq!(fast_tanh(0.0), 0.0);
        assert_eq!(fast_tanh(100.0), 1.0);
        assert_eq!(fast_tanh(-100.0), -1.0);
        assert!(fast_tanh(f64::NAN).is_nan());
    }

    /// Central finite differences of `f` at `p0`, one parameter entry at a time.
    fn fd_grad(
        params: &mut ModelParameters,
        id: ParamId,
        f: &mut dyn FnMut(&ModelParameters) -> f64,
    ) -> Array2<f64> {
        let eps = 1e-6;
        let dim = params.value(id).dim();
        let mut out = Array2::zeros(dim);
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let orig = params.value(id)[[r, c]];
                params.value_mut(id)[[r, c]] = orig + eps;
                let up = f(params);
                params.value_mut(id)[[r, c]] = orig - eps;
                let dn = f(params);
                params.value_mut(id)[[r, c]] = orig;
                out[[r, c]] = (up - dn) / (2.0 * eps);
            }
        }
        out
    }

    fn assert_grads_close(analytic: &Array2<f64>, fd: &Array2<f64>) {
        for (a, b) in analytic.iter().zip(fd.iter()) {
            let denom = a.abs().max(b.abs()).max(1e-4);
            assert!(
                (a - b).abs() / denom < 1e-4,
                "gradient mismatch: analytic={a} fd={b}"
            );
        }
    }

    /// One scalar-valued composite touching most ops; checked entry-by-entry
    /// against central differences.
    #[test]
    fn composite_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ModelParameters::new();
        let w1 = params.insert("w1", randn(&mut rng, 4, 6));
        let b1 = params.insert("b1", randn(&mut rng, 1, 6));
        let w2 = params.insert("w2", randn(&mut rng, 6, 3));
        let x = randn(&mut rng, 5, 4);

        let mut eval = |p: &ModelParameters| -> f64 {
            let mut t = Tape::new();
            let xl = t.leaf(x.clone());
            let w1v = t.param(p, w1);
            let b1v = t.param(p, b1);
            let w2v = t.param(p, w2);
            let h = t.matmul(xl, w1v);
            let h = t.add_bias(h, b1v);
            let h = t.tanh(h);
            let s = t.sigmoid(h);
            let l = t.leaky_relu(h, 0.2);
            let m = t.mul_elem(s, l);
            let o = t.matmul(m, w2v);
            let sm = t.softmax_rows(o);
            let lg = t.log(sm);
            let q = t.sq_norm_rows(lg);
            let tot = t.sum_all(q);
            t.scalar(tot)
        };

        let mut t = Tape::new();
        let xl = t.leaf(x.clone());
        let w1v = t.param(&params, w1);
        let b1v = t.param(&params, b1);
        let w2v = t.param(&params, w2);
        let h = t.matmul(xl, w1v);
        let h = t.add_bias(h, b1v);
        let h = t.tanh(h);
        let s = t.sigmoid(h);
        let l = t.leaky_relu(h, 0.2);
        let m = t.mul_elem(s, l);
        let o = t.matmul(m, w2v);
        let sm = t.softmax_rows(o);
        let lg = t.log(sm);
        let q = t.sq_norm_rows(lg);
        let tot = t.sum_all(q);
        let mut grads = GradStore::new(params.len());
        t.backward(tot, &mut grads);

        for id in [w1, b1, w2] {
            let fd = fd_grad(&mut params, id, &mut eval);
            assert_grads_close(grads.get(id).unwrap(), &fd);
        }
    }

    #[test]
    fn gru_cell_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (input, hidden, rows) = (3, 5, 4);
        let mut params = ModelParameters::new();
        let wx = params.insert("wx", randn(&mut rng, input, 3 * hidden));
        let wh = params.insert("wh", randn(&mut rng, hidden, 3 * hidden));
        let b = params.insert("b", randn(&mut rng, 1, 3 * hidden));
        let x0 = randn(&mut rng, rows, input);
        let x1 = randn(&mut rng, rows, input);
        let h0 = randn(&mut rng, rows, hidden);

        // Two chained steps so gradients flow through the recurrent path.
        let mut eval = |p: &ModelParameters| -> f64 {
            let mut t = Tape::new();
            let x0l = t.leaf(x0.clone());
            let x1l = t.leaf(x1.clone());
            let h0l = t.leaf(h0.clone());
            let wxv = t.param(p, wx);
            let whv = t.param(p, wh);
            let bv = t.param(p, b);
            let h1 = t.gru_cell(x0l, h0l, wxv, whv, bv);
            let h2 = t.gru_cell(x1l, h1, wxv, whv, bv);
            let q = t.sq_norm_rows(h2);
            let s = t.sum_all(q);
            t.scalar(s)
        };

        let mut t = Tape::new();
        let x0l = t.leaf(x0.clone());
        let x1l = t.leaf(x1.clone());
        let h0l = t.leaf(h0.clone());
        let wxv = t.param(&params, wx);
        let whv = t.param(&params, wh);
        let bv = t.param(&params, b);
        let h1 = t.gru_cell(x0l, h0l, wxv, whv, bv);
        let h2 = t.gru_cell(x1l, h1, wxv, whv, bv);
        let q = t.sq_norm_rows(h2);
        let s = t.sum_all(q);
        let mut grads = GradStore::new(params.len());
        t.backward(s, &mut grads);

        for id in [wx, wh, b] {
            let fd = fd_grad(&mut params, id, &mut eval);
            assert_grads_close(grads.get(id).unwrap(), &fd);
        }
    }

    #[test]
    fn gather_scatter_select_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ModelParameters::new();
        let w = params.insert("w", randn(&mut rng, 6, 4));
        let idx = Rc::new(vec![0usize, 2, 2, 5, 1, 3, 3, 0]);
        let tgt = Rc::new(vec![0usize, 1, 1, 2, 0, 2, 1, 0]);
        let choice = Rc::new(vec![0usize, 1, 0]);
        let groups = Rc::new(vec![0usize, 0, 1]);

        let mut eval = |p: &ModelParameters| -> f64 {
            let mut t = Tape::new();
            let wv = t.param(p, w);
            let gathered = t.gather_rows(wv, idx.clone());
            let scattered = t.scatter_add_rows(gathered, tgt.clone(), 3);
            let other = t.scale(scattered, 0.5);
            let sel = t.select_k(&[scattered, other], choice.clone());
            let grp = t.sum_groups(sel, groups.clone(), 2);
            let catted = t.concat_cols(&[grp, grp]);
            let sl = t.slice_cols(catted, 2, 7);
            let rs = t.reshape(sl, 5, 2);
            let q = t.sq_norm_rows(rs);
            let s = t.sum_all(q);
            t.scalar(s)
        };

        let mut t = Tape::new();
        let wv = t.param(&params, w);
        let gathered = t.gather_rows(wv, idx.clone());
        let scattered = t.scatter_add_rows(gathered, tgt.clone(), 3);
        let other = t.scale(scattered, 0.5);
        let sel = t.select_k(&[scattered, other], choice.clone());
        let grp = t.sum_groups(sel, groups.clone(), 2);
        let catted = t.concat_cols(&[grp, grp]);
        let sl = t.slice_cols(catted, 2, 7);
        let rs = t.reshape(sl, 5, 2);
        let q = t.sq_norm_rows(rs);
        let s = t.sum_all(q);
        let mut grads = GradStore::new(params.len());
        t.backward(s, &mut grads);

        let fd = fd_grad(&mut params, w, &mut eval);
        assert_grads_close(grads.get(w).unwrap(), &fd);
    }

    #[test]
    fn logsumexp_and_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParameters::new();
        let w = params.insert("w", randn(&mut rng, 4, 3));
        let scale_w = params.insert("s", randn(&mut rng, 4, 1));

        let mut eval = |p: &ModelParameters| -> f64 {
            let mut t = Tape::new();
            let wv = t.param(p, w);
            let sv = t.param(p, scale_w);
            let m = t.mul_col_broadcast(wv, sv);
            let lse = t.log_sum_exp_rows(m);
            let s = t.sum_all(lse);
            t.scalar(s)
        };

        let mut t = Tape::new();
        let wv = t.param(&params, w);
        let sv = t.param(&params, scale_w);
        let m = t.mul_col_broadcast(wv, sv);
        let lse = t.log_sum_exp_rows(m);
        let s = t.sum_all(lse);
        let mut grads = GradStore::new(params.len());
        t.backward(s, &mut grads);

        for id in [w, scale_w] {
            let fd = fd_grad(&mut params, id, &mut eval);
            assert_grads_close(grads.get(id).unwrap(), &fd);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = arr2(&[[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0], [100.0, 100.0, 100.0]]);
        let y = softmax_rows(&x);
        for row in y.rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
