//! Minimal reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records operations on [`Var`]s in creation order; `backward`
//! walks it in reverse and accumulates parameter gradients into [`Grads`].
//! Parameters live in a shared, read-only [`ParamStore`]: a tape only
//! borrows them, so independent tapes (one per training example) can run on
//! different threads and their gradients be summed afterwards.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named parameter matrices. Vectors are stored as `1 × n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

/// Per-parameter gradient accumulators.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(n_params: usize) -> Self {
        Grads {
            slots: vec![None; n_params],
        }
    }

    pub fn for_store(store: &ParamStore) -> Self {
        Self::new(store.len())
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots[id.0].as_ref()
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Mat {
        self.slots[id.0].get_or_insert_with(|| Mat::zeros(shape))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        match &mut self.slots[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn merge(&mut self, other: Grads) {
        for (i, g) in other.slots.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), &g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Gather { table: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    RowNormalize { x: Var, norms: Vec<f64> },
    MeanRows(Var),
    Detach,
    Sigmoid(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Mat },
    Bce { p: Var, targets: Vec<f64> },
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub const LN_EPS: f64 = 1e-6;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> ndarray::Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.mapv(|x| x - lse)
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Rows of a parameter table, gradients scattered back sparsely.
    pub fn gather(&mut self, table: ParamId, rows: &[usize]) -> Var {
        let t = self.store.value(table);
        let mut out = Mat::zeros((rows.len(), t.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&t.row(r));
        }
        self.push(
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let v = self.value(a) * f;
        self.push(v, Op::Scale(a, f))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(v, Op::SelectRows(a, rows.to_vec()))
    }

    /// Scales each row to unit L2 norm. Zero rows are an error.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        let mut norms = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Numerical("cannot normalize a zero-norm embedding".into()));
            }
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        Ok(self.push(v, Op::RowNormalize { x: a, norms }))
    }

    /// `1 × n` mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// `1 × 1` mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.nrows() || targets.is_empty() {
            return Err(Error::Shape(format!(
                "{} targets for {} logit rows",
                targets.len(),
                lv.nrows()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lv.ncols()) {
            return Err(Error::InvalidArgument(format!(
                "target id {bad} outside vocabulary of {}",
                lv.ncols()
            )));
        }
        let mut probs = Mat::zeros(lv.dim());
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let lp = log_softmax_row(lv.row(r));
            loss -= lp[t];
            probs.row_mut(r).assign(&lp.mapv(f64::exp));
        }
        let v = Mat::from_elem((1, 1), loss / targets.len() as f64);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// `1 × 1` mean binary cross-entropy of a column of probabilities
    /// against 0/1 targets.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        if pv.ncols() != 1 || pv.nrows() != targets.len() || targets.is_empty() {
            return Err(Error::Shape(format!(
                "bce over {:?} probabilities and {} targets",
                pv.dim(),
                targets.len()
            )));
        }
        let loss = bce_value(pv.column(0).iter().copied(), targets.iter().copied());
        Ok(self.push(
            Mat::from_elem((1, 1), loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Detach)
    }

    /// Back-propagates the given output gradients and adds the resulting
    /// parameter gradients into `grads`.
    pub fn backward(&self, seeds: &[(Var, Mat)], grads: &mut Grads) {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        fn acc(slot: &mut Option<Mat>, d: Mat) {
            match slot {
                Some(a) => *a += &d,
                None => *slot = Some(d),
            }
        }
        for (v, seed) in seeds {
            assert_eq!(seed.dim(), self.shape(*v), "seed shape");
            acc(&mut g[v.0], seed.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(gi) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant | Op::Detach => {}
                Op::Param(id) => grads.accumulate(*id, &gi),
                Op::Gather { table, rows } => {
                    let shape = self.store.value(*table).dim();
                    let slot = grads.slot(*table, shape);
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = slot.row_mut(r);
                        dst += &gi.row(k);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = gi.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&gi);
                    acc(&mut g[a.0], da);
                    acc(&mut g[b.0], db);
                }
                Op::MatMulBt(a, b) => {
                    let da = gi.dot(self.value(*b));
                    let db = gi.t().dot(self.value(*a));
                    acc(&mut g[a.0], da);
                    acc(&mut g[b.0], db);
                }
                Op::Add(a, b) => {
                    acc(&mut g[b.0], gi.clone());
                    acc(&mut g[a.0], gi);
                }
                Op::AddRow(a, row) => {
                    let dr = gi.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut g[row.0], dr);
                    acc(&mut g[a.0], gi);
                }
                Op::AddConst(a) => acc(&mut g[a.0], gi),
                Op::MulConst(a, c) => acc(&mut g[a.0], gi * c),
                Op::Scale(a, f) => acc(&mut g[a.0], gi * *f),
                Op::Gelu(a) => {
                    let mut d = gi;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= gelu_grad(x));
                    acc(&mut g[a.0], d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gm = self.value(*gamma);
                    acc(&mut g[beta.0], gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g[gamma.0], (&gi * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &gi * gm;
                    let n = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_h = dh.dot(&h);
                        let is = inv_std[r];
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = is / n * (n * dh[c] - sum_dh - h[c] * sum_dh_h);
                        }
                    }
                    acc(&mut g[x.0], dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut d = gi;
                    for (mut dr, yr) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot = dr.dot(&yr);
                        Zip::from(&mut dr).and(&yr).for_each(|d, &y| *d = y * (*d - dot));
                    }
                    acc(&mut g[a.0], d);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*start + gi.ncols()]).assign(&gi);
                    acc(&mut g[a.0], d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut g[p.0], gi.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        acc(&mut g[p.0], gi.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::SelectRows(a, rows) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &gi.row(k);
                    }
                    acc(&mut g[a.0], d);
                }
                Op::RowNormalize { x, norms } => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut d = gi;
                    for ((mut dr, yr), n) in d.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                        let dot = dr.dot(&yr);
                        Zip::from(&mut dr).and(&yr).for_each(|d, &y| *d = (*d - y * dot) / n);
                    }
                    acc(&mut g[x.0], d);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    acc(&mut g[a.0], gi * &y.mapv(|y| y * (1.0 - y)));
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = gi[[0, 0]] / targets.len() as f64;
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= 1.0;
                    }
                    d.mapv_inplace(|x| x * scale);
                    acc(&mut g[logits.0], d);
                }
                Op::Bce { p, targets } => {
                    let pv = self.value(*p);
                    let n = targets.len() as f64;
                    let d = Mat::from_shape_fn(pv.dim(), |(r, _)| {
                        let x = pv[[r, 0]];
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&x) {
                            return 0.0;
                        }
                        let y = targets[r];
                        gi[[0, 0]] * (-y / x + (1.0 - y) / (1.0 - x)) / n
                    });
                    acc(&mut g[p.0], d);
                }
                Op::MeanRows(a) => {
                    let rows = self.shape(*a).0;
                    let d = Mat::from_shape_fn((rows, gi.ncols()), |(_, c)| gi[[0, c]] / rows as f64);
                    acc(&mut g[a.0], d);
                }
            }
        }
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub fn bce_value(p: impl IntoIterator<Item = f64>, y: impl IntoIterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (p, y) in p.into_iter().zip(y) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(sum(out ⊙ w))/dθ against central differences for every
    /// entry of every parameter.
    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (shape, weights) = {
            let mut t = Tape::new(store);
            let out = f(&mut t);
            let shape = t.shape(out);
            (shape, rand_mat(&mut rng, shape.0, shape.1))
        };
        let objective = |store: &ParamStore| {
            let mut t = Tape::new(store);
            let out = f(&mut t);
            (t.value(out) * &weights).sum()
        };
        let mut grads = Grads::for_store(store);
        {
            let mut t = Tape::new(store);
            let out = f(&mut t);
            assert_eq!(t.shape(out), shape);
            t.backward(&[(out, weights.clone())], &mut grads);
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let n = store.value(id).len();
            for k in 0..n {
                let eps = 1e-6;
                let orig = store.value(id).as_slice().unwrap()[k];
                store.value_mut(id).as_slice_mut().unwrap()[k] = orig + eps;
                let up = objective(store);
                store.value_mut(id).as_slice_mut().unwrap()[k] = orig - eps;
                let down = objective(store);
                store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[k]);
                let denom = numeric.abs().max(analytic.abs()).max(1e-7);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "{} [{k}]: analytic {analytic} numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn gradients_of_every_op_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_mat(&mut rng, 3, 4));
        let b = store.add("b", rand_mat(&mut rng, 4, 5));
        let c = store.add("c", rand_mat(&mut rng, 2, 4));
        let row = store.add("row", rand_mat(&mut rng, 1, 5));
        let gamma = store.add("gamma", rand_mat(&mut rng, 1, 5));
        let beta = store.add("beta", rand_mat(&mut rng, 1, 5));
        let table = store.add("table", rand_mat(&mut rng, 6, 4));
        let mask = rand_mat(&mut rng, 3, 5);
        check(&mut store, |t| {
            let av = t.param(a);
            let bv = t.param(b);
            let cv = t.param(c);
            let g = t.gather(table, &[1, 4, 1]);
            let a2 = t.add(av, g);
            let m = t.matmul(a2, bv); // 3x5
            let r = t.param(row);
            let m = t.add_row(m, r);
            let m = t.gelu(m);
            let gm = t.param(gamma);
            let bt = t.param(beta);
            let m = t.layer_norm(m, gm, bt);
            let m = t.add_const(m, &mask);
            let sm = t.softmax_rows(m);
            let sm = t.mul_const(sm, mask.clone());
            let left = t.slice_cols(sm, 0, 2);
            let right = t.slice_cols(sm, 2, 3);
            let cat = t.concat_cols(&[right, left]);
            let cat = t.scale(cat, 1.7);
            let bt_ = t.matmul_bt(cv, a2); // 2x3
            let sel = t.select_rows(cat, &[2, 0]);
            let both = t.concat_rows(&[sel, cat]);
            let nrm = t.row_normalize(both).unwrap();
            let mean = t.mean_rows(nrm);
            let x = t.matmul_bt(bt_, bt_); // 2x2
            let flat = t.slice_cols(x, 0, 1);
            let y = t.matmul(flat, mean); // 2x5
            let out = t.concat_rows(&[y, nrm]);
            let ce = t.cross_entropy(out, &[0, 4, 2, 1, 3, 3, 0]).unwrap();
            let col = t.slice_cols(out, 1, 1);
            let p = t.sigmoid(col);
            let b = t.bce(p, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
            let ce_b = t.concat_cols(&[ce, b]);
            let ce_b = t.select_rows(ce_b, &[0, 0, 0, 0, 0]);
            let ce_b = t.concat_cols(&[ce_b, ce_b, ce_b]);
            let ce_b = t.slice_cols(ce_b, 0, 5);
            t.concat_rows(&[out, ce_b])
        });
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", ndarray::arr2(&[[2.0]]));
        let mut t = Tape::new(&store);
        let w = t.param(id);
        let d = t.detach(w);
        let y = t.matmul(w, d);
        let mut grads = Grads::for_store(&store);
        t.backward(&[(y, ndarray::arr2(&[[1.0]]))], &mut grads);
        assert_eq!(grads.get(id).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn zero_row_cannot_be_normalized() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let v = t.constant(Mat::zeros((2, 3)));
        assert!(t.row_normalize(v).is_err());
    }

    #[test]
    fn grads_merge_and_scale() {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::zeros((1, 2)));
        let mut a = Grads::for_store(&store);
        a.accumulate(id, &ndarray::arr2(&[[1.0, 2.0]]));
        let mut b = Grads::for_store(&store);
        b.accumulate(id, &ndarray::arr2(&[[3.0, 4.0]]));
        a.merge(b);
        a.scale(0.5);
        assert_eq!(a.get(id).unwrap(), &ndarray::arr2(&[[2.0, 3.0]]));
        assert!((a.norm() - 13f64.sqrt()).abs() < 1e-12);
    }
}
