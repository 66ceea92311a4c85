//! Reverse-mode differentiation over a recorded graph of tensor kernels.
//!
//! A [`Graph`] is built eagerly: every method computes its output value
//! immediately and appends a node. Nodes only reference earlier nodes, so
//! the append order is already a topological order and [`Graph::backward`]
//! simply walks it in reverse.
//!
//! ```
//! use evmscan::autodiff::Graph;
//! use evmscan::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(0, Tensor::scalar(2.0));
//! let y = g.param(1, Tensor::scalar(3.0));
//! let f = g.mul(x, y).unwrap();
//! let grads = g.backward(f).unwrap();
//! assert_eq!(grads[&0].data(), &[3.0]);
//! assert_eq!(grads[&1].data(), &[2.0]);
//! ```

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensor::{self, Tensor};

/// Index of a trainable tensor in its owning parameter set.
pub type ParamId = usize;

/// Gradients keyed by parameter id; each has its parameter's shape.
pub type GradientSet = BTreeMap<ParamId, Tensor>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Gather { table: Var, ids: Vec<usize> },
    Softmax(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    Dropout { x: Var, mask: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize, end: usize },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize, end: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    BinaryCrossEntropy { p: Var, targets: Vec<f64> },
    CrossEntropy { probs: Var, target: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    /// A trainable leaf. Registering the same id twice accumulates.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(Op::Param(id), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(Op::Scale(a, k), v)
    }

    /// Adds a length-`n` bias to every row of an `m×n` (or length-`n`) input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rank() != 1 || bv.len() != xv.cols() {
            return Err(shape_err(format!(
                "bias {:?} does not match rows of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        let c = bv.len();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = tensor::transpose(self.value(a))?;
        Ok(self.push(Op::Transpose(a), v))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(shape_err("embedding table must be rank 2"));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(crate::Error::UnknownId { id, size: rows });
            }
            out.extend_from_slice(t.row(id));
        }
        let v = Tensor::matrix(ids.len(), d, out)?;
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            v,
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = tensor::softmax(self.value(x));
        self.push(Op::Softmax(x), v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(tensor::sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    /// Normalizes each last-axis row to zero mean and unit variance, then
    /// applies `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let (gv, sv) = (self.value(gain), self.value(shift));
        if gv.shape() != [c] || sv.shape() != [c] {
            return Err(shape_err(format!(
                "layer norm parameters {:?}/{:?} do not match width {c}",
                gv.shape(),
                sv.shape()
            )));
        }
        let mut normalized = xv.clone();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for (nrow, orow) in normalized
            .data_mut()
            .chunks_mut(c)
            .zip(out.data_mut().chunks_mut(c))
        {
            let mean = nrow.iter().sum::<f64>() / c as f64;
            let var = nrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, (n, o)) in nrow.iter_mut().zip(orow.iter_mut()).enumerate() {
                *n = (*n - mean) * is;
                *o = *n * gv.data()[j] + sv.data()[j];
            }
        }
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                shift,
                normalized,
                inv_std,
            },
            out,
        ))
    }

    /// Inverted dropout. With `rng == None` (inference) or `rate == 0` this
    /// is the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
        let Some(rng) = rng else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mut v = xv.clone();
        for (o, m) in v.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(Op::Dropout { x, mask }, v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.rows() != rows {
                return Err(shape_err("concat_cols needs rank-2 parts with equal rows"));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::matrix(rows, total, out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start > end || end > xv.cols() {
            return Err(shape_err(format!(
                "column slice {start}..{end} of {:?}",
                xv.shape()
            )));
        }
        let mut out = Vec::with_capacity(xv.rows() * (end - start));
        for i in 0..xv.rows() {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        let v = Tensor::matrix(xv.rows(), end - start, out)?;
        Ok(self.push(Op::SliceCols { x, start, end }, v))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let cols = self.value(*first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.cols() != cols {
                return Err(shape_err("concat_rows needs rank-2 parts with equal columns"));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let v = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start > end || end > xv.rows() {
            return Err(shape_err(format!(
                "row slice {start}..{end} of {:?}",
                xv.shape()
            )));
        }
        let c = xv.cols();
        let v = Tensor::matrix(end - start, c, xv.data()[start * c..end * c].to_vec())?;
        Ok(self.push(Op::SliceRows { x, start, end }, v))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / xv.len().max(1) as f64);
        self.push(Op::Mean(x), v)
    }

    /// Mean of `-(y ln p + (1 - y) ln(1 - p))` over all entries of `p`.
    pub fn binary_cross_entropy(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != targets.len() {
            return Err(shape_err(format!(
                "{} probabilities vs {} targets",
                pv.len(),
                targets.len()
            )));
        }
        let n = targets.len().max(1) as f64;
        let loss = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                -(y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln())
            })
            .sum::<f64>()
            / n;
        Ok(self.push(
            Op::BinaryCrossEntropy {
                p,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
        ))
    }

    /// `-ln probs[target]` for a single probability vector.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let pv = self.value(probs);
        if pv.rows() != 1 || target >= pv.len() {
            return Err(shape_err(format!(
                "cross entropy target {target} for probabilities {:?}",
                pv.shape()
            )));
        }
        let loss = -pv.data()[target].max(LOG_CLAMP).ln();
        Ok(self.push(Op::CrossEntropy { probs, target }, Tensor::scalar(loss)))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf
    /// that contributes to it.
    pub fn backward(&self, loss: Var) -> Result<GradientSet> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = GradientSet::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match out.get_mut(id) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        out.insert(*id, g);
                    }
                },
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.map(|x| x * k)),
                Op::AddBias(x, bias) => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(&mut grads, *bias, Tensor::vector(gb));
                    acc(&mut grads, *x, g);
                }
                Op::MatMul(a, b) => {
                    let ga = tensor::matmul_nt(&g, self.value(*b))?;
                    let gb = tensor::matmul_tn(self.value(*a), &g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, tensor::transpose(&g)?),
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let data = slot(&mut grads, *table, tv.shape()).data_mut();
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, v) in data[id * d..(id + 1) * d].iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut gx = g.clone();
                    for (grow, yrow) in gx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (gv, yv) in grow.iter_mut().zip(yrow) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                    acc(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?;
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    normalized,
                    inv_std,
                } => {
                    let gain_v = self.value(*gain).data();
                    let c = normalized.cols();
                    let mut ggain = vec![0.0; c];
                    let mut gshift = vec![0.0; c];
                    let mut gx = Tensor::zeros(normalized.shape());
                    for (r, ((grow, nrow), xrow)) in g
                        .data()
                        .chunks(c)
                        .zip(normalized.data().chunks(c))
                        .zip(gx.data_mut().chunks_mut(c))
                        .enumerate()
                    {
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for j in 0..c {
                            ggain[j] += grow[j] * nrow[j];
                            gshift[j] += grow[j];
                            let dn = grow[j] * gain_v[j];
                            mean_dn += dn;
                            mean_dn_n += dn * nrow[j];
                        }
                        mean_dn /= c as f64;
                        mean_dn_n /= c as f64;
                        for j in 0..c {
                            let dn = grow[j] * gain_v[j];
                            xrow[j] = inv_std[r] * (dn - mean_dn - nrow[j] * mean_dn_n);
                        }
                    }
                    acc(&mut grads, *gain, Tensor::vector(ggain));
                    acc(&mut grads, *shift, Tensor::vector(gshift));
                    acc(&mut grads, *x, gx);
                }
                Op::Dropout { x, mask } => {
                    let mut gx = g;
                    for (o, m) in gx.data_mut().iter_mut().zip(mask) {
                        *o *= m;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, w) = (self.value(p).rows(), self.value(p).cols());
                        let mut gp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            gp.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, Tensor::matrix(rows, w, gp)?);
                    }
                }
                Op::SliceCols { x, start, end } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let gx = slot(&mut grads, *x, xv.shape());
                    for (i, row) in gx.data_mut().chunks_mut(c).enumerate() {
                        for (o, v) in row[*start..*end].iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let shape = self.value(p).shape().to_vec();
                        acc(&mut grads, p, Tensor::new(shape, g.data()[offset..offset + n].to_vec())?);
                        offset += n;
                    }
                }
                Op::SliceRows { x, start, end } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let gx = slot(&mut grads, *x, xv.shape());
                    for (o, v) in gx.data_mut()[start * c..end * c].iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(&mut grads, *x, g.reshape(&shape)?);
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    acc(&mut grads, *x, Tensor::filled(self.value(*x).shape(), gv));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let gv = g.data()[0] / xv.len().max(1) as f64;
                    acc(&mut grads, *x, Tensor::filled(xv.shape(), gv));
                }
                Op::BinaryCrossEntropy { p, targets } => {
                    let gv = g.data()[0];
                    let n = targets.len().max(1) as f64;
                    let pv = self.value(*p);
                    let gp = pv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| {
                            let a = if p > LOG_CLAMP { -y / p } else { 0.0 };
                            let b = if 1.0 - p > LOG_CLAMP {
                                (1.0 - y) / (1.0 - p)
                            } else {
                                0.0
                            };
                            gv * (a + b) / n
                        })
                        .collect();
                    acc(&mut grads, *p, Tensor::new(pv.shape().to_vec(), gp)?);
                }
                Op::CrossEntropy { probs, target } => {
                    let pv = self.value(*probs);
                    let mut gp = Tensor::zeros(pv.shape());
                    let p = pv.data()[*target];
                    if p > LOG_CLAMP {
                        gp.data_mut()[*target] = -g.data()[0] / p;
                    }
                    acc(&mut grads, *probs, gp);
                }
            }
        }
        Ok(out)
    }
}

/// Gradient buffer for `v`, zero-initialized on first use.
fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    /// Central differences against `backward` for every entry of every input.
    fn check(inputs: &[Tensor], build: &Builder<'_>) {
        let eval = |ts: &[Tensor]| -> (f64, GradientSet) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts
                .iter()
                .enumerate()
                .map(|(i, t)| g.param(i, t.clone()))
                .collect();
            let out = build(&mut g, &vars).unwrap();
            let grads = g.backward(out).unwrap();
            (g.value(out).data()[0], grads)
        };
        let (_, grads) = eval(inputs);
        let h = 1e-5;
        for (pi, t) in inputs.iter().enumerate() {
            for k in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[pi].data_mut()[k] += h;
                let mut minus = inputs.to_vec();
                minus[pi].data_mut()[k] -= h;
                let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let analytic = grads.get(&pi).map_or(0.0, |g| g.data()[k]);
                let scale = analytic.abs().max(numeric.abs());
                if scale > 1e-8 {
                    let rel = (analytic - numeric).abs() / scale;
                    assert!(
                        rel <= 1e-6,
                        "input {pi}[{k}]: analytic {analytic} numeric {numeric} rel {rel}"
                    );
                }
            }
        }
    }

    /// Weighted sum so every output entry gets a distinct upstream gradient.
    fn weighted(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = g.value(x).shape().to_vec();
        let w = g.constant(rand_tensor(&shape, &mut rng, -1.0, 1.0));
        let p = g.mul(x, w)?;
        Ok(g.sum(p))
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.param(0, Tensor::scalar(2.0));
        let y = g.param(1, Tensor::scalar(3.0));
        let f = g.mul(x, y).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads[&0].data(), &[3.0]);
        assert_eq!(grads[&1].data(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(0, Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(0, Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(5.0));
        let f = g.mul(x, c).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.len(), 1);
    }

    #[test]
    fn softmax_cross_entropy_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = rand_tensor(&[1, 4], &mut rng, -2.0, 2.0);
            check(&[logits], &|g, v| {
                let p = g.softmax(v[0]);
                g.cross_entropy(p, 2)
            });
        }
    }

    #[test]
    fn every_primitive_passes_gradient_check() {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let m = rng.gen_range(2..5);
            let n = rng.gen_range(2..5);
            let k = rng.gen_range(2..5);
            let a = rand_tensor(&[m, n], &mut rng, -1.0, 1.0);
            let b = rand_tensor(&[m, n], &mut rng, -1.0, 1.0);
            let bias = rand_tensor(&[n], &mut rng, -1.0, 1.0);
            let rhs = rand_tensor(&[n, k], &mut rng, -1.0, 1.0);

            check(&[a.clone(), b.clone()], &|g, v| {
                let s = g.add(v[0], v[1])?;
                weighted(g, s, seed)
            });
            check(&[a.clone(), b.clone()], &|g, v| {
                let s = g.sub(v[0], v[1])?;
                weighted(g, s, seed)
            });
            check(&[a.clone(), b.clone()], &|g, v| {
                let s = g.mul(v[0], v[1])?;
                weighted(g, s, seed)
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let s = g.scale(v[0], -1.7);
                weighted(g, s, seed)
            });
            check(&[a.clone(), bias.clone()], &|g, v| {
                let s = g.add_bias(v[0], v[1])?;
                weighted(g, s, seed)
            });
            check(&[a.clone(), rhs.clone()], &|g, v| {
                let s = g.matmul(v[0], v[1])?;
                weighted(g, s, seed)
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let s = g.transpose(v[0])?;
                weighted(g, s, seed)
            });
            check(&[rand_tensor(&[5, n], &mut rng, -1.0, 1.0)], &|g, v| {
                let s = g.gather(v[0], &[3, 0, 3, 1])?;
                weighted(g, s, seed)
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let s = g.softmax(v[0]);
                weighted(g, s, seed)
            });
            // keep inputs away from the kink
            let away = a.map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
            check(&[away], &|g, v| {
                let s = g.relu(v[0]);
                weighted(g, s, seed)
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let s = g.tanh(v[0]);
                weighted(g, s, seed)
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let s = g.sigmoid(v[0]);
                weighted(g, s, seed)
            });
            let gain = rand_tensor(&[n], &mut rng, 0.5, 1.5);
            check(&[a.clone(), gain, bias.clone()], &|g, v| {
                let s = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted(g, s, seed)
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let mut drng = ChaCha8Rng::seed_from_u64(seed);
                let s = g.dropout(v[0], 0.3, Some(&mut drng));
                weighted(g, s, seed)
            });
            check(&[a.clone(), b.clone()], &|g, v| {
                let s = g.concat_cols(&[v[0], v[1]])?;
                let t = g.slice_cols(s, 1, n + 1)?;
                weighted(g, t, seed)
            });
            check(&[a.clone(), b.clone()], &|g, v| {
                let s = g.concat_rows(&[v[0], v[1]])?;
                let t = g.slice_rows(s, 1, m + 1)?;
                let r = g.reshape(t, &[m * n])?;
                weighted(g, r, seed)
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let s = g.tanh(v[0]);
                Ok(g.sum(s))
            });
            check(std::slice::from_ref(&a), &|g, v| {
                let s = g.tanh(v[0]);
                Ok(g.mean(s))
            });
            let probs = rand_tensor(&[m * n], &mut rng, 0.1, 0.9);
            let targets: Vec<f64> = (0..m * n).map(|i| (i % 2) as f64).collect();
            check(&[probs], &|g, v| g.binary_cross_entropy(v[0], &targets));
        }
    }

    #[test]
    fn dropout_identity_at_inference_and_unbiased_in_training() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[100_000], 1.0));
        let same = g.dropout::<ChaCha8Rng>(x, 0.2, None);
        assert_eq!(same, x);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = g.dropout(x, 0.2, Some(&mut rng));
        let vals = g.value(y).data();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    }

    #[test]
    fn binary_cross_entropy_equals_two_class_cross_entropy() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::matrix(1, 2, vec![0.3, -1.1]).unwrap());
        let p = g.softmax(logits);
        let ce = g.cross_entropy(p, 1).unwrap();
        let p1 = g.slice_cols(p, 1, 2).unwrap();
        let bce = g.binary_cross_entropy(p1, &[1.0]).unwrap();
        assert!((g.value(ce).data()[0] - g.value(bce).data()[0]).abs() < 1e-15);
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&[3, 4], &mut rng, -1.0, 1.0);
        let run = || {
            let mut g = Graph::new();
            let x = g.param(0, a.clone());
            let y = g.softmax(x);
            let s = g.sum(y);
            let t = g.tanh(x);
            let u = g.mean(t);
            let l = g.add(s, u).unwrap();
            g.backward(l).unwrap()
        };
        assert_eq!(run(), run());
    }
}
