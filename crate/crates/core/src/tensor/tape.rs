//! Recording tape for reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its output value and enough
//! context to run its backward rule. Node ids are handed out in creation
//! order, so the node list is always a valid topological order and the
//! backward sweep is a single reverse pass.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{invalid, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Sin(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    MseLoss(Var, Var),
    Conv1d {
        x: Var,
        kernels: Var,
        bias: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Scatter {
        values: Var,
        index: Arc<Vec<usize>>,
    },
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::Sin(_) => "sin",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MseLoss(..) => "mse_loss",
            Op::Conv1d { .. } => "conv1d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Scatter { .. } => "scatter",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    params: Vec<Vec<f64>>,
    leaves: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient for a registered parameter; zeros when the parameter was not
    /// reachable from the loss.
    pub fn param(&self, id: ParamId) -> &[f64] {
        &self.params[id.index()]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Gradient for a leaf created with `requires_grad = true`.
    pub fn leaf(&self, var: Var) -> Option<&[f64]> {
        self.leaves.get(&var.0).map(Vec::as_slice)
    }

    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// One forward pass worth of recorded operations.
///
/// Parameters are borrowed from a [`ParamStore`] rather than copied, so a
/// tape cannot outlive the store it reads from.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<'p>>,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok((a[0], a[1], b[1]))
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Dimension {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Names of the recorded operations, in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(op.name(), &data)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(Tensor::from_parts(shape, data)), op, requires_grad)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Result<Var> {
        check_finite("leaf", tensor.data())?;
        self.push(Cow::Owned(tensor), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor, false)
    }

    /// Records a parameter read. Repeated reads of the same parameter share
    /// one node, so their gradient contributions accumulate.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self
            .params
            .ok_or_else(|| invalid("tape was created without a parameter store"))?;
        if let Some(v) = self.param_vars.get(id.index()).copied().flatten() {
            return Ok(v);
        }
        let var = self.push(Cow::Borrowed(store.get(id)), Op::Param, true)?;
        self.param_vars[id.index()] = Some(var);
        Ok(var)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.push_op(vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Dimension {
                op: "matmul_nt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.push_op(vec![m, n], out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let shape = t.shape().to_vec();
        self.push_op(shape, t.into_data(), Op::Transpose(a), &[a])
    }

    fn zip_op(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(op.name(), self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op(shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Hadamard(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(shape, data, Op::Scale(a, factor), &[a])
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = matrix_dims("add_bias", self.value(a))?;
        if self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::add_assign(row, b);
        }
        self.push_op(vec![m, n], data, Op::AddBias(a, bias), &[a, bias])
    }

    fn map_op(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(shape, data, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map_op(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.map_op(a, Op::Sin(a), f64::sin)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map_op(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map_op(a, Op::Sigmoid(a), sigmoid)
    }

    /// Row-wise softmax, shifted by the row maximum for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims("softmax_rows", self.value(a))?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push_op(vec![m, n], data, Op::SoftmaxRows(a), &[a])
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if axis > 1 {
            return Err(Error::Axis { axis, rank: 2 });
        }
        let first = *inputs.first().ok_or_else(|| invalid("concat of zero tensors"))?;
        let (rows0, cols0) = matrix_dims("concat", self.value(first))?;
        for &v in inputs {
            let (r, c) = matrix_dims("concat", self.value(v))?;
            if (axis == 0 && c != cols0) || (axis == 1 && r != rows0) {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
        }
        let (shape, data) = if axis == 0 {
            let rows = inputs.iter().map(|v| self.shape(*v)[0]).sum();
            let mut data = Vec::with_capacity(rows * cols0);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            (vec![rows, cols0], data)
        } else {
            let cols: usize = inputs.iter().map(|v| self.shape(*v)[1]).sum();
            let mut data = Vec::with_capacity(rows0 * cols);
            for r in 0..rows0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(r));
                }
            }
            (vec![rows0, cols], data)
        };
        self.push_op(
            shape,
            data,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Takes `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        if axis > 1 {
            return Err(Error::Axis { axis, rank: 2 });
        }
        let (m, n) = matrix_dims("slice", self.value(a))?;
        let extent = if axis == 0 { m } else { n };
        if len == 0 || start + len > extent {
            return Err(invalid(format!(
                "slice [{start}, {}) out of range for extent {extent}",
                start + len
            )));
        }
        let src = self.value(a).data();
        let (shape, data) = if axis == 0 {
            (vec![len, n], src[start * n..(start + len) * n].to_vec())
        } else {
            let mut data = Vec::with_capacity(m * len);
            for r in 0..m {
                data.extend_from_slice(&src[r * n + start..r * n + start + len]);
            }
            (vec![m, len], data)
        };
        self.push_op(shape, data, Op::Slice { input: a, axis, start }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push_op(vec![1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(vec![1], vec![s], Op::Mean(a), &[a])
    }

    /// Mean of squared elementwise differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("mse_loss", self.value(pred), self.value(target))?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let s = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        self.push_op(vec![1], vec![s], Op::MseLoss(pred, target), &[pred, target])
    }

    /// Valid cross-correlation along the length axis, stride 1.
    ///
    /// `x` is `c_in × L`, `kernels` is `c_out × c_in × w`, `bias` has
    /// `c_out` entries; the result is `c_out × (L − w + 1)`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, bias: Option<Var>) -> Result<Var> {
        let (c_in, len) = matrix_dims("conv1d", self.value(x))?;
        let ks = self.shape(kernels).to_vec();
        if ks.len() != 3 || ks[1] != c_in {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: self.shape(x).to_vec(),
                rhs: ks,
            });
        }
        let (c_out, w) = (ks[0], ks[2]);
        if w > len {
            return Err(invalid(format!("conv1d kernel width {w} exceeds input length {len}")));
        }
        if let Some(b) = bias {
            if self.value(b).len() != c_out {
                return Err(Error::Dimension {
                    op: "conv1d",
                    lhs: vec![c_out],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let out_len = len - w + 1;
        let xd = self.value(x).data();
        let kd = self.value(kernels).data();
        let mut out = vec![0.0; c_out * out_len];
        for o in 0..c_out {
            let b = bias.map_or(0.0, |b| self.value(b).data()[o]);
            for t in 0..out_len {
                let mut acc = b;
                for c in 0..c_in {
                    acc += kernels::dot(
                        &kd[(o * c_in + c) * w..(o * c_in + c + 1) * w],
                        &xd[c * len + t..c * len + t + w],
                    );
                }
                out[o * out_len + t] = acc;
            }
        }
        let mut inputs = vec![x, kernels];
        inputs.extend(bias);
        self.push_op(vec![c_out, out_len], out, Op::Conv1d { x, kernels, bias }, &inputs)
    }

    /// Normalizes each row to zero mean and unit variance, then applies a
    /// per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = matrix_dims("layer_norm", self.value(x))?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let xd = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xd[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mu) * is;
                normalized[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        self.push_op(
            vec![m, n],
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Writes `values[i]` to flat position `index[i]` of a zero tensor of
    /// `shape`. Positions not named by `index` stay structurally zero.
    pub fn scatter(&mut self, values: Var, shape: &[usize], index: Arc<Vec<usize>>) -> Result<Var> {
        let total: usize = shape.iter().product();
        if index.len() != self.value(values).len() || index.iter().any(|&i| i >= total) {
            return Err(invalid("scatter index does not match values or target shape"));
        }
        let mut out = vec![0.0; total];
        for (&i, &v) in index.iter().zip(self.value(values).data()) {
            out[i] = v;
        }
        self.push_op(shape.to_vec(), out, Op::Scatter { values, index }, &[values])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push_op(shape.to_vec(), t.into_data(), Op::Reshape(a), &[a])
    }

    /// Runs the reverse sweep from a scalar `loss`.
    ///
    /// A tape supports exactly one backward pass; a second call returns
    /// [`Error::StaleTape`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let param_len = self.params.map_or(0, ParamStore::len);
        let mut params = Vec::with_capacity(param_len);
        for i in 0..param_len {
            let len = self.params.map_or(0, |s| s.get(ParamId(i)).len());
            let g = self.param_vars[i]
                .and_then(|v| grads[v.0].take())
                .unwrap_or_else(|| vec![0.0; len]);
            params.push(g);
        }
        let mut leaves = HashMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[id].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                leaves.insert(id, g);
            }
        }
        Ok(Gradients { params, leaves })
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    self.acc(grads, *a, |ga| kernels::matmul_nt_acc(g, bd, m, n, k, ga));
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    self.acc(grads, *b, |gb| kernels::matmul_tn_acc(ad, g, m, k, n, gb));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    self.acc(grads, *a, |ga| kernels::matmul_acc(g, bd, m, n, k, ga));
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    self.acc(grads, *b, |gb| kernels::matmul_tn_acc(g, ad, m, n, k, gb));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                self.acc(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| kernels::add_assign(ga, g));
                self.acc(grads, *b, |gb| kernels::add_assign(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| kernels::add_assign(ga, g));
                self.acc(grads, *b, |gb| {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                });
            }
            Op::Hadamard(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bd[i];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * ad[i];
                    }
                });
            }
            Op::Scale(a, f) => {
                self.acc(grads, *a, |ga| {
                    for (d, s) in ga.iter_mut().zip(g) {
                        *d += f * s;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                self.acc(grads, *a, |ga| kernels::add_assign(ga, g));
                let n = self.value(*bias).len();
                self.acc(grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        kernels::add_assign(gb, row);
                    }
                });
            }
            Op::Relu(a) => {
                let ad = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if ad[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Sin(a) => {
                let ad = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * ad[i].cos();
                    }
                });
            }
            Op::Tanh(a) => self.acc(grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::SoftmaxRows(a) => {
                let n = self.shape(*a)[1];
                self.acc(grads, *a, |ga| {
                    for ((gr, yr), dr) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s = kernels::dot(gr, yr);
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let total_cols = node.value.shape()[1];
                let mut offset = 0;
                for &v in inputs {
                    let (r, c) = (self.shape(v)[0], self.shape(v)[1]);
                    if *axis == 0 {
                        self.acc(grads, v, |gv| {
                            kernels::add_assign(gv, &g[offset * c..(offset + r) * c]);
                        });
                        offset += r;
                    } else {
                        self.acc(grads, v, |gv| {
                            for row in 0..r {
                                kernels::add_assign(
                                    &mut gv[row * c..(row + 1) * c],
                                    &g[row * total_cols + offset..row * total_cols + offset + c],
                                );
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let (m, n) = (self.shape(*input)[0], self.shape(*input)[1]);
                let len = if *axis == 0 {
                    node.value.shape()[0]
                } else {
                    node.value.shape()[1]
                };
                self.acc(grads, *input, |gi| {
                    if *axis == 0 {
                        kernels::add_assign(&mut gi[start * n..(start + len) * n], g);
                    } else {
                        for r in 0..m {
                            kernels::add_assign(
                                &mut gi[r * n + start..r * n + start + len],
                                &g[r * len..(r + 1) * len],
                            );
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => {
                let inv = g[0] / self.value(*a).len() as f64;
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|v| *v += inv));
            }
            Op::MseLoss(p, t) => {
                let (pd, td) = (self.value(*p).data(), self.value(*t).data());
                let f = 2.0 * g[0] / pd.len() as f64;
                self.acc(grads, *p, |gp| {
                    for i in 0..gp.len() {
                        gp[i] += f * (pd[i] - td[i]);
                    }
                });
                self.acc(grads, *t, |gt| {
                    for i in 0..gt.len() {
                        gt[i] -= f * (pd[i] - td[i]);
                    }
                });
            }
            Op::Conv1d { x, kernels: k, bias } => {
                let (c_in, len) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (c_out, w) = (self.shape(*k)[0], self.shape(*k)[2]);
                let out_len = len - w + 1;
                if let Some(b) = bias {
                    self.acc(grads, *b, |gb| {
                        for o in 0..c_out {
                            gb[o] += g[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
                        }
                    });
                }
                let xd = self.value(*x).data();
                let kd = self.value(*k).data();
                self.acc(grads, *k, |gk| {
                    for o in 0..c_out {
                        for t in 0..out_len {
                            let go = g[o * out_len + t];
                            if go == 0.0 {
                                continue;
                            }
                            for c in 0..c_in {
                                let dst = &mut gk[(o * c_in + c) * w..(o * c_in + c + 1) * w];
                                for (d, xv) in dst.iter_mut().zip(&xd[c * len + t..c * len + t + w]) {
                                    *d += go * xv;
                                }
                            }
                        }
                    }
                });
                self.acc(grads, *x, |gx| {
                    for o in 0..c_out {
                        for t in 0..out_len {
                            let go = g[o * out_len + t];
                            if go == 0.0 {
                                continue;
                            }
                            for c in 0..c_in {
                                let src = &kd[(o * c_in + c) * w..(o * c_in + c + 1) * w];
                                for (d, kv) in gx[c * len + t..c * len + t + w].iter_mut().zip(src) {
                                    *d += go * kv;
                                }
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let n = self.value(*gain).len();
                let gd = self.value(*gain).data();
                self.acc(grads, *gain, |gg| {
                    for (gr, hr) in g.chunks(n).zip(normalized.chunks(n)) {
                        for c in 0..n {
                            gg[c] += gr[c] * hr[c];
                        }
                    }
                });
                self.acc(grads, *bias, |gb| {
                    for gr in g.chunks(n) {
                        kernels::add_assign(gb, gr);
                    }
                });
                self.acc(grads, *x, |gx| {
                    let mut dh = vec![0.0; n];
                    for (r, (gr, hr)) in g.chunks(n).zip(normalized.chunks(n)).enumerate() {
                        for c in 0..n {
                            dh[c] = gr[c] * gd[c];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h = kernels::dot(&dh, hr) / n as f64;
                        let dst = &mut gx[r * n..(r + 1) * n];
                        for c in 0..n {
                            dst[c] += inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Scatter { values, index } => self.acc(grads, *values, |gv| {
                for (d, &i) in gv.iter_mut().zip(index.iter()) {
                    *d += g[i];
                }
            }),
            Op::Reshape(a) => self.acc(grads, *a, |ga| kernels::add_assign(ga, g)),
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
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

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
