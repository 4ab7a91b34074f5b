//! Tape-based reverse-mode automatic differentiation over dense 2-D tensors,
//! and the Adam optimizer.
//!
//! A [`Tape`] records every operation of one forward pass together with its
//! output value. [`Tape::backward`] walks the recorded nodes in reverse order
//! and accumulates gradients into the trainable parameters of a
//! [`ParamStore`]. The tape is rebuilt for every batch.
//!
//! ```
//! use geoshape_core::autodiff::{ParamStore, Tape};
//! use ndarray::arr2;
//!
//! let mut store = ParamStore::new();
//! let theta = store.add("theta", arr2(&[[3.0]]));
//! let mut tape = Tape::new();
//! let t = tape.param(&store, theta);
//! let loss = tape.square(t).unwrap();
//! let grads = tape.backward(loss, &store).unwrap();
//! assert_eq!(grads.get(theta)[[0, 0]], 6.0);
//! ```

use ndarray::{Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a trainable tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: Vec<Tensor>,
    names: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.values.push(value);
        self.names.push(name.to_string());
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Number of registered tensors.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of scalar parameters across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }
}

/// Gradients of a scalar loss, one tensor per registered parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    Scale(Var, f64),
    AddConst(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulScalar(Var, Var),
    Square(Var),
    Sqrt(Var),
    Powi(Var, i32),
    Exp(Var),
    ComplexModulusPowers(Var),
    Mean(Var),
    MeanRows(Var),
    Column(Var, usize),
    PowerNormalize { input: Var, rms: f64 },
    ClampMin(Var, f64),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_str(t: &Tensor) -> String {
    format!("{}x{}", t.nrows(), t.ncols())
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
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

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        check_finite(op_name, &value)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{} x {}", shape_str(va), shape_str(vb)),
            });
        }
        let out = va.dot(vb);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// Adds a 1xN bias row to every row of a BxN tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("{} + bias {}", shape_str(vx), shape_str(vb)),
            });
        }
        let out = vx + vb;
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    /// Mean cross-entropy of row-wise softmax(logits) against integer labels,
    /// fused through log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.nrows() != labels.len() || z.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("logits {} with {} labels", shape_str(z), labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= z.ncols()) {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("label {bad} out of range for {} classes", z.ncols()),
            });
        }
        let mut probs = z.clone();
        let mut total = 0.0;
        for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let target = row[label];
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
            total += max + sum.ln() - target;
        }
        let loss = Array2::from_elem((1, 1), total / labels.len() as f64);
        self.push(
            "softmax_cross_entropy",
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x) * c;
        self.push("scale", out, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x) + c;
        self.push("add_const", out, Op::AddConst(x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{} vs {}", shape_str(va), shape_str(vb)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let out = self.value(a) / self.value(b);
        self.push("div", out, Op::Div(a, b))
    }

    /// Multiplies every element of `x` by the 1x1 node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let vs = self.value(s);
        if vs.dim() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "mul_scalar",
                detail: format!("scalar operand has shape {}", shape_str(vs)),
            });
        }
        let out = self.value(x) * vs[[0, 0]];
        self.push("mul_scalar", out, Op::MulScalar(x, s))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v * v);
        self.push("square", out, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(f64::sqrt);
        self.push("sqrt", out, Op::Sqrt(x))
    }

    pub fn powi(&mut self, x: Var, n: i32) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.powi(n));
        self.push("powi", out, Op::Powi(x, n))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(f64::exp);
        self.push("exp", out, Op::Exp(x))
    }

    /// For a Bx2 tensor of interleaved (re, im) pairs, returns Bx3 columns
    /// `|x|^2, |x|^4, |x|^6`.
    pub fn complex_modulus_powers(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.ncols() != 2 {
            return Err(Error::ShapeMismatch {
                op: "complex_modulus_powers",
                detail: format!("expected Bx2 input, got {}", shape_str(vx)),
            });
        }
        let mut out = Array2::zeros((vx.nrows(), 3));
        for (row, mut o) in vx.rows().into_iter().zip(out.rows_mut()) {
            let r = row[0] * row[0] + row[1] * row[1];
            o[0] = r;
            o[1] = r * r;
            o[2] = r * r * r;
        }
        self.push("complex_modulus_powers", out, Op::ComplexModulusPowers(x))
    }

    /// Mean of all elements, as a 1x1 node.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let m = vx.mean().unwrap_or(0.0);
        self.push("mean", Array2::from_elem((1, 1), m), Op::Mean(x))
    }

    /// Column means, as a 1xC node.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                detail: "no rows".into(),
            });
        }
        let out = vx.mean_axis(Axis(0)).expect("rows").insert_axis(Axis(0));
        self.push("mean_rows", out, Op::MeanRows(x))
    }

    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let vx = self.value(x);
        if j >= vx.ncols() {
            return Err(Error::ShapeMismatch {
                op: "column",
                detail: format!("column {j} of {}", shape_str(vx)),
            });
        }
        let out = vx.column(j).to_owned().insert_axis(Axis(1));
        self.push("column", out, Op::Column(x, j))
    }

    /// Divides a Bx2 batch of complex symbols by the square root of its mean
    /// power, giving unit average power.
    pub fn power_normalize(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.ncols() != 2 || vx.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "power_normalize",
                detail: format!("expected Bx2 input, got {}", shape_str(vx)),
            });
        }
        let power = vx.iter().map(|v| v * v).sum::<f64>() / vx.nrows() as f64;
        if !(power > 0.0) {
            return Err(Error::DegenerateInput("power_normalize of an all-zero batch".into()));
        }
        let rms = power.sqrt();
        let out = vx / rms;
        self.push("power_normalize", out, Op::PowerNormalize { input: x, rms })
    }

    /// Elementwise `max(x, floor)`; the gradient is zero where clamped.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.max(floor));
        self.push("clamp_min", out, Op::ClampMin(x, floor))
    }

    /// Selects rows of `x` by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vx.nrows()) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                detail: format!("row {bad} of {}", shape_str(vx)),
            });
        }
        let out = vx.select(Axis(0), indices);
        self.push("gather_rows", out, Op::GatherRows(x, indices.to_vec()))
    }

    /// Reverse pass from a scalar `loss`, returning d(loss)/d(param) for
    /// every parameter in `store` (zero for parameters the loss ignores).
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward(loss.0));
        }
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: lv.nrows(),
                cols: lv.ncols(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::ones((1, 1)));
        let mut param_grads: Vec<Tensor> = (0..store.len())
            .map(|i| Array2::zeros(store.values[i].dim()))
            .collect();

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if id.0 >= param_grads.len() || param_grads[id.0].dim() != g.dim() {
                        return Err(Error::ShapeMismatch {
                            op: "backward",
                            detail: format!("parameter {} is not registered in this store", id.0),
                        });
                    }
                    param_grads[id.0] += &g;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *b, gb);
                    acc(&mut adj, *x, g);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut adj, *x, gx);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let upstream = g[[0, 0]] / labels.len() as f64;
                    let mut gz = probs.clone();
                    for (mut row, &l) in gz.rows_mut().into_iter().zip(labels) {
                        row[l] -= 1.0;
                    }
                    gz *= upstream;
                    acc(&mut adj, *logits, gz);
                }
                Op::Scale(x, c) => acc(&mut adj, *x, g * *c),
                Op::AddConst(x) => acc(&mut adj, *x, g),
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    let ga = &g / vb;
                    let gb = -(&ga * &node.value);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulScalar(x, s) => {
                    let vs = self.value(*s)[[0, 0]];
                    let gs = (&g * self.value(*x)).sum();
                    acc(&mut adj, *s, Array2::from_elem((1, 1), gs));
                    acc(&mut adj, *x, g * vs);
                }
                Op::Square(x) => {
                    let gx = &g * &(self.value(*x) * 2.0);
                    acc(&mut adj, *x, gx);
                }
                Op::Sqrt(x) => {
                    let gx = &g / &(&node.value * 2.0);
                    acc(&mut adj, *x, gx);
                }
                Op::Powi(x, n) => {
                    let n = *n;
                    let gx = &g * &self.value(*x).mapv(|v| n as f64 * v.powi(n - 1));
                    acc(&mut adj, *x, gx);
                }
                Op::Exp(x) => acc(&mut adj, *x, &g * &node.value),
                Op::ComplexModulusPowers(x) => {
                    let vx = self.value(*x);
                    let mut gx = Array2::zeros(vx.dim());
                    for ((row, go), mut out) in vx.rows().into_iter().zip(g.rows()).zip(gx.rows_mut()) {
                        let r = row[0] * row[0] + row[1] * row[1];
                        let dr = go[0] + 2.0 * r * go[1] + 3.0 * r * r * go[2];
                        out[0] = 2.0 * row[0] * dr;
                        out[1] = 2.0 * row[1] * dr;
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Mean(x) => {
                    let vx = self.value(*x);
                    let gx = Array2::from_elem(vx.dim(), g[[0, 0]] / vx.len() as f64);
                    acc(&mut adj, *x, gx);
                }
                Op::MeanRows(x) => {
                    let vx = self.value(*x);
                    let n = vx.nrows() as f64;
                    let row = &g / n;
                    let gx = row.broadcast(vx.dim()).expect("broadcast").to_owned();
                    acc(&mut adj, *x, gx);
                }
                Op::Column(x, j) => {
                    let vx = self.value(*x);
                    let mut gx = Array2::zeros(vx.dim());
                    gx.column_mut(*j).assign(&g.column(0));
                    acc(&mut adj, *x, gx);
                }
                Op::PowerNormalize { input, rms } => {
                    let vx = self.value(*input);
                    let n = vx.nrows() as f64;
                    let inner = (&g * vx).sum();
                    let coef = inner / (n * rms * rms * rms);
                    let gx = &g / *rms - &(vx * coef);
                    acc(&mut adj, *input, gx);
                }
                Op::ClampMin(x, floor) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|d, &v| {
                        if v <= *floor {
                            *d = 0.0;
                        }
                    });
                    acc(&mut adj, *x, gx);
                }
                Op::GatherRows(x, indices) => {
                    let vx = self.value(*x);
                    let mut gx = Array2::zeros(vx.dim());
                    for (go, &i) in g.rows().into_iter().zip(indices) {
                        let mut dst = gx.row_mut(i);
                        dst += &go;
                    }
                    acc(&mut adj, *x, gx);
                }
            }
        }
        for (id, grad) in param_grads.iter().enumerate() {
            if !grad.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!(
                    "non-finite gradient for parameter `{}`",
                    store.names[id]
                )));
            }
        }
        Ok(Gradients { grads: param_grads })
    }
}

/// Glorot-uniform initialization in `[-sqrt(6/(in+out)), +sqrt(6/(in+out))]`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit))
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    rate_override: Vec<Option<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
            second: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
            rate_override: vec![None; store.len()],
        }
    }

    /// Uses `rate` instead of the global learning rate for one parameter.
    pub fn set_learning_rate(&mut self, id: ParamId, rate: f64) {
        self.rate_override[id.0] = Some(rate);
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "{} gradients, {} parameters, {} accumulators",
                    grads.grads.len(),
                    store.len(),
                    self.first.len()
                ),
            });
        }
        for (i, (g, p)) in grads.grads.iter().zip(&store.values).enumerate() {
            if g.dim() != p.dim() || self.first[i].dim() != p.dim() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "parameter `{}` is {} but its gradient is {}",
                        store.names[i],
                        shape_str(p),
                        shape_str(g)
                    ),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (i, g) in grads.grads.iter().enumerate() {
            let lr = self.rate_override[i].unwrap_or(self.learning_rate);
            Zip::from(&mut store.values[i])
                .and(&mut self.first[i])
                .and(&mut self.second[i])
                .and(g)
                .for_each(|theta, m, v, &gi| {
                    *m = b1 * *m + (1.0 - b1) * gi;
                    *v = b2 * *v + (1.0 - b2) * gi * gi;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
