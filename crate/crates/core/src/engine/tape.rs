//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so every parent index is smaller
//! than its child's and a single reverse sweep visits each node once.

use super::tensor::{self, Tensor};
use super::EngineError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// Matrix plus a `1xc` row broadcast over rows.
    AddRow(Var, Var),
    Concat(Vec<Var>),
    /// A `1xc` row repeated `n` times.
    RepeatRows(Var),
    Relu(Var),
    Softmax { input: Var, temperature: f64 },
    L2Sq(Var, Var),
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// False for constants and for nodes computed only from constants.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, EngineError> {
        if !value.is_finite() {
            return Err(EngineError::NonFinite { op: name });
        }
        let needs_grad = match &op {
            Op::Leaf => unreachable!("leaves are recorded directly"),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::L2Sq(a, b) => {
                self.needs_grad(*a) || self.needs_grad(*b)
            }
            Op::Concat(parts) | Op::Sum(parts) => parts.iter().any(|&p| self.needs_grad(p)),
            Op::RepeatRows(a) | Op::Relu(a) | Op::Softmax { input: a, .. } => self.needs_grad(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input. Its gradient is never computed.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Sign pattern of every ReLU input on the tape, in recording order.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                sig.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        sig
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (ad, bd) = (self.value(a).dims(), self.value(b).dims());
        let out = tensor::add(self.value(a), self.value(b))?;
        let op = if ad == bd { Op::Add(a, b) } else { Op::AddRow(a, b) };
        self.push(out, op, "add")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, EngineError> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = tensor::concat(&values)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat")
    }

    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var, EngineError> {
        let v = self.value(row);
        if v.rows() != 1 || n == 0 {
            return Err(EngineError::Shape {
                op: "repeat_rows",
                detail: format!("need a 1xc row and n > 0, got {:?} x {}", v.shape(), n),
            });
        }
        let c = v.cols();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(v.data());
        }
        self.push(Tensor::with_dims(n, c, data), Op::RepeatRows(row), "repeat_rows")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, EngineError> {
        let out = tensor::relu(self.value(a));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn softmax(&mut self, a: Var, temperature: f64) -> Result<Var, EngineError> {
        let out = tensor::softmax(self.value(a), temperature)?;
        self.push(
            out,
            Op::Softmax {
                input: a,
                temperature,
            },
            "softmax",
        )
    }

    pub fn l2_sq(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let out = tensor::l2_sq(self.value(a), self.value(b))?;
        self.push(out, Op::L2Sq(a, b), "l2_sq")
    }

    /// Sum of one-element tensors.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, EngineError> {
        let mut total = 0.0;
        for &p in parts {
            total += self.value(p).item()?;
        }
        self.push(Tensor::scalar(total), Op::Sum(parts.to_vec()), "sum")
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, EngineError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(EngineError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::with_dims(lv.rows(), lv.cols(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.needs_grad(*a) {
                        let ga = tensor::matmul(&g, &bv.transpose())?;
                        accumulate(&mut grads, *a, reshape_like(ga, av));
                    }
                    if self.needs_grad(*b) {
                        let gb = tensor::matmul(&av.transpose(), &g)?;
                        accumulate(&mut grads, *b, reshape_like(gb, bv));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, reshape_like(g.clone(), self.value(*a)));
                    accumulate(&mut grads, *b, reshape_like(g.clone(), self.value(*b)));
                }
                Op::AddRow(a, b) => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let bv = self.value(*b);
                    accumulate(&mut grads, *b, reshape_like(Tensor::row(gb), bv));
                    accumulate(&mut grads, *a, reshape_like(g.clone(), self.value(*a)));
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let pc = pv.cols();
                        if !self.needs_grad(p) {
                            offset += pc;
                            continue;
                        }
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        accumulate(&mut grads, p, reshape_like(Tensor::with_dims(rows, pc, data), pv));
                    }
                }
                Op::RepeatRows(row) => {
                    let c = g.cols();
                    let mut sum = vec![0.0; c];
                    for r in g.data().chunks(c) {
                        for (acc, v) in sum.iter_mut().zip(r) {
                            *acc += v;
                        }
                    }
                    let rv = self.value(*row);
                    accumulate(&mut grads, *row, reshape_like(Tensor::row(sum), rv));
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    let (r, c) = av.dims();
                    accumulate(&mut grads, *a, reshape_like(Tensor::with_dims(r, c, data), av));
                }
                Op::Softmax { input, temperature } => {
                    let y = node.value.data();
                    let dot: f64 = g.data().iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(gv, yv)| yv * (gv - dot) / temperature)
                        .collect();
                    let iv = self.value(*input);
                    let (r, c) = iv.dims();
                    accumulate(&mut grads, *input, reshape_like(Tensor::with_dims(r, c, data), iv));
                }
                Op::L2Sq(a, b) => {
                    let scale = g.item()?;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let diff: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(x, y)| 2.0 * scale * (x - y))
                        .collect();
                    let (ar, ac) = av.dims();
                    let (br, bc) = bv.dims();
                    let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, reshape_like(Tensor::with_dims(ar, ac, diff), av));
                    accumulate(&mut grads, *b, reshape_like(Tensor::with_dims(br, bc, neg), bv));
                }
                Op::Sum(parts) => {
                    let scale = g.item()?;
                    for &p in parts {
                        let pv = self.value(p);
                        let (r, c) = pv.dims();
                        accumulate(&mut grads, p, reshape_like(Tensor::with_dims(r, c, vec![scale]), pv));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    if t.shape() == like.shape() {
        t
    } else {
        Tensor::new(like.shape().to_vec(), t.into_data()).expect("same element count")
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when `v` does not reach the loss.
    pub fn get_or_zero(&self, v: Var, tape: &Tape) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let zero = tape.leaf(Tensor::scalar(0.0));
        let loss = tape.l2_sq(w, zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn unreachable_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let unused = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let zero = tape.leaf(Tensor::scalar(0.0));
        let loss = tape.l2_sq(w, zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zero(unused, &tape).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let r = tape.relu(w).unwrap();
        assert!(matches!(tape.backward(r), Err(EngineError::NonScalarLoss(_))));
    }

    #[test]
    fn shared_node_accumulates() {
        // loss = ||x||^2 + ||x||^2 -> grad 4x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, -2.0]));
        let z = tape.leaf(Tensor::row(vec![0.0, 0.0]));
        let a = tape.l2_sq(x, z).unwrap();
        let b = tape.l2_sq(x, z).unwrap();
        let loss = tape.sum(&[a, b]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, -8.0]);
    }
}
