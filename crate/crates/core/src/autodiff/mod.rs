//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its variables in creation
//! order, so parents always precede children. [`Tape::backward`] walks the
//! tape in reverse and applies each node's vector-Jacobian product, summing
//! contributions for variables that are used more than once.
//!
//! ```
//! use odconv::autodiff::Tape;
//! use odconv::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

mod gradcheck;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradCheckReport};
pub use ops::{
    AvgPool2d, Conv2d, Conv2dPerSample, CrossEntropy, Elementwise, FullyConnected,
    GlobalAveragePool, MatMul, Reshape, SampleNorm, Scale, SoftmaxT, Sum, UnaryOp,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A differentiable operation.
///
/// `backward` receives the forward inputs, the forward output and the
/// upstream gradient, and returns one gradient per input (`None` where the
/// input is not differentiable, e.g. integer-like arguments).
pub trait Function {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;

    /// Forward-only operations return `false` and are refused by [`Tape::record`].
    fn has_backward(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Leaf,
    Constant,
    Op,
}

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    func: Option<Rc<dyn Function>>,
    kind: Kind,
    requires_grad: bool,
}

/// Ordered record of a computation. Single-owner; not `Sync`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input (parameter or data).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            func: None,
            kind: Kind::Leaf,
            requires_grad: true,
        })
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            func: None,
            kind: Kind::Constant,
            requires_grad: false,
        })
    }

    /// Applies `func` to `inputs` and records the result.
    pub fn record<'t, F: Function + 'static>(&'t self, func: F, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        self.record_rc(Rc::new(func), inputs)
    }

    pub fn record_rc<'t>(&'t self, func: Rc<dyn Function>, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        if !func.has_backward() {
            return Err(Error::UnsupportedOp(func.name().to_string()));
        }
        let len = self.len();
        for v in inputs {
            if !std::ptr::eq(v.tape, self) || v.id >= len {
                return Err(Error::Contract(format!(
                    "input {v:?} of `{}` is not on this tape",
                    func.name()
                )));
            }
        }
        let (values, requires_grad): (Vec<Rc<Tensor>>, bool) = {
            let nodes = self.nodes.borrow();
            (
                inputs.iter().map(|v| nodes[v.id].value.clone()).collect(),
                inputs.iter().any(|v| nodes[v.id].requires_grad),
            )
        };
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = func.forward(&refs)?;
        Ok(self.push(Node {
            value: Rc::new(out),
            parents: inputs.iter().map(|v| v.id).collect(),
            func: Some(func),
            kind: Kind::Op,
            requires_grad,
        }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.dims())?);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if node.kind != Kind::Op || !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let func = node.func.as_ref().expect("op nodes carry a function");
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect();
            let contributions = func.backward(&inputs, &node.value, &upstream)?;
            if contributions.len() != node.parents.len() {
                return Err(Error::Contract(format!(
                    "`{}` returned {} gradients for {} inputs",
                    func.name(),
                    contributions.len(),
                    node.parents.len()
                )));
            }
            for (&parent, contrib) in node.parents.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                if !nodes[parent].requires_grad {
                    continue;
                }
                nodes[parent].value.expect_same_shape(&contrib, func.name())?;
                match &mut grads[parent] {
                    Some(acc) => acc.axpy(1.0, &contrib)?,
                    slot => *slot = Some(contrib),
                }
            }
            // keep the upstream gradient for inspection of intermediate nodes
            grads[id] = Some(upstream);
        }
        let shapes = nodes.iter().map(|n| n.value.dims().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of a scalar loss with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]).expect("recorded shapes are valid"),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.dims().to_vec()
    }

    fn apply<F: Function + 'static>(self, f: F, others: &[Var<'t>]) -> Result<Var<'t>> {
        let mut inputs = Vec::with_capacity(1 + others.len());
        inputs.push(self);
        inputs.extend_from_slice(others);
        self.tape.record(f, &inputs)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.apply(Elementwise::Add, &[other])
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.apply(Elementwise::Sub, &[other])
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.apply(Elementwise::Mul, &[other])
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        self.apply(Scale(factor), &[])
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.apply(UnaryOp::Relu, &[])
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.apply(UnaryOp::Sigmoid, &[])
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.apply(UnaryOp::Exp, &[])
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.apply(MatMul, &[other])
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.apply(Sum, &[])
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Var<'t>> {
        self.apply(Reshape(dims.to_vec()), &[])
    }

    pub fn global_average_pool(self) -> Result<Var<'t>> {
        self.apply(GlobalAveragePool, &[])
    }

    pub fn fully_connected(self, weight: Var<'t>) -> Result<Var<'t>> {
        self.apply(FullyConnected, &[weight])
    }

    pub fn conv2d(self, weight: Var<'t>, geom: crate::nn::ConvGeometry) -> Result<Var<'t>> {
        self.apply(Conv2d(geom), &[weight])
    }

    pub fn conv2d_per_sample(self, weight: Var<'t>, geom: crate::nn::ConvGeometry) -> Result<Var<'t>> {
        self.apply(Conv2dPerSample(geom), &[weight])
    }

    pub fn softmax_t(self, temperature: f64) -> Result<Var<'t>> {
        self.apply(SoftmaxT(temperature), &[])
    }

    pub fn avg_pool2d(self, k: usize, stride: usize) -> Result<Var<'t>> {
        self.apply(AvgPool2d { k, stride }, &[])
    }

    pub fn sample_norm(self, eps: f64) -> Result<Var<'t>> {
        self.apply(SampleNorm(eps), &[])
    }

    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        self.apply(CrossEntropy(labels.to_vec()), &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::from_vec(dims, v).unwrap()
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[3], vec![1.0, 2.0, 3.0]));
        let b = tape.leaf(t(&[3], vec![-4.0, 5.0, 0.5]));
        let loss = a.mul(b).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[-4.0, 5.0, 0.5]);
        assert_eq!(g.wrt(b).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], vec![-1.0, 0.0, 2.0]));
        let loss = x.relu().unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_vjp() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[1, 2], vec![1.0, 2.0]));
        let b = tape.leaf(t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[1, 2], vec![1.0, -1.0]));
        let loss = a.matmul(b).unwrap().mul(w).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        // dA = upstream · Bᵀ with upstream = [1, -1]
        assert_eq!(g.wrt(a).data(), &[1.0 - 2.0, 3.0 - 4.0]);
        // dB = Aᵀ · upstream
        assert_eq!(g.wrt(b).data(), &[1.0, -1.0, 2.0, -2.0]);
        assert!(g.get(w).is_none());
    }

    #[test]
    fn sum_gives_ones_and_square_gives_2x() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 3], 0.7).unwrap());
        let g = tape.backward(x.sum().unwrap()).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 1.0));

        let tape = Tape::new();
        let x = tape.leaf(t(&[2], vec![1.0, 2.0]));
        let g = tape.backward(x.mul(x).unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn accumulation_over_repeated_use() {
        let x0 = t(&[3], vec![0.3, -1.2, 2.0]);
        for uses in 1..5 {
            // y = x + x + ... (uses times) versus y = uses * x
            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let mut y = x;
            for _ in 1..uses {
                y = y.add(x).unwrap();
            }
            let w = tape.constant(t(&[3], vec![1.0, 2.0, 3.0]));
            let g1 = tape.backward(y.mul(w).unwrap().sum().unwrap()).unwrap().wrt(x);

            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let w = tape.constant(t(&[3], vec![1.0, 2.0, 3.0]));
            let y = x.scale(uses as f64).unwrap();
            let g2 = tape.backward(y.mul(w).unwrap().sum().unwrap()).unwrap().wrt(x);
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    struct ForwardOnly;

    impl Function for ForwardOnly {
        fn name(&self) -> &'static str {
            "argmax"
        }
        fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
            Ok(inputs[0].clone())
        }
        fn backward(&self, _: &[&Tensor], _: &Tensor, _: &Tensor) -> Result<Vec<Option<Tensor>>> {
            unreachable!()
        }
        fn has_backward(&self) -> bool {
            false
        }
    }

    #[test]
    fn forward_only_op_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1], vec![1.0]));
        assert!(matches!(
            tape.record(ForwardOnly, &[x]),
            Err(Error::UnsupportedOp(name)) if name == "argmax"
        ));
    }

    #[test]
    fn backward_leaves_forward_values_untouched() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], vec![0.1, -0.4, 0.9]));
        let y = x.sigmoid().unwrap().mul(x).unwrap();
        let before = y.value();
        let snapshot: Vec<Tensor> = (0..tape.len())
            .map(|i| Var { tape: &tape, id: i }.value().as_ref().clone())
            .collect();
        tape.backward(y.sum().unwrap()).unwrap();
        tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(*before, *y.value());
        for (i, v) in snapshot.iter().enumerate() {
            assert_eq!(*Var { tape: &tape, id: i }.value(), *v);
        }
    }
}
