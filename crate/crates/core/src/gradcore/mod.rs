//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation performed on its [`Tensor`]s in
//! topological order. Calling [`Tensor::backward`] on a scalar result replays
//! the recorded operations in reverse and accumulates exact chain-rule
//! gradients into every tensor created with `requires_grad`.
//!
//! Tapes are deliberately single-threaded: a `Tensor` is a handle into its
//! tape's arena and cannot leave the thread the tape lives on. Batch
//! parallelism is done with one tape per thread and detached value vectors.

mod check;
mod ops;

pub use check::{finite_diff_check, FiniteDiffReport};
pub(crate) use ops::dot4 as deterministic_dot;

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("matmul inner dimensions differ: {0} vs {1}")]
    InnerDimMismatch(usize, usize),
    #[error("division by zero (strict_math is enabled)")]
    DivisionByZero,
    #[error("conv1d input length {input} is shorter than kernel length {kernel}")]
    InputShorterThanKernel { input: usize, kernel: usize },
    #[error("axis {axis} out of range for rank-{rank} tensor")]
    BadAxis { axis: usize, rank: usize },
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("tape already ran backward; reset gradients before reusing it")]
    TapeConsumed,
    #[error("operands belong to different tapes")]
    TapeMismatch,
    #[error("data length {data} does not match shape {shape:?}")]
    DataShapeMismatch { data: usize, shape: Vec<usize>},
    #[error("sqrt of negative value {0}")]
    SqrtOfNegative(f64),
    #[error("reshape from {from:?} to {to:?} changes element count")]
    BadReshape { from: Vec<usize>, to: Vec<usize> },
}

/// Operation recorded for one tape node. Input fields are node indices.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Conv1d { signal: usize, kernels: usize, stride: usize },
    AddChannelBias { x: usize, bias: usize },
    Relu { x: usize },
    Tanh { x: usize },
    Exp { x: usize },
    Abs { x: usize },
    Log { x: usize },
    Sqrt { x: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    SumAxis { x: usize, axis: usize },
    MeanAxis { x: usize, axis: usize },
    CosineSim { a: usize, b: usize },
    Tile { x: usize },
    Roll { x: usize, shift: i64 },
    Concat { a: usize, b: usize },
    Reshape { x: usize },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    /// Leaf marked as a differentiation target.
    pub requires_grad: bool,
    /// True when this node is a target or feeds one; backward skips the rest.
    pub needs_grad: bool,
    pub op: Op,
}

pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
    pub consumed: bool,
    pub strict_math: bool,
}

/// Recorder for a single forward computation.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// New tape with strict math (division by zero is an error).
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
                strict_math: true,
            })),
        }
    }

    /// Relaxed tape: division by zero follows IEEE semantics instead of erroring.
    pub fn with_strict_math(strict: bool) -> Self {
        let t = Tape::new();
        t.inner.borrow_mut().strict_math = strict;
        t
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clears all gradients and re-arms the tape for another backward pass.
    pub fn reset_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.consumed = false;
        for node in &mut inner.nodes {
            node.grad = None;
        }
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor, GradError> {
        self.record_leaf(shape, data, false)
    }

    /// Leaf tensor whose gradient is populated by `backward`.
    pub fn param(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor, GradError> {
        self.record_leaf(shape, data, true)
    }

    /// Scalar constant, shape `[1]`.
    pub fn scalar(&self, value: f64) -> Tensor {
        self.record_leaf(&[1], vec![value], false)
            .expect("scalar shape is always consistent")
    }

    fn record_leaf(
        &self,
        shape: &[usize],
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Tensor, GradError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(GradError::DataShapeMismatch {
                data: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push_node(Node {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad,
            needs_grad: requires_grad,
            op: Op::Leaf,
        }))
    }

    pub(crate) fn push_node(&self, node: Node) -> Tensor {
        let shape = node.shape.clone();
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(node);
        Tensor {
            tape: self.inner.clone(),
            id,
            shape,
        }
    }

    pub(crate) fn strict(&self) -> bool {
        self.inner.borrow().strict_math
    }
}

/// Handle to a node on a [`Tape`]. Cloning the handle does not copy data.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Rc<RefCell<TapeInner>>,
    pub(crate) id: usize,
    pub(crate) shape: Vec<usize>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Copy of the node's values, row-major.
    pub fn data(&self) -> Vec<f64> {
        self.tape.borrow().nodes[self.id].data.clone()
    }

    /// Value of a one-element tensor.
    pub fn value(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.tape.borrow().nodes[self.id].data[0]
    }

    /// Accumulated gradient, if `backward` has run and this is a grad target.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.borrow().nodes[self.id].grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.borrow().nodes[self.id].requires_grad
    }

    pub(crate) fn tape_handle(&self) -> Tape {
        Tape {
            inner: self.tape.clone(),
        }
    }

    pub(crate) fn same_tape(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.tape, &other.tape)
    }

    /// Runs the reverse pass from this scalar node. Gradients accumulate into
    /// every `requires_grad` ancestor. A second call without
    /// [`Tape::reset_grads`] is an error.
    pub fn backward(&self) -> Result<(), GradError> {
        if self.numel() != 1 {
            return Err(GradError::NonScalarRoot(self.shape.clone()));
        }
        let mut inner = self.tape.borrow_mut();
        if inner.consumed {
            return Err(GradError::TapeConsumed);
        }
        inner.consumed = true;
        ops::run_backward(&mut inner, self.id);
        Ok(())
    }
}

pub(crate) fn same_shape(a: &[usize], b: &[usize]) -> bool {
    a == b
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn sum_gradient_is_ones(v in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let t = Tape::new();
            let n = v.len();
            let x = t.param(&[n], v).unwrap();
            x.sum_all().backward().unwrap();
            prop_assert_eq!(x.grad().unwrap(), vec![1.0; n]);
        }

        #[test]
        fn tile_is_periodic(v in proptest::collection::vec(-1.0f64..1.0, 1..12), n in 1usize..50) {
            let t = Tape::new();
            let l = v.len();
            let x = t.input(&[l], v.clone()).unwrap();
            let tiled = x.tile_to(n).unwrap().data();
            for (i, y) in tiled.iter().enumerate() {
                prop_assert_eq!(*y, v[i % l]);
            }
        }

        #[test]
        fn quadratic_gradient_matches_fd(v in proptest::collection::vec(-3.0f64..3.0, 1..8)) {
            let report = finite_diff_check(&v, 1e-5, |_tape, p| {
                Ok(p.mul(&p)?.sum_all())
            }).unwrap();
            prop_assert!(report.pass, "max_rel_err = {}", report.max_rel_err);
        }

        #[test]
        fn add_commutes(a in proptest::collection::vec(-10.0f64..10.0, 1..10)) {
            let t = Tape::new();
            let n = a.len();
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 + 1.0).collect();
            let ta = t.input(&[n], a.clone()).unwrap();
            let tb = t.input(&[n], b).unwrap();
            prop_assert_eq!(ta.add(&tb).unwrap().data(), tb.add(&ta).unwrap().data());
        }
    }
}
