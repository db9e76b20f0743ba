//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node holding its value, its parents and a
//! closure mapping the output gradient to parent gradients. [`Tape::backward`]
//! walks the tape once in reverse and accumulates into each parent, so shared
//! subexpressions receive the sum of their uses.

use std::cell::{Ref, RefCell};

use ndarray::Array2;

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps `(output gradient, parent values, output value)` to one optional
/// gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&Matrix, &[&Matrix], &Matrix) -> Vec<Option<Matrix>>>;

struct Node {
    value: Matrix,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
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

    /// A differentiable input.
    pub fn leaf(&self, value: Matrix) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// The single entry of a 1×1 value.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on a non-scalar value");
        val[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push_node(
        &self,
        value: Matrix,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Records an operation; the backward rule is dropped when no parent
    /// needs a gradient.
    pub(crate) fn push(&self, value: Matrix, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push_node(
            value,
            parents.iter().map(|p| p.0).collect(),
            requires_grad.then_some(backward),
            requires_grad,
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.0].value.dim(),
            (1, 1),
            "backward() needs a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(rule) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parent_vals: Vec<&Matrix> = node.parents.iter().map(|&p| &nodes[p].value).collect();
            let pgrads = rule(&g, &parent_vals, &node.value);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.dim(), nodes[p].value.dim());
                match &mut grads[p] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when it never received
    /// one.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape))
    }
}
