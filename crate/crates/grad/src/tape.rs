use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    /// Handle of the `i`-th node recorded on a tape, for inspection.
    pub fn from_index(i: usize) -> Self {
        Var(i)
    }
}

/// Maps the upstream gradient to one gradient per parent.
///
/// Arguments are the upstream gradient, the parent values and the node's own
/// value. A `None` entry means "no contribution".
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Records a computation so it can be differentiated in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward closures. Parameters enter as
    /// constants, which keeps inference free of gradient bookkeeping.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.push_leaf(value, rg)
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same handle, so weight sharing accumulates gradients into
    /// one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.variable(store.get(id).clone());
        self.param_vars.insert(id, v);
        v
    }

    /// Records a node computed outside the tape together with its backward rule.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.nodes[root.0].value.numel(),
            1,
            "backward root must be a scalar, got shape {:?}",
            self.nodes[root.0].value.shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape().to_vec(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let parent_values: Vec<&Tensor> = node
                .parents
                .iter()
                .map(|p| &self.nodes[p.0].value)
                .collect();
            let parent_grads = backward(&g, &parent_values, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            // Keep leaf gradients; interior ones are consumed.
            if node.parents.is_empty() {
                grads[idx] = Some(g);
            }
        }
        Gradients {
            grads,
            param_vars: self.param_vars.iter().map(|(&id, &v)| (id, v)).collect(),
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a leaf. Interior nodes are not retained.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|&(_, v)| self.wrt(v))
    }

    /// Every parameter that received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.param_vars
            .iter()
            .filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
    }
}
