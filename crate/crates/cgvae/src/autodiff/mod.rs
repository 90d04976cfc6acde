//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation whose inputs are watched, building a
//! topologically ordered list of nodes. [`Tape::backward`] walks that list
//! in reverse exactly once and accumulates gradients on the watched leaves.
//!
//! Values are immutable after creation and shared by `Arc`, so cloning a
//! [`Tensor`] is cheap. Tensors built with [`Tensor::new`] are constants;
//! they participate in arithmetic but receive no gradient. All reductions
//! run in ascending index order, so repeated forward passes are
//! bit-identical.

mod ops;

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Guard added under the square root in norm *gradients* so that the
/// derivative of `‖v‖` is finite at `v = 0` (zero-initialized vector
/// channels hit this on the first decoder step). Small enough that the
/// bias is invisible to finite-difference checks for any channel norm
/// above ~1e-7.
pub const NORM_GRAD_EPS: f64 = 1e-18;

/// Dense row-major `f64` array with an optional handle into the active tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct NodeRef {
    tape: u64,
    index: usize,
}

impl Tensor {
    /// Constant tensor (not attached to any tape).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} elements but {} were provided",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; numel]),
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel]),
            node: None,
        }
    }

    /// Flat row-major coordinates, e.g. `[[x,y,z]; n]` into an `n×3` tensor.
    pub fn from_rows3(rows: &[[f64; 3]]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * 3);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![rows.len(), 3],
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Whether this tensor is watched on some tape.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Copy of this tensor detached from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Rows of an `R×3` tensor as fixed arrays.
    pub fn rows3(&self) -> Result<Vec<[f64; 3]>> {
        if self.shape.last() != Some(&3) {
            return Err(Error::Shape(format!(
                "rows3 on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self
            .data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect())
    }

    fn node_on(&self, tape: &Tape) -> Option<usize> {
        match self.node {
            Some(r) if r.tape == tape.id => Some(r.index),
            _ => None,
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, grad={}, data={:?})",
            self.shape,
            self.requires_grad(),
            if self.data.len() <= 8 {
                format!("{:?}", self.data)
            } else {
                format!("[{} values]", self.data.len())
            }
        )
    }
}

/// Backward rule: given the output cotangent, emit `(parent, contribution)`
/// pairs. Contributions are dense and shaped like the parent.
type BackFn = Box<dyn Fn(&[f64], &mut dyn FnMut(usize, Vec<f64>))>;

struct Node {
    parents: Vec<usize>,
    numel: usize,
    back: Option<BackFn>,
}

/// Records one training step's computation. Single-threaded by design:
/// one tape per step, dropped (or consumed by [`Tape::backward`]) afterwards.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Register `t` as a differentiable leaf of this tape.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        if let Some(idx) = t.node_on(self) {
            return Tensor {
                shape: t.shape.clone(),
                data: Arc::clone(&t.data),
                node: Some(NodeRef {
                    tape: self.id,
                    index: idx,
                }),
            };
        }
        let index = self.push_node(Node {
            parents: vec![],
            numel: t.data.len(),
            back: None,
        });
        Tensor {
            shape: t.shape.clone(),
            data: Arc::clone(&t.data),
            node: Some(NodeRef {
                tape: self.id,
                index,
            }),
        }
    }

    fn push_node(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Record `out` produced from `parents` with backward rule `back`.
    /// No-op (constant result) when no parent is on this tape.
    fn record(&self, out: &mut Tensor, parents: &[&Tensor], back: BackFn) {
        let parent_ids: Vec<(usize, usize)> = parents
            .iter()
            .enumerate()
            .filter_map(|(slot, p)| p.node_on(self).map(|idx| (slot, idx)))
            .collect();
        if parent_ids.is_empty() {
            return;
        }
        let slots: Vec<usize> = parent_ids.iter().map(|(s, _)| *s).collect();
        let ids: Vec<usize> = parent_ids.iter().map(|(_, i)| *i).collect();
        let ids_for_back = ids.clone();
        // Reindex the rule's slot-relative emissions onto tape node ids,
        // dropping contributions to constant parents.
        let wrapped: BackFn = Box::new(move |g, sink| {
            back(g, &mut |slot, contrib| {
                if let Some(pos) = slots.iter().position(|&s| s == slot) {
                    sink(ids_for_back[pos], contrib);
                }
            })
        });
        let index = self.push_node(Node {
            parents: ids,
            numel: out.data.len(),
            back: Some(wrapped),
        });
        out.node = Some(NodeRef {
            tape: self.id,
            index,
        });
    }

    /// Reverse pass from a scalar loss. Consumes the tape; every watched
    /// leaf reachable from `loss` receives an accumulated gradient.
    pub fn backward(self, loss: &Tensor) -> Result<Gradients> {
        if loss.data.len() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let loss_node = loss.node_on(&self).ok_or_else(|| {
            Error::Shape("loss is not attached to this tape".to_string())
        })?;
        let nodes = self.nodes.into_inner();
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss_node] = Some(vec![1.0]);
        for i in (0..=loss_node).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.back {
                Some(back) => {
                    // Pre-create parent buffers so accumulation is in-place.
                    for &p in &node.parents {
                        if grads[p].is_none() {
                            grads[p] = Some(vec![0.0; nodes[p].numel]);
                        }
                    }
                    back(&g, &mut |parent, contrib| {
                        let buf = grads[parent]
                            .as_mut()
                            .expect("parent gradient buffer initialized");
                        debug_assert_eq!(buf.len(), contrib.len());
                        for (b, c) in buf.iter_mut().zip(contrib.iter()) {
                            *b += c;
                        }
                    });
                    // Interior cotangent no longer needed.
                }
                None => grads[i] = Some(g), // keep leaf gradients
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a watched tensor, shaped like it.
    /// `None` if the tensor was constant or unreachable from the loss.
    pub fn wrt(&self, t: &Tensor) -> Option<Tensor> {
        let node = t.node?;
        if node.tape != self.tape {
            return None;
        }
        let g = self.grads.get(node.index)?.as_ref()?;
        Some(Tensor {
            shape: t.shape.clone(),
            data: Arc::new(g.clone()),
            node: None,
        })
    }
}

pub use ops::SegmentIds;
