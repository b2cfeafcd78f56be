//! Dense row-major `f64` tensors with an optional handle into a [`Graph`].
//!
//! A tensor without a node is a constant. Any operation that touches at least
//! one graph-attached tensor is recorded in that tensor's graph; operations
//! over constants only are evaluated eagerly and stay constant. Because the
//! backward pass is itself written in terms of these operations, gradients
//! computed with `create_graph` are graph nodes and can be differentiated
//! again.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar(f64),
    Tanh,
    Relu,
    Exp,
    Log,
    Abs,
    Sqrt,
    /// All elements to a scalar.
    Sum,
    /// Scalar to `shape`.
    BroadcastScalar(Vec<usize>),
    /// `[n, k] -> [k]`
    SumRows,
    /// `[k] -> [n, k]`
    BroadcastRows(usize),
    /// `[n, k] -> [n, 1]`
    SumCols,
    /// `[n, 1] -> [n, k]`
    BroadcastCols(usize),
    /// Column-wise concatenation; holds the width of every part.
    ConcatCols(Vec<usize>),
    SliceCols {
        start: usize,
        end: usize,
    },
    /// Places `[n, w]` at column `start` of a zero `[n, total]`.
    PadCols {
        start: usize,
        total: usize,
    },
    Reshape,
}

/// A parent of a recorded node: either another node or a captured constant.
#[derive(Clone)]
pub(crate) struct Input {
    pub(crate) id: Option<usize>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Rc<Vec<f64>>,
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Input>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Rc<Vec<f64>>,
}

/// Append-only record of operations. Every node's parents precede it.
#[derive(Clone, Default)]
pub struct Graph {
    pub(crate) nodes: Rc<RefCell<Vec<Node>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a copy of `t` as a differentiable leaf of this graph.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: t.shape.clone(),
            value: t.data.clone(),
        });
        self.tensor_at(id)
    }

    /// Smallest distance of any recorded `relu`, `abs` or `sqrt` input from 0,
    /// or infinity when the graph has none of them.
    pub fn kink_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu | Op::Abs | Op::Sqrt))
            .flat_map(|n| n.inputs[0].value.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(crate) fn tensor_at(&self, id: usize) -> Tensor {
        let nodes = self.nodes.borrow();
        let node = &nodes[id];
        Tensor {
            shape: node.shape.clone(),
            data: node.value.clone(),
            node: Some(NodeRef { graph: self.clone(), id }),
        }
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.len())
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) graph: Graph,
    pub(crate) id: usize,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node.as_ref().map(|n| n.id))
            .field("data", &self.data)
            .finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality; graph membership is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    /// Builds a constant tensor, rejecting inconsistent shapes and non-finite values.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero dimension in shape {shape:?}")));
        }
        if data.len() != expect {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "tensor creation",
                format!("non-finite value {} at index {i}", data[i]),
            ));
        }
        Ok(Self::raw(shape.to_vec(), data))
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(Vec::new(), vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::raw(shape.to_vec(), vec![v; shape.iter().product()])
    }

    /// `[n, 1]` column from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self::raw(vec![values.len(), 1], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.node.as_ref().map(|n| &n.graph)
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Same values, cut from any graph.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    /// True when both tensors share the same underlying buffer.
    pub fn shares_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.data, &other.data)
    }

    pub(crate) fn input(&self) -> Input {
        Input {
            id: self.node_id(),
            shape: self.shape.clone(),
            value: self.data.clone(),
        }
    }

    /// Records `op` over `parents` when any parent is attached, otherwise returns a constant.
    pub(crate) fn record(op: Op, parents: &[&Tensor], shape: Vec<usize>, value: Vec<f64>) -> Tensor {
        let mut graph: Option<&Graph> = None;
        for p in parents {
            if let Some(n) = &p.node {
                match graph {
                    None => graph = Some(&n.graph),
                    Some(g) => assert!(g.same(&n.graph), "operands belong to different graphs"),
                }
            }
        }
        match graph {
            None => Tensor::raw(shape, value),
            Some(g) => {
                let value = Rc::new(value);
                let id = g.push(Node {
                    op,
                    inputs: parents.iter().map(|p| p.input()).collect(),
                    shape: shape.clone(),
                    value: value.clone(),
                });
                Tensor {
                    shape,
                    data: value,
                    node: Some(NodeRef { graph: g.clone(), id }),
                }
            }
        }
    }

    pub(crate) fn from_input(input: &Input, graph: Option<&Graph>) -> Tensor {
        match (input.id, graph) {
            (Some(id), Some(g)) => g.tensor_at(id),
            _ => Tensor {
                shape: input.shape.clone(),
                data: input.value.clone(),
                node: None,
            },
        }
    }
}
