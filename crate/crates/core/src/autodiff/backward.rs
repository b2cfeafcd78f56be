use super::tensor::{Graph, Input, Op, Tensor};
use crate::error::{Error, Result};

/// Reverse-mode gradient of a scalar `loss` with respect to each tensor in `wrt`.
///
/// Tensors in `wrt` that the loss does not depend on receive zeros. With
/// `create_graph` the vector-Jacobian products are recorded as graph nodes, so
/// the returned gradients are themselves differentiable.
pub fn grad(loss: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.numel() != 1 {
        return Err(Error::shape(format!(
            "grad requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let zeros = || wrt.iter().map(|w| Tensor::zeros(w.shape())).collect::<Vec<_>>();
    let (graph, loss_id) = match (loss.graph(), loss.node_id()) {
        (Some(g), Some(id)) => (g.clone(), id),
        _ => return Ok(zeros()),
    };

    // wrt index for each target node id
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); loss_id + 1];
    for (i, w) in wrt.iter().enumerate() {
        if let (Some(g), Some(id)) = (w.graph(), w.node_id()) {
            if g.same(&graph) && id <= loss_id {
                targets[id].push(i);
            }
        }
    }

    // Only nodes that depend on some target need a gradient.
    let requires: Vec<bool> = {
        let nodes = graph.nodes.borrow();
        let mut req = vec![false; loss_id + 1];
        for id in 0..=loss_id {
            req[id] = !targets[id].is_empty() || nodes[id].inputs.iter().any(|p| p.id.is_some_and(|pid| req[pid]));
        }
        req
    };

    let mut out: Vec<Option<Tensor>> = vec![None; wrt.len()];
    let mut grads: Vec<Option<Tensor>> = vec![None; loss_id + 1];
    grads[loss_id] = Some(Tensor::ones(loss.shape()));

    let record_in = if create_graph { Some(&graph) } else { None };
    for id in (0..=loss_id).rev() {
        let Some(g) = grads[id].take() else { continue };
        if !requires[id] {
            continue;
        }
        for &i in &targets[id] {
            out[i] = Some(g.clone());
        }
        let (op, inputs, output) = {
            let nodes = graph.nodes.borrow();
            let node = &nodes[id];
            if node.op == Op::Leaf {
                continue;
            }
            (node.op.clone(), node.inputs.clone(), node.value.clone())
        };
        let out_t = if create_graph {
            graph.tensor_at(id)
        } else {
            Tensor::raw_from_rc(inputs_shape_of(&graph, id), output)
        };
        let parents: Vec<Tensor> = inputs.iter().map(|p| Tensor::from_input(p, record_in)).collect();
        let needs: Vec<bool> = inputs.iter().map(|p| p.id.is_some_and(|pid| requires[pid])).collect();
        let contribs = vjp(&op, &parents, &out_t, &g, &needs);
        for ((input, contrib), need) in inputs.iter().zip(contribs).zip(&needs) {
            if !need {
                continue;
            }
            let (Some(pid), Some(c)) = (input.id, contrib) else { continue };
            grads[pid] = Some(match grads[pid].take() {
                None => c,
                Some(acc) => acc.add(&c),
            });
        }
    }

    Ok(out
        .into_iter()
        .zip(wrt)
        .map(|(g, w)| g.unwrap_or_else(|| Tensor::zeros(w.shape())))
        .collect())
}

fn inputs_shape_of(graph: &Graph, id: usize) -> Vec<usize> {
    graph.nodes.borrow()[id].shape.clone()
}

/// Vector-Jacobian products of one node. `needs[i]` gates work for parent `i`.
fn vjp(op: &Op, p: &[Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let need = |i: usize| needs[i];
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul => vec![need(0).then(|| g.matmul(&p[1].t())), need(1).then(|| p[0].t().matmul(g))],
        Op::Transpose => vec![Some(g.t())],
        Op::Add => vec![need(0).then(|| g.clone()), need(1).then(|| g.clone())],
        Op::Sub => vec![need(0).then(|| g.clone()), need(1).then(|| g.neg())],
        Op::Mul => vec![need(0).then(|| g.mul(&p[1])), need(1).then(|| g.mul(&p[0]))],
        Op::Div => {
            let ga = g.div(&p[1]);
            let gb = need(1).then(|| ga.mul(out).neg());
            vec![need(0).then_some(ga), gb]
        }
        Op::Scale(c) => vec![Some(g.scale(*c))],
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Tanh => {
            // 1 - tanh^2
            let d = out.mul(out).neg().add_scalar(1.0);
            vec![Some(g.mul(&d))]
        }
        Op::Relu => vec![Some(g.mul(&p[0].mask(|x| if x > 0.0 { 1.0 } else { 0.0 })))],
        Op::Exp => vec![Some(g.mul(out))],
        Op::Log => vec![Some(g.div(&p[0]))],
        // subgradient 0 at the kink
        Op::Abs => vec![Some(g.mul(&p[0].mask(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })))],
        Op::Sqrt => {
            // d/dx sqrt(x) = 0.5 / sqrt(x); taken as 0 where the output is exactly 0
            let safe = out.add(&out.mask(|y| if y == 0.0 { 1.0 } else { 0.0 }));
            let zero_mask = out.mask(|y| if y == 0.0 { 0.0 } else { 1.0 });
            vec![Some(g.scale(0.5).div(&safe).mul(&zero_mask))]
        }
        Op::Sum => vec![Some(g.broadcast_scalar(p[0].shape()))],
        Op::BroadcastScalar(_) => vec![Some(g.sum().reshape(p[0].shape()))],
        Op::SumRows => vec![Some(g.broadcast_rows(p[0].rows()))],
        Op::BroadcastRows(_) => vec![Some(g.sum_rows())],
        Op::SumCols => vec![Some(g.broadcast_cols(p[0].cols()))],
        Op::BroadcastCols(_) => vec![Some(g.sum_cols())],
        Op::ConcatCols(widths) => {
            let mut start = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let s = start;
                    start += w;
                    need(i).then(|| g.slice_cols(s, s + w))
                })
                .collect()
        }
        Op::SliceCols { start, .. } => vec![Some(g.pad_cols(*start, p[0].cols()))],
        Op::PadCols { start, .. } => {
            let w = p[0].cols();
            vec![Some(g.slice_cols(*start, start + w))]
        }
        Op::Reshape => vec![Some(g.reshape(p[0].shape()))],
    }
}

/// Selects how the outer gradient flows through an inner update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HypergradMode {
    /// Exact differentiation through the inner gradient step.
    #[default]
    SecondOrder,
    /// Treats the updated parameters as the identity of the originals.
    FirstOrder,
}

/// Parameters before and after one or more plain gradient-descent steps.
#[derive(Clone, Debug)]
pub struct InnerUpdate {
    pub params: Vec<Tensor>,
    pub updated: Vec<Tensor>,
    second_order: bool,
}

impl InnerUpdate {
    pub fn is_second_order(&self) -> bool {
        self.second_order
    }
}

/// Runs `steps` updates `θ ← θ − lr·∇loss(θ)` starting from graph leaves `params`.
///
/// `loss_fn` is called with the current parameter list for every step. With
/// `create_graph` the updated parameters stay connected to `params` through
/// the gradient computation.
pub fn inner_sgd<F>(params: &[Tensor], lr: f64, steps: usize, create_graph: bool, mut loss_fn: F) -> Result<InnerUpdate>
where
    F: FnMut(&[Tensor]) -> Result<Tensor>,
{
    let mut current = params.to_vec();
    for _ in 0..steps {
        let loss = loss_fn(&current)?;
        let grads = grad(&loss, &current, create_graph)?;
        current = current
            .iter()
            .zip(&grads)
            .map(|(p, g)| {
                let g = if create_graph { g.clone() } else { g.detach() };
                p.sub(&g.scale(lr))
            })
            .collect();
    }
    Ok(InnerUpdate {
        params: params.to_vec(),
        updated: current,
        second_order: create_graph,
    })
}

/// Gradient of `outer_loss`, evaluated at the updated parameters, with respect
/// to the original parameters of `update`.
pub fn hypergrad(outer_loss: &Tensor, update: &InnerUpdate, mode: HypergradMode) -> Result<Vec<Tensor>> {
    match mode {
        HypergradMode::SecondOrder => {
            if !update.second_order {
                return Err(Error::MissingSecondOrderGraph);
            }
            grad(outer_loss, &update.params, false)
        }
        HypergradMode::FirstOrder => grad(outer_loss, &update.updated, false),
    }
}

impl Tensor {
    pub(crate) fn raw_from_rc(shape: Vec<usize>, value: std::rc::Rc<Vec<f64>>) -> Tensor {
        Tensor::from_input(&Input { id: None, shape, value }, None)
    }
}
