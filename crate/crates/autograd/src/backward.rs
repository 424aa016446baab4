use crate::error::{AutogradError, Result};
use crate::graph::Graph;
use crate::tensor::{NodeRef, Tensor};

/// Gradients of scalar `output` with respect to each tensor in `wrt`.
///
/// With `create_graph` the returned gradients are recorded on the same graph
/// and can themselves be differentiated. Every `wrt` tensor must be reachable.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    sweep(output, wrt, create_graph)?
        .into_iter()
        .enumerate()
        .map(|(index, g)| g.ok_or(AutogradError::Unreachable { index }))
        .collect()
}

/// Like [`grad`], but unreachable targets get a zero gradient.
pub fn grad_allow_unused(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    Ok(sweep(output, wrt, create_graph)?
        .into_iter()
        .zip(wrt)
        .map(|(g, t)| g.unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn sweep(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Option<Tensor>>> {
    if output.numel() != 1 {
        return Err(AutogradError::NonScalarOutput { shape: output.shape().to_vec() });
    }
    for (index, t) in wrt.iter().enumerate() {
        if !t.requires_grad() {
            return Err(AutogradError::NotDifferentiable { index });
        }
    }
    let Some(out_ref) = &output.node else {
        return Ok(vec![None; wrt.len()]);
    };
    let graph: &Graph = &out_ref.graph;
    if out_ref.generation != graph.generation() {
        return Err(AutogradError::GraphMismatch { op: "backward" });
    }
    for t in wrt {
        let n = t.node.as_ref().expect("checked above");
        if !n.graph.same(graph) || n.generation != graph.generation() {
            return Err(AutogradError::GraphMismatch { op: "backward" });
        }
    }

    let last = out_ref.id;
    // Nodes on some path from a target to the output.
    let mut needed = vec![false; last + 1];
    for t in wrt {
        let id = t.node_id().unwrap();
        if id <= last {
            needed[id] = true;
        }
    }
    {
        let nodes = graph.inner.nodes.borrow();
        for id in 0..=last {
            if !needed[id] && nodes[id].inputs.iter().any(|i| i.node.is_some_and(|n| needed[n])) {
                needed[id] = true;
            }
        }
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; last + 1];
    grads[last] = Some(Tensor::full(output.shape(), 1.0));
    let generation = graph.generation();
    let handle = |id: usize, value| Tensor {
        value,
        node: if create_graph { Some(NodeRef { graph: graph.clone(), id, generation }) } else { None },
    };

    for id in (0..=last).rev() {
        if !needed[id] {
            continue;
        }
        let Some(g) = grads[id].clone() else { continue };
        let node = graph.node(id);
        if node.inputs.is_empty() {
            continue;
        }
        let needs: Vec<bool> = node.inputs.iter().map(|i| i.node.is_some_and(|n| needed[n])).collect();
        if !needs.iter().any(|&b| b) {
            continue;
        }
        let xs: Vec<Tensor> = node
            .inputs
            .iter()
            .map(|i| match i.node {
                Some(n) => handle(n, i.value.clone()),
                None => Tensor { value: i.value.clone(), node: None },
            })
            .collect();
        let out = handle(id, node.out.clone());
        let g = if create_graph { g } else { g.detach() };
        let input_grads = node.op.backward(&xs, &out, &g, &needs)?;
        for ((input, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
            let (Some(n), true, Some(ig)) = (input.node, *need, ig) else { continue };
            grads[n] = Some(match grads[n].take() {
                Some(acc) => acc.add(&ig)?,
                None => ig,
            });
        }
    }

    Ok(wrt
        .iter()
        .map(|t| {
            let id = t.node_id().unwrap();
            if id <= last {
                grads[id].clone()
            } else {
                None
            }
        })
        .collect())
}
