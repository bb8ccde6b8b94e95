use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops;
use super::{Real, Result, Tensor, TensorError};

/// Stable identifier of a trainable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grad<T> {
    pub param: ParamId,
    pub value: Tensor<T>,
}

/// Gradients for every trainable parameter reached by a backward pass,
/// ordered by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Grad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, param: ParamId) -> Option<&Tensor<T>> {
        self.grads.iter().find(|g| g.param == param).map(|g| &g.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Grad<T>> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        kernels: usize,
        stride: usize,
        pad: usize,
    },
    Relu(usize),
    GlobalAvgPool(usize),
    Linear {
        input: usize,
        weights: usize,
        bias: usize,
    },
    /// Gradient on the logits is computed during the forward pass.
    SoftmaxCrossEntropy {
        logits: usize,
        grad: Tensor<T>,
    },
    SquaredError {
        pred: usize,
        grad: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(0);

/// A forward-pass recording supporting one reverse sweep.
///
/// Only the operations the toy network uses are available. Nodes that do not
/// depend on a trainable parameter never receive a gradient.
pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn node(&self, var: Var) -> Result<usize> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(TensorError::MissingForward(format!(
                "variable {} was not recorded on this graph",
                var.index
            )));
        }
        Ok(var.index)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.node(var)?].value)
    }

    /// Registers a trainable parameter.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, Some(id))
    }

    /// Registers a detached input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, pad: usize) -> Result<Var> {
        let (i, k) = (self.node(input)?, self.node(kernels)?);
        let value = ops::conv2d_forward(&self.nodes[i].value, &self.nodes[k].value, stride, pad)?;
        let rg = self.nodes[i].requires_grad || self.nodes[k].requires_grad;
        Ok(self.push(
            value,
            Op::Conv2d {
                input: i,
                kernels: k,
                stride,
                pad,
            },
            rg,
            None,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let i = self.node(input)?;
        let value = ops::relu(&self.nodes[i].value);
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(value, Op::Relu(i), rg, None))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let i = self.node(input)?;
        let value = ops::global_avg_pool(&self.nodes[i].value)?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(value, Op::GlobalAvgPool(i), rg, None))
    }

    pub fn linear(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (i, w, b) = (self.node(input)?, self.node(weights)?, self.node(bias)?);
        let value = ops::linear(&self.nodes[i].value, &self.nodes[w].value, &self.nodes[b].value)?;
        let rg = [i, w, b].iter().any(|&n| self.nodes[n].requires_grad);
        Ok(self.push(
            value,
            Op::Linear {
                input: i,
                weights: w,
                bias: b,
            },
            rg,
            None,
        ))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.node(logits)?;
        let (loss, grad) = ops::softmax_cross_entropy(&self.nodes[l].value, labels)?;
        let rg = self.nodes[l].requires_grad;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits: l, grad },
            rg,
            None,
        ))
    }

    pub fn squared_error(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.node(pred)?;
        let (loss, grad) = ops::squared_error(&self.nodes[p].value, target)?;
        let rg = self.nodes[p].requires_grad;
        Ok(self.push(Tensor::scalar(loss), Op::SquaredError { pred: p, grad }, rg, None))
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.node(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(TensorError::Dimension {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.nodes[root].value.shape()),
            });
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        adj[root] = Some(Tensor::full(self.nodes[root].value.shape(), T::one()));
        let mut params = BTreeMap::new();

        for idx in (0..=root).rev() {
            let Some(upstream) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let wants = |n: usize| self.nodes[n].requires_grad;
            match &node.op {
                Op::Leaf => {
                    if let Some(id) = node.param {
                        params.insert(id, upstream);
                    }
                }
                Op::Conv2d {
                    input,
                    kernels,
                    stride,
                    pad,
                } => {
                    let (gi, gk) = ops::conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*kernels].value,
                        &upstream,
                        *stride,
                        *pad,
                        wants(*input),
                    )?;
                    if let Some(gi) = gi {
                        accumulate(&mut adj, *input, gi);
                    }
                    if wants(*kernels) {
                        accumulate(&mut adj, *kernels, gk);
                    }
                }
                Op::Relu(input) => {
                    let g = ops::relu_backward(&self.nodes[*input].value, &upstream)?;
                    accumulate(&mut adj, *input, g);
                }
                Op::GlobalAvgPool(input) => {
                    let g = ops::global_avg_pool_backward(self.nodes[*input].value.shape(), &upstream)?;
                    accumulate(&mut adj, *input, g);
                }
                Op::Linear { input, weights, bias } => {
                    let (gx, gw, gb) =
                        ops::linear_backward(&self.nodes[*input].value, &self.nodes[*weights].value, &upstream)?;
                    for (n, g) in [(*input, gx), (*weights, gw), (*bias, gb)] {
                        if wants(n) {
                            accumulate(&mut adj, n, g);
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { logits, grad } | Op::SquaredError { pred: logits, grad } => {
                    let scale = upstream.data()[0];
                    accumulate(&mut adj, *logits, grad.map(|g| g * scale));
                }
            }
        }

        let grads = params.into_iter().map(|(param, value)| Grad { param, value }).collect();
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(adj: &mut [Option<Tensor<T>>], idx: usize, g: Tensor<T>) {
    match &mut adj[idx] {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detached_inputs_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.param(ParamId(0), Tensor::from_vec(&[2, 1], vec![0.5, -0.5]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.linear(x, w, b).unwrap();
        let loss = g.squared_error(y, &Tensor::zeros(&[1, 1])).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.len(), 1);
        assert!(grads.get(ParamId(0)).is_some());
        assert!(grads.get(ParamId(1)).is_none());
    }

    #[test]
    fn foreign_variable_is_missing_forward() {
        let mut a = Graph::<f64>::new();
        let b = Graph::<f64>::new();
        let v = a.constant(Tensor::scalar(1.0));
        assert!(matches!(b.backward(v), Err(TensorError::MissingForward(_))));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let v = g.param(ParamId(0), Tensor::zeros(&[2]));
        assert!(matches!(g.backward(v), Err(TensorError::Dimension { .. })));
    }
}
