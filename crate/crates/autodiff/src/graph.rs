use crate::kernels;
use crate::{AdError, AdResult, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Recorded operation. Leaves hold externally supplied values (parameters,
/// data, noise); everything else is recomputable from its inputs, so the tape
/// can be replayed after leaf edits.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// inputs: `[x(n_in), w(n_out x n_in), b(n_out)]`
    Dense,
    /// inputs: `[x(c_in x t), k(c_out x c_in x k), b(c_out)]`, stride 1
    Conv1d { dilation: usize, padding: usize },
    /// inputs: `[x(c_in x h x w), k(c_out x c_in x k x k), b(c_out)]`
    Conv2d { stride: usize, padding: usize },
    Relu,
    Sigmoid,
    /// Softmax over the final axis.
    Softmax,
    /// 1-D logits -> scalar `-log softmax(logits)[target]`.
    SoftmaxCrossEntropy { target: usize },
    /// inputs: `[mu, log_var, eps]`; `mu + exp(log_var/2) * eps`
    Reparameterize,
    /// inputs: `[logits, gumbel_noise]`; `softmax((logits + noise) / temperature)`
    GumbelSoftmax { temperature: f64 },
    /// inputs: `[mu, log_var]` -> scalar KL against a standard normal
    KlGaussianStd,
    /// inputs: `[logits]` -> scalar KL of softmax(logits) against uniform
    KlCategoricalUniform,
    /// scalar mean of stable binary cross-entropy on logits vs constant target
    BceWithLogits { target_one: bool },
    /// 1-D concatenation of all inputs
    Concat,
    /// 1-D contiguous slice
    Slice { start: usize, len: usize },
    /// vector `[d]` -> `[(d+1) x steps]`: rows tiled, last row is (i+1)/steps
    TileWithTime { steps: usize },
    /// `[c x t]` -> `[c]` mean over the final axis
    MeanPoolLast,
    Reshape { shape: Vec<usize> },
    Add,
    Sub,
    Mul,
    Scale { factor: f64 },
    MeanAll,
    SumAll,
    /// Pass-through clamp; gradient is zero outside the open interval.
    Clamp { lo: f64, hi: f64 },
}

pub(crate) struct Node<T> {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub needs_grad: bool,
}

/// Define-by-run tape. Construction is single-threaded; independent graphs
/// may run concurrently.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    swept: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            swept: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, id: NodeId) -> AdResult<&Node<T>> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| AdError::Tape(format!("unknown node id {}", id.0)))
    }

    /// Insert a leaf. Values entering the graph must be finite.
    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> AdResult<NodeId> {
        if !value.all_finite() {
            return Err(AdError::NonFinite("leaf value contains NaN/Inf".into()));
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            grad: None,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert a parameter leaf (tracked for gradients).
    pub fn param(&mut self, value: Tensor<T>) -> AdResult<NodeId> {
        self.leaf(value, true)
    }

    /// Insert a data/noise leaf (no gradient requested).
    pub fn input(&mut self, value: Tensor<T>) -> AdResult<NodeId> {
        self.leaf(value, false)
    }

    /// Record `op(inputs)`, evaluating it eagerly.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> AdResult<NodeId> {
        let mut needs_grad = false;
        let mut vals = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let n = self.node(id)?;
            needs_grad |= n.needs_grad;
            vals.push(&n.value);
        }
        let value = kernels::eval(&op, &vals)?;
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            value,
            grad: None,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> AdResult<&Tensor<T>> {
        Ok(&self.node(id)?.value)
    }

    /// Scalar value of a node, rejecting non-finite results (graph boundary).
    pub fn scalar(&self, id: NodeId) -> AdResult<T> {
        let v = self.node(id)?.value.item()?;
        if !v.is_finite() {
            return Err(AdError::NonFinite(format!(
                "node {} produced a non-finite scalar",
                id.0
            )));
        }
        Ok(v)
    }

    /// Gradient accumulated on `id` by the last backward sweep. Leaves that a
    /// sweep never reached report zeros.
    pub fn grad(&self, id: NodeId) -> AdResult<&Tensor<T>> {
        let n = self.node(id)?;
        if !self.swept {
            return Err(AdError::Tape("no backward sweep has run".into()));
        }
        n.grad.as_ref().ok_or_else(|| {
            AdError::Tape(format!("node {} does not track gradients", id.0))
        })
    }

    /// Overwrite a leaf's value (shape-preserving). Invalidates gradients:
    /// call [`Graph::replay_forward`] before the next backward.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor<T>) -> AdResult<()> {
        let n = self
            .nodes
            .get_mut(id.0)
            .ok_or_else(|| AdError::Tape(format!("unknown node id {}", id.0)))?;
        if !matches!(n.op, Op::Leaf) {
            return Err(AdError::Tape(format!("node {} is not a leaf", id.0)));
        }
        if n.value.shape() != value.shape() {
            return Err(AdError::Config(format!(
                "leaf shape {:?} cannot be replaced by {:?}",
                n.value.shape(),
                value.shape()
            )));
        }
        if !value.all_finite() {
            return Err(AdError::NonFinite("leaf value contains NaN/Inf".into()));
        }
        n.value = value;
        Ok(())
    }

    /// Recompute every non-leaf value in recorded order and clear gradients.
    pub fn replay_forward(&mut self) -> AdResult<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let mut vals = Vec::with_capacity(node.inputs.len());
            for &id in &node.inputs {
                vals.push(&done[id.0].value);
            }
            node.value = kernels::eval(&node.op, &vals)?;
        }
        self.reset_grads();
        Ok(())
    }

    /// Zero out gradient state so another backward sweep may run.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.swept = false;
    }

    /// Reverse sweep from a scalar root. Visits nodes in strict
    /// anti-topological order (the recording order reversed); each node is
    /// processed exactly once. A second call without [`Graph::reset_grads`]
    /// is an error so silent accumulation bugs surface early.
    pub fn backward(&mut self, root: NodeId) -> AdResult<()> {
        if self.swept {
            return Err(AdError::Tape(
                "backward called twice without reset_grads".into(),
            ));
        }
        let root_needs = {
            let root_node = self.node(root)?;
            if root_node.value.len() != 1 {
                return Err(AdError::Tape(format!(
                    "backward root must be scalar, got shape {:?}",
                    root_node.value.shape()
                )));
            }
            if !root_node.value.item()?.is_finite() {
                return Err(AdError::NonFinite("backward from non-finite loss".into()));
            }
            root_node.needs_grad
        };
        self.swept = true;

        if root_needs {
            self.nodes[root.0].grad = Some(Tensor::scalar(T::one()));
            for i in (0..=root.0).rev() {
                if self.nodes[i].grad.is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                    continue;
                }
                let (prev, rest) = self.nodes.split_at_mut(i);
                let node = &rest[0];
                let out_grad = node.grad.as_ref().expect("checked above");
                let input_vals: Vec<&Tensor<T>> =
                    node.inputs.iter().map(|id| &prev[id.0].value).collect();
                let input_needs: Vec<bool> =
                    node.inputs.iter().map(|id| prev[id.0].needs_grad).collect();
                let contributions =
                    kernels::backprop(&node.op, &input_vals, &node.value, out_grad, &input_needs)?;
                for (slot, contrib) in node.inputs.iter().zip(contributions) {
                    if let Some(c) = contrib {
                        let target = &mut prev[slot.0];
                        match &mut target.grad {
                            Some(g) => g.add_assign(&c)?,
                            None => target.grad = Some(c),
                        }
                    }
                }
            }
        }

        // Leaves are zero-initialized if the sweep never reached them.
        for n in &mut self.nodes {
            if n.needs_grad && n.grad.is_none() {
                n.grad = Some(Tensor::zeros(n.value.shape().to_vec()));
            }
        }
        Ok(())
    }

    // Convenience builders -------------------------------------------------

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Dense, &[x, w, b])
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        k: NodeId,
        b: NodeId,
        dilation: usize,
        padding: usize,
    ) -> AdResult<NodeId> {
        self.apply(Op::Conv1d { dilation, padding }, &[x, k, b])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        k: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    ) -> AdResult<NodeId> {
        self.apply(Op::Conv2d { stride, padding }, &[x, k, b])
    }

    pub fn relu(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> AdResult<NodeId> {
        self.apply(Op::SoftmaxCrossEntropy { target }, &[logits])
    }

    pub fn reparameterize(&mut self, mu: NodeId, log_var: NodeId, eps: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Reparameterize, &[mu, log_var, eps])
    }

    pub fn gumbel_softmax(
        &mut self,
        logits: NodeId,
        noise: NodeId,
        temperature: f64,
    ) -> AdResult<NodeId> {
        self.apply(Op::GumbelSoftmax { temperature }, &[logits, noise])
    }

    pub fn kl_gaussian_std(&mut self, mu: NodeId, log_var: NodeId) -> AdResult<NodeId> {
        self.apply(Op::KlGaussianStd, &[mu, log_var])
    }

    pub fn kl_categorical_uniform(&mut self, logits: NodeId) -> AdResult<NodeId> {
        self.apply(Op::KlCategoricalUniform, &[logits])
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, target_one: bool) -> AdResult<NodeId> {
        self.apply(Op::BceWithLogits { target_one }, &[logits])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> AdResult<NodeId> {
        self.apply(Op::Concat, parts)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> AdResult<NodeId> {
        self.apply(Op::Slice { start, len }, &[x])
    }

    pub fn tile_with_time(&mut self, x: NodeId, steps: usize) -> AdResult<NodeId> {
        self.apply(Op::TileWithTime { steps }, &[x])
    }

    pub fn mean_pool_last(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.apply(Op::MeanPoolLast, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> AdResult<NodeId> {
        self.apply(Op::Reshape { shape }, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> AdResult<NodeId> {
        self.apply(Op::Scale { factor }, &[x])
    }

    pub fn mean_all(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.apply(Op::MeanAll, &[x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.apply(Op::SumAll, &[x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> AdResult<NodeId> {
        self.apply(Op::Clamp { lo, hi }, &[x])
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    /// Sum of a list of scalar nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> AdResult<NodeId> {
        let mut iter = terms.iter();
        let first = *iter
            .next()
            .ok_or_else(|| AdError::Tape("add_all on empty list".into()))?;
        let mut acc = first;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t32(shape: Vec<usize>, v: &[f32]) -> Tensor<f32> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_nonfinite_leaf() {
        let mut g = Graph::<f32>::new();
        assert!(matches!(
            g.input(t32(vec![2], &[1.0, f32::NAN])),
            Err(AdError::NonFinite(_))
        ));
    }

    #[test]
    fn double_backward_is_rejected_until_reset() {
        let mut g = Graph::<f32>::new();
        let x = g.param(t32(vec![2], &[1.0, 2.0])).unwrap();
        let s = g.sum_all(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(AdError::Tape(_))));
        g.reset_grads();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn unreached_leaves_report_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let used = g.param(t32(vec![2], &[1.0, 2.0])).unwrap();
        let unused = g.param(t32(vec![3], &[5.0, 6.0, 7.0])).unwrap();
        let s = g.sum_all(used).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut g = Graph::<f32>::new();
        let p = g.param(t32(vec![2], &[1.0, 2.0])).unwrap();
        let c = g.input(t32(vec![1], &[3.0])).unwrap();
        let loss = g.mean_all(c).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn replay_after_leaf_edit_recomputes_values() {
        let mut g = Graph::<f32>::new();
        let x = g.param(t32(vec![2], &[1.0, 2.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        assert_eq!(g.scalar(s).unwrap(), 5.0);
        g.set_leaf(x, t32(vec![2], &[3.0, 4.0])).unwrap();
        g.replay_forward().unwrap();
        assert_eq!(g.scalar(s).unwrap(), 25.0);
    }

    #[test]
    fn shared_node_accumulates_gradient() {
        // loss = sum(x * x): grad = 2x via two contributions to the same node
        let mut g = Graph::<f32>::new();
        let x = g.param(t32(vec![3], &[1.0, -2.0, 3.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }
}
