//! The tape.  Nodes are appended in evaluation order, so insertion order is
//! a topological order and the backward sweep is a single reverse pass.
//!
//! `grad` prunes by forward reachability from the `wrt` set: vector-Jacobian
//! products into subtrees that cannot reach any `wrt` tensor are never
//! computed.  Asking for an input gradient therefore does not pay for
//! parameter gradients, and vice versa.

use std::fmt::Write as _;
use std::sync::Arc;

use super::tensor::Tensor;
use super::{Result, TensorError};
use crate::real::Real;

/// Index of a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(super) usize);

/// Whether the backward pass records its own math.
///
/// With `Yes`, returned gradients are on the tape and differentiable again —
/// required when a gradient appears inside a loss.  With `No`, the sweep is
/// pure arithmetic and the results are detached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Retain {
    No,
    Yes,
}

#[derive(Clone, Debug)]
pub(super) enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    ScalarMul(T),
    Matmul,
    MatmulAT,
    MatmulBT,
    Transpose,
    Reshape,
    Sum,
    Relu,
    Log,
    Exp,
    Stack,
    Conv2d,
    Conv2dVjpInput,
    Conv2dVjpKernel,
    GatherFlat { idx: Arc<Vec<usize>> },
    ScatterAddFlat { idx: Arc<Vec<usize>> },
    BroadcastChannel,
    ChannelSum,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::ScalarMul(_) => "scalar_mul",
            Op::Matmul => "matmul",
            Op::MatmulAT => "matmul_at",
            Op::MatmulBT => "matmul_bt",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::Sum => "sum",
            Op::Relu => "relu",
            Op::Log => "log",
            Op::Exp => "exp",
            Op::Stack => "stack",
            Op::Conv2d => "conv2d",
            Op::Conv2dVjpInput => "conv2d_vjp_input",
            Op::Conv2dVjpKernel => "conv2d_vjp_kernel",
            Op::GatherFlat { .. } => "gather_flat",
            Op::ScatterAddFlat { .. } => "scatter_add_flat",
            Op::BroadcastChannel => "broadcast_channel",
            Op::ChannelSum => "channel_sum",
        }
    }
}

pub(super) struct Node<T: Real> {
    pub(super) op: Op<T>,
    pub(super) parents: Vec<NodeId>,
    pub(super) value: Tensor<T>,
}

pub struct Graph<T: Real> {
    pub(super) nodes: Vec<Node<T>>,
    recording: bool,
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
            recording: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Watches a tensor: the returned handle is a leaf on this graph and a
    /// valid `wrt` target.
    pub fn var(&mut self, t: &Tensor<T>) -> Tensor<T> {
        let value = t.detach();
        let id = self.push_node(Op::Leaf, Vec::new(), value.clone());
        value.with_node(id)
    }

    pub(super) fn push_node(&mut self, op: Op<T>, parents: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            parents,
            value: value.detach(),
        });
        id
    }

    /// Node id for a tensor, adding a constant leaf for detached inputs.
    pub(super) fn intern(&mut self, t: &Tensor<T>) -> NodeId {
        match t.node_id() {
            Some(id) => {
                debug_assert!(id.0 < self.nodes.len(), "tensor from foreign graph");
                id
            }
            None => self.push_node(Op::Leaf, Vec::new(), t.clone()),
        }
    }

    pub(super) fn value_view(&self, id: NodeId) -> Tensor<T> {
        self.nodes[id.0].value.with_node(id)
    }

    /// Shared gate for every op builder: validates finiteness, then records
    /// iff recording is enabled and the op touches the graph at all.
    pub(super) fn emit(
        &mut self,
        name: &'static str,
        op: Op<T>,
        parents: &[&Tensor<T>],
        value: Tensor<T>,
    ) -> Result<Tensor<T>> {
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite { op: name, index });
        }
        if self.recording && parents.iter().any(|p| p.node_id().is_some()) {
            let ids: Vec<NodeId> = parents.iter().map(|p| self.intern(p)).collect();
            let id = self.push_node(op, ids, value.clone());
            Ok(value.with_node(id))
        } else {
            Ok(value)
        }
    }

    /// d(output)/d(wrt) for a scalar output.
    ///
    /// `wrt` tensors must be on the graph; ones unreachable from `output` get
    /// zero gradients.  With [`Retain::Yes`] the results are differentiable.
    pub fn grad(
        &mut self,
        output: &Tensor<T>,
        wrt: &[&Tensor<T>],
        retain: Retain,
    ) -> Result<Vec<Tensor<T>>> {
        let out_id = output
            .node_id()
            .ok_or(TensorError::NotOnGraph { what: "output" })?;
        if !output.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: output.shape().to_vec(),
            });
        }
        let mut wrt_ids = Vec::with_capacity(wrt.len());
        for t in wrt {
            wrt_ids.push(
                t.node_id()
                    .ok_or(TensorError::NotOnGraph { what: "wrt tensor" })?,
            );
        }
        // Nodes appended by a retained sweep sit past this fence and are
        // never revisited within the sweep itself.
        let limit = out_id.0 + 1;
        let mut relevant = vec![false; limit];
        for id in &wrt_ids {
            if id.0 < limit {
                relevant[id.0] = true;
            }
        }
        for i in 0..limit {
            if !relevant[i] && self.nodes[i].parents.iter().any(|p| relevant[p.0]) {
                relevant[i] = true;
            }
        }

        let was_recording = self.recording;
        self.recording = matches!(retain, Retain::Yes);
        let swept = self.sweep(out_id, &wrt_ids, &relevant, limit, wrt);
        self.recording = was_recording;
        swept
    }

    fn sweep(
        &mut self,
        out_id: NodeId,
        wrt_ids: &[NodeId],
        relevant: &[bool],
        limit: usize,
        wrt: &[&Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; limit];
        if relevant[out_id.0] {
            pending[out_id.0] = Some(Tensor::ones(
                self.nodes[out_id.0].value.shape().to_vec(),
            ));
            for i in (0..limit).rev() {
                let Some(adj) = pending[i].clone() else {
                    continue;
                };
                let (op, parents) = {
                    let n = &self.nodes[i];
                    (n.op.clone(), n.parents.clone())
                };
                if parents.is_empty() {
                    continue;
                }
                let flow: Vec<bool> = parents.iter().map(|p| relevant[p.0]).collect();
                let contribs = self.vjp(NodeId(i), &op, &parents, &adj, &flow)?;
                debug_assert_eq!(contribs.len(), parents.len());
                for (k, contrib) in contribs.into_iter().enumerate() {
                    let Some(c) = contrib else { continue };
                    let slot = parents[k].0;
                    pending[slot] = Some(match pending[slot].take() {
                        Some(prev) => self.add(&prev, &c)?,
                        None => c,
                    });
                }
            }
        }
        let mut out = Vec::with_capacity(wrt_ids.len());
        for (id, t) in wrt_ids.iter().zip(wrt) {
            out.push(match pending.get(id.0).and_then(|s| s.clone()) {
                Some(g) => g,
                None => Tensor::zeros(t.shape().to_vec()),
            });
        }
        Ok(out)
    }

    /// Per-parent adjoint contributions for one node.  Entries are `None`
    /// where `flow` is false (parent pruned) — those are never computed.
    fn vjp(
        &mut self,
        id: NodeId,
        op: &Op<T>,
        parents: &[NodeId],
        u: &Tensor<T>,
        flow: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let pv = |k: usize| -> Tensor<T> { self.value_view(parents[k]) };
        Ok(match op {
            Op::Leaf => Vec::new(),
            Op::Add => {
                let a = flow[0].then(|| u.clone());
                let b = flow[1].then(|| u.clone());
                vec![a, b]
            }
            Op::Sub => {
                let a = flow[0].then(|| u.clone());
                let b = if flow[1] { Some(self.neg(u)?) } else { None };
                vec![a, b]
            }
            Op::Mul => {
                let (av, bv) = (pv(0), pv(1));
                let a = if flow[0] { Some(self.mul(u, &bv)?) } else { None };
                let b = if flow[1] { Some(self.mul(u, &av)?) } else { None };
                vec![a, b]
            }
            Op::Div => {
                let (bv, sv) = (pv(1), self.value_view(id));
                let a = if flow[0] { Some(self.div(u, &bv)?) } else { None };
                let b = if flow[1] {
                    let us = self.mul(u, &sv)?;
                    let q = self.div(&us, &bv)?;
                    Some(self.neg(&q)?)
                } else {
                    None
                };
                vec![a, b]
            }
            Op::Neg => vec![if flow[0] { Some(self.neg(u)?) } else { None }],
            Op::ScalarMul(c) => vec![if flow[0] {
                Some(self.scalar_mul(u, *c)?)
            } else {
                None
            }],
            Op::Matmul => {
                let (av, bv) = (pv(0), pv(1));
                let a = if flow[0] {
                    Some(self.matmul_bt(u, &bv)?)
                } else {
                    None
                };
                let b = if flow[1] {
                    Some(self.matmul_at(&av, u)?)
                } else {
                    None
                };
                vec![a, b]
            }
            Op::MatmulAT => {
                let (av, bv) = (pv(0), pv(1));
                let a = if flow[0] {
                    Some(self.matmul_bt(&bv, u)?)
                } else {
                    None
                };
                let b = if flow[1] {
                    Some(self.matmul(&av, u)?)
                } else {
                    None
                };
                vec![a, b]
            }
            Op::MatmulBT => {
                let (av, bv) = (pv(0), pv(1));
                let a = if flow[0] {
                    Some(self.matmul(u, &bv)?)
                } else {
                    None
                };
                let b = if flow[1] {
                    Some(self.matmul_at(u, &av)?)
                } else {
                    None
                };
                vec![a, b]
            }
            Op::Transpose => vec![if flow[0] {
                Some(self.transpose(u)?)
            } else {
                None
            }],
            Op::Reshape => {
                let shape = pv(0).shape().to_vec();
                vec![if flow[0] {
                    Some(self.reshape(u, shape)?)
                } else {
                    None
                }]
            }
            Op::Sum => {
                let shape = pv(0).shape().to_vec();
                vec![if flow[0] {
                    Some(self.broadcast_scalar(u, shape)?)
                } else {
                    None
                }]
            }
            Op::Relu => {
                // Subgradient 0 at 0: mask is strictly-positive support.
                let xv = pv(0);
                vec![if flow[0] {
                    let mask: Vec<T> = xv
                        .data()
                        .iter()
                        .map(|&x| if x > T::zero() { T::one() } else { T::zero() })
                        .collect();
                    let mask = Tensor::from_parts(xv.shape().to_vec(), mask);
                    Some(self.mul(u, &mask)?)
                } else {
                    None
                }]
            }
            Op::Log => {
                let xv = pv(0);
                vec![if flow[0] { Some(self.div(u, &xv)?) } else { None }]
            }
            Op::Exp => {
                let sv = self.value_view(id);
                vec![if flow[0] { Some(self.mul(u, &sv)?) } else { None }]
            }
            Op::Stack => {
                let mut out = Vec::with_capacity(parents.len());
                let mut offset = 0usize;
                for (k, p) in parents.iter().enumerate() {
                    let pshape = self.nodes[p.0].value.shape().to_vec();
                    let n: usize = pshape.iter().product();
                    if flow[k] {
                        let idx: Vec<usize> = (offset..offset + n).collect();
                        out.push(Some(self.gather_flat(u, idx, pshape)?));
                    } else {
                        out.push(None);
                    }
                    offset += n;
                }
                out
            }
            Op::Conv2d => {
                let (xv, kv) = (pv(0), pv(1));
                let a = if flow[0] {
                    Some(self.conv2d_vjp_input(u, &kv)?)
                } else {
                    None
                };
                let b = if flow[1] {
                    Some(self.conv2d_vjp_kernel(u, &xv)?)
                } else {
                    None
                };
                vec![a, b]
            }
            Op::Conv2dVjpInput => {
                let (uv, kv) = (pv(0), pv(1));
                let a = if flow[0] {
                    Some(self.conv2d(u, &kv)?)
                } else {
                    None
                };
                let b = if flow[1] {
                    Some(self.conv2d_vjp_kernel(&uv, u)?)
                } else {
                    None
                };
                vec![a, b]
            }
            Op::Conv2dVjpKernel => {
                let (uv, xv) = (pv(0), pv(1));
                let a = if flow[0] {
                    Some(self.conv2d(&xv, u)?)
                } else {
                    None
                };
                let b = if flow[1] {
                    Some(self.conv2d_vjp_input(&uv, u)?)
                } else {
                    None
                };
                vec![a, b]
            }
            Op::GatherFlat { idx } => {
                let pshape = pv(0).shape().to_vec();
                vec![if flow[0] {
                    Some(self.scatter_add_flat(u, idx.as_ref().clone(), pshape)?)
                } else {
                    None
                }]
            }
            Op::ScatterAddFlat { idx } => {
                let pshape = pv(0).shape().to_vec();
                vec![if flow[0] {
                    Some(self.gather_flat(u, idx.as_ref().clone(), pshape)?)
                } else {
                    None
                }]
            }
            Op::BroadcastChannel => {
                vec![if flow[0] {
                    Some(self.channel_sum(u)?)
                } else {
                    None
                }]
            }
            Op::ChannelSum => {
                let pshape = pv(0).shape().to_vec();
                let (b, h, w) = (pshape[0], pshape[2], pshape[3]);
                vec![if flow[0] {
                    Some(self.broadcast_channel(u, b, h, w)?)
                } else {
                    None
                }]
            }
        })
    }

    /// Human-readable tape listing: one line per node.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let parents: Vec<usize> = n.parents.iter().map(|p| p.0).collect();
            let _ = writeln!(
                s,
                "n{:<5} {:<18} parents={:?} shape={:?}",
                i,
                n.op.name(),
                parents,
                n.value.shape()
            );
        }
        s
    }
}
