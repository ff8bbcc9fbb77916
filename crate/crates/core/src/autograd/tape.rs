use crate::error::{Error, Result};
use crate::tensor::{self, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A per-sample gradient scale that is bound after the forward pass and
/// read only by backward rules. Differentiation treats it as a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotId(pub(crate) usize);

/// Recorded operation. Backward rules read input values straight from the
/// tape; the comment on each variant lists which ones.
#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    /// reads a, b
    MatMul(NodeId, NodeId),
    /// `y = x·Wᵀ + b`; reads x, W. A bound slot pre-scales the parameter
    /// gradients per sample (InvFusedProp).
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        param_scale: Option<SlotId>,
    },
    /// reads nothing
    Add(NodeId, NodeId),
    /// reads nothing
    Sub(NodeId, NodeId),
    /// reads a, b
    Mul(NodeId, NodeId),
    /// reads nothing
    Scale(NodeId, T),
    /// reads nothing
    AddScalar(NodeId, T),
    /// reads nothing
    Neg(NodeId),
    /// reads a
    Square(NodeId),
    /// reads a
    Softplus(NodeId),
    /// reads a
    Relu(NodeId),
    /// reads a
    LeakyRelu(NodeId, T),
    /// reads output
    Tanh(NodeId),
    /// reads nothing
    Sum(NodeId),
    /// reads nothing
    Mean(NodeId),
    /// reads nothing
    ConcatRows(Vec<NodeId>),
    /// reads nothing
    SliceRows {
        src: NodeId,
        start: usize,
    },
    /// reads nothing
    GradReversal(NodeId, T),
    /// reads the bound slot
    SampleScale(NodeId, SlotId),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Linear { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Scale(a, _)
            | AddScalar(a, _)
            | Neg(a)
            | Square(a)
            | Softplus(a)
            | Relu(a)
            | LeakyRelu(a, _)
            | Tanh(a)
            | Sum(a)
            | Mean(a)
            | GradReversal(a, _)
            | SampleScale(a, _) => vec![*a],
            ConcatRows(parts) => parts.clone(),
            SliceRows { src, .. } => vec![*src],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone)]
struct Slot<T> {
    extent: Option<usize>,
    value: Option<Vec<T>>,
}

/// Gradients produced by one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct GradStore<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradStore<T> {
    /// `None` when the node is not on any path from the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// Gradient for `id`, or zeros shaped like `like` when no path exists.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor<T>) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.dims()))
    }
}

/// Append-only record of one forward pass. Inputs of every node are
/// strictly earlier nodes, so the node order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    slots: Vec<Slot<T>>,
    consumed: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            slots: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.push_with(op, value, requires_grad)
    }

    fn push_with(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push_with(Op::Leaf, value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_with(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// Affine map `x·Wᵀ + b` for `x: [B×in]`, `W: [out×in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        self.linear_scaled(x, w, b, None)
    }

    /// Affine map whose parameter gradients are pre-scaled per sample by
    /// the slot values; the input gradient stays unscaled.
    pub fn linear_scaled(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        param_scale: Option<SlotId>,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        match (xv.dims(), wv.dims()) {
            ([_, i], [_, j]) if i == j => {}
            (xd, wd) => {
                return Err(Error::dim(format!(
                    "linear expects x [B×in] and W [out×in], got {xd:?} and {wd:?}"
                )))
            }
        }
        let mut y = tensor::matmul_nt(xv, wv)?;
        if let Some(b) = b {
            y = tensor::add_bias(&y, self.value(b))?;
        }
        if let Some(slot) = param_scale {
            let rows = self.value(x).rows();
            self.claim_slot_extent(slot, rows)?;
        }
        Ok(self.push(
            Op::Linear {
                x,
                w,
                b,
                param_scale,
            },
            y,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Multiplication by a differentiation-constant scalar.
    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = tensor::scale(self.value(a), s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let v = tensor::map(self.value(a), |x| x + s);
        self.push(Op::AddScalar(a, s), v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = tensor::map(self.value(a), |x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = tensor::map(self.value(a), |x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = tensor::softplus(self.value(a));
        self.push(Op::Softplus(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = tensor::relu(self.value(a));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        let v = tensor::map(self.value(a), |x| if x > T::zero() { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = tensor::map(self.value(a), |x| x.tanh());
        self.push(Op::Tanh(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(tensor::sum(self.value(a)));
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(tensor::mean(self.value(a)));
        self.push(Op::Mean(a), v)
    }

    /// Stacks tensors along the leading (batch) extent.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows needs at least one input"))?;
        let tail = self.value(*first).dims()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() == 0 || v.dims()[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat_rows extents differ: {:?} vs [_, {tail:?}]",
                    v.dims()
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let mut dims = vec![rows];
        dims.extend(tail);
        let v = Tensor::from_parts(dims, data);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    /// Rows `start..start + len` of `src`.
    pub fn slice_rows(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(src);
        if v.rank() == 0 || len == 0 || start + len > v.rows() {
            return Err(Error::dim(format!(
                "row slice {start}..{} out of range for extents {:?}",
                start + len,
                v.dims()
            )));
        }
        let w = v.row_len();
        let mut dims = v.dims().to_vec();
        dims[0] = len;
        let out = Tensor::from_parts(dims, v.data()[start * w..(start + len) * w].to_vec());
        Ok(self.push(Op::SliceRows { src, start }, out))
    }

    /// Gradient reversal: identity forward, backward multiplies the incoming
    /// gradient by the constant `lambda_bar`.
    pub fn grad_reversal(&mut self, x: NodeId, lambda_bar: T) -> NodeId {
        let v = self.value(x).clone();
        self.push(Op::GradReversal(x, lambda_bar), v)
    }

    /// Allocates a per-sample scale slot to be bound before backward.
    pub fn scale_slot(&mut self) -> SlotId {
        self.slots.push(Slot {
            extent: None,
            value: None,
        });
        SlotId(self.slots.len() - 1)
    }

    fn claim_slot_extent(&mut self, slot: SlotId, rows: usize) -> Result<()> {
        let s = self
            .slots
            .get_mut(slot.0)
            .ok_or_else(|| Error::Contract(format!("unknown scale slot {}", slot.0)))?;
        match s.extent {
            Some(e) if e != rows => Err(Error::dim(format!(
                "scale slot {} serves batch extent {e}, used with {rows}",
                slot.0
            ))),
            _ => {
                s.extent = Some(rows);
                Ok(())
            }
        }
    }

    /// FusedProp boundary: identity forward; backward scales sample `b`'s
    /// incoming gradient by the slot's `b`-th value.
    pub fn fusedprop_boundary(&mut self, gz: NodeId, slot: SlotId) -> Result<NodeId> {
        let rows = self.value(gz).rows();
        if self.value(gz).rank() == 0 {
            return Err(Error::dim("fusedprop boundary needs a batched input"));
        }
        self.claim_slot_extent(slot, rows)?;
        let v = self.value(gz).clone();
        Ok(self.push(Op::SampleScale(gz, slot), v))
    }

    /// Binds per-sample factors to a slot. Factors are checked for extent
    /// and finiteness here so the failing sample is named early.
    pub fn bind_scale(&mut self, slot: SlotId, factors: &Tensor<T>) -> Result<()> {
        let s = self
            .slots
            .get_mut(slot.0)
            .ok_or_else(|| Error::Contract(format!("unknown scale slot {}", slot.0)))?;
        if factors.rank() != 1 {
            return Err(Error::dim(format!(
                "scale factors must be a vector, got {:?}",
                factors.dims()
            )));
        }
        if let Some(e) = s.extent {
            if e != factors.len() {
                return Err(Error::dim(format!(
                    "scale factors have extent {}, batch extent is {e}",
                    factors.len()
                )));
            }
        }
        if let Some(index) = factors.first_non_finite() {
            return Err(Error::NonFinite {
                what: "per-sample gradient scale",
                index,
            });
        }
        s.value = Some(factors.data().to_vec());
        Ok(())
    }

    /// Smallest `|input|` over all relu-family nodes, i.e. the distance of
    /// the recorded forward pass from the nearest kink.
    pub fn kink_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => Some(
                    self.value(a)
                        .data()
                        .iter()
                        .fold(T::infinity(), |m, v| m.min(v.abs())),
                ),
                _ => None,
            })
            .fold(None, |acc: Option<T>, m| Some(acc.map_or(m, |a| a.min(m))))
    }

    fn slot_values(&self, slot: SlotId) -> Result<&[T]> {
        self.slots
            .get(slot.0)
            .and_then(|s| s.value.as_deref())
            .ok_or(Error::UnboundSlot(slot.0))
    }

    /// Reverse sweep from a scalar root. Consumes the tape: a second call
    /// fails with [`Error::TapeReused`]. Values stay readable afterwards.
    pub fn backward(&mut self, root: NodeId) -> Result<GradStore<T>> {
        if self.consumed {
            return Err(Error::TapeReused);
        }
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got extents {:?}",
                rv.dims()
            )));
        }
        let seed = Tensor::from_parts(rv.dims().to_vec(), vec![T::one()]);
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (input, contrib) in self.input_grads(&node.op, &node.value, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Ok(GradStore { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn input_grads(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
    ) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let mut res = Vec::with_capacity(3);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, tensor::matmul_nt(g, self.value(*b))?));
                }
                if self.wants(*b) {
                    res.push((*b, tensor::matmul_tn(self.value(*a), g)?));
                }
            }
            Op::Linear {
                x,
                w,
                b,
                param_scale,
            } => {
                let scale = match param_scale {
                    Some(s) => Some(self.slot_values(*s)?),
                    None => None,
                };
                let want_b = b.is_some_and(|b| self.wants(b));
                let lg = linear_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    scale,
                    LinearGrads {
                        input: self.wants(*x),
                        weight: self.wants(*w),
                        bias: want_b,
                    },
                )?;
                if let Some(gx) = lg.0 {
                    res.push((*x, gx));
                }
                if let Some(gw) = lg.1 {
                    res.push((*w, gw));
                }
                if let (Some(b), Some(gb)) = (b, lg.2) {
                    res.push((*b, gb));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    res.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    res.push((*b, tensor::map(g, |v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, tensor::mul(g, self.value(*b))?));
                }
                if self.wants(*b) {
                    res.push((*b, tensor::mul(g, self.value(*a))?));
                }
            }
            Op::Scale(a, s) | Op::GradReversal(a, s) => {
                res.push((*a, tensor::scale(g, *s)));
            }
            Op::AddScalar(a, _) => res.push((*a, g.clone())),
            Op::Neg(a) => res.push((*a, tensor::map(g, |v| -v))),
            Op::Square(a) => {
                let two = T::of(2.0);
                res.push((
                    *a,
                    tensor::zip_map(g, self.value(*a), |gv, x| two * x * gv)?,
                ));
            }
            Op::Softplus(a) => {
                res.push((
                    *a,
                    tensor::zip_map(g, self.value(*a), |gv, x| gv * tensor::sigmoid_scalar(x))?,
                ));
            }
            Op::Relu(a) => {
                // subgradient 0 at the kink, matching H(0) = 0
                res.push((
                    *a,
                    tensor::zip_map(g, self.value(*a), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    })?,
                ));
            }
            Op::LeakyRelu(a, slope) => {
                res.push((
                    *a,
                    tensor::zip_map(g, self.value(*a), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else {
                            *slope * gv
                        }
                    })?,
                ));
            }
            Op::Tanh(a) => {
                res.push((
                    *a,
                    tensor::zip_map(g, out, |gv, y| gv * (T::one() - y * y))?,
                ));
            }
            Op::Sum(a) => {
                let v = self.value(*a);
                res.push((*a, Tensor::full(v.dims(), g.data()[0])));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let s = g.data()[0] / T::of(v.len() as f64);
                res.push((*a, Tensor::full(v.dims(), s)));
            }
            Op::ConcatRows(parts) => {
                let w = g.row_len();
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.len();
                    if self.wants(*p) {
                        let data = g.data()[offset..offset + n].to_vec();
                        res.push((*p, Tensor::from_parts(pv.dims().to_vec(), data)));
                    }
                    offset += pv.rows() * w;
                }
            }
            Op::SliceRows { src, start } => {
                let sv = self.value(*src);
                let w = sv.row_len();
                let mut data = vec![T::zero(); sv.len()];
                data[start * w..start * w + g.len()].copy_from_slice(g.data());
                res.push((*src, Tensor::from_parts(sv.dims().to_vec(), data)));
            }
            Op::SampleScale(a, slot) => {
                let factors = self.slot_values(*slot)?;
                res.push((*a, tensor::scale_rows(g, factors)?));
            }
        }
        Ok(res)
    }
}

/// Which gradients a linear backward should produce.
#[derive(Debug, Clone, Copy)]
pub struct LinearGrads {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

impl LinearGrads {
    pub const ALL: LinearGrads = LinearGrads {
        input: true,
        weight: true,
        bias: true,
    };
}

type LinearBackward<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

/// Backward of `y = x·Wᵀ + b`.
///
/// `gx = gy·W` always uses the unscaled `gy`. With `param_scale`, each row
/// of `gy` is multiplied by its factor before forming `gW = gyᵀ·x` and
/// `gb = Σ_b gy[b]`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    param_scale: Option<&[T]>,
    want: LinearGrads,
) -> Result<LinearBackward<T>> {
    if gy.rank() != 2 || gy.rows() != x.rows() || gy.dims()[1] != w.rows() {
        return Err(Error::dim(format!(
            "linear backward: gy {:?} incompatible with x {:?}, W {:?}",
            gy.dims(),
            x.dims(),
            w.dims()
        )));
    }
    let gx = if want.input {
        Some(tensor::matmul(gy, w)?)
    } else {
        None
    };
    if !want.weight && !want.bias {
        return Ok((gx, None, None));
    }
    let scaled;
    let gy_params = match param_scale {
        Some(s) => {
            if let Some(index) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "per-sample parameter-gradient scale",
                    index,
                });
            }
            scaled = tensor::scale_rows(gy, s)?;
            &scaled
        }
        None => gy,
    };
    let gw = if want.weight {
        Some(tensor::matmul_tn(gy_params, x)?)
    } else {
        None
    };
    let gb = if want.bias {
        Some(tensor::sum_rows(gy_params)?)
    } else {
        None
    };
    Ok((gx, gw, gb))
}
