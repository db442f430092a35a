//! Wengert-tape reverse-mode autodiff.
//!
//! Forward calls record one node per op; nodes are appended in topological
//! order, so the backward pass is a single reverse sweep. Gradients flow only
//! into nodes that need them (parameters, tracked inputs, and anything
//! downstream), which in particular skips the input-gradient half of the
//! first convolution during ordinary training.

use crate::error::{Error, Result};
use crate::tensor::{ParameterStore, Tensor};

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Input,
    Param(String),
    Conv2d {
        stride: usize,
        pad: usize,
        groups: usize,
    },
    GroupNorm {
        groups: usize,
        // Per (sample, group) statistics exactly as used in the forward pass.
        mean: Vec<f32>,
        invstd: Vec<f32>,
    },
    Relu {
        bypassed: bool,
    },
    Add,
    MulEw,
    Scale(f32),
    Linear,
    GlobalAvgPool,
    SumAll,
    SoftmaxCrossEntropy {
        probs: Vec<f32>,
        targets: Vec<usize>,
        smoothing: f32,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::GroupNorm { .. } => "group_norm",
            Op::Relu { .. } => "relu",
            Op::Add => "add",
            Op::MulEw => "mul_ew",
            Op::Scale(_) => "scale",
            Op::Linear => "linear",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::SumAll => "sum_all",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    /// Reductions also keep their f64 result; finite-difference oracles read
    /// this to avoid f32 rounding in the objective.
    exact: Option<f64>,
    parents: Vec<NodeId>,
    op: Op,
    needs_grad: bool,
}

/// Recording tape. Create one per forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    relu_identity: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            relu_identity: false,
        }
    }

    /// A tape on which `relu` records the identity map instead. Used for
    /// effective-receptive-field analysis, where rectifiers are dropped so
    /// gradient support reflects the linear footprint of the network.
    pub fn with_relu_bypass() -> Self {
        Tape {
            nodes: Vec::new(),
            relu_identity: true,
        }
    }

    pub fn relu_bypassed(&self) -> bool {
        self.relu_identity
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// f64 value of a scalar reduction node (falls back to the f32 value).
    pub fn scalar_f64(&self, id: NodeId) -> Result<f64> {
        let node = &self.nodes[id];
        if let Some(exact) = node.exact {
            return Ok(exact);
        }
        Ok(node.value.item()? as f64)
    }

    /// Names of parameters recorded on this tape, in recording order.
    pub fn param_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Param(name) => Some(name.clone()),
                _ => None,
            })
            .collect()
    }

    fn push(
        &mut self,
        value: Tensor,
        exact: Option<f64>,
        parents: Vec<NodeId>,
        op: Op,
    ) -> Result<NodeId> {
        value.ensure_finite(op.name())?;
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Input => false,
            _ => parents.iter().any(|&p| self.nodes[p].needs_grad),
        };
        self.nodes.push(Node {
            value,
            exact,
            parents,
            op,
            needs_grad,
        });
        Ok(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId, op: &'static str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::contract(format!("{op}: node id {id} not on tape")));
        }
        Ok(())
    }

    // ── leaf nodes ──────────────────────────────────────────────────────

    /// Records a constant input (no gradient tracked).
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, None, vec![], Op::Input)
    }

    /// Records an input whose gradient can be queried with [`Tape::grad_wrt`].
    pub fn input_tracked(&mut self, value: Tensor) -> Result<NodeId> {
        let id = self.push(value, None, vec![], Op::Input)?;
        self.nodes[id].needs_grad = true;
        Ok(id)
    }

    /// Records a parameter leaf; `backward` scatters its gradient back into
    /// the store under the same name.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        let value = store.get(name)?.value.clone();
        self.push(value, None, vec![], Op::Param(name.to_string()))
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// 2-D convolution, NCHW layout, kernel `[out_ch, in_ch/groups, kh, kw]`,
    /// zero padding, no bias (normalization layers follow every convolution
    /// in the networks built here).
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<NodeId> {
        self.check_id(input, "conv2d")?;
        self.check_id(kernel, "conv2d")?;
        let x = &self.nodes[input].value;
        let k = &self.nodes[kernel].value;
        if x.shape().len() != 4 || k.shape().len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("want 4-d input and kernel, got {:?} and {:?}", x.shape(), k.shape()),
            ));
        }
        if stride < 1 {
            return Err(Error::contract("conv2d: stride must be >= 1"));
        }
        if groups < 1 {
            return Err(Error::contract("conv2d: groups must be >= 1"));
        }
        let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, ck, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("channels ({cin} in, {cout} out) not divisible by groups {groups}"),
            ));
        }
        if ck != cin / groups {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {ck} input channels per group, input has {}", cin / groups),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;

        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        let cig = cin / groups;
        let cog = cout / groups;
        let xs = x.data();
        let ks = k.data();
        let os = out.data_mut();

        if kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1 {
            // 1x1 pointwise: plain matmul per sample, no im2col copy.
            let hw = h * w;
            for ni in 0..n {
                matmul_acc(
                    ks,
                    &xs[ni * cin * hw..(ni + 1) * cin * hw],
                    cout,
                    cin,
                    hw,
                    &mut os[ni * cout * hw..(ni + 1) * cout * hw],
                );
            }
        } else {
            let ckk = cig * kh * kw;
            let mut cols = vec![0.0f32; ckk * ho * wo];
            for ni in 0..n {
                for g in 0..groups {
                    let xg = &xs[(ni * cin + g * cig) * h * w..(ni * cin + (g + 1) * cig) * h * w];
                    im2col(xg, cig, h, w, kh, kw, stride, pad, ho, wo, &mut cols);
                    let kg = &ks[g * cog * ckk..(g + 1) * cog * ckk];
                    let og = &mut os[(ni * cout + g * cog) * ho * wo..(ni * cout + (g + 1) * cog) * ho * wo];
                    matmul_acc(kg, &cols, cog, ckk, ho * wo, og);
                }
            }
        }

        self.push(out, None, vec![input, kernel], Op::Conv2d { stride, pad, groups })
    }

    /// Group normalization over `[N, C, H, W]` with per-channel affine
    /// parameters. Statistics are per (sample, group), so outputs never
    /// depend on batch composition.
    pub fn group_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f32,
    ) -> Result<NodeId> {
        self.check_id(input, "group_norm")?;
        self.check_id(gamma, "group_norm")?;
        self.check_id(beta, "group_norm")?;
        let x = &self.nodes[input].value;
        if x.shape().len() != 4 {
            return Err(Error::shape("group_norm", format!("want 4-d input, got {:?}", x.shape())));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if groups < 1 || c % groups != 0 {
            return Err(Error::shape(
                "group_norm",
                format!("{c} channels not divisible by {groups} groups"),
            ));
        }
        let g_shape = self.nodes[gamma].value.shape().to_vec();
        let b_shape = self.nodes[beta].value.shape().to_vec();
        if g_shape != [c] || b_shape != [c] {
            return Err(Error::shape(
                "group_norm",
                format!("affine shapes {g_shape:?}/{b_shape:?} do not match {c} channels"),
            ));
        }
        if !(eps > 0.0) {
            return Err(Error::contract("group_norm: eps must be positive"));
        }

        let cpg = c / groups;
        let group_len = cpg * h * w;
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let mut means = vec![0.0f32; n * groups];
        let mut invstds = vec![0.0f32; n * groups];
        {
            let xs = self.nodes[input].value.data();
            let gs = self.nodes[gamma].value.data();
            let bs = self.nodes[beta].value.data();
            let os = out.data_mut();
            for ni in 0..n {
                for g in 0..groups {
                    let base = (ni * c + g * cpg) * h * w;
                    let slice = &xs[base..base + group_len];
                    let mut sum = 0.0f64;
                    for &v in slice {
                        sum += v as f64;
                    }
                    let mean = sum / group_len as f64;
                    let mut var = 0.0f64;
                    for &v in slice {
                        let d = v as f64 - mean;
                        var += d * d;
                    }
                    var /= group_len as f64;
                    let m = mean as f32;
                    let is = (1.0 / (var + eps as f64).sqrt()) as f32;
                    means[ni * groups + g] = m;
                    invstds[ni * groups + g] = is;
                    for cc in 0..cpg {
                        let ch = g * cpg + cc;
                        let (ga, be) = (gs[ch], bs[ch]);
                        let off = base + cc * h * w;
                        for i in 0..h * w {
                            os[off + i] = ga * (xs[off + i] - m) * is + be;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            None,
            vec![input, gamma, beta],
            Op::GroupNorm {
                groups,
                mean: means,
                invstd: invstds,
            },
        )
    }

    /// Rectifier. On a bypass tape ([`Tape::with_relu_bypass`]) this records
    /// the identity instead, and the backward pass matches.
    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_id(input, "relu")?;
        let bypassed = self.relu_identity;
        let x = &self.nodes[input].value;
        let out = if bypassed {
            x.clone()
        } else {
            let mut t = x.clone();
            for v in t.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            t
        };
        self.push(out, None, vec![input], Op::Relu { bypassed })
    }

    /// Elementwise sum of two equal-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a, "add")?;
        self.check_id(b, "add")?;
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.clone();
        let bd = tb.data();
        for (o, &v) in out.data_mut().iter_mut().zip(bd) {
            *o += v;
        }
        self.push(out, None, vec![a, b], Op::Add)
    }

    /// Elementwise product of two equal-shape tensors.
    pub fn mul_ew(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a, "mul_ew")?;
        self.check_id(b, "mul_ew")?;
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul_ew",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.clone();
        let bd = tb.data();
        for (o, &v) in out.data_mut().iter_mut().zip(bd) {
            *o *= v;
        }
        self.push(out, None, vec![a, b], Op::MulEw)
    }

    pub fn scale(&mut self, input: NodeId, factor: f32) -> Result<NodeId> {
        self.check_id(input, "scale")?;
        let mut out = self.nodes[input].value.clone();
        for v in out.data_mut() {
            *v *= factor;
        }
        self.push(out, None, vec![input], Op::Scale(factor))
    }

    /// Fully connected layer: `x [N, C] -> x W^T + b` with `w [K, C]`, `b [K]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_id(input, "linear")?;
        self.check_id(weight, "linear")?;
        self.check_id(bias, "linear")?;
        let x = &self.nodes[input].value;
        let wt = &self.nodes[weight].value;
        let bt = &self.nodes[bias].value;
        if x.shape().len() != 2 || wt.shape().len() != 2 {
            return Err(Error::shape(
                "linear",
                format!("want 2-d input and weight, got {:?} and {:?}", x.shape(), wt.shape()),
            ));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let (k, cw) = (wt.shape()[0], wt.shape()[1]);
        if cw != c || bt.shape() != [k] {
            return Err(Error::shape(
                "linear",
                format!("input [{n}, {c}] incompatible with weight {:?}, bias {:?}", wt.shape(), bt.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[n, k]);
        matmul_a_bt_acc(x.data(), wt.data(), n, c, k, out.data_mut());
        {
            let os = out.data_mut();
            let bs = bt.data();
            for ni in 0..n {
                for ki in 0..k {
                    os[ni * k + ki] += bs[ki];
                }
            }
        }
        self.push(out, None, vec![input, weight, bias], Op::Linear)
    }

    /// Spatial mean per channel: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_id(input, "global_avg_pool")?;
        let x = &self.nodes[input].value;
        if x.shape().len() != 4 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("want 4-d input, got {:?}", x.shape()),
            ));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, c]);
        {
            let xs = x.data();
            let os = out.data_mut();
            for i in 0..n * c {
                let mut sum = 0.0f64;
                for &v in &xs[i * hw..(i + 1) * hw] {
                    sum += v as f64;
                }
                os[i] = (sum / hw as f64) as f32;
            }
        }
        self.push(out, None, vec![input], Op::GlobalAvgPool)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_id(input, "sum_all")?;
        let mut sum = 0.0f64;
        for &v in self.nodes[input].value.data() {
            sum += v as f64;
        }
        self.push(Tensor::scalar(sum as f32), Some(sum), vec![input], Op::SumAll)
    }

    /// Mean softmax cross-entropy over the batch, with label smoothing:
    /// the target distribution is `(1 - s) * onehot + s / K`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        smoothing: f32,
    ) -> Result<NodeId> {
        self.check_id(logits, "softmax_cross_entropy")?;
        let x = &self.nodes[logits].value;
        if x.shape().len() != 2 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("want 2-d logits, got {:?}", x.shape()),
            ));
        }
        let (n, k) = (x.shape()[0], x.shape()[1]);
        if targets.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{n} rows of logits, {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::contract(format!(
                "softmax_cross_entropy: target {bad} out of range for {k} classes"
            )));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::contract(format!(
                "softmax_cross_entropy: smoothing {smoothing} outside [0, 1)"
            )));
        }
        let xs = x.data();
        let mut probs = vec![0.0f32; n * k];
        let mut total = 0.0f64;
        for ni in 0..n {
            let row = &xs[ni * k..(ni + 1) * k];
            let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let mut sumexp = 0.0f64;
            for &v in row {
                sumexp += ((v - mx) as f64).exp();
            }
            let ln_z = sumexp.ln();
            for (j, &v) in row.iter().enumerate() {
                probs[ni * k + j] = (((v - mx) as f64).exp() / sumexp) as f32;
            }
            // loss = lnZ - sum_j q_j z_j with z the shifted logits.
            let mut zsum = 0.0f64;
            for &v in row {
                zsum += (v - mx) as f64;
            }
            let zt = (row[targets[ni]] - mx) as f64;
            let s = smoothing as f64;
            let expected = (1.0 - s) * zt + s / k as f64 * zsum;
            total += ln_z - expected;
        }
        let loss = total / n as f64;
        self.push(
            Tensor::scalar(loss as f32),
            Some(loss),
            vec![logits],
            Op::SoftmaxCrossEntropy {
                probs,
                targets: targets.to_vec(),
                smoothing,
            },
        )
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. All gradients in `store` are zeroed
    /// first, then every parameter recorded on the tape and reachable from
    /// `loss` gets its gradient; unreachable parameters keep zero.
    pub fn backward(&self, loss: NodeId, store: &mut ParameterStore) -> Result<()> {
        self.check_id(loss, "backward")?;
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[loss].value.shape()),
            ));
        }
        store.zero_grads();
        let grads = self.backprop(loss, vec![1.0])?;
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = &grads[id] {
                    let param = store.get_mut(name)?;
                    if param.grad.numel() != g.len() {
                        return Err(Error::shape(
                            "backward",
                            format!("parameter {name:?} changed shape between record and backward"),
                        ));
                    }
                    for (dst, &src) in param.grad.data_mut().iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of `output` (seeded with `seed`) with respect to a tracked
    /// node. Used for receptive-field analysis, where the "loss" is one
    /// spatial position of a feature map.
    pub fn grad_wrt(&self, output: NodeId, seed: &Tensor, wrt: NodeId) -> Result<Tensor> {
        self.check_id(output, "grad_wrt")?;
        self.check_id(wrt, "grad_wrt")?;
        if seed.shape() != self.nodes[output].value.shape() {
            return Err(Error::shape(
                "grad_wrt",
                format!(
                    "seed shape {:?} does not match output {:?}",
                    seed.shape(),
                    self.nodes[output].value.shape()
                ),
            ));
        }
        if !self.nodes[wrt].needs_grad {
            return Err(Error::contract(
                "grad_wrt: node is not gradient-tracked; record it with input_tracked or param",
            ));
        }
        let grads = self.backprop(output, seed.data().to_vec())?;
        let shape = self.nodes[wrt].value.shape().to_vec();
        match &grads[wrt] {
            Some(g) => Tensor::new(&shape, g.clone()),
            None => Ok(Tensor::zeros(&shape)),
        }
    }

    fn backprop(&self, root: NodeId, seed: Vec<f32>) -> Result<Vec<Option<Vec<f32>>>> {
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        if seed.len() != self.nodes[root].value.numel() {
            return Err(Error::shape("backprop", "seed length mismatch"));
        }
        grads[root] = Some(seed);
        for id in (0..=root).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let gout = grads[id].take().unwrap();
            self.backprop_node(id, &gout, &mut grads)?;
            if matches!(self.nodes[id].op, Op::Param(_)) || id == 0 {
                grads[id] = Some(gout);
                continue;
            }
            // Keep gradients only where a caller can read them back.
            if self.nodes[id].parents.is_empty() {
                grads[id] = Some(gout);
            } else {
                grads[id] = Some(gout); // retained; memory is bounded by one forward pass
            }
        }
        for (id, g) in grads.iter().enumerate() {
            if let Some(buf) = g {
                if !buf.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("backward of {}", self.nodes[id].op.name()),
                    });
                }
            }
        }
        Ok(grads)
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f32>>],
        node: NodeId,
        update: impl FnOnce(&mut [f32]),
    ) {
        if !self.nodes[node].needs_grad {
            return;
        }
        let buf = grads[node].get_or_insert_with(|| vec![0.0; self.nodes[node].value.numel()]);
        update(buf);
    }

    fn backprop_node(
        &self,
        id: NodeId,
        gout: &[f32],
        grads: &mut [Option<Vec<f32>>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { stride, pad, groups } => {
                self.backprop_conv2d(id, gout, grads, *stride, *pad, *groups);
            }
            Op::GroupNorm { groups, mean, invstd } => {
                self.backprop_group_norm(id, gout, grads, *groups, mean, invstd);
            }
            Op::Relu { bypassed } => {
                let p = node.parents[0];
                let xs = self.nodes[p].value.data();
                let bypassed = *bypassed;
                self.accumulate(grads, p, |buf| {
                    if bypassed {
                        for (b, &g) in buf.iter_mut().zip(gout) {
                            *b += g;
                        }
                    } else {
                        for i in 0..buf.len() {
                            if xs[i] > 0.0 {
                                buf[i] += gout[i];
                            }
                        }
                    }
                });
            }
            Op::Add => {
                for &p in &node.parents {
                    self.accumulate(grads, p, |buf| {
                        for (b, &g) in buf.iter_mut().zip(gout) {
                            *b += g;
                        }
                    });
                }
            }
            Op::MulEw => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                self.accumulate(grads, a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += gout[i] * bv[i];
                    }
                });
                self.accumulate(grads, b, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += gout[i] * av[i];
                    }
                });
            }
            Op::Scale(f) => {
                let p = node.parents[0];
                let f = *f;
                self.accumulate(grads, p, |buf| {
                    for (b, &g) in buf.iter_mut().zip(gout) {
                        *b += f * g;
                    }
                });
            }
            Op::Linear => {
                let (xid, wid, bid) = (node.parents[0], node.parents[1], node.parents[2]);
                let x = &self.nodes[xid].value;
                let wt = &self.nodes[wid].value;
                let (n, c) = (x.shape()[0], x.shape()[1]);
                let k = wt.shape()[0];
                self.accumulate(grads, xid, |buf| {
                    matmul_acc(gout, wt.data(), n, k, c, buf);
                });
                self.accumulate(grads, wid, |buf| {
                    matmul_at_b_acc(gout, x.data(), n, k, c, buf);
                });
                self.accumulate(grads, bid, |buf| {
                    for ni in 0..n {
                        for ki in 0..k {
                            buf[ki] += gout[ni * k + ki];
                        }
                    }
                });
            }
            Op::GlobalAvgPool => {
                let p = node.parents[0];
                let shape = self.nodes[p].value.shape();
                let hw = shape[2] * shape[3];
                let inv = 1.0 / hw as f32;
                self.accumulate(grads, p, |buf| {
                    for i in 0..gout.len() {
                        let g = gout[i] * inv;
                        for v in &mut buf[i * hw..(i + 1) * hw] {
                            *v += g;
                        }
                    }
                });
            }
            Op::SumAll => {
                let p = node.parents[0];
                let g = gout[0];
                self.accumulate(grads, p, |buf| {
                    for v in buf.iter_mut() {
                        *v += g;
                    }
                });
            }
            Op::SoftmaxCrossEntropy { probs, targets, smoothing } => {
                let p = node.parents[0];
                let n = targets.len();
                let k = probs.len() / n;
                let g = gout[0] / n as f32;
                let s = *smoothing;
                let uniform = s / k as f32;
                self.accumulate(grads, p, |buf| {
                    for ni in 0..n {
                        for j in 0..k {
                            let mut q = uniform;
                            if j == targets[ni] {
                                q += 1.0 - s;
                            }
                            buf[ni * k + j] += g * (probs[ni * k + j] - q);
                        }
                    }
                });
            }
        }
        Ok(())
    }

    fn backprop_conv2d(
        &self,
        id: NodeId,
        gout: &[f32],
        grads: &mut [Option<Vec<f32>>],
        stride: usize,
        pad: usize,
        groups: usize,
    ) {
        let node = &self.nodes[id];
        let (input, kernel) = (node.parents[0], node.parents[1]);
        let x = &self.nodes[input].value;
        let kt = &self.nodes[kernel].value;
        let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, _, kh, kw) = (kt.shape()[0], kt.shape()[1], kt.shape()[2], kt.shape()[3]);
        let (ho, wo) = (node.value.shape()[2], node.value.shape()[3]);
        let cig = cin / groups;
        let cog = cout / groups;
        let need_dx = self.nodes[input].needs_grad;
        let need_dk = self.nodes[kernel].needs_grad;
        let xs = x.data();
        let ks = kt.data();

        if kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1 {
            let hw = h * w;
            if need_dk {
                self.accumulate(grads, kernel, |dk| {
                    for ni in 0..n {
                        matmul_a_bt_acc(
                            &gout[ni * cout * hw..(ni + 1) * cout * hw],
                            &xs[ni * cin * hw..(ni + 1) * cin * hw],
                            cout,
                            hw,
                            cin,
                            dk,
                        );
                    }
                });
            }
            if need_dx {
                self.accumulate(grads, input, |dx| {
                    for ni in 0..n {
                        matmul_at_b_acc(
                            ks,
                            &gout[ni * cout * hw..(ni + 1) * cout * hw],
                            cout,
                            cin,
                            hw,
                            &mut dx[ni * cin * hw..(ni + 1) * cin * hw],
                        );
                    }
                });
            }
            return;
        }

        let ckk = cig * kh * kw;
        let mut cols = vec![0.0f32; ckk * ho * wo];
        let mut dcols = vec![0.0f32; ckk * ho * wo];
        let mut dk_buf = if need_dk { vec![0.0f32; kt.numel()] } else { Vec::new() };
        let mut dx_buf = if need_dx { vec![0.0f32; x.numel()] } else { Vec::new() };
        for ni in 0..n {
            for g in 0..groups {
                let go = &gout[(ni * cout + g * cog) * ho * wo..(ni * cout + (g + 1) * cog) * ho * wo];
                if need_dk {
                    let xg = &xs[(ni * cin + g * cig) * h * w..(ni * cin + (g + 1) * cig) * h * w];
                    im2col(xg, cig, h, w, kh, kw, stride, pad, ho, wo, &mut cols);
                    matmul_a_bt_acc(go, &cols, cog, ho * wo, ckk, &mut dk_buf[g * cog * ckk..(g + 1) * cog * ckk]);
                }
                if need_dx {
                    dcols.fill(0.0);
                    let kg = &ks[g * cog * ckk..(g + 1) * cog * ckk];
                    matmul_at_b_acc(kg, go, cog, ckk, ho * wo, &mut dcols);
                    let dxg = &mut dx_buf[(ni * cin + g * cig) * h * w..(ni * cin + (g + 1) * cig) * h * w];
                    col2im_acc(&dcols, cig, h, w, kh, kw, stride, pad, ho, wo, dxg);
                }
            }
        }
        if need_dk {
            self.accumulate(grads, kernel, |buf| {
                for (b, &v) in buf.iter_mut().zip(&dk_buf) {
                    *b += v;
                }
            });
        }
        if need_dx {
            self.accumulate(grads, input, |buf| {
                for (b, &v) in buf.iter_mut().zip(&dx_buf) {
                    *b += v;
                }
            });
        }
    }

    fn backprop_group_norm(
        &self,
        id: NodeId,
        gout: &[f32],
        grads: &mut [Option<Vec<f32>>],
        groups: usize,
        mean: &[f32],
        invstd: &[f32],
    ) {
        let node = &self.nodes[id];
        let (input, gamma, beta) = (node.parents[0], node.parents[1], node.parents[2]);
        let x = &self.nodes[input].value;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let cpg = c / groups;
        let hw = h * w;
        let group_len = cpg * hw;
        let xs = x.data();
        let gs = self.nodes[gamma].value.data();

        if self.nodes[beta].needs_grad {
            self.accumulate(grads, beta, |buf| {
                for ni in 0..n {
                    for ch in 0..c {
                        let off = (ni * c + ch) * hw;
                        let mut s = 0.0f64;
                        for &g in &gout[off..off + hw] {
                            s += g as f64;
                        }
                        buf[ch] += s as f32;
                    }
                }
            });
        }
        if self.nodes[gamma].needs_grad {
            self.accumulate(grads, gamma, |buf| {
                for ni in 0..n {
                    for g in 0..groups {
                        let m = mean[ni * groups + g];
                        let is = invstd[ni * groups + g];
                        for cc in 0..cpg {
                            let ch = g * cpg + cc;
                            let off = (ni * c + ch) * hw;
                            let mut s = 0.0f64;
                            for i in 0..hw {
                                s += (gout[off + i] * (xs[off + i] - m) * is) as f64;
                            }
                            buf[ch] += s as f32;
                        }
                    }
                }
            });
        }
        if self.nodes[input].needs_grad {
            self.accumulate(grads, input, |buf| {
                for ni in 0..n {
                    for g in 0..groups {
                        let m = mean[ni * groups + g];
                        let is = invstd[ni * groups + g];
                        let base = (ni * c + g * cpg) * hw;
                        let mut s1 = 0.0f64;
                        let mut s2 = 0.0f64;
                        for cc in 0..cpg {
                            let ch = g * cpg + cc;
                            let ga = gs[ch];
                            let off = base + cc * hw;
                            for i in 0..hw {
                                let dxh = (gout[off + i] * ga) as f64;
                                let xh = ((xs[off + i] - m) * is) as f64;
                                s1 += dxh;
                                s2 += dxh * xh;
                            }
                        }
                        let inv_l = 1.0 / group_len as f64;
                        let c1 = (s1 * inv_l) as f32;
                        let c2 = (s2 * inv_l) as f32;
                        for cc in 0..cpg {
                            let ch = g * cpg + cc;
                            let ga = gs[ch];
                            let off = base + cc * hw;
                            for i in 0..hw {
                                let dxh = gout[off + i] * ga;
                                let xh = (xs[off + i] - m) * is;
                                buf[off + i] += is * (dxh - c1 - xh * c2);
                            }
                        }
                    }
                }
            });
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

// ── kernels ─────────────────────────────────────────────────────────────

/// out[m, n] += a[m, k] * b[k, n]
pub(crate) fn matmul_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// out[k, n] += a[m, k]^T * b[m, n]
fn matmul_at_b_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// out[m, n] += a[m, k] * b[n, k]^T
fn matmul_a_bt_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0f32;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out[i * n + j] += s;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f32],
) {
    debug_assert_eq!(src.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * ho * wo);
    let mut row = 0;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if y < 0 || y >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let sbase = ci * h * w + y as usize * w;
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let x = (ox * stride + kx) as isize - pad as isize;
                        *d = if x < 0 || x >= w as isize {
                            0.0
                        } else {
                            src[sbase + x as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dst: &mut [f32],
) {
    debug_assert_eq!(dst.len(), c * h * w);
    let mut row = 0;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dbase = ci * h * w + y as usize * w;
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for (ox, &s) in srow.iter().enumerate() {
                        let x = (ox * stride + kx) as isize - pad as isize;
                        if x >= 0 && x < w as isize {
                            dst[dbase + x as usize] += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(name, t).unwrap();
        s
    }

    #[test]
    fn conv2d_all_ones_center() {
        // 3x3 kernel of ones over a 5x5 input of ones, stride 1, pad 1:
        // interior outputs are 9, the corner outputs are 4.
        let mut tape = Tape::new();
        let x = tape.input(Tensor::ones(&[1, 1, 5, 5])).unwrap();
        let k = tape.input(Tensor::ones(&[1, 1, 3, 3])).unwrap();
        let y = tape.conv2d(x, k, 1, 1, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 5, 5]);
        let d = tape.value(y).data();
        assert_eq!(d[2 * 5 + 2], 9.0);
        assert_eq!(d[0], 4.0);
        assert_eq!(d[1], 6.0);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape = Tape::new();
        let vals: Vec<f32> = (0..25).map(|i| i as f32 * 0.3 - 2.0).collect();
        let x = tape.input(Tensor::new(&[1, 1, 5, 5], vals.clone()).unwrap()).unwrap();
        let mut ker = vec![0.0f32; 9];
        ker[4] = 1.0; // delta at center
        let k = tape.input(Tensor::new(&[1, 1, 3, 3], ker).unwrap()).unwrap();
        let y = tape.conv2d(x, k, 1, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &vals[..]);
    }

    #[test]
    fn conv2d_stride_two_shape() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::ones(&[2, 3, 8, 8])).unwrap();
        let k = tape.input(Tensor::ones(&[4, 3, 1, 1])).unwrap();
        let y = tape.conv2d(x, k, 2, 0, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 4, 4, 4]);
        // every 1x1 output is the channel sum = 3
        assert!(tape.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn conv2d_depthwise_groups() {
        // groups == channels: each output channel sees only its own input.
        let mut tape = Tape::new();
        let mut xv = vec![0.0f32; 2 * 4 * 4];
        xv[..16].iter_mut().for_each(|v| *v = 1.0); // channel 0 ones, channel 1 zeros
        let x = tape.input(Tensor::new(&[1, 2, 4, 4], xv).unwrap()).unwrap();
        let k = tape.input(Tensor::ones(&[2, 1, 3, 3])).unwrap();
        let y = tape.conv2d(x, k, 1, 1, 2).unwrap();
        let d = tape.value(y).data();
        assert_eq!(d[5], 9.0); // channel 0 interior
        assert!(d[16..].iter().all(|&v| v == 0.0)); // channel 1 all zero
    }

    #[test]
    fn conv2d_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::ones(&[1, 3, 5, 5])).unwrap();
        let k = tape.input(Tensor::ones(&[4, 2, 3, 3])).unwrap();
        assert!(tape.conv2d(x, k, 1, 1, 1).is_err()); // channel mismatch
        let k2 = tape.input(Tensor::ones(&[4, 3, 3, 3])).unwrap();
        assert!(tape.conv2d(x, k2, 0, 1, 1).is_err()); // stride 0
        assert!(tape.conv2d(x, k2, 1, 1, 2).is_err()); // 3 channels, 2 groups
    }

    #[test]
    fn group_norm_normalizes() {
        let mut tape = Tape::new();
        let vals: Vec<f32> = (0..32).map(|i| (i as f32) * 0.7 - 3.0).collect();
        let x = tape.input(Tensor::new(&[1, 2, 4, 4], vals).unwrap()).unwrap();
        let g = tape.input(Tensor::ones(&[2])).unwrap();
        let b = tape.input(Tensor::zeros(&[2])).unwrap();
        let y = tape.group_norm(x, g, b, 2, 1e-5).unwrap();
        // per-channel mean ~0, var ~1
        for ch in 0..2 {
            let d = &tape.value(y).data()[ch * 16..(ch + 1) * 16];
            let mean: f64 = d.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
            let var: f64 = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn group_norm_constant_input_stays_finite() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled(&[1, 1, 3, 3], 4.2)).unwrap();
        let g = tape.input(Tensor::ones(&[1])).unwrap();
        let b = tape.input(Tensor::zeros(&[1])).unwrap();
        let y = tape.group_norm(x, g, b, 1, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_affine_applies() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[1, 1, 1, 2], vec![0.0, 2.0]).unwrap()).unwrap();
        let g = tape.input(Tensor::filled(&[1], 3.0)).unwrap();
        let b = tape.input(Tensor::filled(&[1], 0.5)).unwrap();
        let y = tape.group_norm(x, g, b, 1, 1e-5).unwrap();
        let d = tape.value(y).data();
        // normalized values are -1 and 1 (up to eps), so outputs ~ -2.5, 3.5
        assert!((d[0] + 2.5).abs() < 1e-2);
        assert!((d[1] - 3.5).abs() < 1e-2);
    }

    #[test]
    fn relu_clamps_and_bypass_passes() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap()).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.5, 2.0]);

        let mut tape = Tape::with_relu_bypass();
        let x = tape.input(Tensor::new(&[4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap()).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 0.0, 0.5, 2.0]);
    }

    #[test]
    fn global_avg_pool_uniform() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled(&[2, 3, 4, 4], 2.5)).unwrap();
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 7])).unwrap();
        let loss = tape.softmax_cross_entropy(x, &[3, 0], 0.0).unwrap();
        let want = (7.0f64).ln();
        assert!((tape.scalar_f64(loss).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_smoothing_shifts_target() {
        // With smoothing s, perfect logits no longer drive loss to 0.
        let mut tape = Tape::new();
        let x = tape
            .input(Tensor::new(&[1, 3], vec![10.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let plain = tape.softmax_cross_entropy(x, &[0], 0.0).unwrap();
        let smoothed = tape.softmax_cross_entropy(x, &[0], 0.1).unwrap();
        assert!(tape.scalar_f64(plain).unwrap() < tape.scalar_f64(smoothed).unwrap());
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 3])).unwrap();
        assert!(tape.softmax_cross_entropy(x, &[0, 3], 0.0).is_err());
        assert!(tape.softmax_cross_entropy(x, &[0], 0.0).is_err());
        assert!(tape.softmax_cross_entropy(x, &[0, 1], 1.0).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut store = store_with("p", Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap());
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let loss = tape.sum_all(p).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get("p").unwrap().grad.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_of_half_norm_squared_is_p() {
        // loss = 0.5 * sum(p*p)  =>  dloss/dp = p
        let vals = vec![1.5f32, -0.25, 2.0, 0.0];
        let mut store = store_with("p", Tensor::new(&[4], vals.clone()).unwrap());
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let sq = tape.mul_ew(p, p).unwrap();
        let s = tape.sum_all(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("p").unwrap().grad.data(), &vals[..]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut store = store_with("p", Tensor::ones(&[3]));
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        assert!(tape.backward(p, &mut store).is_err());
    }

    #[test]
    fn unreachable_param_gets_zero_grad() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::ones(&[2])).unwrap();
        store.insert("b", Tensor::ones(&[2])).unwrap();
        store.get_mut("b").unwrap().grad.data_mut().fill(9.0); // stale grad
        let mut tape = Tape::new();
        let a = tape.param(&store, "a").unwrap();
        let loss = tape.sum_all(a).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("a").unwrap().grad.data(), &[1.0, 1.0]);
        assert_eq!(store.get("b").unwrap().grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn param_used_twice_accumulates() {
        // loss = sum(p + p) => grad = 2
        let mut store = store_with("p", Tensor::ones(&[2]));
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let two_p = tape.add(p, p).unwrap();
        let loss = tape.sum_all(two_p).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("p").unwrap().grad.data(), &[2.0, 2.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled(&[1, 2], 1e30)).unwrap();
        let sq = tape.mul_ew(x, x).unwrap_err();
        match sq {
            Error::NonFinite { context } => assert!(context.contains("mul_ew")),
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn relu_gradient_masks() {
        let mut store = store_with("p", Tensor::new(&[4], vec![-1.0, -0.5, 0.5, 2.0]).unwrap());
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let r = tape.relu(p).unwrap();
        let loss = tape.sum_all(r).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("p").unwrap().grad.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_wrt_tracked_input() {
        // y = x * x, seed ones: dy/dx = 2x
        let mut tape = Tape::new();
        let x = tape
            .input_tracked(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let y = tape.mul_ew(x, x).unwrap();
        let g = tape.grad_wrt(y, &Tensor::ones(&[3]), x).unwrap();
        assert_eq!(g.data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn grad_wrt_untracked_input_errors() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::ones(&[3])).unwrap();
        let y = tape.mul_ew(x, x).unwrap();
        assert!(tape.grad_wrt(y, &Tensor::ones(&[3]), x).is_err());
    }
}
