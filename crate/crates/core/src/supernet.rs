//! Single-path super-network over a per-stage block allocation.
//!
//! A super-network with allocation `[N_1, ..., N_ns]` materializes the
//! deepest architecture in its family. Any smaller allocation `[n_1, ...,
//! n_ns]` with `n_i <= N_i` names a sub-network that keeps, in every stage,
//! the first `n_i` blocks and drops the suffix. Because sub-networks are
//! prefixes, weights transfer between them by name, and a forward pass of a
//! sub-network is just a masked forward pass of the parent.
//!
//! Two block families are supported: bottleneck residual blocks
//! (1x1 reduce, 3x3, 1x1 expand) and inverted residual blocks
//! (1x1 expand, 3x3 depthwise, 1x1 project). Both keep channel counts fixed
//! within a stage, so any number of blocks can chain. Normalization is group
//! norm with one group per channel, which makes every forward pass
//! independent of batch composition; inference and training then agree
//! exactly, and masked-parent and standalone-child forwards match to the bit.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, ParameterStore, Tape, Tensor};

const GN_EPS: f32 = 1e-5;

/// Per-stage block counts. Every entry is at least 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(Vec<usize>);

impl Allocation {
    pub fn new(per_stage: Vec<usize>) -> Result<Self> {
        if per_stage.is_empty() {
            return Err(Error::contract("allocation needs at least one stage"));
        }
        if per_stage.iter().any(|&n| n == 0) {
            return Err(Error::contract(format!(
                "allocation {per_stage:?} has an empty stage; every stage keeps >= 1 block"
            )));
        }
        Ok(Allocation(per_stage))
    }

    pub fn ones(stages: usize) -> Result<Self> {
        Allocation::new(vec![1; stages])
    }

    pub fn stages(&self) -> usize {
        self.0.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn get(&self, stage: usize) -> usize {
        self.0[stage]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Elementwise `<=` against another allocation of the same arity.
    pub fn fits_within(&self, bound: &Allocation) -> bool {
        self.0.len() == bound.0.len() && self.0.iter().zip(&bound.0).all(|(a, b)| a <= b)
    }

    /// A copy with one more block in `stage`.
    pub fn bumped(&self, stage: usize) -> Result<Self> {
        if stage >= self.0.len() {
            return Err(Error::contract(format!(
                "stage {stage} out of range for {self}"
            )));
        }
        let mut v = self.0.clone();
        v[stage] += 1;
        Ok(Allocation(v))
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl FromStr for Allocation {
    type Err = Error;

    /// Accepts `3,4,6,3` and `3-4-6-3`.
    fn from_str(s: &str) -> Result<Self> {
        let sep = if s.contains(',') { ',' } else { '-' };
        let parts: std::result::Result<Vec<usize>, _> =
            s.split(sep).map(|p| p.trim().parse::<usize>()).collect();
        match parts {
            Ok(v) => Allocation::new(v),
            Err(_) => Err(Error::contract(format!("cannot parse allocation {s:?}"))),
        }
    }
}

/// Which residual block family a network is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockFamily {
    #[default]
    Bottleneck,
    Inverted,
}

/// Block family plus the width hyperparameters shared by all stages.
/// Stage `i` (1-based) carries `base_width << i` channels; the inner width is
/// `max(4, round(channels * expansion))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockKind {
    pub family: BlockFamily,
    pub base_width: usize,
    pub expansion: f64,
}

impl BlockKind {
    /// Desk-scale bottleneck: stem width 16, inner width a quarter of the
    /// stage width.
    pub fn bottleneck() -> Self {
        BlockKind {
            family: BlockFamily::Bottleneck,
            base_width: 16,
            expansion: 0.25,
        }
    }

    /// Desk-scale inverted residual: stem width 16, hidden width twice the
    /// stage width.
    pub fn inverted() -> Self {
        BlockKind {
            family: BlockFamily::Inverted,
            base_width: 16,
            expansion: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width < 4 {
            return Err(Error::contract("block kind: base_width must be >= 4"));
        }
        if !(self.expansion > 0.0) {
            return Err(Error::contract("block kind: expansion must be positive"));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_width << (stage + 1)
    }

    pub fn inner_width(&self, stage: usize) -> usize {
        let c = self.stage_channels(stage) as f64;
        ((c * self.expansion).round() as usize).max(4)
    }
}

/// Per-stage prefix lengths used for one forward pass: stage `i` runs its
/// first `keep[i]` blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new(keep: Vec<usize>) -> Result<Self> {
        if keep.iter().any(|&k| k == 0) {
            return Err(Error::contract("active set must keep >= 1 block per stage"));
        }
        Ok(ActiveSet(keep))
    }

    /// Runs the whole network.
    pub fn full(alloc: &Allocation) -> Self {
        ActiveSet(alloc.as_slice().to_vec())
    }

    pub fn from_allocation(alloc: &Allocation) -> Self {
        Self::full(alloc)
    }

    pub fn keep(&self, stage: usize) -> usize {
        self.0[stage]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn fits_within(&self, alloc: &Allocation) -> bool {
        self.0.len() == alloc.stages() && self.0.iter().zip(alloc.as_slice()).all(|(k, n)| k <= n)
    }
}

/// Uniform suffix-drop sampling: stage `i` keeps `S ~ U[1, N_i]` blocks,
/// independently per stage. Drawn once per training iteration.
pub fn sample_active_set(alloc: &Allocation, rng: &mut impl Rng) -> ActiveSet {
    let keep = alloc.as_slice().iter().map(|&n| rng.gen_range(1..=n)).collect();
    ActiveSet(keep)
}

// ── parameter layout ────────────────────────────────────────────────────

enum Init {
    HeNormal { fan_in: usize },
    Normal { std: f64 },
    Ones,
    Zeros,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Emits every parameter of a network with the given structure, in a fixed
/// creation order (stem, stages in order with transition then blocks, head).
/// Both `build` and `inherit_weights` derive their name sets from this walk,
/// so the two can never disagree about layout.
fn walk_params(
    kind: &BlockKind,
    alloc: &Allocation,
    input_channels: usize,
    num_classes: usize,
) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let base = kind.base_width;
    let push_conv = |specs: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>| {
        let fan_in = shape[1] * shape[2] * shape[3];
        specs.push(ParamSpec {
            name,
            shape,
            init: Init::HeNormal { fan_in },
        });
    };
    let push_gn = |specs: &mut Vec<ParamSpec>, prefix: String, channels: usize| {
        specs.push(ParamSpec {
            name: format!("{prefix}.g"),
            shape: vec![channels],
            init: Init::Ones,
        });
        specs.push(ParamSpec {
            name: format!("{prefix}.b"),
            shape: vec![channels],
            init: Init::Zeros,
        });
    };

    push_conv(&mut specs, "stem.conv.w".into(), vec![base, input_channels, 3, 3]);
    push_gn(&mut specs, "stem.gn".into(), base);

    let mut prev_c = base;
    for stage in 0..alloc.stages() {
        let c = kind.stage_channels(stage);
        let inner = kind.inner_width(stage);
        let s = stage + 1;
        push_conv(&mut specs, format!("s{s}.t.conv.w"), vec![c, prev_c, 1, 1]);
        push_gn(&mut specs, format!("s{s}.t.gn"), c);
        for b in 0..alloc.get(stage) {
            let p = format!("s{s}.b{b:02}");
            match kind.family {
                BlockFamily::Bottleneck => {
                    push_conv(&mut specs, format!("{p}.c1.w"), vec![inner, c, 1, 1]);
                    push_gn(&mut specs, format!("{p}.gn1"), inner);
                    push_conv(&mut specs, format!("{p}.c2.w"), vec![inner, inner, 3, 3]);
                    push_gn(&mut specs, format!("{p}.gn2"), inner);
                    push_conv(&mut specs, format!("{p}.c3.w"), vec![c, inner, 1, 1]);
                    push_gn(&mut specs, format!("{p}.gn3"), c);
                }
                BlockFamily::Inverted => {
                    push_conv(&mut specs, format!("{p}.c1.w"), vec![inner, c, 1, 1]);
                    push_gn(&mut specs, format!("{p}.gn1"), inner);
                    // depthwise: one input channel per group
                    push_conv(&mut specs, format!("{p}.c2.w"), vec![inner, 1, 3, 3]);
                    push_gn(&mut specs, format!("{p}.gn2"), inner);
                    push_conv(&mut specs, format!("{p}.c3.w"), vec![c, inner, 1, 1]);
                    push_gn(&mut specs, format!("{p}.gn3"), c);
                }
            }
        }
        prev_c = c;
    }

    specs.push(ParamSpec {
        name: "head.fc.w".into(),
        shape: vec![num_classes, prev_c],
        init: Init::Normal {
            std: 1.0 / (prev_c as f64).sqrt(),
        },
    });
    specs.push(ParamSpec {
        name: "head.fc.b".into(),
        shape: vec![num_classes],
        init: Init::Zeros,
    });
    specs
}

fn realize(spec: &ParamSpec, rng: &mut impl Rng) -> Tensor {
    match spec.init {
        Init::HeNormal { fan_in } => {
            let mut t = Tensor::zeros(&spec.shape);
            t.fill_normal((2.0f64 / fan_in as f64).sqrt() as f32, rng);
            t
        }
        Init::Normal { std } => {
            let mut t = Tensor::zeros(&spec.shape);
            t.fill_normal(std as f32, rng);
            t
        }
        Init::Ones => Tensor::ones(&spec.shape),
        Init::Zeros => Tensor::zeros(&spec.shape),
    }
}

// ── the network ─────────────────────────────────────────────────────────

/// Effective-receptive-field measurement: input-gradient energy of the
/// center output position, and how much of it falls outside the central
/// half-extent box.
#[derive(Debug, Clone)]
pub struct ErfResult {
    /// `[extent, extent]` map of absolute input-gradient mass per pixel,
    /// summed over input channels.
    pub heatmap: Tensor,
    /// Sum of heatmap mass outside the centered box of side `extent / 2`.
    pub outer_response: f64,
    /// Total heatmap mass.
    pub total_response: f64,
}

#[derive(Debug, Clone)]
pub struct SuperNet {
    kind: BlockKind,
    alloc: Allocation,
    num_classes: usize,
    input_channels: usize,
    input_extent: usize,
    pub params: ParameterStore,
}

impl SuperNet {
    /// Builds a freshly initialized network. `input_extent` must be divisible
    /// by `2^stages` (the stem keeps resolution; each stage transition halves
    /// it).
    pub fn build(
        kind: BlockKind,
        alloc: Allocation,
        num_classes: usize,
        input_channels: usize,
        input_extent: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        kind.validate()?;
        if num_classes < 2 {
            return Err(Error::contract("supernet needs >= 2 classes"));
        }
        if input_channels == 0 {
            return Err(Error::contract("supernet needs >= 1 input channel"));
        }
        let ns = alloc.stages();
        let divisor = 1usize << ns;
        if input_extent % divisor != 0 || input_extent / divisor == 0 {
            return Err(Error::contract(format!(
                "input extent {input_extent} must be a positive multiple of 2^{ns} = {divisor}"
            )));
        }
        let mut params = ParameterStore::new();
        for spec in walk_params(&kind, &alloc, input_channels, num_classes) {
            params.insert(&spec.name, realize(&spec, rng))?;
        }
        Ok(SuperNet {
            kind,
            alloc,
            num_classes,
            input_channels,
            input_extent,
            params,
        })
    }

    /// Assembles a network around an existing parameter store (checkpoint
    /// restore). The store must carry exactly the parameters this
    /// architecture walks, with matching shapes.
    pub fn from_parts(
        kind: BlockKind,
        alloc: Allocation,
        num_classes: usize,
        input_channels: usize,
        input_extent: usize,
        params: ParameterStore,
    ) -> Result<Self> {
        let mut rng = crate::rng::derive_rng(0, "from-parts-scratch");
        let mut net = SuperNet::build(
            kind,
            alloc,
            num_classes,
            input_channels,
            input_extent,
            &mut rng,
        )?;
        let want: Vec<String> = net.params.names().map(String::from).collect();
        let have: Vec<String> = params.names().map(String::from).collect();
        if want != have {
            return Err(Error::contract(format!(
                "parameter store does not match architecture: want {} names, have {}",
                want.len(),
                have.len()
            )));
        }
        for name in &want {
            let w = net.params.get(name).expect("walked name");
            let h = params.get(name).expect("checked name");
            if w.value.shape() != h.value.shape() {
                return Err(Error::shape(
                    "from_parts",
                    format!(
                        "{name}: store has {:?}, architecture wants {:?}",
                        h.value.shape(),
                        w.value.shape()
                    ),
                ));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn kind(&self) -> &BlockKind {
        &self.kind
    }

    pub fn alloc(&self) -> &Allocation {
        &self.alloc
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn input_extent(&self) -> usize {
        self.input_extent
    }

    /// SHA-256 over parameter names, shapes, and values.
    pub fn digest(&self) -> String {
        self.params.digest()
    }

    fn conv_gn_relu(
        &self,
        tape: &mut Tape,
        x: NodeId,
        conv: &str,
        gn: &str,
        stride: usize,
        pad: usize,
        groups: usize,
        channels: usize,
        relu: bool,
    ) -> Result<NodeId> {
        let w = tape.param(&self.params, conv)?;
        let mut y = tape.conv2d(x, w, stride, pad, groups)?;
        let g = tape.param(&self.params, &format!("{gn}.g"))?;
        let b = tape.param(&self.params, &format!("{gn}.b"))?;
        y = tape.group_norm(y, g, b, channels, GN_EPS)?;
        if relu {
            y = tape.relu(y)?;
        }
        Ok(y)
    }

    fn block(&self, tape: &mut Tape, x: NodeId, stage: usize, index: usize) -> Result<NodeId> {
        let c = self.kind.stage_channels(stage);
        let inner = self.kind.inner_width(stage);
        let p = format!("s{}.b{:02}", stage + 1, index);
        match self.kind.family {
            BlockFamily::Bottleneck => {
                let mut y = self.conv_gn_relu(
                    tape, x, &format!("{p}.c1.w"), &format!("{p}.gn1"), 1, 0, 1, inner, true,
                )?;
                y = self.conv_gn_relu(
                    tape, y, &format!("{p}.c2.w"), &format!("{p}.gn2"), 1, 1, 1, inner, true,
                )?;
                y = self.conv_gn_relu(
                    tape, y, &format!("{p}.c3.w"), &format!("{p}.gn3"), 1, 0, 1, c, false,
                )?;
                let sum = tape.add(x, y)?;
                tape.relu(sum)
            }
            BlockFamily::Inverted => {
                let mut y = self.conv_gn_relu(
                    tape, x, &format!("{p}.c1.w"), &format!("{p}.gn1"), 1, 0, 1, inner, true,
                )?;
                y = self.conv_gn_relu(
                    tape, y, &format!("{p}.c2.w"), &format!("{p}.gn2"), 1, 1, inner, inner, true,
                )?;
                y = self.conv_gn_relu(
                    tape, y, &format!("{p}.c3.w"), &format!("{p}.gn3"), 1, 0, 1, c, false,
                )?;
                tape.add(x, y)
            }
        }
    }

    /// Pre-head feature map for an already-recorded input node: stem, then
    /// each stage's transition and its first `active[i]` blocks.
    pub fn features(&self, tape: &mut Tape, input: NodeId, active: &ActiveSet) -> Result<NodeId> {
        if !active.fits_within(&self.alloc) {
            return Err(Error::contract(format!(
                "active set {:?} exceeds allocation {}",
                active.as_slice(),
                self.alloc
            )));
        }
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.input_channels || shape[2] != self.input_extent || shape[3] != self.input_extent {
            return Err(Error::shape(
                "supernet features",
                format!(
                    "batch {shape:?} does not match [N, {}, {}, {}]",
                    self.input_channels, self.input_extent, self.input_extent
                ),
            ));
        }
        let base = self.kind.base_width;
        let mut x = self.conv_gn_relu(tape, input, "stem.conv.w", "stem.gn", 1, 1, 1, base, true)?;
        for stage in 0..self.alloc.stages() {
            let c = self.kind.stage_channels(stage);
            let s = stage + 1;
            x = self.conv_gn_relu(
                tape,
                x,
                &format!("s{s}.t.conv.w"),
                &format!("s{s}.t.gn"),
                2,
                0,
                1,
                c,
                true,
            )?;
            for b in 0..active.keep(stage) {
                x = self.block(tape, x, stage, b)?;
            }
        }
        Ok(x)
    }

    /// Full masked forward pass to logits `[N, num_classes]`.
    pub fn forward_logits(
        &self,
        tape: &mut Tape,
        batch: &Tensor,
        active: &ActiveSet,
    ) -> Result<NodeId> {
        let input = tape.input(batch.clone())?;
        let feats = self.features(tape, input, active)?;
        let pooled = tape.global_avg_pool(feats)?;
        let w = tape.param(&self.params, "head.fc.w")?;
        let b = tape.param(&self.params, "head.fc.b")?;
        tape.linear(pooled, w, b)
    }

    /// A standalone network with allocation `child`, carrying this network's
    /// weights: stem, head, transitions, and in each stage the first
    /// `child[i]` blocks. Optimizer state does not transfer.
    pub fn inherit_weights(&self, child: &Allocation) -> Result<SuperNet> {
        if !child.fits_within(&self.alloc) {
            return Err(Error::contract(format!(
                "child allocation {child} does not fit within {}",
                self.alloc
            )));
        }
        let mut params = ParameterStore::new();
        for spec in walk_params(&self.kind, child, self.input_channels, self.num_classes) {
            let value = self.params.get(&spec.name)?.value.clone();
            if value.shape() != spec.shape.as_slice() {
                return Err(Error::shape(
                    "inherit_weights",
                    format!("parameter {:?} has shape {:?}, expected {:?}", spec.name, value.shape(), spec.shape),
                ));
            }
            params.insert(&spec.name, value)?;
        }
        Ok(SuperNet {
            kind: self.kind,
            alloc: child.clone(),
            num_classes: self.num_classes,
            input_channels: self.input_channels,
            input_extent: self.input_extent,
            params,
        })
    }

    /// Replaces the classifier head for a new label space; all backbone
    /// parameters and optimizer state stay in place.
    pub fn reinit_head(&mut self, num_classes: usize, rng: &mut impl Rng) -> Result<()> {
        if num_classes < 2 {
            return Err(Error::contract("reinit_head needs >= 2 classes"));
        }
        let c_last = self.kind.stage_channels(self.alloc.stages() - 1);
        self.params.remove("head.fc.w");
        self.params.remove("head.fc.b");
        let mut w = Tensor::zeros(&[num_classes, c_last]);
        w.fill_normal((1.0f64 / c_last as f64).sqrt() as f32, rng);
        self.params.insert("head.fc.w", w)?;
        self.params.insert("head.fc.b", Tensor::zeros(&[num_classes]))?;
        self.num_classes = num_classes;
        Ok(())
    }

    /// Effective receptive field of the center output position, measured on
    /// an all-ones input with rectifiers bypassed.
    pub fn compute_erf(&self, active: &ActiveSet) -> Result<ErfResult> {
        let mut tape = Tape::with_relu_bypass();
        let ones = Tensor::ones(&[1, self.input_channels, self.input_extent, self.input_extent]);
        let input = tape.input_tracked(ones)?;
        let feats = self.features(&mut tape, input, active)?;
        erf_from_features(&tape, input, feats)
    }
}

/// Computes the ERF heatmap from any recorded (input, feature-map) pair:
/// seeds the gradient at the center spatial position of every feature
/// channel, backprops to the input, and folds absolute gradient mass over
/// input channels. `outer_response` sums the mass outside the centered box
/// of half the input extent.
pub fn erf_from_features(tape: &Tape, input: NodeId, features: NodeId) -> Result<ErfResult> {
    let fshape = tape.value(features).shape().to_vec();
    if fshape.len() != 4 || fshape[0] != 1 {
        return Err(Error::shape(
            "erf_from_features",
            format!("want [1, C, h, w] features, got {fshape:?}"),
        ));
    }
    let ishape = tape.value(input).shape().to_vec();
    if ishape.len() != 4 || ishape[0] != 1 || ishape[2] != ishape[3] {
        return Err(Error::shape(
            "erf_from_features",
            format!("want square [1, C, E, E] input, got {ishape:?}"),
        ));
    }
    let (fc, fh, fw) = (fshape[1], fshape[2], fshape[3]);
    let mut seed = Tensor::zeros(&fshape);
    let (cy, cx) = (fh / 2, fw / 2);
    for c in 0..fc {
        seed.data_mut()[(c * fh + cy) * fw + cx] = 1.0;
    }
    let grad = tape.grad_wrt(features, &seed, input)?;
    let (ic, e) = (ishape[1], ishape[2]);
    let mut heatmap = Tensor::zeros(&[e, e]);
    {
        let hm = heatmap.data_mut();
        let gd = grad.data();
        for c in 0..ic {
            for i in 0..e * e {
                hm[i] += gd[c * e * e + i].abs();
            }
        }
    }
    let side = e / 2;
    let lo = (e - side) / 2;
    let hi = lo + side;
    let mut total = 0.0f64;
    let mut inner = 0.0f64;
    for y in 0..e {
        for x in 0..e {
            let v = heatmap.data()[y * e + x] as f64;
            total += v;
            if y >= lo && y < hi && x >= lo && x < hi {
                inner += v;
            }
        }
    }
    Ok(ErfResult {
        heatmap,
        outer_response: total - inner,
        total_response: total,
    })
}
