//! Multiply-accumulate cost model.
//!
//! Conventions, frozen so numbers are comparable across the crate:
//! one FLOP is one multiply-accumulate; only convolutions and fully connected
//! layers are counted (normalization, activations, pooling, and residual adds
//! are free). Counts are exact integers internally and exposed as f64.
//!
//! A [`CostSpec`] prices one network family at one input extent: the fixed
//! overhead (stem, per-stage transitions, head) plus the cost of one
//! searchable block per stage. Total model cost is then affine in the
//! per-stage block counts, which is what makes FLOPs budgets and per-stage
//! block weights cheap to derive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supernet::{Allocation, BlockFamily, BlockKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSpec {
    pub family: BlockFamily,
    pub input_extent: usize,
    pub num_classes: usize,
    pub stem_macs: u64,
    /// One entry per stage: the downsampling transition into that stage.
    pub transition_macs: Vec<u64>,
    /// One entry per stage: cost of a single searchable block there.
    pub block_macs: Vec<u64>,
    pub head_macs: u64,
}

impl CostSpec {
    /// Full-scale bottleneck-residual reference: 7x7/2 stem into a pooled
    /// quarter-resolution trunk, four stages with channels 256 to 2048,
    /// inner width a quarter of the stage width, 1x1 strided transitions,
    /// and a linear head. `input_extent` must be a positive multiple of 32.
    pub fn bottleneck_reference(input_extent: usize, num_classes: usize) -> Result<Self> {
        if input_extent % 32 != 0 || input_extent == 0 {
            return Err(Error::contract(format!(
                "bottleneck reference wants an extent divisible by 32, got {input_extent}"
            )));
        }
        if num_classes == 0 {
            return Err(Error::contract("num_classes must be >= 1"));
        }
        let e = input_extent as u64;
        // 7x7 stride-2 stem, 3 -> 64 channels, at half resolution; the
        // following 3x3 max pool (free under the MAC convention) halves again.
        let stem = (e / 2) * (e / 2) * 3 * 64 * 49;
        let mut transitions = Vec::new();
        let mut blocks = Vec::new();
        let mut prev_c: u64 = 64;
        for stage in 0..4u32 {
            let s = e / 4 / (1 << stage); // 56, 28, 14, 7 at extent 224
            let c: u64 = 256 << stage;
            let w = c / 4;
            // 1x1 transition from the previous width, applied at this
            // stage's output resolution (stage 1 keeps the pooled stride).
            transitions.push(s * s * prev_c * c);
            // bottleneck block: 1x1 c->w, 3x3 w->w, 1x1 w->c
            blocks.push(s * s * (c * w + 9 * w * w + w * c));
            prev_c = c;
        }
        Ok(CostSpec {
            family: BlockFamily::Bottleneck,
            input_extent,
            num_classes,
            stem_macs: stem,
            transition_macs: transitions,
            block_macs: blocks,
            head_macs: prev_c * num_classes as u64,
        })
    }

    /// Full-scale inverted-residual reference: 3x3/2 stem to 32 channels, an
    /// expansion-1 entry block to 16, five stages with channels
    /// [24, 32, 64, 96, 160] (stage 4 keeps resolution), expansion factor 6,
    /// and a 320 -> 1280 head before the classifier.
    pub fn inverted_reference(input_extent: usize, num_classes: usize) -> Result<Self> {
        if input_extent % 32 != 0 || input_extent == 0 {
            return Err(Error::contract(format!(
                "inverted reference wants an extent divisible by 32, got {input_extent}"
            )));
        }
        if num_classes == 0 {
            return Err(Error::contract("num_classes must be >= 1"));
        }
        let e = input_extent as u64;
        let half = e / 2;
        // stem conv 3->32 plus the expansion-1 entry block (depthwise 3x3 on
        // 32 then project to 16), all at half resolution
        let stem = half * half * 3 * 32 * 9 + half * half * 32 * 9 + half * half * 32 * 16;
        let channels: [u64; 5] = [24, 32, 64, 96, 160];
        // output extents per stage; stage 4 does not downsample
        let extents: [u64; 5] = [e / 4, e / 8, e / 16, e / 16, e / 32];
        let mut prev_c: u64 = 16;
        let mut prev_s: u64 = half;
        let mut transitions = Vec::new();
        let mut blocks = Vec::new();
        for stage in 0..5 {
            let c = channels[stage];
            let s = extents[stage];
            let h = 6 * prev_c;
            // strided inverted-residual transition: expand at the input
            // resolution, depthwise + project at the output resolution
            transitions.push(prev_s * prev_s * prev_c * h + s * s * h * 9 + s * s * h * c);
            // in-stage block: expand, depthwise, project, all at s
            let hb = 6 * c;
            blocks.push(s * s * (c * hb + hb * 9 + hb * c));
            prev_c = c;
            prev_s = s;
        }
        // head: one more expansion block to 320, 1x1 to 1280, classifier
        let h = 6 * prev_c;
        let head = prev_s * prev_s * (prev_c * h + h * 9 + h * 320)
            + prev_s * prev_s * 320 * 1280
            + 1280 * num_classes as u64;
        Ok(CostSpec {
            family: BlockFamily::Inverted,
            input_extent,
            num_classes,
            stem_macs: stem,
            transition_macs: transitions,
            block_macs: blocks,
            head_macs: head,
        })
    }

    /// Prices the desk-scale networks built by [`crate::supernet::SuperNet`]:
    /// 3x3 stride-1 stem, 1x1 stride-2 transitions, and the same block shapes
    /// the forward pass runs.
    pub fn for_desk(
        kind: &BlockKind,
        stages: usize,
        input_channels: usize,
        input_extent: usize,
        num_classes: usize,
    ) -> Result<Self> {
        kind.validate()?;
        if stages == 0 {
            return Err(Error::contract("need >= 1 stage"));
        }
        let divisor = 1usize << stages;
        if input_extent % divisor != 0 || input_extent / divisor == 0 {
            return Err(Error::contract(format!(
                "extent {input_extent} must be a positive multiple of 2^{stages}"
            )));
        }
        let e = input_extent as u64;
        let base = kind.base_width as u64;
        let stem = e * e * input_channels as u64 * base * 9;
        let mut transitions = Vec::new();
        let mut blocks = Vec::new();
        let mut prev_c = base;
        for stage in 0..stages {
            let c = kind.stage_channels(stage) as u64;
            let w = kind.inner_width(stage) as u64;
            let s = e / (1 << (stage + 1) as u32);
            transitions.push(s * s * prev_c * c);
            let block = match kind.family {
                BlockFamily::Bottleneck => s * s * (c * w + 9 * w * w + w * c),
                BlockFamily::Inverted => s * s * (c * w + w * 9 + w * c),
            };
            blocks.push(block);
            prev_c = c;
        }
        Ok(CostSpec {
            family: kind.family,
            input_extent,
            num_classes,
            stem_macs: stem,
            transition_macs: transitions,
            block_macs: blocks,
            head_macs: prev_c * num_classes as u64,
        })
    }

    pub fn stages(&self) -> usize {
        self.block_macs.len()
    }

    /// Cost of one searchable block in `stage` (zero-based).
    pub fn block_flops(&self, stage: usize) -> f64 {
        self.block_macs[stage] as f64
    }

    /// Stem + transitions + head: the part no allocation can change.
    pub fn fixed_flops(&self) -> f64 {
        let t: u64 = self.transition_macs.iter().sum();
        (self.stem_macs + t + self.head_macs) as f64
    }

    /// Total cost of a model with the given allocation. Exactly affine in
    /// the block counts.
    pub fn model_flops(&self, alloc: &Allocation) -> Result<f64> {
        if alloc.stages() != self.stages() {
            return Err(Error::contract(format!(
                "allocation {alloc} has {} stages, cost spec has {}",
                alloc.stages(),
                self.stages()
            )));
        }
        let mut total = self.stem_macs + self.head_macs;
        for (stage, &t) in self.transition_macs.iter().enumerate() {
            total += t + self.block_macs[stage] * alloc.get(stage) as u64;
        }
        Ok(total as f64)
    }

    /// Per-stage search weights: each stage's block cost divided by the
    /// cheapest stage's block cost, so the cheapest stage has weight 1 and a
    /// weighted allocation size is denominated in cheapest-block units.
    pub fn derive_weights(&self) -> Vec<f64> {
        let min = *self.block_macs.iter().min().expect("at least one stage") as f64;
        self.block_macs.iter().map(|&b| b as f64 / min).collect()
    }
}
