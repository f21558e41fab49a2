//! Theoretical and effective receptive fields of backbone stage outputs.
//!
//! The effective field is modeled without weights: every layer spreads an
//! output unit's input mass uniformly over its (dilated, stride-upsampled)
//! taps, and the composition of those spreads gives a Gaussian-like profile.
//! Kernels are separable, so one axis is enough.

use crate::arch::{Architecture, BlockKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Layer {
    pub kernel: u32,
    pub stride: u32,
    pub dilation: u32,
}

impl Layer {
    pub fn new(kernel: u32, stride: u32, dilation: u32) -> Result<Self> {
        let layer = Layer {
            kernel,
            stride,
            dilation,
        };
        layer.check()?;
        Ok(layer)
    }

    fn check(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.stride == 0 || self.dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer needs an odd kernel and positive stride/dilation, got {self:?}"
            )));
        }
        Ok(())
    }

    fn conv(kernel: u32, stride: u32, dilation: u32) -> Self {
        Layer {
            kernel,
            stride,
            dilation,
        }
    }
}

/// Conv layers ordered input to output.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerChain {
    pub layers: Vec<Layer>,
}

impl LayerChain {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for l in &layers {
            l.check()?;
        }
        Ok(LayerChain { layers })
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Conv layers of one block. `stride` is applied where the block kind puts
/// its downsampling: the first 3x3 of a basic block, the center conv of a
/// bottleneck and the depthwise conv of an inverted residual.
fn block_layers(kind: BlockKind, stride: u32, dilation: u32) -> [Option<Layer>; 3] {
    match kind {
        BlockKind::Basic => [
            Some(Layer::conv(3, stride, 1)),
            Some(Layer::conv(3, 1, dilation)),
            None,
        ],
        BlockKind::Bottleneck | BlockKind::GroupedBottleneck | BlockKind::InvertedResidual => [
            Some(Layer::conv(1, 1, 1)),
            Some(Layer::conv(3, stride, dilation)),
            Some(Layer::conv(1, 1, 1)),
        ],
    }
}

/// Expands `arch` into conv layers up to the output of searchable stage
/// `up_to_stage` (1-based; 0 gives the stem alone). Fixed prefix blocks sit
/// in front of stage 1 and fixed suffix blocks follow the last stage.
pub fn arch_to_layer_chain(arch: &Architecture, up_to_stage: usize) -> Result<LayerChain> {
    let family = &arch.family;
    if up_to_stage > family.num_stages {
        return Err(Error::StageOutOfRange {
            index: up_to_stage,
            stages: family.num_stages,
        });
    }
    crate::arch::validate_architecture(arch)?;
    let mut chain = LayerChain::default();
    for s in &family.stem {
        chain.push(Layer::conv(s.kernel, s.stride, 1));
    }
    if up_to_stage == 0 {
        return Ok(chain);
    }

    let kind = family.block_kind;
    let mut block = 0usize;
    let mut push_block = |chain: &mut LayerChain, stride: u32| {
        let dilation = arch.op_code.dilation(block);
        block += 1;
        for layer in block_layers(kind, stride, dilation).into_iter().flatten() {
            chain.push(layer);
        }
    };

    for _ in 0..family.fixed_prefix_blocks {
        push_block(&mut chain, 1);
    }
    for (stage, &count) in arch.stage_code.counts()[..up_to_stage].iter().enumerate() {
        for i in 0..count {
            let stride = if i == 0 {
                family.stage_strides[stage]
            } else {
                1
            };
            push_block(&mut chain, stride);
        }
    }
    if up_to_stage == family.num_stages {
        for _ in 0..family.fixed_suffix_blocks {
            push_block(&mut chain, 1);
        }
    }
    Ok(chain)
}

/// Input extent, in pixels, of one output unit.
pub fn theoretical_rf(chain: &LayerChain) -> u64 {
    let mut rf = 1u64;
    let mut jump = 1u64;
    for l in &chain.layers {
        rf += u64::from(l.kernel - 1) * u64::from(l.dilation) * jump;
        jump *= u64::from(l.stride);
    }
    rf
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErfProfile {
    /// Mass per input offset, centered at `profile.len() / 2`.
    pub profile: Vec<f64>,
    /// Standard deviation of the profile, in input pixels.
    pub effective_radius: f64,
}

/// One-axis spread profile on an odd `support` of at least the theoretical
/// field.
pub fn erf_profile(chain: &LayerChain, support: usize) -> Result<ErfProfile> {
    let required = theoretical_rf(chain);
    if support.is_multiple_of(2) || (support as u64) < required {
        return Err(Error::SupportTooSmall { support, required });
    }
    let center = support / 2;
    let mut mass = vec![0.0f64; support];
    mass[center] = 1.0;
    // Current reach from the center, to keep each pass proportional to the
    // occupied span rather than the whole support.
    let mut reach = 0usize;
    let mut jump = 1usize;
    for l in &chain.layers {
        let half = (l.kernel as usize - 1) / 2;
        if half > 0 {
            let step = l.dilation as usize * jump;
            let tap = 1.0 / l.kernel as f64;
            let new_reach = reach + half * step;
            let mut next = vec![0.0f64; support];
            for x in center - reach..=center + reach {
                let m = mass[x];
                if m == 0.0 {
                    continue;
                }
                for t in 0..l.kernel as usize {
                    next[x + t * step - half * step] += m * tap;
                }
            }
            mass = next;
            reach = new_reach;
        }
        jump *= l.stride as usize;
    }
    let effective_radius = spread(&mass, center);
    Ok(ErfProfile {
        profile: mass,
        effective_radius,
    })
}

fn spread(mass: &[f64], center: usize) -> f64 {
    let total: f64 = mass.iter().sum();
    let mean: f64 = mass
        .iter()
        .enumerate()
        .map(|(i, m)| (i as f64 - center as f64) * m)
        .sum::<f64>()
        / total;
    let var: f64 = mass
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let d = i as f64 - center as f64 - mean;
            d * d * m
        })
        .sum::<f64>()
        / total;
    var.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageField {
    pub stage: usize,
    pub trf: u64,
    pub erf_radius: f64,
}

/// Theoretical field and effective radius at the output of every stage.
pub fn stage_fields(arch: &Architecture) -> Result<Vec<StageField>> {
    (1..=arch.family.num_stages)
        .map(|stage| {
            let chain = arch_to_layer_chain(arch, stage)?;
            let trf = theoretical_rf(&chain);
            let erf = erf_profile(&chain, trf as usize)?;
            Ok(StageField {
                stage,
                trf,
                erf_radius: erf.effective_radius,
            })
        })
        .collect()
}
