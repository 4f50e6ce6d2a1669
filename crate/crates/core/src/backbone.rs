//! Convolutional backbones, NHWC in, pooled feature vector out.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, max_pool, BatchNorm, CallTrace, Component, Conv2d, Dense, DenseInit, ParamStore};
use crate::rng::SeededRandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Three stride-2 conv blocks; the desk-scale default.
    TinyCnn,
    /// LeNet-style digits network (conv-pool ×2, two 1024-wide FC layers), 32×32 input.
    Convnet,
    /// Wide ResNet, depth 16, widen factor 4.
    Wrn16_4,
    Resnet18,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::TinyCnn => "tiny_cnn",
            BackboneKind::Convnet => "convnet",
            BackboneKind::Wrn16_4 => "wrn16_4",
            BackboneKind::Resnet18 => "resnet18",
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            BackboneKind::TinyCnn => TINY_WIDTHS[2],
            BackboneKind::Convnet => 1024,
            BackboneKind::Wrn16_4 => 256,
            BackboneKind::Resnet18 => 512,
        }
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [BackboneKind::TinyCnn, BackboneKind::Convnet, BackboneKind::Wrn16_4, BackboneKind::Resnet18]
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown backbone `{s}`")))
    }
}

const TINY_WIDTHS: [usize; 3] = [32, 64, 96];

#[derive(Debug)]
pub enum Backbone {
    Tiny(Vec<Conv2d>),
    Convnet { convs: [Conv2d; 2], fcs: [Dense; 2] },
    Wrn { stem: Conv2d, blocks: Vec<PreActBlock>, bn: BatchNorm },
    Resnet { stem: Conv2d, bn: BatchNorm, blocks: Vec<BasicBlock> },
}

impl Backbone {
    pub fn new(
        kind: BackboneKind,
        in_channels: usize,
        ps: &mut ParamStore,
        rng: &mut SeededRandomSource,
        trace: &Arc<CallTrace>,
    ) -> Result<Self> {
        let p = Component::Backbone.key();
        let t = trace.clone();
        Ok(match kind {
            BackboneKind::TinyCnn => {
                let mut convs = Vec::new();
                let mut cin = in_channels;
                for (i, w) in TINY_WIDTHS.iter().enumerate() {
                    convs.push(Conv2d::new(ps, &format!("{p}.conv{i}"), cin, *w, 3, 2, 1, true, rng, t.clone())?);
                    cin = *w;
                }
                Backbone::Tiny(convs)
            }
            BackboneKind::Convnet => Backbone::Convnet {
                convs: [
                    Conv2d::new(ps, &format!("{p}.conv0"), in_channels, 64, 5, 1, 0, true, rng, t.clone())?,
                    Conv2d::new(ps, &format!("{p}.conv1"), 64, 128, 5, 1, 0, true, rng, t.clone())?,
                ],
                fcs: [
                    Dense::new(ps, &format!("{p}.fc0"), 5 * 5 * 128, 1024, DenseInit::He, rng, Component::Backbone, t.clone())?,
                    Dense::new(ps, &format!("{p}.fc1"), 1024, 1024, DenseInit::He, rng, Component::Backbone, t)?,
                ],
            },
            BackboneKind::Wrn16_4 => {
                let stem = Conv2d::new(ps, &format!("{p}.conv0"), in_channels, 16, 3, 1, 1, false, rng, t.clone())?;
                let mut blocks = Vec::new();
                let mut cin = 16;
                for (g, (width, stride)) in [(64, 1), (128, 2), (256, 2)].into_iter().enumerate() {
                    for b in 0..2 {
                        let name = format!("{p}.group{g}.block{b}");
                        let s = if b == 0 { stride } else { 1 };
                        blocks.push(PreActBlock::new(ps, &name, cin, width, s, rng, trace)?);
                        cin = width;
                    }
                }
                let bn = BatchNorm::new(ps, &format!("{p}.bn_final"), 256)?;
                Backbone::Wrn { stem, blocks, bn }
            }
            BackboneKind::Resnet18 => {
                let stem = Conv2d::new(ps, &format!("{p}.conv1"), in_channels, 64, 7, 2, 3, false, rng, t)?;
                let bn = BatchNorm::new(ps, &format!("{p}.bn1"), 64)?;
                let mut blocks = Vec::new();
                let mut cin = 64;
                for (l, (width, stride)) in [(64, 1), (128, 2), (256, 2), (512, 2)].into_iter().enumerate() {
                    for b in 0..2 {
                        let name = format!("{p}.layer{}.{b}", l + 1);
                        let s = if b == 0 { stride } else { 1 };
                        blocks.push(BasicBlock::new(ps, &name, cin, width, s, rng, trace)?);
                        cin = width;
                    }
                }
                Backbone::Resnet { stem, bn, blocks }
            }
        })
    }

    /// `(B, H, W, C)` → `(B, output_dim)`.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Backbone::Tiny(convs) => {
                let mut h = x.clone();
                for c in convs {
                    h = c.forward(&h)?.relu()?;
                }
                global_avg_pool(&h)
            }
            Backbone::Convnet { convs, fcs } => {
                let (_, hh, ww, _) = x.dims4()?;
                if hh != 32 || ww != 32 {
                    return Err(Error::Argument(format!("convnet expects 32x32 inputs, got {hh}x{ww}")));
                }
                let mut h = x.clone();
                for c in convs {
                    h = max_pool(&c.forward(&h)?.relu()?, 2, 2, 0)?;
                }
                let mut h = h.flatten_from(1)?;
                for f in fcs {
                    h = f.forward(&h)?.relu()?;
                }
                Ok(h)
            }
            Backbone::Wrn { stem, blocks, bn } => {
                let mut h = stem.forward(x)?;
                for b in blocks {
                    h = b.forward(&h, train)?;
                }
                global_avg_pool(&bn.forward(&h, train)?.relu()?)
            }
            Backbone::Resnet { stem, bn, blocks } => {
                let mut h = max_pool(&bn.forward(&stem.forward(x)?, train)?.relu()?, 3, 2, 1)?;
                for b in blocks {
                    h = b.forward(&h, train)?;
                }
                global_avg_pool(&h)
            }
        }
    }

    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        match self {
            Backbone::Tiny(_) | Backbone::Convnet { .. } => {}
            Backbone::Wrn { blocks, bn, .. } => {
                for b in blocks {
                    out.extend(b.bn1.buffers());
                    out.extend(b.bn2.buffers());
                }
                out.extend(bn.buffers());
            }
            Backbone::Resnet { bn, blocks, .. } => {
                out.extend(bn.buffers());
                for b in blocks {
                    out.extend(b.bn1.buffers());
                    out.extend(b.bn2.buffers());
                    if let Some((_, sbn)) = &b.shortcut {
                        out.extend(sbn.buffers());
                    }
                }
            }
        }
        out
    }

    pub fn load_buffers(&self, buffers: &BTreeMap<String, Tensor>) -> Result<()> {
        match self {
            Backbone::Tiny(_) | Backbone::Convnet { .. } => Ok(()),
            Backbone::Wrn { blocks, bn, .. } => {
                for b in blocks {
                    b.bn1.load_buffers(buffers)?;
                    b.bn2.load_buffers(buffers)?;
                }
                bn.load_buffers(buffers)
            }
            Backbone::Resnet { bn, blocks, .. } => {
                bn.load_buffers(buffers)?;
                for b in blocks {
                    b.bn1.load_buffers(buffers)?;
                    b.bn2.load_buffers(buffers)?;
                    if let Some((_, sbn)) = &b.shortcut {
                        sbn.load_buffers(buffers)?;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Pre-activation residual block (BN-ReLU-conv ×2).
#[derive(Debug)]
pub struct PreActBlock {
    bn1: BatchNorm,
    conv1: Conv2d,
    bn2: BatchNorm,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl PreActBlock {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut SeededRandomSource,
        trace: &Arc<CallTrace>,
    ) -> Result<Self> {
        Ok(Self {
            bn1: BatchNorm::new(ps, &format!("{name}.bn1"), cin)?,
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng, trace.clone())?,
            bn2: BatchNorm::new(ps, &format!("{name}.bn2"), cout)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng, trace.clone())?,
            shortcut: if cin != cout || stride != 1 {
                Some(Conv2d::new(ps, &format!("{name}.shortcut"), cin, cout, 1, stride, 0, false, rng, trace.clone())?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let o = self.bn1.forward(x, train)?.relu()?;
        let residual = match &self.shortcut {
            Some(s) => s.forward(&o)?,
            None => x.clone(),
        };
        let h = self.conv1.forward(&o)?;
        let h = self.conv2.forward(&self.bn2.forward(&h, train)?.relu()?)?;
        Ok((h + residual)?)
    }
}

/// ResNet basic block (conv-BN-ReLU-conv-BN + shortcut, ReLU).
#[derive(Debug)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut SeededRandomSource,
        trace: &Arc<CallTrace>,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng, trace.clone())?,
            bn1: BatchNorm::new(ps, &format!("{name}.bn1"), cout)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng, trace.clone())?,
            bn2: BatchNorm::new(ps, &format!("{name}.bn2"), cout)?,
            shortcut: if cin != cout || stride != 1 {
                Some((
                    Conv2d::new(ps, &format!("{name}.downsample.0"), cin, cout, 1, stride, 0, false, rng, trace.clone())?,
                    BatchNorm::new(ps, &format!("{name}.downsample.1"), cout)?,
                ))
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?;
        let residual = match &self.shortcut {
            Some((c, bn)) => bn.forward(&c.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((h + residual)?.relu()?)
    }
}
