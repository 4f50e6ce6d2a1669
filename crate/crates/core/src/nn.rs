//! Layers on top of candle, in NHWC layout.
//!
//! Convolutions are `im2col` + matmul with a hand-written `col2im` backward;
//! candle's own conv backward is several times slower on CPU. Parameters are
//! initialized from a seeded stream so that a run is a pure function of its
//! seed.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, Var, D};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRandomSource;

/// The learnable components of the model, keyed as in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    Backbone,
    Projection,
    Classifier,
    Reduction,
    EncoderAg,
    EncoderAp,
    Augmentor,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Backbone,
        Component::Projection,
        Component::Classifier,
        Component::Reduction,
        Component::EncoderAg,
        Component::EncoderAp,
        Component::Augmentor,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Component::Backbone => "F.backbone",
            Component::Projection => "F.proj",
            Component::Classifier => "H",
            Component::Reduction => "M",
            Component::EncoderAg => "E_ag",
            Component::EncoderAp => "E_ap",
            Component::Augmentor => "A",
        }
    }

    pub fn of_param(name: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| name.strip_prefix(c.key()).is_some_and(|r| r.starts_with('.')))
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Per-component forward-call and multiply-accumulate counters.
#[derive(Debug, Default)]
pub struct CallTrace {
    calls: [AtomicU64; 7],
    macs: [AtomicU64; 7],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceSnapshot {
    pub calls: BTreeMap<Component, u64>,
    pub macs: BTreeMap<Component, u64>,
}

impl TraceSnapshot {
    pub fn touched(&self) -> Vec<Component> {
        self.calls.iter().filter(|(_, n)| **n > 0).map(|(c, _)| *c).collect()
    }

    pub fn total_macs(&self) -> u64 {
        self.macs.values().sum()
    }
}

impl CallTrace {
    pub fn record(&self, c: Component, macs: u64) {
        self.calls[c.slot()].fetch_add(1, Ordering::Relaxed);
        self.macs[c.slot()].fetch_add(macs, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        for a in self.calls.iter().chain(&self.macs) {
            a.store(0, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> TraceSnapshot {
        let mut s = TraceSnapshot::default();
        for c in Component::ALL {
            s.calls.insert(c, self.calls[c.slot()].load(Ordering::Relaxed));
            s.macs.insert(c, self.macs[c.slot()].load(Ordering::Relaxed));
        }
        s
    }
}

/// Named trainable variables in a deterministic (sorted) order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { vars: BTreeMap::new(), dtype, device: Device::Cpu }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64, rng: &mut SeededRandomSource) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        self.insert(name, values, shape)
    }

    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64, rng: &mut SeededRandomSource) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, values, shape)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(dims: (usize, usize, usize, usize), k: usize, stride: usize, pad: usize) -> Result<Self> {
        let (b, h, w, c) = dims;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Argument(format!("{h}x{w} input is smaller than a {k}x{k} window")));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(Self { b, h, w, c, k, stride, pad, ho, wo })
    }

    fn row(&self) -> usize {
        self.k * self.k * self.c
    }

    /// Calls `f(src_offset, dst_offset)` for every in-bounds window tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let row = self.row();
        for b in 0..self.b {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let base = ((b * self.ho + oy) * self.wo + ox) * row;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src = ((b * self.h + iy as usize) * self.w + ix as usize) * self.c;
                            f(src, base + (ky * self.k + kx) * self.c);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Copy + Default>(&self, src: &[T]) -> Vec<T> {
        let c = self.c;
        let mut out = vec![T::default(); self.b * self.ho * self.wo * self.row()];
        self.for_each_tap(|s, d| out[d..d + c].copy_from_slice(&src[s..s + c]));
        out
    }

    fn col2im<T: Copy + Default + std::ops::AddAssign>(&self, src: &[T]) -> Vec<T> {
        let c = self.c;
        let mut out = vec![T::default(); self.b * self.h * self.w * c];
        self.for_each_tap(|s, d| {
            for i in 0..c {
                out[s + i] += src[d + i];
            }
        });
        out
    }
}

fn contiguous_slice<'a, T>(v: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&v[start..end]),
        None => candle_core::bail!("im2col expects a contiguous input"),
    }
}

/// `(B, H, W, C)` → `(B·Ho·Wo, k·k·C)` patch matrix, zero padded.
struct Im2Col {
    k: usize,
    stride: usize,
    pad: usize,
}

/// Adjoint of [`Im2Col`]: scatter-adds patches back into the image.
struct Col2Im(Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col-nhwc"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = Geometry::new(layout.shape().dims4()?, self.k, self.stride, self.pad)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        let shape = Shape::from((g.b * g.ho * g.wo, g.row()));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.im2col(contiguous_slice(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(g.im2col(contiguous_slice(v, layout)?)),
            _ => candle_core::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = Geometry::new(arg.dims4()?, self.k, self.stride, self.pad)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(g))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im-nhwc"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.col2im(contiguous_slice(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(g.col2im(contiguous_slice(v, layout)?)),
            _ => candle_core::bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, Shape::from((g.b, g.h, g.w, g.c))))
    }
}

fn patches(x: &Tensor, k: usize, stride: usize, pad: usize) -> Result<(Tensor, Geometry)> {
    let g = Geometry::new(x.dims4()?, k, stride, pad)?;
    let cols = x.contiguous()?.apply_op1(Im2Col { k, stride, pad })?;
    Ok((cols, g))
}

/// Max pooling over `k`×`k` windows. Zero padding assumes non-negative input.
pub fn max_pool(x: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let (cols, g) = patches(x, k, stride, pad)?;
    Ok(cols.reshape((g.b * g.ho * g.wo, k * k, g.c))?.max(1)?.reshape((g.b, g.ho, g.wo, g.c))?)
}

/// Mean over the spatial axes of an NHWC tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean((1, 2))?)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    k: usize,
    stride: usize,
    pad: usize,
    cout: usize,
    trace: Arc<CallTrace>,
}

impl Conv2d {
    /// He-normal weights; optional zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut SeededRandomSource,
        trace: Arc<CallTrace>,
    ) -> Result<Self> {
        let fan_in = k * k * cin;
        let weight = ps.normal(format!("{name}.weight"), &[fan_in, cout], (2.0 / fan_in as f64).sqrt(), rng)?;
        let bias = if bias { Some(ps.constant(format!("{name}.bias"), &[cout], 0.0)?) } else { None };
        Ok(Self { weight, bias, k, stride, pad, cout, trace })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (cols, g) = patches(x, self.k, self.stride, self.pad)?;
        if cols.dim(1)? != self.weight.dim(0)? {
            return Err(Error::Argument(format!(
                "conv expects {} input channels, got {}",
                self.weight.dim(0)? / (self.k * self.k),
                g.c
            )));
        }
        self.trace.record(Component::Backbone, (cols.dim(0)? * cols.dim(1)? * self.cout) as u64);
        let mut y = cols.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        Ok(y.reshape((g.b, g.ho, g.wo, self.cout))?)
    }
}

/// Batch normalization over the channel (last) axis.
#[derive(Debug)]
pub struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running: Mutex<(Tensor, Tensor)>,
    name: String,
}

impl BatchNorm {
    const EPS: f64 = 1e-5;
    const MOMENTUM: f64 = 0.1;

    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = ps.constant(format!("{name}.weight"), &[channels], 1.0)?;
        let beta = ps.constant(format!("{name}.bias"), &[channels], 0.0)?;
        let running = Mutex::new((
            Tensor::zeros(channels, ps.dtype(), ps.device())?,
            Tensor::ones(channels, ps.dtype(), ps.device())?,
        ));
        Ok(Self { gamma, beta, running, name: name.to_string() })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(D::Minus1)?;
        let flat = x.reshape(((), c))?;
        let (mean, var) = if train {
            let mean = flat.mean(0)?;
            let centered = flat.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean(0)?;
            let n = flat.dim(0)? as f64;
            let mut run = self.running.lock().expect("running stats lock");
            let unbiased = (var.detach() * (n / (n - 1.0).max(1.0)))?;
            run.0 = ((&run.0 * (1.0 - Self::MOMENTUM))? + (mean.detach() * Self::MOMENTUM)?)?;
            run.1 = ((&run.1 * (1.0 - Self::MOMENTUM))? + (unbiased * Self::MOMENTUM)?)?;
            (mean, var)
        } else {
            let run = self.running.lock().expect("running stats lock");
            (run.0.clone(), run.1.clone())
        };
        let y = flat
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + Self::EPS)?.sqrt()?)?
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?;
        Ok(y.reshape(x.shape())?)
    }

    /// Running statistics keyed `<name>.running_mean` / `<name>.running_var`.
    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        let run = self.running.lock().expect("running stats lock");
        vec![
            (format!("{}.running_mean", self.name), run.0.clone()),
            (format!("{}.running_var", self.name), run.1.clone()),
        ]
    }

    pub fn load_buffers(&self, buffers: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut guard = self.running.lock().expect("running stats lock");
        let run = &mut *guard;
        for (suffix, slot) in [("running_mean", &mut run.0), ("running_var", &mut run.1)] {
            let key = format!("{}.{suffix}", self.name);
            let t = buffers.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing buffer `{key}`")))?;
            *slot = t.to_dtype(slot.dtype())?;
        }
        Ok(())
    }
}

/// Fully connected layer `y = x Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
    component: Component,
    trace: Arc<CallTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenseInit {
    /// Uniform in ±1/√fan_in for both weight and bias.
    Default,
    /// He-normal weights, zero bias; for layers followed by ReLU.
    He,
    Zeros,
}

impl Dense {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        init: DenseInit,
        rng: &mut SeededRandomSource,
        component: Component,
        trace: Arc<CallTrace>,
    ) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let (weight, bias) = match init {
            DenseInit::Default => (
                ps.uniform(format!("{name}.weight"), &[output, input], bound, rng)?,
                ps.uniform(format!("{name}.bias"), &[output], bound, rng)?,
            ),
            DenseInit::He => (
                ps.normal(format!("{name}.weight"), &[output, input], (2.0 / input as f64).sqrt(), rng)?,
                ps.constant(format!("{name}.bias"), &[output], 0.0)?,
            ),
            DenseInit::Zeros => (
                ps.constant(format!("{name}.weight"), &[output, input], 0.0)?,
                ps.constant(format!("{name}.bias"), &[output], 0.0)?,
            ),
        };
        Ok(Self { weight, bias, component, trace })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, input) = x.dims2()?;
        if input != self.input_dim() {
            return Err(Error::Argument(format!(
                "{} expects inputs of length {}, got {input}",
                self.component.key(),
                self.input_dim()
            )));
        }
        self.trace.record(self.component, (n * input * self.output_dim()) as u64);
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}
