//! Convolution, batch norm, leaky ReLU and max pooling, plus the CBL
//! composite built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tensorfile::TensorFile;

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.1;
pub const DEFAULT_BN_EPS: f32 = 1e-5;

/// Activation and normalization constants shared by every CBL in a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConstants {
    #[serde(default = "default_slope")]
    pub leaky_slope: f32,
    #[serde(default = "default_eps")]
    pub bn_eps: f32,
}

fn default_slope() -> f32 {
    DEFAULT_LEAKY_SLOPE
}

fn default_eps() -> f32 {
    DEFAULT_BN_EPS
}

impl Default for LayerConstants {
    fn default() -> Self {
        LayerConstants {
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bn_eps: DEFAULT_BN_EPS,
        }
    }
}

/// A bias-free square convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    /// `(C_out, C_in, k, k)`.
    pub weight: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvWeights {
    pub fn new(weight: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [_, _, kh, kw] = weight.dims();
        if kh != kw || kh % 2 == 0 {
            return Err(Error::contract(format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::contract("stride must be positive"));
        }
        Ok(ConvWeights {
            weight,
            stride,
            padding,
        })
    }

    /// Kaiming-uniform style initialization.
    pub fn random<R: Rng + ?Sized>(c_out: usize, c_in: usize, k: usize, stride: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / ((c_in * k * k) as f32).sqrt();
        let weight = Tensor::random([c_out, c_in, k, k], -bound, bound, rng)?;
        Self::new(weight, stride, k / 2)
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize) -> Result<Self> {
        Self::new(Tensor::zeros([c_out, c_in, k, k])?, stride, k / 2)
    }

    pub fn c_out(&self) -> usize {
        self.weight.n()
    }

    pub fn c_in(&self) -> usize {
        self.weight.c()
    }

    pub fn kernel(&self) -> usize {
        self.weight.h()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k || pw < k {
            return Err(Error::contract(format!(
                "input {h}x{w} with padding {} is smaller than kernel {k}",
                self.padding
            )));
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    pub fn export(&self, prefix: &str, file: &mut TensorFile) -> Result<()> {
        file.insert(
            format!("{prefix}.weight"),
            self.weight.dims().to_vec(),
            self.weight.data().to_vec(),
        )
    }

    pub fn import(file: &TensorFile, prefix: &str, stride: usize, padding: usize) -> Result<Self> {
        let name = format!("{prefix}.weight");
        let t = file.get(&name)?;
        let dims: [usize; 4] = t
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::contract(format!("{name}: expected 4-d shape, got {:?}", t.shape)))?;
        Self::new(Tensor::new(dims, t.data.clone())?, stride, padding)
    }
}

/// Direct convolution.
///
/// Every output element accumulates its products in `(c_in, ky, kx)`
/// order starting from zero, so results are bit-reproducible.
pub fn conv2d(x: &Tensor, p: &ConvWeights) -> Result<Tensor> {
    if x.c() != p.c_in() {
        return Err(Error::contract(format!(
            "conv expects {} input channels, got {}",
            p.c_in(),
            x.c()
        )));
    }
    let (oh, ow) = p.output_hw(x.h(), x.w())?;
    let (h, w) = (x.h() as isize, x.w() as isize);
    let k = p.kernel();
    let (s, pad) = (p.stride as isize, p.padding as isize);
    let mut out = Tensor::zeros([x.n(), p.c_out(), oh, ow])?;

    for n in 0..x.n() {
        for co in 0..p.c_out() {
            let mut acc = vec![0.0f32; oh * ow];
            for ci in 0..p.c_in() {
                let src = x.plane(n, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = p.weight.at(co, ci, ky, kx);
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            let row = &src[iy as usize * w as usize..(iy as usize + 1) * w as usize];
                            let dst = &mut acc[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = ox as isize * s + kx as isize - pad;
                                if ix >= 0 && ix < w {
                                    *d += row[ix as usize] * wv;
                                }
                            }
                        }
                    }
                }
            }
            out.plane_mut(n, co).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Inference-mode batch normalization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    pub fn new(gamma: Vec<f32>, beta: Vec<f32>, mean: Vec<f32>, var: Vec<f32>, eps: f32) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || mean.len() != c || var.len() != c {
            return Err(Error::contract("batch norm parameter lengths differ"));
        }
        if var.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::contract("batch norm variance must be positive"));
        }
        Ok(BatchNorm {
            gamma,
            beta,
            mean,
            var,
            eps,
        })
    }

    /// γ = 1, β = 0, μ = 0, σ² = 1.
    pub fn neutral(channels: usize, eps: f32) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps,
        }
    }

    pub fn random<R: Rng + ?Sized>(channels: usize, eps: f32, rng: &mut R) -> Self {
        let mut draw = |lo: f32, hi: f32| (0..channels).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
        BatchNorm {
            gamma: draw(0.5, 1.5),
            beta: draw(-0.1, 0.1),
            mean: draw(-0.1, 0.1),
            var: draw(0.5, 1.5),
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward_inplace(&self, x: &mut Tensor) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::contract(format!(
                "batch norm over {} channels applied to {}",
                self.channels(),
                x.c()
            )));
        }
        for n in 0..x.n() {
            for c in 0..x.c() {
                let inv = 1.0 / (self.var[c] + self.eps).sqrt();
                let (g, b, m) = (self.gamma[c], self.beta[c], self.mean[c]);
                for v in x.plane_mut(n, c) {
                    *v = (*v - m) * inv * g + b;
                }
            }
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str, file: &mut TensorFile) -> Result<()> {
        let c = self.channels();
        file.insert(format!("{prefix}.bn.gamma"), vec![c], self.gamma.clone())?;
        file.insert(format!("{prefix}.bn.beta"), vec![c], self.beta.clone())?;
        file.insert(format!("{prefix}.bn.mean"), vec![c], self.mean.clone())?;
        file.insert(format!("{prefix}.bn.var"), vec![c], self.var.clone())
    }

    pub fn import(file: &TensorFile, prefix: &str, eps: f32) -> Result<Self> {
        let get = |field: &str| -> Result<Vec<f32>> { Ok(file.get(&format!("{prefix}.bn.{field}"))?.data.clone()) };
        Self::new(get("gamma")?, get("beta")?, get("mean")?, get("var")?, eps)
    }
}

#[inline]
pub fn leaky_relu(v: f32, slope: f32) -> f32 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

/// Parameters of one Conv-BN-LeakyReLU block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub conv: ConvWeights,
    pub bn: BatchNorm,
    pub slope: f32,
}

impl ConvParams {
    pub fn new(conv: ConvWeights, bn: BatchNorm, slope: f32) -> Result<Self> {
        if bn.channels() != conv.c_out() {
            return Err(Error::contract(format!(
                "batch norm has {} channels, conv produces {}",
                bn.channels(),
                conv.c_out()
            )));
        }
        Ok(ConvParams { conv, bn, slope })
    }

    pub fn random<R: Rng + ?Sized>(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        consts: LayerConstants,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = ConvWeights::random(c_out, c_in, k, stride, rng)?;
        let bn = BatchNorm::random(c_out, consts.bn_eps, rng);
        Self::new(conv, bn, consts.leaky_slope)
    }

    /// All-zero kernel with neutral batch norm.
    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, consts: LayerConstants) -> Result<Self> {
        Self::new(
            ConvWeights::zeros(c_out, c_in, k, stride)?,
            BatchNorm::neutral(c_out, consts.bn_eps),
            consts.leaky_slope,
        )
    }

    pub fn c_out(&self) -> usize {
        self.conv.c_out()
    }

    pub fn c_in(&self) -> usize {
        self.conv.c_in()
    }

    pub fn export(&self, prefix: &str, file: &mut TensorFile) -> Result<()> {
        self.conv.export(prefix, file)?;
        self.bn.export(prefix, file)
    }

    pub fn import(file: &TensorFile, prefix: &str, stride: usize, consts: LayerConstants) -> Result<Self> {
        let conv = ConvWeights::import(file, prefix, stride, 0)?;
        let padding = conv.kernel() / 2;
        let conv = ConvWeights { padding, ..conv };
        let bn = BatchNorm::import(file, prefix, consts.bn_eps)?;
        Self::new(conv, bn, consts.leaky_slope)
    }
}

/// `leaky(bn(conv(x)))`.
pub fn cbl_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let mut y = conv2d(x, &p.conv)?;
    p.bn.forward_inplace(&mut y)?;
    for v in y.data_mut() {
        *v = leaky_relu(*v, p.slope);
    }
    Ok(y)
}

/// Stride-1 max pooling with `k/2` padding; padded cells never win.
pub fn max_pool_same(x: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::contract(format!("pool kernel must be odd, got {k}")));
    }
    let r = (k / 2) as isize;
    let (h, w) = (x.h() as isize, x.w() as isize);
    let mut out = Tensor::zeros(x.dims())?;
    for n in 0..x.n() {
        for c in 0..x.c() {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for xx in 0..w {
                    let mut m = f32::NEG_INFINITY;
                    for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                        for xk in (xx - r).max(0)..=(xx + r).min(w - 1) {
                            m = m.max(src[(yy * w + xk) as usize]);
                        }
                    }
                    dst[(y * w + xx) as usize] = m;
                }
            }
        }
    }
    Ok(out)
}
