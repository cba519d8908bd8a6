//! Residual unit, CSP, Focus, SPP and PANet fusion blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{cbl_forward, conv2d, max_pool_same, ConvParams, ConvWeights, LayerConstants};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tensorfile::TensorFile;

/// Max-pool kernel sizes fused by SPP. The 1×1 pool is the identity.
pub const SPP_KERNELS: [usize; 4] = [1, 5, 9, 13];

/// Two stacked CBLs (1×1 then 3×3) that keep the input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ResUnitParams {
    pub reduce: ConvParams,
    pub expand: ConvParams,
}

impl ResUnitParams {
    pub fn random<R: Rng + ?Sized>(channels: usize, consts: LayerConstants, rng: &mut R) -> Result<Self> {
        Ok(ResUnitParams {
            reduce: ConvParams::random(channels, channels, 1, 1, consts, rng)?,
            expand: ConvParams::random(channels, channels, 3, 1, consts, rng)?,
        })
    }

    pub fn zeros(channels: usize, consts: LayerConstants) -> Result<Self> {
        Ok(ResUnitParams {
            reduce: ConvParams::zeros(channels, channels, 1, 1, consts)?,
            expand: ConvParams::zeros(channels, channels, 3, 1, consts)?,
        })
    }

    fn inner(&self, x: &Tensor) -> Result<Tensor> {
        let y = cbl_forward(&cbl_forward(x, &self.reduce)?, &self.expand)?;
        if y.dims() != x.dims() {
            return Err(Error::contract(format!(
                "residual inner path changed shape {:?} -> {:?}",
                x.dims(),
                y.dims()
            )));
        }
        Ok(y)
    }

    fn export(&self, prefix: &str, file: &mut TensorFile) -> Result<()> {
        self.reduce.export(&format!("{prefix}.reduce"), file)?;
        self.expand.export(&format!("{prefix}.expand"), file)
    }

    fn import(file: &TensorFile, prefix: &str, consts: LayerConstants) -> Result<Self> {
        Ok(ResUnitParams {
            reduce: ConvParams::import(file, &format!("{prefix}.reduce"), 1, consts)?,
            expand: ConvParams::import(file, &format!("{prefix}.expand"), 1, consts)?,
        })
    }
}

/// `x + inner(x)`.
pub fn res_unit_forward(x: &Tensor, p: &ResUnitParams) -> Result<Tensor> {
    let mut y = p.inner(x)?;
    for (o, i) in y.data_mut().iter_mut().zip(x.data()) {
        *o += *i;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CspVariant {
    /// Residual units on the processed path (backbone).
    Csp1,
    /// Plain CBL pairs without the residual add (neck).
    Csp2,
}

/// Cross-stage partial block.
///
/// Path a: entry CBL, `units.len()` units, then a plain conv. Path b: a
/// plain 1×1 conv of the input. The two are concatenated (a first) and
/// projected by the fuse CBL.
#[derive(Debug, Clone, PartialEq)]
pub struct CspParams {
    pub variant: CspVariant,
    pub entry: ConvParams,
    pub units: Vec<ResUnitParams>,
    pub tail: ConvWeights,
    pub shortcut: ConvWeights,
    pub fuse: ConvParams,
}

impl CspParams {
    pub fn random<R: Rng + ?Sized>(
        variant: CspVariant,
        c_in: usize,
        c_out: usize,
        depth: usize,
        consts: LayerConstants,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = (c_out / 2).max(1);
        Ok(CspParams {
            variant,
            entry: ConvParams::random(hidden, c_in, 1, 1, consts, rng)?,
            units: (0..depth)
                .map(|_| ResUnitParams::random(hidden, consts, rng))
                .collect::<Result<_>>()?,
            tail: ConvWeights::random(hidden, hidden, 1, 1, rng)?,
            shortcut: ConvWeights::random(hidden, c_in, 1, 1, rng)?,
            fuse: ConvParams::random(c_out, 2 * hidden, 1, 1, consts, rng)?,
        })
    }

    pub fn depth(&self) -> usize {
        self.units.len()
    }

    pub fn c_out(&self) -> usize {
        self.fuse.c_out()
    }

    pub fn export(&self, prefix: &str, file: &mut TensorFile) -> Result<()> {
        self.entry.export(&format!("{prefix}.entry"), file)?;
        for (i, u) in self.units.iter().enumerate() {
            u.export(&format!("{prefix}.units.{i}"), file)?;
        }
        self.tail.export(&format!("{prefix}.tail"), file)?;
        self.shortcut.export(&format!("{prefix}.shortcut"), file)?;
        self.fuse.export(&format!("{prefix}.fuse"), file)
    }

    pub fn import(
        file: &TensorFile,
        prefix: &str,
        variant: CspVariant,
        depth: usize,
        consts: LayerConstants,
    ) -> Result<Self> {
        Ok(CspParams {
            variant,
            entry: ConvParams::import(file, &format!("{prefix}.entry"), 1, consts)?,
            units: (0..depth)
                .map(|i| ResUnitParams::import(file, &format!("{prefix}.units.{i}"), consts))
                .collect::<Result<_>>()?,
            tail: ConvWeights::import(file, &format!("{prefix}.tail"), 1, 0)?,
            shortcut: ConvWeights::import(file, &format!("{prefix}.shortcut"), 1, 0)?,
            fuse: ConvParams::import(file, &format!("{prefix}.fuse"), 1, consts)?,
        })
    }
}

/// The concatenated `[a, b]` tensor that feeds the final CSP projection.
pub fn csp_concat(x: &Tensor, p: &CspParams) -> Result<Tensor> {
    if p.units.is_empty() {
        return Err(Error::contract("CSP block needs at least one unit"));
    }
    if x.c() != p.entry.c_in() || x.c() != p.shortcut.c_in() {
        return Err(Error::contract(format!(
            "CSP block expects {} channels, got {}",
            p.entry.c_in(),
            x.c()
        )));
    }
    let mut a = cbl_forward(x, &p.entry)?;
    for unit in &p.units {
        a = match p.variant {
            CspVariant::Csp1 => res_unit_forward(&a, unit)?,
            CspVariant::Csp2 => unit.inner(&a)?,
        };
    }
    let a = conv2d(&a, &p.tail)?;
    let b = conv2d(x, &p.shortcut)?;
    Tensor::concat_channels(&[&a, &b])
}

pub fn csp_forward(x: &Tensor, p: &CspParams) -> Result<Tensor> {
    let y = cbl_forward(&csp_concat(x, p)?, &p.fuse)?;
    debug_assert_eq!((y.h(), y.w()), (x.h(), x.w()));
    Ok(y)
}

/// Space-to-depth by pixel parity: `(N, C, H, W) -> (N, 4C, H/2, W/2)`.
///
/// Slice order is (even row, even col), (odd row, even col),
/// (even row, odd col), (odd row, odd col).
pub fn focus_slice(x: &Tensor) -> Result<Tensor> {
    if !x.h().is_multiple_of(2) || !x.w().is_multiple_of(2) {
        return Err(Error::contract(format!(
            "Focus needs even spatial dims, got {}x{}",
            x.h(),
            x.w()
        )));
    }
    let (n, c, h2, w2) = (x.n(), x.c(), x.h() / 2, x.w() / 2);
    let mut out = Tensor::zeros([n, 4 * c, h2, w2])?;
    for b in 0..n {
        for (s, (dy, dx)) in FOCUS_PARITY.iter().enumerate() {
            for ch in 0..c {
                for y in 0..h2 {
                    for xx in 0..w2 {
                        out.set(b, s * c + ch, y, xx, x.at(b, ch, 2 * y + dy, 2 * xx + dx));
                    }
                }
            }
        }
    }
    Ok(out)
}

const FOCUS_PARITY: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Inverse of [`focus_slice`].
pub fn focus_unslice(y: &Tensor) -> Result<Tensor> {
    if !y.c().is_multiple_of(4) {
        return Err(Error::contract(format!(
            "channel count {} is not a multiple of 4",
            y.c()
        )));
    }
    let (n, c, h2, w2) = (y.n(), y.c() / 4, y.h(), y.w());
    let mut out = Tensor::zeros([n, c, 2 * h2, 2 * w2])?;
    for b in 0..n {
        for (s, (dy, dx)) in FOCUS_PARITY.iter().enumerate() {
            for ch in 0..c {
                for yy in 0..h2 {
                    for xx in 0..w2 {
                        out.set(b, ch, 2 * yy + dy, 2 * xx + dx, y.at(b, s * c + ch, yy, xx));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn focus_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    cbl_forward(&focus_slice(x)?, p)
}

/// Channel concat of the four SPP pooling branches: `(N, 4C, H, W)`.
pub fn spp_pool(x: &Tensor) -> Result<Tensor> {
    let branches = SPP_KERNELS
        .iter()
        .map(|&k| if k == 1 { Ok(x.clone()) } else { max_pool_same(x, k) })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = branches.iter().collect();
    Tensor::concat_channels(&refs)
}

pub fn spp_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    cbl_forward(&spp_pool(x)?, p)
}

/// Bottom-up PANet fusion of two adjacent pyramid levels.
#[derive(Debug, Clone, PartialEq)]
pub struct PanParams {
    /// Stride-2 3×3 CBL applied to the finer level.
    pub downsample: ConvParams,
    /// CBL over `[downsampled, p_high]`.
    pub project: ConvParams,
}

impl PanParams {
    pub fn random<R: Rng + ?Sized>(
        c_low: usize,
        c_high: usize,
        c_down: usize,
        c_out: usize,
        consts: LayerConstants,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(PanParams {
            downsample: ConvParams::random(c_down, c_low, 3, 2, consts, rng)?,
            project: ConvParams::random(c_out, c_down + c_high, 1, 1, consts, rng)?,
        })
    }
}

pub fn panet_concat(p_high: &Tensor, p_low: &Tensor, p: &PanParams) -> Result<Tensor> {
    if p_low.n() != p_high.n() || p_low.h() != 2 * p_high.h() || p_low.w() != 2 * p_high.w() {
        return Err(Error::contract(format!(
            "pyramid levels are not adjacent: low {:?}, high {:?}",
            p_low.dims(),
            p_high.dims()
        )));
    }
    let down = cbl_forward(p_low, &p.downsample)?;
    Tensor::concat_channels(&[&down, p_high])
}

pub fn panet_fuse(p_high: &Tensor, p_low: &Tensor, p: &PanParams) -> Result<Tensor> {
    cbl_forward(&panet_concat(p_high, p_low, p)?, &p.project)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refnet::layers::BatchNorm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn consts() -> LayerConstants {
        LayerConstants::default()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn res_unit_with_zero_inner_is_identity() {
        let mut r = rng();
        let x = Tensor::random([2, 4, 6, 6], -3.0, 3.0, &mut r).unwrap();
        let y = res_unit_forward(&x, &ResUnitParams::zeros(4, consts()).unwrap()).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn res_unit_single_pixel_hand_sum() {
        // reduce: 1x1 weight 2; expand: 3x3 kernel with centre 0.5 (pad 1 on a
        // 1x1 map means only the centre tap contributes).
        let c = LayerConstants {
            leaky_slope: 0.1,
            bn_eps: 0.0,
        };
        let bn = || BatchNorm::new(vec![1.], vec![0.], vec![0.], vec![1.], 0.0).unwrap();
        let reduce = ConvParams::new(
            ConvWeights::new(Tensor::filled([1, 1, 1, 1], 2.0).unwrap(), 1, 0).unwrap(),
            bn(),
            c.leaky_slope,
        )
        .unwrap();
        let mut k = Tensor::zeros([1, 1, 3, 3]).unwrap();
        k.set(0, 0, 1, 1, 0.5);
        let expand = ConvParams::new(ConvWeights::new(k, 1, 1).unwrap(), bn(), c.leaky_slope).unwrap();
        let p = ResUnitParams { reduce, expand };
        // x = 3: 3 + 0.5·6 = 6
        // x = -1: reduce gives leaky(-2) = -0.2, expand gives leaky(-0.1) = -0.01
        let y = res_unit_forward(&Tensor::filled([1, 1, 1, 1], 3.0).unwrap(), &p).unwrap();
        assert_eq!(y.data(), &[6.0]);
        let y = res_unit_forward(&Tensor::filled([1, 1, 1, 1], -1.0).unwrap(), &p).unwrap();
        assert!((y.data()[0] - (-1.01)).abs() < 1e-6);
    }

    #[test]
    fn csp_shapes() {
        let mut r = rng();
        let x = Tensor::random([1, 6, 8, 10], -1.0, 1.0, &mut r).unwrap();
        for variant in [CspVariant::Csp1, CspVariant::Csp2] {
            for depth in 1..=3 {
                let p = CspParams::random(variant, 6, 12, depth, consts(), &mut r).unwrap();
                let cat = csp_concat(&x, &p).unwrap();
                assert_eq!(cat.c(), p.tail.c_out() + p.shortcut.c_out());
                assert_eq!(csp_forward(&x, &p).unwrap().dims(), [1, 12, 8, 10]);
            }
        }
        let p = CspParams::random(CspVariant::Csp1, 5, 12, 1, consts(), &mut r).unwrap();
        assert!(matches!(csp_forward(&x, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn csp_zero_weights_propagate_beta() {
        let mut r = rng();
        let mut p = CspParams::random(CspVariant::Csp1, 3, 4, 1, consts(), &mut r).unwrap();
        let zero = |w: &mut ConvWeights| w.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        zero(&mut p.entry.conv);
        for u in &mut p.units {
            zero(&mut u.reduce.conv);
            zero(&mut u.expand.conv);
        }
        zero(&mut p.tail);
        zero(&mut p.shortcut);
        zero(&mut p.fuse.conv);
        p.fuse.bn = BatchNorm::new(
            vec![1.0; 4],
            vec![0.5, -0.5, 0.0, 2.0],
            vec![0.0; 4],
            vec![1.0; 4],
            1e-5,
        )
        .unwrap();
        let x = Tensor::random([2, 3, 5, 5], -1.0, 1.0, &mut r).unwrap();
        let y = csp_forward(&x, &p).unwrap();
        assert_eq!(y.dims(), [2, 4, 5, 5]);
        let expect = [0.5, -0.05, 0.0, 2.0];
        for b in 0..2 {
            for (c, e) in expect.iter().enumerate() {
                assert!(y.plane(b, c).iter().all(|v| v == e));
            }
        }
    }

    #[test]
    fn focus_two_by_two_order() {
        // [[a, b], [c, d]] -> a, c, b, d
        let x = Tensor::new([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = focus_slice(&x).unwrap();
        assert_eq!(y.dims(), [1, 4, 1, 1]);
        assert_eq!(y.data(), &[1., 3., 2., 4.]);
    }

    #[test]
    fn focus_shape_and_inverse() {
        let mut r = rng();
        let x = Tensor::random([2, 3, 4, 6], -1.0, 1.0, &mut r).unwrap();
        let y = focus_slice(&x).unwrap();
        assert_eq!(y.dims(), [2, 12, 2, 3]);
        assert!(focus_unslice(&y).unwrap().bit_eq(&x));
        assert!(focus_slice(&Tensor::zeros([1, 1, 3, 4]).unwrap()).is_err());
        let p = ConvParams::random(8, 12, 3, 1, consts(), &mut r).unwrap();
        assert_eq!(focus_forward(&x, &p).unwrap().dims(), [2, 8, 2, 3]);
    }

    #[test]
    fn spp_constant_and_shape() {
        let x = Tensor::filled([1, 2, 7, 7], 0.75).unwrap();
        let y = spp_pool(&x).unwrap();
        assert_eq!(y.dims(), [1, 8, 7, 7]);
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn panet_shapes_and_contract() {
        let mut r = rng();
        let low = Tensor::random([1, 4, 16, 16], -1.0, 1.0, &mut r).unwrap();
        let high = Tensor::random([1, 4, 8, 8], -1.0, 1.0, &mut r).unwrap();
        let p = PanParams::random(4, 4, 6, 5, consts(), &mut r).unwrap();
        assert_eq!(panet_concat(&high, &low, &p).unwrap().c(), 10);
        assert_eq!(panet_fuse(&high, &low, &p).unwrap().dims(), [1, 5, 8, 8]);
        let wrong = Tensor::zeros([1, 4, 12, 12]).unwrap();
        assert!(matches!(panet_fuse(&high, &wrong, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn panet_zero_low_path_reduces_to_processed_high() {
        let mut r = rng();
        let c = consts();
        let high = Tensor::random([1, 3, 4, 4], -1.0, 1.0, &mut r).unwrap();
        let low = Tensor::zeros([1, 3, 8, 8]).unwrap();
        let downsample = ConvParams::zeros(2, 3, 3, 2, c).unwrap();
        // project picks the high channels (indices 2..5 of the concat)
        let mut w = Tensor::zeros([3, 5, 1, 1]).unwrap();
        for i in 0..3 {
            w.set(i, 2 + i, 0, 0, 1.0);
        }
        let project = ConvParams::new(
            ConvWeights::new(w, 1, 0).unwrap(),
            BatchNorm::neutral(3, c.bn_eps),
            c.leaky_slope,
        )
        .unwrap();
        let y = panet_fuse(
            &high,
            &low,
            &PanParams {
                downsample,
                project: project.clone(),
            },
        )
        .unwrap();

        let mut expect_w = Tensor::zeros([3, 3, 1, 1]).unwrap();
        for i in 0..3 {
            expect_w.set(i, i, 0, 0, 1.0);
        }
        let direct = ConvParams {
            conv: ConvWeights::new(expect_w, 1, 0).unwrap(),
            ..project
        };
        assert!(y.bit_eq(&cbl_forward(&high, &direct).unwrap()));
    }
}
