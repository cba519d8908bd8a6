//! Seeded structural invariant suite over the reference blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backbone::{backbone_forward, BackboneConfig, BackboneParams, Pyramid};
use super::blocks::{
    csp_concat, csp_forward, focus_slice, focus_unslice, panet_concat, panet_fuse, res_unit_forward, spp_pool,
    CspParams, CspVariant, PanParams, ResUnitParams, SPP_KERNELS,
};
use super::layers::{cbl_forward, ConvParams, LayerConstants};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlocksCheckConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub batch: usize,
    pub backbone: BackboneConfig,
}

impl Default for BlocksCheckConfig {
    fn default() -> Self {
        BlocksCheckConfig {
            input_height: 64,
            input_width: 64,
            batch: 1,
            backbone: BackboneConfig::yolov5s(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksCheckReport {
    pub seed: u64,
    pub results: Vec<InvariantResult>,
}

impl BlocksCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

type Check = fn(&BlocksCheckConfig, &mut ChaCha8Rng) -> Result<String, String>;

/// Invariant names in execution order.
pub const INVARIANTS: [&str; 12] = [
    "cbl_shape",
    "res_unit_zero_identity",
    "res_unit_shape",
    "csp1_shape",
    "csp2_shape",
    "focus_shape",
    "focus_permutation",
    "spp_constant_input",
    "spp_pool_dominates_input",
    "panet_shape",
    "backbone_strides",
    "determinism",
];

const CHECKS: [Check; 12] = [
    cbl_shape,
    res_unit_zero_identity,
    res_unit_shape,
    csp1_shape,
    csp2_shape,
    focus_shape,
    focus_permutation,
    spp_constant_input,
    spp_pool_dominates_input,
    panet_shape,
    backbone_strides,
    determinism,
];

/// Runs every invariant. Each check draws from its own stream of the seed,
/// so results do not depend on which other checks ran.
pub fn run_block_checks(seed: u64, config: &BlocksCheckConfig) -> BlocksCheckReport {
    let results = INVARIANTS
        .iter()
        .zip(CHECKS)
        .enumerate()
        .map(|(i, (name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (passed, detail) = match check(config, &mut rng) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            InvariantResult {
                name: (*name).to_owned(),
                passed,
                detail,
            }
        })
        .collect();
    BlocksCheckReport { seed, results }
}

fn consts(cfg: &BlocksCheckConfig) -> LayerConstants {
    cfg.backbone.consts
}

fn input_dims(cfg: &BlocksCheckConfig, channels: usize) -> [usize; 4] {
    [cfg.batch, channels, cfg.input_height, cfg.input_width]
}

fn random_input(cfg: &BlocksCheckConfig, channels: usize, rng: &mut ChaCha8Rng) -> Result<Tensor, String> {
    Tensor::random(input_dims(cfg, channels), -1.0, 1.0, rng).map_err(|e| e.to_string())
}

fn expect_dims(what: &str, got: [usize; 4], want: [usize; 4]) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: got {got:?}, expected {want:?}"))
    }
}

fn err(e: crate::Error) -> String {
    e.to_string()
}

fn cbl_shape(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut checked = 0;
    for _ in 0..4 {
        let c_in = rng.random_range(1..5);
        let c_out = rng.random_range(1..9);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let s = rng.random_range(1..3);
        let p = ConvParams::random(c_out, c_in, k, s, consts(cfg), rng).map_err(err)?;
        let x = random_input(cfg, c_in, rng)?;
        let y = cbl_forward(&x, &p).map_err(err)?;
        let pad = k / 2;
        let out = |d: usize| (d + 2 * pad - k) / s + 1;
        expect_dims(
            "cbl",
            y.dims(),
            [cfg.batch, c_out, out(cfg.input_height), out(cfg.input_width)],
        )?;
        checked += 1;
    }
    Ok(format!("{checked} random kernels"))
}

fn res_unit_zero_identity(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let c = rng.random_range(1..8);
    let x = random_input(cfg, c, rng)?;
    let y = res_unit_forward(&x, &ResUnitParams::zeros(c, consts(cfg)).map_err(err)?).map_err(err)?;
    if y.bit_eq(&x) {
        Ok(format!("{c} channels bit-identical"))
    } else {
        Err("zero-weight residual unit changed its input".into())
    }
}

fn res_unit_shape(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let c = rng.random_range(1..8);
    let x = random_input(cfg, c, rng)?;
    let p = ResUnitParams::random(c, consts(cfg), rng).map_err(err)?;
    let y = res_unit_forward(&x, &p).map_err(err)?;
    expect_dims("res unit", y.dims(), x.dims())?;
    Ok(format!("{:?}", y.dims()))
}

fn csp_shape(variant: CspVariant, cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let c_in = rng.random_range(1..8);
    let c_out = rng.random_range(2..12);
    let depth = rng.random_range(1..4);
    let x = random_input(cfg, c_in, rng)?;
    let p = CspParams::random(variant, c_in, c_out, depth, consts(cfg), rng).map_err(err)?;
    let cat = csp_concat(&x, &p).map_err(err)?;
    let split = p.tail.c_out() + p.shortcut.c_out();
    if cat.c() != split {
        return Err(format!("concat has {} channels, paths give {split}", cat.c()));
    }
    let y = csp_forward(&x, &p).map_err(err)?;
    expect_dims("csp", y.dims(), [cfg.batch, c_out, cfg.input_height, cfg.input_width])?;
    Ok(format!("X={depth} {:?}", y.dims()))
}

fn csp1_shape(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    csp_shape(CspVariant::Csp1, cfg, rng)
}

fn csp2_shape(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    csp_shape(CspVariant::Csp2, cfg, rng)
}

fn focus_shape(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let x = random_input(cfg, 3, rng)?;
    let y = focus_slice(&x).map_err(err)?;
    expect_dims(
        "focus",
        y.dims(),
        [cfg.batch, 12, cfg.input_height / 2, cfg.input_width / 2],
    )?;
    Ok(format!("{:?}", y.dims()))
}

fn sorted_bits(t: &Tensor) -> Vec<u32> {
    let mut v: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

fn focus_permutation(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let x = random_input(cfg, 3, rng)?;
    let y = focus_slice(&x).map_err(err)?;
    if sorted_bits(&x) != sorted_bits(&y) {
        return Err("Focus output is not a permutation of its input".into());
    }
    if !focus_unslice(&y).map_err(err)?.bit_eq(&x) {
        return Err("inverse interleave did not recover the input".into());
    }
    Ok(format!("{} values permuted and recovered", x.data().len()))
}

fn spp_constant_input(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let c = rng.random_range(1..6);
    let value: f32 = rng.random_range(-2.0..2.0);
    let x = Tensor::filled(input_dims(cfg, c), value).map_err(err)?;
    let y = spp_pool(&x).map_err(err)?;
    expect_dims(
        "spp pre-projection",
        y.dims(),
        [cfg.batch, SPP_KERNELS.len() * c, cfg.input_height, cfg.input_width],
    )?;
    if y.data().iter().any(|v| v.to_bits() != value.to_bits()) {
        return Err("constant input produced a non-constant pool output".into());
    }
    Ok(format!("{:?} constant {value}", y.dims()))
}

fn spp_pool_dominates_input(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let c = rng.random_range(1..4);
    let x = random_input(cfg, c, rng)?;
    let y = spp_pool(&x).map_err(err)?;
    for n in 0..x.n() {
        for (branch, k) in SPP_KERNELS.iter().enumerate() {
            for ch in 0..c {
                let pooled = y.plane(n, branch * c + ch);
                if pooled.iter().zip(x.plane(n, ch)).any(|(p, v)| p < v) {
                    return Err(format!("branch k={k} fell below its input"));
                }
                if branch == 0 && pooled != x.plane(n, ch) {
                    return Err("identity branch differs from input".into());
                }
            }
        }
    }
    Ok("all branches >= input".into())
}

fn panet_shape(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let c_low = rng.random_range(1..6);
    let c_high = rng.random_range(1..6);
    let c_down = rng.random_range(1..6);
    let c_out = rng.random_range(1..6);
    let (h, w) = (cfg.input_height / 2, cfg.input_width / 2);
    if h == 0 || w == 0 {
        return Err(format!(
            "input {}x{} too small for two pyramid levels",
            cfg.input_height, cfg.input_width
        ));
    }
    let low = Tensor::random([cfg.batch, c_low, 2 * h, 2 * w], -1.0, 1.0, rng).map_err(err)?;
    let high = Tensor::random([cfg.batch, c_high, h, w], -1.0, 1.0, rng).map_err(err)?;
    let p = PanParams::random(c_low, c_high, c_down, c_out, consts(cfg), rng).map_err(err)?;
    let cat = panet_concat(&high, &low, &p).map_err(err)?;
    if cat.c() != c_down + c_high {
        return Err(format!("concat has {} channels, expected {}", cat.c(), c_down + c_high));
    }
    let y = panet_fuse(&high, &low, &p).map_err(err)?;
    expect_dims("panet", y.dims(), [cfg.batch, c_out, h, w])?;
    Ok(format!("{:?}", y.dims()))
}

fn run_backbone(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<(BackboneParams, Tensor, Pyramid), String> {
    let params = BackboneParams::random(&cfg.backbone, rng).map_err(err)?;
    let image = Tensor::random(input_dims(cfg, 3), 0.0, 1.0, rng).map_err(err)?;
    let out = backbone_forward(&image, &params).map_err(err)?;
    Ok((params, image, out))
}

fn backbone_strides(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let (_, _, out) = run_backbone(cfg, rng)?;
    let w = cfg.backbone.widths;
    let (h, wd) = (cfg.input_height, cfg.input_width);
    expect_dims("P3", out.p3.dims(), [cfg.batch, w[2], h / 8, wd / 8])?;
    expect_dims("P4", out.p4.dims(), [cfg.batch, w[3], h / 16, wd / 16])?;
    expect_dims("P5", out.p5.dims(), [cfg.batch, w[4], h / 32, wd / 32])?;
    Ok(format!(
        "P3 {:?} P4 {:?} P5 {:?}",
        out.p3.dims(),
        out.p4.dims(),
        out.p5.dims()
    ))
}

/// SHA-256 over the little-endian bytes of the three pyramid levels.
pub fn pyramid_digest(p: &Pyramid) -> String {
    let mut h = Sha256::new();
    for t in [&p.p3, &p.p4, &p.p5] {
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn determinism(cfg: &BlocksCheckConfig, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let (params, image, first) = run_backbone(cfg, rng)?;
    let second = backbone_forward(&image, &params).map_err(err)?;
    let same = first.p3.bit_eq(&second.p3) && first.p4.bit_eq(&second.p4) && first.p5.bit_eq(&second.p5);
    if !same {
        return Err("repeated forward pass differs".into());
    }
    Ok(format!("sha256 {}", pyramid_digest(&first)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BlocksCheckConfig {
        BlocksCheckConfig {
            backbone: BackboneConfig::tiny(),
            ..Default::default()
        }
    }

    #[test]
    fn all_pass_on_default_geometry() {
        let r = run_block_checks(0, &small());
        assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
        assert_eq!(r.results.len(), INVARIANTS.len());
    }

    #[test]
    fn odd_input_fails_focus() {
        let cfg = BlocksCheckConfig {
            input_height: 63,
            input_width: 63,
            ..small()
        };
        let r = run_block_checks(0, &cfg);
        assert!(!r.passed());
        let focus = r.results.iter().find(|x| x.name == "focus_shape").unwrap();
        assert!(!focus.passed);
        assert!(focus.detail.contains("contract"), "{}", focus.detail);
    }

    #[test]
    fn same_seed_same_report() {
        assert_eq!(run_block_checks(4, &small()), run_block_checks(4, &small()));
        assert_ne!(
            run_block_checks(4, &small()).results[11].detail,
            run_block_checks(5, &small()).results[11].detail
        );
    }
}
