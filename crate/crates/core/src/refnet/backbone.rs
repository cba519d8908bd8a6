//! YOLOv5-style backbone: Focus, alternating stride-2 CBL and CSP1 stages,
//! then SPP. Emits the stride-8/16/32 feature maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{csp_forward, focus_forward, spp_forward, CspParams, CspVariant};
use super::layers::{cbl_forward, ConvParams, LayerConstants};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tensorfile::TensorFile;

/// Inputs must be a multiple of the coarsest output stride.
pub const MAX_STRIDE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Output channels of Focus and of the four downsampling stages.
    pub widths: [usize; 5],
    /// Unit counts of the three CSP1 stages.
    pub depths: [usize; 3],
    #[serde(default)]
    pub consts: LayerConstants,
}

impl BackboneConfig {
    /// Widths and depths of the smallest YOLOv5 variant.
    pub fn yolov5s() -> Self {
        BackboneConfig {
            widths: [32, 64, 128, 256, 512],
            depths: [1, 3, 3],
            consts: LayerConstants::default(),
        }
    }

    /// A narrow configuration for quick desk checks.
    pub fn tiny() -> Self {
        BackboneConfig {
            widths: [4, 8, 8, 16, 16],
            depths: [1, 1, 1],
            consts: LayerConstants::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.depths.contains(&0) {
            return Err(Error::contract("backbone widths and depths must be positive"));
        }
        Ok(())
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::yolov5s()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub focus: ConvParams,
    /// Stride-2 3×3 CBLs, one per stage.
    pub down: [ConvParams; 4],
    pub csp: [CspParams; 3],
    pub spp: ConvParams,
}

const INPUT_CHANNELS: usize = 3;

impl BackboneParams {
    pub fn random<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.widths;
        let c = config.consts;
        let focus = ConvParams::random(w[0], 4 * INPUT_CHANNELS, 3, 1, c, rng)?;
        let mut down = Vec::with_capacity(4);
        let mut csp = Vec::with_capacity(3);
        for stage in 0..4 {
            down.push(ConvParams::random(w[stage + 1], w[stage], 3, 2, c, rng)?);
            if stage < 3 {
                let ch = w[stage + 1];
                csp.push(CspParams::random(
                    CspVariant::Csp1,
                    ch,
                    ch,
                    config.depths[stage],
                    c,
                    rng,
                )?);
            }
        }
        let spp = ConvParams::random(w[4], 4 * w[4], 1, 1, c, rng)?;
        Ok(BackboneParams {
            config: config.clone(),
            focus,
            down: down.try_into().expect("four stages"),
            csp: csp.try_into().expect("three CSP stages"),
            spp,
        })
    }

    /// Writes every tensor under a stable name and the config as metadata.
    pub fn export(&self) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        f.metadata = serde_json::json!({ "backbone": self.config });
        self.focus.export("focus", &mut f)?;
        for (i, d) in self.down.iter().enumerate() {
            d.export(&format!("down{}", i + 1), &mut f)?;
        }
        for (i, c) in self.csp.iter().enumerate() {
            c.export(&format!("csp{}", i + 1), &mut f)?;
        }
        self.spp.export("spp", &mut f)?;
        Ok(f)
    }

    /// Loads weights written by [`BackboneParams::export`]; the config comes
    /// from the file metadata and every layer's channel chain is checked.
    pub fn import(file: &TensorFile) -> Result<Self> {
        let config: BackboneConfig = serde_json::from_value(
            file.metadata
                .get("backbone")
                .cloned()
                .ok_or_else(|| Error::contract("weights file has no backbone config"))?,
        )?;
        config.validate()?;
        let c = config.consts;
        let focus = ConvParams::import(file, "focus", 1, c)?;
        let down: Vec<ConvParams> = (1..=4)
            .map(|i| ConvParams::import(file, &format!("down{i}"), 2, c))
            .collect::<Result<_>>()?;
        let csp: Vec<CspParams> = (0..3)
            .map(|i| CspParams::import(file, &format!("csp{}", i + 1), CspVariant::Csp1, config.depths[i], c))
            .collect::<Result<_>>()?;
        let spp = ConvParams::import(file, "spp", 1, c)?;
        let params = BackboneParams {
            config,
            focus,
            down: down.try_into().expect("four stages"),
            csp: csp.try_into().expect("three CSP stages"),
            spp,
        };
        params.check_channels()?;
        Ok(params)
    }

    fn check_channels(&self) -> Result<()> {
        let w = self.config.widths;
        let mismatch = |what: &str| Err(Error::contract(format!("{what} channels disagree with config")));
        if self.focus.c_in() != 4 * INPUT_CHANNELS || self.focus.c_out() != w[0] {
            return mismatch("focus");
        }
        for (i, d) in self.down.iter().enumerate() {
            if d.c_in() != w[i] || d.c_out() != w[i + 1] {
                return mismatch(&format!("down{}", i + 1));
            }
        }
        for (i, c) in self.csp.iter().enumerate() {
            if c.entry.c_in() != w[i + 1] || c.c_out() != w[i + 1] {
                return mismatch(&format!("csp{}", i + 1));
            }
        }
        if self.spp.c_in() != 4 * w[4] || self.spp.c_out() != w[4] {
            return mismatch("spp");
        }
        Ok(())
    }
}

/// Feature maps at strides 8, 16 and 32.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub p3: Tensor,
    pub p4: Tensor,
    pub p5: Tensor,
}

pub fn backbone_forward(image: &Tensor, params: &BackboneParams) -> Result<Pyramid> {
    if image.c() != INPUT_CHANNELS {
        return Err(Error::contract(format!(
            "backbone expects {INPUT_CHANNELS} channels, got {}",
            image.c()
        )));
    }
    if !image.h().is_multiple_of(MAX_STRIDE) || !image.w().is_multiple_of(MAX_STRIDE) {
        return Err(Error::contract(format!(
            "input {}x{} is not a multiple of {MAX_STRIDE}",
            image.h(),
            image.w()
        )));
    }
    let x = focus_forward(image, &params.focus)?;
    let x = csp_forward(&cbl_forward(&x, &params.down[0])?, &params.csp[0])?;
    let p3 = csp_forward(&cbl_forward(&x, &params.down[1])?, &params.csp[1])?;
    let p4 = csp_forward(&cbl_forward(&p3, &params.down[2])?, &params.csp[2])?;
    let p5 = spp_forward(&cbl_forward(&p4, &params.down[3])?, &params.spp)?;
    Ok(Pyramid { p3, p4, p5 })
}
