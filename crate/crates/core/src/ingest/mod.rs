//! DICOM ingestion: parsing, pixel normalization, letterboxed model input,
//! study labels and corpus summaries.

mod dicom;
mod labels;
mod pixels;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder};
use serde::{Deserialize, Serialize};

pub use dicom::{
    image_from_file, parse_dicom, DataElement, DicomFile, DicomImage, DicomWriter, Photometric, Tag, ValueLength,
    Window, EXPLICIT_VR_LE, IMPLICIT_VR_LE,
};
pub use labels::{
    body_part_distribution, load_study_labels, Appearance, ImageAnnotation, StudyLabel, UNKNOWN_BODY_PART,
};
pub use pixels::{
    letterbox_image, normalize_pixels, to_model_input, ModelInputConfig, LETTERBOX_FILL, MODEL_INPUT_SIZE,
};

use crate::error::{Error, Result};
use crate::geometry::LetterboxTransform;

/// Metadata written next to each preprocessed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    pub image_id: String,
    pub study_id: String,
    pub body_part: Option<String>,
    pub photometric: Photometric,
    pub bits_allocated: u16,
    pub source_width: u32,
    pub source_height: u32,
    pub window: Option<Window>,
    pub letterbox: LetterboxTransform,
}

/// A decoded image together with its letterboxed 8-bit model view.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub sidecar: ImageSidecar,
    pub model_image: GrayImage,
}

/// Parses, normalizes and letterboxes one DICOM buffer.
pub fn prepare_image(bytes: &[u8], cfg: ModelInputConfig) -> Result<PreparedImage> {
    let dicom = parse_dicom(bytes)?;
    let gray = normalize_pixels(&dicom)?;
    let (model_image, letterbox) = letterbox_image(&gray, cfg)?;
    Ok(PreparedImage {
        sidecar: ImageSidecar {
            image_id: dicom.image_id,
            study_id: dicom.study_id,
            body_part: dicom.body_part,
            photometric: dicom.photometric,
            bits_allocated: dicom.bits_allocated,
            source_width: dicom.cols,
            source_height: dicom.rows,
            window: dicom.window,
            letterbox,
        },
        model_image,
    })
}

/// Binary (P5) PGM encoding of an 8-bit image.
pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .map_err(|e| Error::contract(format!("pgm encoding failed: {e}")))?;
    Ok(out)
}
