//! Minimal DICOM Part-10 reader for uncompressed little-endian images.
//!
//! Supports the explicit-VR and implicit-VR little-endian transfer syntaxes,
//! with or without the 128-byte preamble. Sequences of undefined length are
//! skipped structurally and kept as raw bytes so a parsed file can be
//! written back byte for byte.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";

const PREAMBLE_LEN: usize = 128;
const MAGIC: &[u8; 4] = b"DICM";
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
const MAX_NESTING: usize = 32;

/// VRs whose explicit encoding carries 2 reserved bytes and a 32-bit length.
const LONG_VRS: [&[u8; 2]; 13] = [
    b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl Tag {
    pub const TRANSFER_SYNTAX: Tag = Tag(0x0002, 0x0010);
    pub const SOP_INSTANCE_UID: Tag = Tag(0x0008, 0x0018);
    pub const BODY_PART_EXAMINED: Tag = Tag(0x0018, 0x0015);
    pub const STUDY_INSTANCE_UID: Tag = Tag(0x0020, 0x000D);
    pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
    pub const PHOTOMETRIC: Tag = Tag(0x0028, 0x0004);
    pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const WINDOW_CENTER: Tag = Tag(0x0028, 0x1050);
    pub const WINDOW_WIDTH: Tag = Tag(0x0028, 0x1051);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);

    const ITEM: Tag = Tag(0xFFFE, 0xE000);
    const ITEM_END: Tag = Tag(0xFFFE, 0xE00D);
    const SEQUENCE_END: Tag = Tag(0xFFFE, 0xE0DD);
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueLength {
    Defined(u32),
    /// `0xFFFFFFFF`; the stored value then includes the closing delimiter.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataElement {
    pub tag: Tag,
    /// Present for explicit-VR encodings only.
    pub vr: Option<[u8; 2]>,
    pub length: ValueLength,
    pub value: Vec<u8>,
    /// Byte offset of the tag in the source buffer.
    pub offset: usize,
}

impl DataElement {
    /// Text value with DICOM padding (trailing spaces/NULs) removed.
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.value)
            .trim_end_matches(['\0', ' '])
            .trim_start()
            .to_owned()
    }

    pub fn u16(&self) -> Result<u16> {
        match self.value.get(..2) {
            Some(b) => Ok(u16::from_le_bytes([b[0], b[1]])),
            None => Err(Error::malformed(self.offset, format!("{} too short for US", self.tag))),
        }
    }
}

/// A parsed file: optional preamble, file meta group and main data set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DicomFile {
    pub preamble: Option<Vec<u8>>,
    pub meta: Vec<DataElement>,
    pub dataset: Vec<DataElement>,
    pub transfer_syntax: String,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::malformed(
                    self.pos,
                    format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tag(&mut self) -> Result<Tag> {
        let g = self.u16("tag")?;
        let e = self.u16("tag")?;
        Ok(Tag(g, e))
    }

    fn peek_tag(&self) -> Option<Tag> {
        let b = self.bytes.get(self.pos..self.pos + 4)?;
        Some(Tag(u16::from_le_bytes([b[0], b[1]]), u16::from_le_bytes([b[2], b[3]])))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn element(&mut self, explicit: bool, depth: usize) -> Result<DataElement> {
        let offset = self.pos;
        let tag = self.tag()?;
        if tag.0 == 0xFFFE {
            return Err(Error::malformed(offset, format!("unexpected delimiter {tag}")));
        }
        let (vr, len) = if explicit {
            let vr_bytes = self.take(2, "VR")?;
            let vr = [vr_bytes[0], vr_bytes[1]];
            if !vr.iter().all(u8::is_ascii_uppercase) {
                return Err(Error::malformed(offset + 4, format!("invalid VR {vr:02X?} for {tag}")));
            }
            let len = if LONG_VRS.contains(&&vr) {
                self.take(2, "reserved bytes")?;
                self.u32("value length")?
            } else {
                self.u16("value length")? as u32
            };
            (Some(vr), len)
        } else {
            (None, self.u32("value length")?)
        };

        let start = self.pos;
        let length = if len == UNDEFINED_LENGTH {
            self.skip_sequence(explicit, depth + 1)?;
            ValueLength::Undefined
        } else {
            self.take(len as usize, &format!("value of {tag}")).map_err(|_| {
                Error::malformed(
                    start,
                    format!(
                        "{tag} declares {len} bytes but only {} remain",
                        self.bytes.len() - start
                    ),
                )
            })?;
            ValueLength::Defined(len)
        };
        Ok(DataElement {
            tag,
            vr,
            length,
            value: self.bytes[start..self.pos].to_vec(),
            offset,
        })
    }

    /// Skips items up to and including the sequence delimiter.
    fn skip_sequence(&mut self, explicit: bool, depth: usize) -> Result<()> {
        if depth > MAX_NESTING {
            return Err(Error::malformed(self.pos, "sequences nested too deeply"));
        }
        loop {
            let at = self.pos;
            let tag = self.tag()?;
            let len = self.u32("item length")?;
            match tag {
                Tag::SEQUENCE_END => return Ok(()),
                Tag::ITEM if len == UNDEFINED_LENGTH => self.skip_item_dataset(explicit, depth + 1)?,
                Tag::ITEM => {
                    self.take(len as usize, "item")?;
                }
                other => return Err(Error::malformed(at, format!("unexpected {other} inside sequence"))),
            }
        }
    }

    fn skip_item_dataset(&mut self, explicit: bool, depth: usize) -> Result<()> {
        if depth > MAX_NESTING {
            return Err(Error::malformed(self.pos, "sequences nested too deeply"));
        }
        loop {
            match self.peek_tag() {
                Some(Tag::ITEM_END) => {
                    self.take(8, "item delimiter")?;
                    return Ok(());
                }
                Some(_) => {
                    self.element(explicit, depth)?;
                }
                None => return Err(Error::malformed(self.pos, "item ended without delimiter")),
            }
        }
    }
}

impl DicomFile {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let has_preamble = bytes.len() >= PREAMBLE_LEN + 4 && &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] == MAGIC;
        if !has_preamble {
            let mut cur = Cursor { bytes, pos: 0 };
            let mut dataset = Vec::new();
            while !cur.at_end() {
                dataset.push(cur.element(false, 0)?);
            }
            return Ok(DicomFile {
                preamble: None,
                meta: Vec::new(),
                dataset,
                transfer_syntax: IMPLICIT_VR_LE.to_owned(),
            });
        }

        let mut cur = Cursor {
            bytes,
            pos: PREAMBLE_LEN + 4,
        };
        let mut meta = Vec::new();
        while cur.peek_tag().is_some_and(|t| t.0 == 0x0002) {
            meta.push(cur.element(true, 0)?);
        }
        let transfer_syntax = meta
            .iter()
            .find(|e| e.tag == Tag::TRANSFER_SYNTAX)
            .map(DataElement::text)
            .ok_or_else(|| Error::malformed(PREAMBLE_LEN + 4, "file meta has no transfer syntax UID"))?;
        let explicit = match transfer_syntax.as_str() {
            EXPLICIT_VR_LE => true,
            IMPLICIT_VR_LE => false,
            _ => return Err(Error::UnsupportedSyntax { uid: transfer_syntax }),
        };
        let mut dataset = Vec::new();
        while !cur.at_end() {
            dataset.push(cur.element(explicit, 0)?);
        }
        Ok(DicomFile {
            preamble: Some(bytes[..PREAMBLE_LEN].to_vec()),
            meta,
            dataset,
            transfer_syntax,
        })
    }

    pub fn is_explicit_vr(&self) -> bool {
        self.transfer_syntax == EXPLICIT_VR_LE
    }

    pub fn get(&self, tag: Tag) -> Option<&DataElement> {
        self.dataset.iter().find(|e| e.tag == tag)
    }

    /// Re-encodes the file. For a parsed file this reproduces the input bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        if let Some(p) = &self.preamble {
            out.extend_from_slice(p);
            out.extend_from_slice(MAGIC);
        }
        for e in &self.meta {
            write_element(&mut out, e);
        }
        for e in &self.dataset {
            write_element(&mut out, e);
        }
        out
    }
}

fn write_element(out: &mut Vec<u8>, e: &DataElement) {
    out.extend_from_slice(&e.tag.0.to_le_bytes());
    out.extend_from_slice(&e.tag.1.to_le_bytes());
    let len = match e.length {
        ValueLength::Defined(n) => n,
        ValueLength::Undefined => UNDEFINED_LENGTH,
    };
    match e.vr {
        Some(vr) => {
            out.extend_from_slice(&vr);
            if LONG_VRS.contains(&&vr) {
                out.extend_from_slice(&[0, 0]);
                out.extend_from_slice(&len.to_le_bytes());
            } else {
                out.extend_from_slice(&(len as u16).to_le_bytes());
            }
        }
        None => out.extend_from_slice(&len.to_le_bytes()),
    }
    out.extend_from_slice(&e.value);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Photometric {
    /// Low values display bright.
    Monochrome1,
    Monochrome2,
}

impl Photometric {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "MONOCHROME1" => Some(Photometric::Monochrome1),
            "MONOCHROME2" => Some(Photometric::Monochrome2),
            _ => None,
        }
    }
}

/// Linear VOI window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

/// A single-frame grayscale image with the tags the pipeline needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomImage {
    pub rows: u32,
    pub cols: u32,
    pub bits_allocated: u16,
    pub photometric: Photometric,
    /// Row-major, `rows · cols` values, each below `2^bits_allocated`.
    pub pixels: Vec<u16>,
    pub body_part: Option<String>,
    pub study_id: String,
    pub image_id: String,
    pub window: Option<Window>,
}

fn first_ds(e: &DataElement) -> Option<f64> {
    e.text().split('\\').next()?.trim().parse().ok()
}

pub fn parse_dicom(bytes: &[u8]) -> Result<DicomImage> {
    let file = DicomFile::parse(bytes)?;
    image_from_file(&file)
}

pub fn image_from_file(file: &DicomFile) -> Result<DicomImage> {
    let required = |tag: Tag, name: &str| {
        file.get(tag)
            .ok_or_else(|| Error::malformed(0, format!("missing {name} {tag}")))
    };
    let rows = required(Tag::ROWS, "Rows")?.u16()? as u32;
    let cols = required(Tag::COLUMNS, "Columns")?.u16()? as u32;
    let bits_allocated = required(Tag::BITS_ALLOCATED, "BitsAllocated")?.u16()?;
    if bits_allocated != 8 && bits_allocated != 16 {
        return Err(Error::Unsupported(format!("BitsAllocated {bits_allocated}")));
    }
    let photometric_text = required(Tag::PHOTOMETRIC, "PhotometricInterpretation")?.text();
    let photometric = Photometric::parse(&photometric_text)
        .ok_or_else(|| Error::Unsupported(format!("photometric interpretation {photometric_text:?}")))?;
    if let Some(spp) = file.get(Tag::SAMPLES_PER_PIXEL) {
        if spp.u16()? != 1 {
            return Err(Error::Unsupported(format!("SamplesPerPixel {}", spp.u16()?)));
        }
    }
    if let Some(frames) = file.get(Tag::NUMBER_OF_FRAMES) {
        if frames.text().parse::<u32>().map_or(true, |n| n > 1) {
            return Err(Error::Unsupported(format!("NumberOfFrames {:?}", frames.text())));
        }
    }
    if let Some(rep) = file.get(Tag::PIXEL_REPRESENTATION) {
        if rep.u16()? != 0 {
            return Err(Error::Unsupported("signed pixel data".into()));
        }
    }
    let mask: u16 = match file.get(Tag::BITS_STORED) {
        Some(e) => {
            let stored = e.u16()?;
            if stored == 0 || stored > bits_allocated {
                return Err(Error::malformed(e.offset, format!("BitsStored {stored} invalid")));
            }
            (((1u32 << stored) - 1) & 0xFFFF) as u16
        }
        None => (((1u32 << bits_allocated) - 1) & 0xFFFF) as u16,
    };

    let pixel_elem = file
        .get(Tag::PIXEL_DATA)
        .ok_or_else(|| Error::malformed(0, "missing PixelData (7FE0,0010)"))?;
    if pixel_elem.length == ValueLength::Undefined {
        return Err(Error::Unsupported("encapsulated pixel data".into()));
    }
    let count = rows as usize * cols as usize;
    let bytes_per = bits_allocated as usize / 8;
    let need = count * bytes_per;
    if pixel_elem.value.len() < need {
        return Err(Error::malformed(
            pixel_elem.offset,
            format!(
                "PixelData holds {} bytes, {rows}x{cols}x{bits_allocated}bit needs {need}",
                pixel_elem.value.len()
            ),
        ));
    }
    let raw = &pixel_elem.value[..need];
    let pixels = if bytes_per == 1 {
        raw.iter().map(|&b| b as u16 & mask).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) & mask)
            .collect()
    };

    let text = |tag: Tag| file.get(tag).map(DataElement::text).filter(|s| !s.is_empty());
    let window = match (file.get(Tag::WINDOW_CENTER), file.get(Tag::WINDOW_WIDTH)) {
        (Some(c), Some(w)) => match (first_ds(c), first_ds(w)) {
            (Some(center), Some(width)) if width >= 1.0 && center.is_finite() && width.is_finite() => {
                Some(Window { center, width })
            }
            _ => None,
        },
        _ => None,
    };

    Ok(DicomImage {
        rows,
        cols,
        bits_allocated,
        photometric,
        pixels,
        body_part: text(Tag::BODY_PART_EXAMINED),
        study_id: text(Tag::STUDY_INSTANCE_UID).unwrap_or_default(),
        image_id: text(Tag::SOP_INSTANCE_UID).unwrap_or_default(),
        window,
    })
}

/// Builds small uncompressed DICOM buffers, for fixtures and tests.
#[derive(Debug, Clone)]
pub struct DicomWriter {
    explicit: bool,
    with_preamble: bool,
    transfer_syntax: String,
    elements: Vec<DataElement>,
}

impl DicomWriter {
    pub fn explicit_le() -> Self {
        DicomWriter {
            explicit: true,
            with_preamble: true,
            transfer_syntax: EXPLICIT_VR_LE.into(),
            elements: Vec::new(),
        }
    }

    pub fn implicit_le() -> Self {
        DicomWriter {
            explicit: false,
            with_preamble: true,
            transfer_syntax: IMPLICIT_VR_LE.into(),
            elements: Vec::new(),
        }
    }

    /// Implicit-VR stream with no preamble or meta group.
    pub fn raw_implicit() -> Self {
        DicomWriter {
            with_preamble: false,
            ..Self::implicit_le()
        }
    }

    /// Overrides the UID written into the meta group; the body encoding is unchanged.
    pub fn transfer_syntax(mut self, uid: &str) -> Self {
        self.transfer_syntax = uid.into();
        self
    }

    pub fn element(mut self, tag: Tag, vr: &[u8; 2], value: Vec<u8>) -> Self {
        self.elements.push(DataElement {
            tag,
            vr: self.explicit.then_some(*vr),
            length: ValueLength::Defined(value.len() as u32),
            value,
            offset: 0,
        });
        self
    }

    pub fn text(self, tag: Tag, vr: &[u8; 2], s: &str) -> Self {
        let mut v = s.as_bytes().to_vec();
        if v.len() % 2 == 1 {
            v.push(if vr == b"UI" { 0 } else { b' ' });
        }
        self.element(tag, vr, v)
    }

    pub fn us(self, tag: Tag, v: u16) -> Self {
        self.element(tag, b"US", v.to_le_bytes().to_vec())
    }

    /// Standard image tags plus pixel data.
    pub fn image(self, rows: u16, cols: u16, bits: u16, photometric: &str, pixels: &[u16]) -> Self {
        let data: Vec<u8> = if bits == 8 {
            pixels.iter().map(|&p| p as u8).collect()
        } else {
            pixels.iter().flat_map(|p| p.to_le_bytes()).collect()
        };
        let vr = if bits == 8 { b"OB" } else { b"OW" };
        self.text(Tag::PHOTOMETRIC, b"CS", photometric)
            .us(Tag::ROWS, rows)
            .us(Tag::COLUMNS, cols)
            .us(Tag::BITS_ALLOCATED, bits)
            .element(Tag::PIXEL_DATA, vr, data)
    }

    pub fn build(mut self) -> Vec<u8> {
        self.elements.sort_by_key(|e| e.tag);
        let meta = if self.with_preamble {
            let mut ts = self.transfer_syntax.as_bytes().to_vec();
            if ts.len() % 2 == 1 {
                ts.push(0);
            }
            vec![DataElement {
                tag: Tag::TRANSFER_SYNTAX,
                vr: Some(*b"UI"),
                length: ValueLength::Defined(ts.len() as u32),
                value: ts,
                offset: 0,
            }]
        } else {
            Vec::new()
        };
        DicomFile {
            preamble: self.with_preamble.then(|| vec![0u8; PREAMBLE_LEN]),
            meta,
            dataset: self.elements,
            transfer_syntax: self.transfer_syntax,
        }
        .to_bytes()
    }
}
