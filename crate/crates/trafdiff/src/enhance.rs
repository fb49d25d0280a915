//! Image enhancement: quantize, unit-normalize, gamma-correct and resize
//! angular-field images into small unit-range grayscale inputs for the
//! diffusion model.
//!
//! Stage order is fixed: quantize_u8 -> normalize_unit -> gamma_correct ->
//! resize_area. Every stage is a deterministic pure function.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::config::ImageConfig;
use crate::error::{Error, Result};
use crate::gasf::GasfImage;

/// Where an image came from: dataset, class, and the trace length of the
/// field it was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMeta {
    pub dataset_id: String,
    pub class_label: u32,
    /// Side length of the originating angular field.
    pub orig_n: usize,
}

impl ImageMeta {
    pub fn unknown() -> Self {
        Self { dataset_id: String::new(), class_label: 0, orig_n: 0 }
    }
}

/// 8-bit grayscale image (quantization stage).
#[derive(Debug, Clone, PartialEq)]
pub struct ByteImage {
    pub h: usize,
    pub w: usize,
    /// Row-major.
    pub data: Vec<u8>,
    pub meta: ImageMeta,
}

/// Unit-range grayscale image, the working currency of the training path.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub h: usize,
    pub w: usize,
    /// Row-major values in [0,1].
    pub data: Vec<f64>,
    pub meta: ImageMeta,
}

impl PixelImage {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.w + c]
    }
}

/// Map field entries in [-1,1] onto [0,255] with half-away-from-zero
/// rounding: p = round((v+1)/2 * 255).
pub fn quantize_u8(img: &GasfImage) -> Result<ByteImage> {
    let mut data = Vec::with_capacity(img.data.len());
    for (i, &v) in img.data.iter().enumerate() {
        if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(Error::Domain(format!("entry {i} = {v} outside [-1,1]")));
        }
        let p = ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0);
        data.push(p as u8);
    }
    Ok(ByteImage {
        h: img.n,
        w: img.n,
        data,
        meta: ImageMeta {
            dataset_id: img.dataset_id.clone(),
            class_label: img.class_label,
            orig_n: img.n,
        },
    })
}

/// Divide by the 8-bit maximum, 255.
pub fn normalize_unit(img: &ByteImage) -> PixelImage {
    PixelImage {
        h: img.h,
        w: img.w,
        data: img.data.iter().map(|&p| p as f64 / 255.0).collect(),
        meta: img.meta.clone(),
    }
}

/// Power-law contrast stretch p' = gain * p^gamma, clamped to [0,1].
/// gamma < 1 brightens and spreads the dark end.
pub fn gamma_correct(img: &PixelImage, gamma: f64, gain: f64) -> Result<PixelImage> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma {gamma} must be > 0")));
    }
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::InvalidInput(format!("gain {gain} must be > 0")));
    }
    let data = img
        .data
        .iter()
        .map(|&p| (gain * p.powf(gamma)).clamp(0.0, 1.0))
        .collect();
    Ok(PixelImage { h: img.h, w: img.w, data, meta: img.meta.clone() })
}

/// Area-relation resampling. Each output pixel is the area-weighted mean
/// of the source pixels it covers, which reduces to exact block means for
/// integer downscale factors. Same size is the identity.
pub fn resize_area(img: &PixelImage, out_h: usize, out_w: usize) -> Result<PixelImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput("resize target must be >= 1x1".into()));
    }
    if out_h == img.h && out_w == img.w {
        return Ok(img.clone());
    }
    let sy = img.h as f64 / out_h as f64;
    let sx = img.w as f64 / out_w as f64;
    let mut data = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let y0 = r as f64 * sy;
        let y1 = (r + 1) as f64 * sy;
        let r0 = y0.floor() as usize;
        let r1 = (y1.ceil() as usize).min(img.h);
        for c in 0..out_w {
            let x0 = c as f64 * sx;
            let x1 = (c + 1) as f64 * sx;
            let c0 = x0.floor() as usize;
            let c1 = (x1.ceil() as usize).min(img.w);
            let mut sum = 0.0;
            let mut total = 0.0;
            for i in r0..r1 {
                let wy = (y1.min((i + 1) as f64) - y0.max(i as f64)).max(0.0);
                if wy == 0.0 {
                    continue;
                }
                for j in c0..c1 {
                    let wx = (x1.min((j + 1) as f64) - x0.max(j as f64)).max(0.0);
                    if wx == 0.0 {
                        continue;
                    }
                    sum += wy * wx * img.get(i, j);
                    total += wy * wx;
                }
            }
            data.push(sum / total);
        }
    }
    Ok(PixelImage { h: out_h, w: out_w, data, meta: img.meta.clone() })
}

/// The full enhancement chain at the configured resolution.
pub fn enhance_pipeline(img: &GasfImage, cfg: &ImageConfig) -> Result<PixelImage> {
    let bytes = quantize_u8(img)?;
    let unit = normalize_unit(&bytes);
    let stretched = gamma_correct(&unit, cfg.gamma, cfg.gain)?;
    resize_area(&stretched, cfg.resolution, cfg.resolution)
}

// ---------------------------------------------------------------------------
// Persistence: PNG for inspection, raw f32 for the training path
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"TDP1";

/// Write an 8-bit grayscale PNG. Unit-range images are quantized with the
/// same half-away-from-zero rule as [`quantize_u8`] maps fields.
pub fn save_png(img: &PixelImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.w as u32, img.h as u32, bytes)
        .ok_or_else(|| Error::InvalidInput("image dimensions disagree with data".into()))?;
    buf.save(path).map_err(|e| Error::InvalidInput(format!("png write: {e}")))?;
    Ok(())
}

/// Read an 8-bit grayscale PNG back as a ByteImage. PNG carries no
/// provenance; the caller supplies it.
pub fn load_png(path: &Path, meta: ImageMeta) -> Result<ByteImage> {
    let img = image::open(path).map_err(|e| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma8();
    Ok(ByteImage {
        h: gray.height() as usize,
        w: gray.width() as usize,
        data: gray.into_raw(),
        meta,
    })
}

/// Write a unit-range image as f32 little-endian with a provenance header.
pub fn save_pixels(img: &PixelImage, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(img.h as u32)?;
    w.write_u32::<LittleEndian>(img.w as u32)?;
    w.write_u32::<LittleEndian>(img.meta.class_label)?;
    w.write_u32::<LittleEndian>(img.meta.orig_n as u32)?;
    let id = img.meta.dataset_id.as_bytes();
    if id.len() > u16::MAX as usize {
        return Err(Error::InvalidInput("dataset_id too long".into()));
    }
    w.write_u16::<LittleEndian>(id.len() as u16)?;
    w.write_all(id)?;
    for &v in &img.data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an image written by [`save_pixels`].
pub fn load_pixels(path: &Path) -> Result<PixelImage> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |reason: &str| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason: reason.into(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("wrong magic"));
    }
    let h = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let class_label = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let orig_n = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let id_len = r.read_u16::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(|_| bad("truncated dataset id"))?;
    let dataset_id = String::from_utf8(id).map_err(|_| bad("dataset id is not utf-8"))?;
    if h == 0 || w == 0 || h > 1 << 16 || w > 1 << 16 {
        return Err(bad("implausible dimensions"));
    }
    let mut data = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        data.push(r.read_f32::<LittleEndian>().map_err(|_| bad("truncated data"))? as f64);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(PixelImage { h, w, data, meta: ImageMeta { dataset_id, class_label, orig_n } })
}
