//! Single-channel image carrier and its file I/O.
//!
//! Pixels are stored as `f64` in `[0, 1]` regardless of the source bit
//! depth; the depth is kept as metadata so round trips stay within one
//! quantization step.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel raster with unit-interval intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pixels: Array2<f64>,
    source_depth: u8,
}

impl Image {
    /// Wraps a pixel array, validating the carrier invariants.
    pub fn new(pixels: Array2<f64>, source_depth: u8) -> Result<Self> {
        if source_depth != 8 && source_depth != 16 {
            return Err(Error::InvalidParameter(format!(
                "source_depth must be 8 or 16, got {source_depth}"
            )));
        }
        let (h, w) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!("empty image {h}x{w}")));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { pixels, source_depth })
    }

    /// Wraps pixels, clamping out-of-range values instead of failing.
    pub fn from_clamped(mut pixels: Array2<f64>, source_depth: u8) -> Self {
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(pixels, source_depth).expect("clamped pixels are always valid")
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn source_depth(&self) -> u8 {
        self.source_depth
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.pixels.dim() == other.pixels.dim()
    }

    /// Constant image, useful in tests and for padding probes.
    pub fn constant(height: usize, width: usize, value: f64, depth: u8) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value), depth)
    }
}

fn normalize<T: Into<u32> + Copy>(raw: &[T], width: u32, height: u32, depth: u8) -> Array2<f64> {
    let max = ((1u32 << depth) - 1) as f64;
    Array2::from_shape_fn((height as usize, width as usize), |(y, x)| {
        let v: u32 = raw[y * width as usize + x].into();
        v as f64 / max
    })
}

/// Loads an 8- or 16-bit grayscale PNG or TIFF, normalizing to `[0, 1]`.
///
/// Multi-channel inputs are rejected outright rather than converted.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Codec { path: path.into(), source: other },
    })?;
    let (w, h) = (dynimg.width(), dynimg.height());
    let (pixels, depth) = match dynimg {
        DynamicImage::ImageLuma8(buf) => (normalize(buf.as_raw(), w, h, 8), 8),
        DynamicImage::ImageLuma16(buf) => (normalize(buf.as_raw(), w, h, 16), 16),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                detail: "grayscale with alpha channel".into(),
            })
        }
        _ => return Err(Error::MultiChannel { path: path.into() }),
    };
    Image::new(pixels, depth)
}

/// Saves an image at the requested bit depth, quantizing by
/// `round(x * (2^depth - 1))`. The container is chosen by extension
/// (`.png` or `.tif`/`.tiff`).
pub fn save_image(img: &Image, path: impl AsRef<Path>, depth: u8) -> Result<()> {
    let path = path.as_ref();
    if depth != 8 && depth != 16 {
        return Err(Error::InvalidParameter(format!(
            "save depth must be 8 or 16, got {depth}"
        )));
    }
    let (h, w) = (img.height() as u32, img.width() as u32);
    let result = if depth == 8 {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |x, y| {
            Luma([(img.pixels()[[y as usize, x as usize]] * 255.0).round() as u8])
        });
        buf.save(path)
    } else {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
            Luma([(img.pixels()[[y as usize, x as usize]] * 65535.0).round() as u16])
        });
        buf.save(path)
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Codec { path: path.into(), source: other },
    })
}

/// Crops `a` and `b` at one shared random offset, returning `size`x`size`
/// patches. Both images must have the same shape and fit the crop.
pub fn random_crop_pair<R: Rng>(
    a: &Image,
    b: &Image,
    size: usize,
    rng: &mut R,
) -> Result<(Image, Image)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "crop pair shapes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.height() < size || a.width() < size {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} smaller than crop size {size}",
            a.height(),
            a.width()
        )));
    }
    let (dy, dx) = crop_offset(a.height(), a.width(), size, rng);
    Ok((crop_at(a, dy, dx, size), crop_at(b, dy, dx, size)))
}

/// Draws the shared crop offset for a sequence of aligned images.
pub fn crop_offset<R: Rng>(
    height: usize,
    width: usize,
    size: usize,
    rng: &mut R,
) -> (usize, usize) {
    let dy = rng.gen_range(0..=height - size);
    let dx = rng.gen_range(0..=width - size);
    (dy, dx)
}

pub fn crop_at(img: &Image, dy: usize, dx: usize, size: usize) -> Image {
    let patch = img
        .pixels()
        .slice(s![dy..dy + size, dx..dx + size])
        .to_owned();
    Image::new(patch, img.source_depth()).expect("crop of a valid image is valid")
}

/// Flip decision shared across a pixel-aligned pair or sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipDecision {
    pub horizontal: bool,
    pub vertical: bool,
}

impl FlipDecision {
    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        FlipDecision { horizontal: rng.gen_bool(0.5), vertical: rng.gen_bool(0.5) }
    }

    pub fn apply(&self, img: &Image) -> Image {
        let mut p = img.pixels().clone();
        if self.horizontal {
            p.invert_axis(ndarray::Axis(1));
        }
        if self.vertical {
            p.invert_axis(ndarray::Axis(0));
        }
        Image::new(p, img.source_depth()).expect("flip of a valid image is valid")
    }
}

/// Applies one shared random horizontal/vertical flip decision to both
/// images of an aligned pair.
pub fn augment_flip<R: Rng>(a: &Image, b: &Image, rng: &mut R) -> Result<(Image, Image)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("flip pair shapes differ".into()));
    }
    let d = FlipDecision::draw(rng);
    Ok((d.apply(a), d.apply(b)))
}
