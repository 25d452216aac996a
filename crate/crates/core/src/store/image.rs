//! Planar float images and 8-bit PNG I/O.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use diffcore::{Real, Tensor};

use crate::error::{io_err, FaceError, Result};

/// Planar (channel-major) float image, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(FaceError::Dimension(format!("{} values for a {channels}x{height}x{width} image", data.len())));
        }
        Ok(Image { channels, height, width, data })
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_size(&self, o: &Image) -> bool {
        self.channels == o.channels && self.height == o.height && self.width == o.width
    }

    /// Stacks images of equal size into a `(B, C, H, W)` tensor.
    pub fn to_tensor<T: Real>(imgs: &[&Image]) -> Result<Tensor<T>> {
        let first = imgs.first().ok_or_else(|| FaceError::Image("no images to stack".into()))?;
        let mut v = Vec::with_capacity(imgs.len() * first.data.len());
        for img in imgs {
            if !img.same_size(first) {
                return Err(FaceError::Dimension("images of different sizes".into()));
            }
            v.extend(img.data.iter().map(|&x| T::of(x as f64)));
        }
        Ok(Tensor::from_vec(v, &[imgs.len(), first.channels, first.height, first.width])?)
    }

    /// Sample `i` of a `(B, C, H, W)` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, i: usize) -> Result<Image> {
        let &[b, c, h, w] = t.shape() else {
            return Err(FaceError::Dimension(format!("expected (B, C, H, W), got {:?}", t.shape())));
        };
        if i >= b {
            return Err(FaceError::Dimension(format!("sample {i} of a batch of {b}")));
        }
        let n = c * h * w;
        Image::from_data(c, h, w, t.data()[i * n..(i + 1) * n].iter().map(|v| v.f64() as f32).collect())
    }

    /// Horizontal mirror.
    pub fn hflip(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, self.width - 1 - x, self.get(c, y, x));
                }
            }
        }
        out
    }
}

/// Quantizes to 8 bits with round-to-nearest; inverse of the load mapping.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8-bit grayscale, RGB or RGBA PNG as a 3-channel image (alpha
/// dropped, gray replicated).
pub fn load_image(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| FaceError::Image(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(FaceError::Image(format!("{}: unsupported bit depth {:?} (8-bit only)", path.display(), info.bit_depth)));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| FaceError::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(FaceError::Image(format!("{}: indexed PNG not supported", path.display()))),
    };
    let mut img = Image::new(3, h, w);
    for y in 0..h {
        let row = &buf[y * frame.line_size..];
        for x in 0..w {
            for c in 0..3 {
                let src = if stride < 3 { 0 } else { c };
                img.set(c, y, x, row[x * stride + src] as f32 / 255.0);
            }
        }
    }
    Ok(img)
}

/// Saves a 1- or 3-channel image as an 8-bit PNG.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(FaceError::Image(format!("cannot save a {c}-channel image"))),
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut bytes = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                bytes.push(to_u8(img.get(c, y, x)));
            }
        }
    }
    let mut w = enc.write_header().map_err(|e| FaceError::Image(e.to_string()))?;
    w.write_image_data(&bytes).map_err(|e| FaceError::Image(e.to_string()))?;
    w.finish().map_err(|e| FaceError::Image(e.to_string()))
}
