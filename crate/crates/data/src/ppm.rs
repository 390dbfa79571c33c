//! Binary PPM (P6) decoding and encoding, nearest-neighbor resize, and the
//! per-channel standardization applied to every image before encoding.

use std::path::Path;

use mmfs_core::Tensor;

use crate::error::{DataError, Result};

pub const STANDARDIZE_MEAN: f64 = 0.5;
pub const STANDARDIZE_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
}

/// Parses a binary P6 file: magic, whitespace/comment-separated width,
/// height, maxval (must be 255), one whitespace byte, then raw pixels.
pub fn decode_p6(bytes: &[u8]) -> Result<Ppm> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(DataError::BadMagic { found });
    }
    let mut pos = 2usize;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(DataError::BadHeader("unexpected end of header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(DataError::BadHeader(format!(
                "expected a number at byte {start}"
            )));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| DataError::BadHeader(format!("bad number {text:?}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::UnsupportedMaxval(maxval));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(DataError::BadHeader("missing whitespace after maxval".into())),
    }
    let expected = width as usize * height as usize * 3;
    let pixels = &bytes[pos..];
    if pixels.len() < expected {
        return Err(DataError::TruncatedPixelData {
            expected,
            found: pixels.len(),
        });
    }
    Ok(Ppm {
        width: width as usize,
        height: height as usize,
        pixels: pixels[..expected].to_vec(),
    })
}

pub fn encode_p6(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Maps [0,1] intensities to the model's input range.
pub fn standardize(v: f64) -> f64 {
    (v - STANDARDIZE_MEAN) / STANDARDIZE_STD
}

pub fn unstandardize(v: f64) -> f64 {
    v * STANDARDIZE_STD + STANDARDIZE_MEAN
}

/// Nearest-neighbor resample to (target_h, target_w).
fn resize_nearest(img: &Ppm, target_h: usize, target_w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(target_h * target_w * 3);
    for ty in 0..target_h {
        let sy = ty * img.height / target_h;
        for tx in 0..target_w {
            let sx = tx * img.width / target_w;
            let base = (sy * img.width + sx) * 3;
            out.extend_from_slice(&img.pixels[base..base + 3]);
        }
    }
    out
}

/// A decoded, standardized image as plain channels-first data. Unlike
/// `Tensor` this is `Send`, so samples can move across evaluation workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    /// Always [3, H, W].
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> ImageBuffer {
        assert_eq!(shape.len(), 3);
        assert_eq!(shape.iter().product::<usize>(), data.len());
        ImageBuffer { shape, data }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.shape.clone(), self.data.clone())
    }
}

/// Decodes, resizes, scales to [0,1], and standardizes into a [3,H,W]
/// channels-first tensor.
pub fn load_image(path: &Path, target_h: usize, target_w: usize) -> Result<Tensor> {
    Ok(load_image_buffer(path, target_h, target_w)?.to_tensor())
}

pub fn load_image_buffer(path: &Path, target_h: usize, target_w: usize) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path)?;
    buffer_from_bytes(&bytes, target_h, target_w)
}

pub fn image_from_bytes(bytes: &[u8], target_h: usize, target_w: usize) -> Result<Tensor> {
    Ok(buffer_from_bytes(bytes, target_h, target_w)?.to_tensor())
}

pub fn buffer_from_bytes(bytes: &[u8], target_h: usize, target_w: usize) -> Result<ImageBuffer> {
    let img = decode_p6(bytes)?;
    let rgb = if img.height == target_h && img.width == target_w {
        img.pixels.clone()
    } else {
        resize_nearest(&img, target_h, target_w)
    };
    let mut data = vec![0.0; 3 * target_h * target_w];
    for y in 0..target_h {
        for x in 0..target_w {
            for c in 0..3 {
                let v = rgb[(y * target_w + x) * 3 + c] as f64 / 255.0;
                data[c * target_h * target_w + y * target_w + x] = standardize(v);
            }
        }
    }
    Ok(ImageBuffer::new(vec![3, target_h, target_w], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_image_standardizes_to_ones() {
        let bytes = encode_p6(2, 2, &[255u8; 12]);
        let t = image_from_bytes(&bytes, 2, 2).unwrap();
        for v in t.data() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn black_image_standardizes_to_minus_ones() {
        let bytes = encode_p6(1, 1, &[0u8; 3]);
        let t = image_from_bytes(&bytes, 1, 1).unwrap();
        for v in t.data() {
            assert_eq!(*v, -1.0);
        }
    }

    #[test]
    fn nearest_resize_replicates_pixels() {
        // 2x2 image with four distinct colors, upscaled to 4x4.
        #[rustfmt::skip]
        let px = vec![
            10, 0, 0,   0, 20, 0,
            0, 0, 30,   40, 40, 40,
        ];
        let bytes = encode_p6(2, 2, &px);
        let t = image_from_bytes(&bytes, 4, 4).unwrap();
        // Red channel, top-left 2x2 block all equal the original pixel.
        let r = |y: usize, x: usize| t.data()[y * 4 + x];
        let want = standardize(10.0 / 255.0);
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(r(y, x), want);
            }
        }
    }

    #[test]
    fn p3_magic_is_rejected() {
        let err = decode_p6(b"P3\n1 1\n255\n aaa").unwrap_err();
        assert!(matches!(err, DataError::BadMagic { .. }));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut bytes = b"P6\n# a comment\n2 1 # trailing\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode_p6(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
    }

    #[test]
    fn truncation_and_maxval_are_detected() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8; 5]);
        assert!(matches!(
            decode_p6(&bytes).unwrap_err(),
            DataError::TruncatedPixelData { expected: 12, found: 5 }
        ));
        let bytes = b"P6\n1 1\n65535\n".to_vec();
        assert!(matches!(
            decode_p6(&bytes).unwrap_err(),
            DataError::UnsupportedMaxval(65535)
        ));
    }

    #[test]
    fn standardize_roundtrip_is_exact() {
        for i in 0..=255 {
            let v = i as f64 / 255.0;
            assert!((unstandardize(standardize(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_decode_roundtrip() {
        let px: Vec<u8> = (0..27).collect();
        let img = decode_p6(&encode_p6(3, 3, &px)).unwrap();
        assert_eq!(img.pixels, px);
    }
}
