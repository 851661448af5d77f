//! Binary PGM/PPM decoding and pixel preprocessing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a binary PGM (`P5`) or PPM (`P6`) file into `h×w×{1,3}` values
/// scaled to [0, 1] by the header's max value.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(0, format!("unsupported image magic {other:?}"))),
    };
    let mut header = [0usize; 3];
    for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let at = pos as u64;
        let t = token(bytes, &mut pos)?;
        *slot = t.parse().ok().filter(|&v| v > 0).ok_or_else(|| Error::format(at, format!("invalid {what} {t:?}")))?;
    }
    let [w, h, maxval] = header;
    if maxval > 65535 {
        return Err(Error::format(pos as u64, format!("maxval {maxval} exceeds 65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let expected = w * h * channels * bytes_per;
    let actual = bytes.len().saturating_sub(pos);
    if actual < expected {
        return Err(Error::format(pos as u64, format!("truncated raster: expected {expected} bytes, got {actual}")));
    }
    let raster = &bytes[pos..pos + expected];
    let scale = maxval as f32;
    let data = if bytes_per == 1 {
        raster.iter().map(|&b| (b as f32 / scale).min(1.0)).collect()
    } else {
        raster.chunks_exact(2).map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / scale).min(1.0)).collect()
    };
    Tensor::new(vec![h, w, channels], data)
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::format(*pos as u64, "truncated header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Encodes an `h×w×{1,3}` image with values in [0, 1] as 8-bit PGM/PPM.
pub fn encode_pnm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w, c) = hwc(img)?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::invalid(format!("cannot encode {c} channels"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

fn hwc<T: crate::tensor::Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape("image", format!("expected h×w×c, got {s:?}"))),
    }
}

/// Replicates a single channel to three; three-channel input is returned as is.
pub fn to_rgb(img: Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w, c) = hwc(&img)?;
    match c {
        3 => Ok(img),
        1 => Tensor::new(vec![h, w, 3], img.data().iter().flat_map(|&v| [v; 3]).collect()),
        _ => Err(Error::invalid(format!("cannot convert {c} channels to RGB"))),
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Tensor<f32>, target: (usize, usize)) -> Result<Tensor<f32>> {
    let (h, w, c) = hwc(img)?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    if (h, w) == (th, tw) {
        return Ok(img.clone());
    }
    let axis = |out: usize, size: usize, scale: f64| {
        let src = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f64);
        let i0 = src.floor() as usize;
        (i0, (i0 + 1).min(size - 1), src - i0 as f64)
    };
    let (sy, sx) = (h as f64 / th as f64, w as f64 / tw as f64);
    let d = img.data();
    let mut out = Vec::with_capacity(th * tw * c);
    for oy in 0..th {
        let (y0, y1, fy) = axis(oy, h, sy);
        for ox in 0..tw {
            let (x0, x1, fx) = axis(ox, w, sx);
            for ch in 0..c {
                let at = |y: usize, x: usize| d[(y * w + x) * c + ch] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new(vec![th, tw, c], out)
}

/// Maps 8-bit-range values to [0, 1] by dividing by 255 (clamping strays).
pub fn normalize_pixels(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| (v / 255.0).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_scaling() {
        let mut b = b"P5\n2 2\n255\n".to_vec();
        b.extend([0, 255, 128, 64]);
        let t = decode_pnm(&b).unwrap();
        assert_eq!(t.shape(), &[2, 2, 1]);
        let want = [0.0, 1.0, 0.50196, 0.25098];
        for (a, e) in t.data().iter().zip(want) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn ppm_pixel_and_comments() {
        let mut b = b"P6 # comment\n1 # w\n1\n255\n".to_vec();
        b.extend([255, 0, 0]);
        assert_eq!(decode_pnm(&b).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sixteen_bit_samples_are_big_endian() {
        let mut b = b"P5 1 1 65535\n".to_vec();
        b.extend([0x80, 0x00]);
        assert!((decode_pnm(&b).unwrap().data()[0] - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let mut b = b"P6\n2 2\n255\n".to_vec();
        b.extend([1, 2, 3]);
        let msg = decode_pnm(&b).unwrap_err().to_string();
        assert!(msg.contains("expected 12") && msg.contains("got 3"), "{msg}");
    }

    #[test]
    fn unsupported_magic_rejected() {
        assert!(decode_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pnm(b"").is_err());
        assert!(decode_pnm(b"P5\n0 1\n255\n").is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let img = Tensor::from_fn(&[3, 2, 3], |i| (i * 15) as f32 / 255.0);
        let back = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() < 1e-6);
    }

    #[test]
    fn resize_hand_values() {
        let img = Tensor::from_slice(&[2, 2, 1], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = resize_bilinear(&img, (4, 4)).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0, 0.5, 0.75, 1.25, 1.5, 1.5, 1.75, 2.25, 2.5, 2.0, 2.25, 2.75, 3.0];
        assert_eq!(r.data(), &want);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Tensor::from_fn(&[5, 3, 3], |i| (i as f32 * 0.37).sin());
        assert_eq!(resize_bilinear(&img, (5, 3)).unwrap(), img);
        let c = Tensor::full(&[7, 4, 2], 0.3f32);
        for target in [(2, 2), (9, 13), (1, 1)] {
            let r = resize_bilinear(&c, target).unwrap();
            assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        }
    }

    #[test]
    fn normalization_endpoints() {
        let t = normalize_pixels(&Tensor::from_slice(&[3], &[0.0, 255.0, 128.0]).unwrap());
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - 0.501_960_8).abs() < 1e-7);
    }

    #[test]
    fn grayscale_replicates() {
        let g = Tensor::from_slice(&[1, 2, 1], &[0.2, 0.4]).unwrap();
        assert_eq!(to_rgb(g).unwrap().data(), &[0.2, 0.2, 0.2, 0.4, 0.4, 0.4]);
    }
}
