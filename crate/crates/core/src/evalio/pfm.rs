//! Grayscale Portable Float Map I/O.
//!
//! Layout: `Pf\n<width> <height>\n<scale>\n` followed by `width * height`
//! 32-bit floats, rows stored bottom-to-top. A negative scale marks
//! little-endian data. Images map azimuth rows `i` to PFM rows and range
//! cells `j` to columns, so the first stored row is `i = n_a - 1`.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::renderer::Image;
use crate::scalar::Real;

/// Encodes an image as little-endian grayscale PFM bytes.
pub fn encode_pfm<T: Real>(image: &Image<T>) -> Vec<u8> {
    let (h, w) = image.dim();
    let header = format!("Pf\n{w} {h}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + 4 * w * h);
    out.extend_from_slice(header.as_bytes());
    for i in (0..h).rev() {
        for j in 0..w {
            let v = image.pixels[[i, j]].as_f64() as f32;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm<T: Real>(image: &Image<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_pfm(image)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm<T: Real>(path: &Path) -> Result<Image<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &str)> {
        self.skip_whitespace();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("missing {what}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start as u64, format!("{what} is not ASCII")))?;
        Ok((start, s))
    }
}

pub fn decode_pfm<T: Real>(bytes: &[u8]) -> Result<Image<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let (off, magic) = cur.token("magic")?;
    match magic {
        "Pf" => {}
        "PF" => {
            return Err(Error::format(
                off as u64,
                "colour PFM (PF) is not supported; expected grayscale Pf",
            ))
        }
        other => return Err(Error::format(off as u64, format!("bad magic {other:?}"))),
    }
    let mut dim = |what: &str| -> Result<usize> {
        let (off, t) = cur.token(what)?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::format(off as u64, format!("invalid {what} {t:?}"))),
        }
    };
    let w = dim("width")?;
    let h = dim("height")?;
    let (off, t) = cur.token("scale")?;
    let scale: f32 = t
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format(off as u64, format!("invalid scale {t:?}")))?;
    // Exactly one whitespace byte separates the header from the raster.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::format(cur.pos as u64, "missing header terminator"));
    }
    let data_start = cur.pos + 1;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(0, "image dimensions overflow"))?;
    let have = bytes.len() - data_start;
    if have < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated raster: expected {need} bytes, found {have}"),
        ));
    }
    let little = scale < 0.0;
    let mut pixels = Array2::zeros((h, w));
    for (n, chunk) in bytes[data_start..data_start + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, col) = (n / w, n % w);
        pixels[[h - 1 - row, col]] = T::of(v as f64);
    }
    Ok(Image::new(pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn golden_one_pixel() {
        let img = Image::new(array![[1.0f32]]);
        let bytes = encode_pfm(&img);
        let mut want = b"Pf\n1 1\n-1.0\n".to_vec();
        want.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]);
        assert_eq!(bytes, want);
    }

    #[test]
    fn round_trip_2x2_and_row_order() {
        let img = Image::new(array![[1.5f32, -2.0], [f32::MIN_POSITIVE, 3.25e7]]);
        let bytes = encode_pfm(&img);
        // Bottom row (i = 1) is stored first.
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, f32::MIN_POSITIVE);
        let back: Image<f32> = decode_pfm(&bytes).unwrap();
        assert_eq!(back.pixels, img.pixels);
    }

    #[test]
    fn reads_big_endian() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.0f32.to_be_bytes());
        bytes.extend_from_slice(&4.0f32.to_be_bytes());
        let img: Image<f64> = decode_pfm(&bytes).unwrap();
        assert_eq!(img.pixels, array![[2.0, 4.0]]);
    }

    #[test]
    fn rejects_colour_and_malformed() {
        let err = decode_pfm::<f32>(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        let err = decode_pfm::<f32>(b"Pf\n1 x\n-1.0\n\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 5, .. }));
        let err = decode_pfm::<f32>(b"Pf\n2 2\n-1.0\n\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(decode_pfm::<f32>(b"").is_err());
        assert!(decode_pfm::<f32>(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
    }
}
