//! PGM (P5) and PNG page I/O.

use std::io::Cursor;
use std::path::Path;

use super::{BinaryImage, GrayImage};
use crate::error::{Error, Result};

/// Encodes as binary PGM, maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Binary mask as PGM with ink = 0 and background = 255.
pub fn encode_mask_pgm(mask: &BinaryImage) -> Vec<u8> {
    encode_pgm(&mask.to_gray())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields[0] != "P5" {
        return Err(Error::Image(format!("not a binary PGM (magic {})", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Image(format!("bad PGM header field {s:?}")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(Error::Image("truncated PGM raster".into()));
    }
    let raster = &bytes[pos..pos + need];
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    GrayImage::new(w, h, pixels)
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .ok_or_else(|| Error::Image("raster size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    GrayImage::new(w as usize, h as usize, img.into_raw())
}

/// Sniffs the format from the magic bytes.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else {
        Err(Error::Image("unsupported image format (expected PGM P5 or PNG)".into()))
    }
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    decode_gray(&std::fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage::from_fn(7, 3, |x, y| (x * 30 + y) as u8);
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n7 3\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
        let mut commented = b"P5\n# scanner v2\n7 3\n255\n".to_vec();
        commented.extend_from_slice(img.pixels());
        assert_eq!(decode_gray(&commented).unwrap(), img);
    }

    #[test]
    fn mask_pgm_uses_0_and_255() {
        let m = BinaryImage::from_ascii(&["#.", ".#"]);
        let bytes = encode_mask_pgm(&m);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 255, 0]);
    }

    #[test]
    fn png_round_trip() {
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 50 + y * 3) as u8);
        assert_eq!(decode_gray(&encode_png(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn truncated_pgm_is_rejected() {
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
