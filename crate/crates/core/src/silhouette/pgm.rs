//! Binary 8-bit PGM (P5) masks. Reading binarizes at 128; writing stores
//! `round(255·v)`, so 0/1 masks come out as 0/255.

use std::fs;
use std::path::Path;

use super::Mask;
use crate::error::{Error, Result};

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.values().iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Mask> {
    let mut pos = 0usize;
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, 1, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::parse(
            path,
            1,
            format!("expected binary PGM magic 'P5', got '{}'", fields[0]),
        ));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::parse(path, 1, format!("bad PGM {what} '{s}'")))
    };
    let (w, h, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(path, 1, format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| {
        Error::parse(path, 1, format!("PGM raster truncated (expected {} bytes)", w * h))
    })?;
    let values = raster
        .iter()
        .map(|&b| if b as usize * 255 >= 128 * maxval { 1.0 } else { 0.0 })
        .collect();
    Mask::new(w, h, values)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let m = Mask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        let bytes = encode_pgm(&m);
        assert!(bytes.starts_with(b"P5\n7 5\n255\n"));
        assert_eq!(decode_pgm(&bytes, Path::new("m.pgm")).unwrap(), m);
    }

    #[test]
    fn soft_values_rounded_and_thresholded() {
        let m = Mask::new(4, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_pgm(&m);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 64, 128, 255]);
        let back = decode_pgm(&bytes, Path::new("s.pgm")).unwrap();
        assert_eq!(back.values(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P5 # comment\n2 1\n255\n".to_vec();
        bytes.extend([200, 3]);
        let m = decode_pgm(&bytes, Path::new("c.pgm")).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0", Path::new("a.pgm")).is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00\x00", Path::new("t.pgm")).is_err());
    }
}
