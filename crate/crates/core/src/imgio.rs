//! Binary PPM (P6) and PGM (P5) image I/O, 8-bit, bit-exactly specifiable
//! without external codecs. Pixel byte v maps to float v/255; masks
//! threshold at 128 on read and write 0/255.

use std::fs;
use std::path::Path;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::segmodel::BinaryMask;

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderParser { bytes, pos: 0 }
    }

    fn fail(&self, msg: &str) -> Error {
        Error::Format { offset: self.pos, msg: msg.to_string() }
    }

    fn expect_magic(&mut self, magic: &str) -> Result<()> {
        if self.bytes.len() < 2 || &self.bytes[..2] != magic.as_bytes() {
            return Err(self.fail(&format!("expected magic {}", magic)));
        }
        self.pos = 2;
        Ok(())
    }

    /// Skip whitespace and `#` comments between header tokens.
    fn skip_separators(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(self.fail("unexpected end of header")),
            }
        }
    }

    fn read_number(&mut self) -> Result<usize> {
        self.skip_separators()?;
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_digit() {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.fail("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.fail("unparsable number"))
    }

    /// Consume exactly one whitespace byte before the raster.
    fn expect_raster(&mut self, len: usize) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => self.pos += 1,
            _ => return Err(self.fail("expected single whitespace before raster")),
        }
        let raster = &self.bytes[self.pos..];
        if raster.len() != len {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("raster has {} bytes, expected {}", raster.len(), len),
            });
        }
        Ok(raster)
    }
}

fn parse_header<'a>(bytes: &'a [u8], magic: &str, channels: usize) -> Result<(usize, usize, &'a [u8])> {
    let mut p = HeaderParser::new(bytes);
    p.expect_magic(magic)?;
    let w = p.read_number()?;
    let h = p.read_number()?;
    let maxval = p.read_number()?;
    if maxval != 255 {
        return Err(Error::Format { offset: p.pos, msg: format!("maxval {} != 255", maxval) });
    }
    if h == 0 || w == 0 {
        return Err(Error::Format { offset: p.pos, msg: "zero image dimension".into() });
    }
    let raster = p.expect_raster(h * w * channels)?;
    Ok((h, w, raster))
}

/// Read a P6 PPM into a [3,H,W] tensor with values v/255.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let (h, w, raster) = parse_header(&bytes, "P6", 3)?;
    let mut t = Tensor::zeros(&[3, h, w]);
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                t.set3(c, i, j, raster[(i * w + j) * 3 + c] as f64 / 255.0);
            }
        }
    }
    Ok(t)
}

/// Write a [3,H,W] tensor as P6 PPM; values round to the nearest byte.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Rank {
            op: "write_ppm",
            detail: format!("want [3,H,W], got {:?}", s),
        });
    }
    let (h, w) = (s[1], s[2]);
    let mut bytes = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let v = (image.at3(c, i, j).clamp(0.0, 1.0) * 255.0).round() as u8;
                bytes.push(v);
            }
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a P5 PGM as a binary mask, thresholding at 128.
pub fn read_pgm(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path)?;
    let (h, w, raster) = parse_header(&bytes, "P5", 1)?;
    BinaryMask::new(h, w, raster.iter().map(|&b| b >= 128).collect())
}

/// Write a binary mask as P5 PGM with values 0/255.
pub fn write_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut bytes = format!("P5\n{} {}\n255\n", w, h).into_bytes();
    bytes.extend(mask.data().iter().map(|&b| if b { 255u8 } else { 0u8 }));
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::test_rng::uniform_tensor;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("unseg-imgio-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn ppm_round_trip_within_half_quantization_step() {
        let img = uniform_tensor(&[3, 5, 7], 0.0, 1.0, 90);
        let p = tmp("roundtrip.ppm");
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn all_black_reads_as_zeros() {
        let img = Tensor::zeros(&[3, 4, 4]);
        let p = tmp("black.ppm");
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reference_2x2_fixture_decodes_exactly() {
        // hand-written P6: 2x2, pixels (255,0,0) (0,255,0) (0,0,255) (255,255,255)
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
        let p = tmp("fixture.ppm");
        fs::write(&p, &bytes).unwrap();
        let t = read_ppm(&p).unwrap();
        assert_eq!(t.at3(0, 0, 0), 1.0);
        assert_eq!(t.at3(1, 0, 0), 0.0);
        assert_eq!(t.at3(1, 0, 1), 1.0);
        assert_eq!(t.at3(2, 1, 0), 1.0);
        assert_eq!(t.at3(0, 1, 1), 1.0);
        assert_eq!(t.at3(1, 1, 1), 1.0);
        assert_eq!(t.at3(2, 1, 1), 1.0);
    }

    #[test]
    fn malformed_header_reports_byte_offset() {
        let p = tmp("bad.ppm");
        fs::write(&p, b"P6\n2 two\n255\n").unwrap();
        match read_ppm(&p).unwrap_err() {
            Error::Format { offset, .. } => assert!(offset >= 5, "offset {}", offset),
            other => panic!("expected format error, got {:?}", other),
        }
    }

    #[test]
    fn wrong_raster_length_is_a_format_error() {
        let p = tmp("short.ppm");
        fs::write(&p, b"P6\n2 2\n255\nabc").unwrap();
        assert!(matches!(read_ppm(&p).unwrap_err(), Error::Format { .. }));
    }

    #[test]
    fn pgm_round_trip_is_exact() {
        let mut m = BinaryMask::empty(3, 5);
        m.set(0, 0, true);
        m.set(2, 4, true);
        m.set(1, 2, true);
        let p = tmp("mask.pgm");
        write_pgm(&p, &m).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), m);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut bytes = b"P5\n# a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[200, 10]);
        let p = tmp("comment.pgm");
        fs::write(&p, &bytes).unwrap();
        let m = read_pgm(&p).unwrap();
        assert!(m.get(0, 0));
        assert!(!m.get(0, 1));
    }
}
