//! Netpbm (P5/P6) and PFM readers and writers.
//!
//! PFM files are written little-endian (negative scale) with rows stored
//! bottom-to-top, as the format requires. Undefined samples (holes in range
//! or index rasters) are written as NaN.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::raster::{Mask, RadianceImage, Raster, Rgb8Image, ScalarImage};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Rgb8Image) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let body: Vec<u8> = image.data().iter().flat_map(|p| p.iter().copied()).collect();
    write!(w, "P6\n{} {}\n255\n", image.width(), image.height())
        .and_then(|_| w.write_all(&body))
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Raster<u8>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write!(w, "P5\n{} {}\n255\n", image.width(), image.height())
        .and_then(|_| w.write_all(image.data()))
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

/// Writes a validity mask as an 8-bit PGM (255 = valid).
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<(), FormatError> {
    write_pgm(path, &mask.map(|&v| if v { 255 } else { 0 }))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask, FormatError> {
    Ok(read_pgm(path)?.map(|&v| v >= 128))
}

struct Header {
    magic: String,
    width: usize,
    height: usize,
    third: String,
}

/// Reads the whitespace-separated netpbm header tokens, skipping `#` comments.
fn read_netpbm_header<R: BufRead>(r: &mut R, path: &Path) -> Result<Header, FormatError> {
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        let mut tok = Vec::new();
        loop {
            match r.read(&mut byte) {
                Ok(0) => return Err(malformed(path, "truncated header")),
                Ok(_) => {}
                Err(e) => return Err(io_err(path, e)),
            }
            let c = byte[0];
            if c == b'#' && tok.is_empty() {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip).map_err(|e| io_err(path, e))?;
                continue;
            }
            if c.is_ascii_whitespace() {
                if tok.is_empty() {
                    continue;
                }
                break;
            }
            tok.push(c);
        }
        tokens.push(String::from_utf8_lossy(&tok).into_owned());
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| malformed(path, format!("bad header field {s:?}")))
    };
    Ok(Header {
        magic: tokens[0].clone(),
        width: parse(&tokens[1])?,
        height: parse(&tokens[2])?,
        third: tokens[3].clone(),
    })
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Rgb8Image, FormatError> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let h = read_netpbm_header(&mut r, path)?;
    if h.magic != "P6" {
        return Err(malformed(path, format!("expected P6, found {}", h.magic)));
    }
    if h.third != "255" {
        return Err(malformed(path, "only 8-bit PPM is supported"));
    }
    let mut buf = vec![0u8; h.width * h.height * 3];
    r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
    let data = buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(Raster::from_vec(h.width, h.height, data))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Raster<u8>, FormatError> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let h = read_netpbm_header(&mut r, path)?;
    if h.magic != "P5" {
        return Err(malformed(path, format!("expected P5, found {}", h.magic)));
    }
    if h.third != "255" {
        return Err(malformed(path, "only 8-bit PGM is supported"));
    }
    let mut buf = vec![0u8; h.width * h.height];
    r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
    Ok(Raster::from_vec(h.width, h.height, buf))
}

fn write_pfm_raw(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    values: impl Fn(usize, usize, usize) -> f32,
) -> Result<(), FormatError> {
    let mut w = create(path)?;
    let magic = if channels == 3 { "PF" } else { "Pf" };
    let mut body = Vec::with_capacity(width * height * channels * 4);
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                body.extend_from_slice(&values(x, y, c).to_le_bytes());
            }
        }
    }
    write!(w, "{magic}\n{width} {height}\n-1.0\n")
        .and_then(|_| w.write_all(&body))
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

pub fn write_pfm_rgb(path: impl AsRef<Path>, image: &RadianceImage) -> Result<(), FormatError> {
    write_pfm_raw(path.as_ref(), image.width(), image.height(), 3, |x, y, c| {
        image.get(x, y)[c]
    })
}

pub fn write_pfm_gray(path: impl AsRef<Path>, image: &ScalarImage) -> Result<(), FormatError> {
    write_pfm_raw(path.as_ref(), image.width(), image.height(), 1, |x, y, _| {
        *image.get(x, y)
    })
}

/// Decoded PFM contents, top row first.
pub enum Pfm {
    Gray(ScalarImage),
    Rgb(RadianceImage),
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm, FormatError> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String, FormatError> {
        line.clear();
        r.read_line(&mut line).map_err(|e| io_err(path, e))?;
        Ok(line.trim().to_string())
    };
    let magic = next_line(&mut r)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(malformed(path, format!("invalid PFM magic {other:?}"))),
    };
    let dims = next_line(&mut r)?;
    let mut it = dims.split_whitespace().map(|s| s.parse::<usize>());
    let (width, height) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(malformed(path, format!("invalid dimensions {dims:?}"))),
    };
    let scale: f32 = next_line(&mut r)?
        .parse()
        .map_err(|_| malformed(path, "invalid scale"))?;
    let little = scale < 0.0;
    let mut buf = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
    let vals: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let at = |x: usize, y: usize, c: usize| vals[((height - 1 - y) * width + x) * channels + c];
    Ok(if channels == 3 {
        Pfm::Rgb(Raster::from_fn(width, height, |x, y| {
            [at(x, y, 0), at(x, y, 1), at(x, y, 2)]
        }))
    } else {
        Pfm::Gray(Raster::from_fn(width, height, |x, y| at(x, y, 0)))
    })
}

pub fn read_pfm_gray(path: impl AsRef<Path>) -> Result<ScalarImage, FormatError> {
    let path = path.as_ref();
    match read_pfm(path)? {
        Pfm::Gray(g) => Ok(g),
        Pfm::Rgb(_) => Err(malformed(path, "expected single-channel PFM")),
    }
}

pub fn read_pfm_rgb(path: impl AsRef<Path>) -> Result<RadianceImage, FormatError> {
    let path = path.as_ref();
    match read_pfm(path)? {
        Pfm::Rgb(g) => Ok(g),
        Pfm::Gray(_) => Err(malformed(path, "expected three-channel PFM")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pfm_rgb_round_trip_is_bit_exact(w in 1usize..7, h in 1usize..7, seed in any::<u32>()) {
            let dir = tempfile::tempdir().unwrap();
            let img = RadianceImage::from_fn(w, h, |x, y| {
                let v = (seed as f32) * 1e-3 + (x * 31 + y * 7) as f32 * 0.25 - 3.0;
                [v, -v, v * 0.5]
            });
            let p = dir.path().join("a.pfm");
            write_pfm_rgb(&p, &img).unwrap();
            prop_assert_eq!(read_pfm_rgb(&p).unwrap(), img);
        }

        #[test]
        fn ppm_round_trip_is_exact(w in 1usize..9, h in 1usize..9, s in any::<u8>()) {
            let dir = tempfile::tempdir().unwrap();
            let img = Rgb8Image::from_fn(w, h, |x, y| [s.wrapping_add(x as u8), y as u8, 255 - s]);
            let p = dir.path().join("a.ppm");
            write_ppm(&p, &img).unwrap();
            prop_assert_eq!(read_ppm(&p).unwrap(), img);
        }
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let dir = tempfile::tempdir().unwrap();
        let img = ScalarImage::from_vec(1, 2, vec![1.0, 2.0]);
        let p = dir.path().join("g.pfm");
        write_pfm_gray(&p, &img).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 2.0);
        assert_eq!(read_pfm_gray(&p).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        std::fs::write(&p, b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        let m = read_mask(&p).unwrap();
        assert_eq!(m.data(), &[false, true]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        std::fs::write(&p, b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(matches!(read_ppm(&p), Err(FormatError::Malformed { .. })));
    }
}
