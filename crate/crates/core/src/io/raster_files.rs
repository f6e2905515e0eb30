use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8-bit PNG as linear RGB in `[0, 1]` (bytes divided by 255).
pub fn read_png(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path).map_err(|e| Error::data(path, format!("cannot decode image: {e}")))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect();
    ImagePlane::from_vec(w, h, 3, data)
}

/// Writes a one- or three-channel image as an 8-bit PNG.
pub fn write_png(path: &Path, image: &ImagePlane) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_u8(v)).collect();
    let res = match image.channels() {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).map(|b| b.save(path)),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).map(|b| b.save(path)),
        c => return Err(Error::shape(format!("cannot write a {c}-channel image as PNG"))),
    };
    match res {
        Some(Ok(())) => Ok(()),
        Some(Err(e)) => Err(Error::data(path, format!("cannot encode PNG: {e}"))),
        None => Err(Error::shape("image buffer has the wrong size")),
    }
}

fn read_token(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<(String, u64)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Malformed {
            path: path.into(),
            offset: start as u64,
            message: "unexpected end of header".into(),
        });
    }
    let tok = String::from_utf8_lossy(&bytes[start..*pos]).into_owned();
    Ok((tok, start as u64))
}

/// Reads a single-channel PFM (`Pf`) map. Both byte orders are accepted.
pub fn read_pfm(path: &Path) -> Result<ImagePlane> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes, path)
}

fn parse_pfm(bytes: &[u8], path: &Path) -> Result<ImagePlane> {
    let bad = |offset: u64, message: String| Error::Malformed {
        path: path.into(),
        offset,
        message,
    };
    let mut pos = 0;
    let (magic, off) = read_token(bytes, &mut pos, path)?;
    if magic != "Pf" {
        return Err(bad(off, format!("expected 'Pf', found '{magic}'")));
    }
    let dim = |what: &str, pos: &mut usize| -> Result<usize> {
        let (tok, off) = read_token(bytes, pos, path)?;
        tok.parse::<usize>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| bad(off, format!("invalid {what} '{tok}'")))
    };
    let w = dim("width", &mut pos)?;
    let h = dim("height", &mut pos)?;
    let (tok, off) = read_token(bytes, &mut pos, path)?;
    let scale: f64 = tok.parse().map_err(|_| bad(off, format!("invalid scale '{tok}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(off, format!("invalid scale '{tok}'")));
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let need = w * h * 4;
    if bytes.len() < pos + need {
        return Err(bad(bytes.len() as u64, format!("expected {need} bytes of data after the header")));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; w * h];
    for (i, chunk) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        // Rows are stored bottom to top.
        let (x, y) = (i % w, h - 1 - i / w);
        data[y * w + x] = f64::from(v);
    }
    ImagePlane::from_vec(w, h, 1, data)
}

/// Writes a single-channel map as little-endian PFM (32-bit floats).
pub fn write_pfm(path: &Path, map: &ImagePlane) -> Result<()> {
    if map.channels() != 1 {
        return Err(Error::shape("PFM output needs a one-channel map"));
    }
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map.get(x, y, 0) as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = ImagePlane::from_fn(7, 5, 3, |x, y, c| ((x * 37 + y * 11 + c * 5) % 101) as f64 / 100.0);
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 510.0 + 1e-12);
        for v in [0.0, 1.0] {
            let flat = ImagePlane::filled(3, 2, 3, v);
            write_png(&p, &flat).unwrap();
            assert_eq!(read_png(&p).unwrap(), flat);
        }
    }

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let map = ImagePlane::from_fn(6, 4, 1, |x, y, _| (x as f64 + 0.25) * (y as f64 - 1.5));
        write_pfm(&p, &map).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), map);
    }

    #[test]
    fn pfm_header_errors_carry_offsets() {
        let p = Path::new("x.pfm");
        match parse_pfm(b"PF\n2 2\n-1\n", p) {
            Err(Error::Malformed { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match parse_pfm(b"Pf\n2 zz\n-1\n", p) {
            Err(Error::Malformed { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_pfm(b"Pf\n2 2\n-1\n\0\0", p), Err(Error::Malformed { .. })));
    }
}
