//! Binary PPM/PGM (8-bit) and PFM (32-bit float) image files.
//!
//! PFM is written little-endian (negative scale `-1.0`) with rows stored
//! bottom to top, as the format prescribes. Both byte orders are read.

use std::fs;
use std::io::Write;
use std::path::Path;

use psdepth_core::Plane;

use crate::error::{Error, Result};

/// Splits `count` whitespace-separated header tokens (with `#` comments)
/// off the front of `bytes`; returns them and the offset of the payload.
fn header_tokens(bytes: &[u8], count: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    if i >= bytes.len() {
        return Err(Error::format(path, "missing raster data"));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(token: &str, what: &str, path: &Path) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::format(path, format!("invalid {what} {token:?}"))),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Raw 8-bit raster with 1 (PGM) or 3 (PPM) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster8 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

pub fn encode_pnm(r: &Raster8) -> Vec<u8> {
    let magic = if r.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.data);
    out
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Raster8> {
    let (tokens, offset) = header_tokens(bytes, 4, path)?;
    let channels = match tokens[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::format(path, format!("unsupported magic {other:?}"))),
    };
    let width = parse_dim(&tokens[1], "width", path)?;
    let height = parse_dim(&tokens[2], "height", path)?;
    if tokens[3] != "255" {
        return Err(Error::format(
            path,
            format!("only 8-bit maxval 255 is supported, found {}", tokens[3]),
        ));
    }
    let expected = channels * width * height;
    let data = &bytes[offset..];
    if data.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} raster bytes, found {}", data.len()),
        ));
    }
    Ok(Raster8 {
        channels,
        height,
        width,
        data: data.to_vec(),
    })
}

pub fn read_pnm(path: &Path) -> Result<Raster8> {
    decode_pnm(&read_file(path)?, path)
}

pub fn write_pnm(path: &Path, r: &Raster8) -> Result<()> {
    write_file(path, &encode_pnm(r))
}

/// Quantizes a 3-channel image in `[0, 1]` to 8 bits.
pub fn image_to_raster(image: &Plane<f32>) -> Raster8 {
    let (c, h, w) = image.shape();
    let mut data = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push((image.get(ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Raster8 {
        channels: c,
        height: h,
        width: w,
        data,
    }
}

pub fn raster_to_image(r: &Raster8) -> Plane<f32> {
    Plane::from_fn(r.channels, r.height, r.width, |c, y, x| {
        r.data[(y * r.width + x) * r.channels + c] as f32 / 255.0
    })
}

pub fn write_ppm(path: &Path, image: &Plane<f32>) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::format(path, "PPM needs a 3-channel image"));
    }
    write_pnm(path, &image_to_raster(image))
}

pub fn read_ppm(path: &Path) -> Result<Plane<f32>> {
    let r = read_pnm(path)?;
    if r.channels != 3 {
        return Err(Error::format(path, "expected a PPM (P6) color image"));
    }
    Ok(raster_to_image(&r))
}

pub fn write_pgm(path: &Path, height: usize, width: usize, data: &[u8]) -> Result<()> {
    write_pnm(
        path,
        &Raster8 {
            channels: 1,
            height,
            width,
            data: data.to_vec(),
        },
    )
}

pub fn read_pgm(path: &Path) -> Result<Raster8> {
    let r = read_pnm(path)?;
    if r.channels != 1 {
        return Err(Error::format(path, "expected a PGM (P5) gray image"));
    }
    Ok(r)
}

pub fn encode_pfm(plane: &Plane<f32>) -> Vec<u8> {
    let (c, h, w) = plane.shape();
    let magic = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(c * h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&plane.get(ch, y, x).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Plane<f32>> {
    let (tokens, offset) = header_tokens(bytes, 4, path)?;
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format(path, format!("unsupported PFM magic {other:?}"))),
    };
    let width = parse_dim(&tokens[1], "width", path)?;
    let height = parse_dim(&tokens[2], "height", path)?;
    let scale: f32 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("invalid scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "scale must be a non-zero number"));
    }
    let little = scale < 0.0;
    let data = &bytes[offset..];
    let expected = channels * width * height * 4;
    if data.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} raster bytes, found {}", data.len()),
        ));
    }
    let mut plane = Plane::zeros(channels, height, width);
    let mut words = data.chunks_exact(4);
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                let b: [u8; 4] = words.next().expect("length checked").try_into().expect("4 bytes");
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                plane.set(c, y, x, v);
            }
        }
    }
    Ok(plane)
}

pub fn write_pfm(path: &Path, plane: &Plane<f32>) -> Result<()> {
    if plane.channels() != 1 && plane.channels() != 3 {
        return Err(Error::format(path, "PFM holds 1 or 3 channels"));
    }
    write_file(path, &encode_pfm(plane))
}

pub fn read_pfm(path: &Path) -> Result<Plane<f32>> {
    decode_pfm(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let p = Plane::from_fn(1, 3, 5, |_, y, x| {
            (y as f32 * 0.1 + x as f32).sin() * 1e-3 + f32::EPSILON
        });
        let back = decode_pfm(&encode_pfm(&p), Path::new("mem")).unwrap();
        assert_eq!(
            p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let p = Plane::new(1, 2, 1, vec![1.0f32, 2.0]).unwrap();
        let bytes = encode_pfm(&p);
        let raster = &bytes[bytes.len() - 8..];
        assert_eq!(&raster[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-3.0f32).to_be_bytes());
        let p = decode_pfm(&bytes, Path::new("mem")).unwrap();
        assert_eq!(p.data(), &[0.5, -3.0]);
    }

    #[test]
    fn truncated_files_are_rejected() {
        let p = Plane::from_fn(3, 2, 2, |c, y, x| (c + y + x) as f32 / 8.0);
        let bytes = encode_pfm(&p);
        assert!(matches!(
            decode_pfm(&bytes[..bytes.len() - 1], Path::new("mem")),
            Err(Error::Format { .. })
        ));
        let ppm = encode_pnm(&image_to_raster(&p));
        assert!(decode_pnm(&ppm[..ppm.len() - 2], Path::new("mem")).is_err());
        assert!(decode_pnm(b"P6\n2", Path::new("mem")).is_err());
    }

    #[test]
    fn ppm_round_trip_of_quantized_image() {
        let p = Plane::from_fn(3, 2, 3, |c, y, x| ((c * 7 + y * 3 + x) * 11) as f32 / 255.0);
        let back = raster_to_image(&decode_pnm(&encode_pnm(&image_to_raster(&p)), Path::new("mem")).unwrap());
        assert_eq!(back, p);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        let r = decode_pnm(bytes, Path::new("mem")).unwrap();
        assert_eq!(r.data, vec![0, 255]);
    }
}
