//! Portable float map: `PF` (RGB) or `Pf` (gray), rows stored bottom to top.
//! A negative scale marks little-endian samples.

use std::io::{self, BufRead, Write};

use super::RadianceImage;
use crate::error::{Error, Result};

pub fn read_pfm<R: BufRead>(reader: &mut R) -> Result<RadianceImage> {
    let (width, height, channels, data) = read_pfm_samples(reader)?;
    RadianceImage::new(width, height, channels, data)
}

/// Reads raw samples without the non-negativity check (signed rasters such as
/// filter banks use this).
pub(crate) fn read_pfm_samples<R: BufRead>(
    reader: &mut R,
) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = read_token(reader)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format("pfm", format!("bad magic {other:?}"))),
    };
    let width: usize = parse_token(reader, "width")?;
    let height: usize = parse_token(reader, "height")?;
    let scale: f32 = parse_token(reader, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("pfm", format!("invalid scale {scale}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format("pfm", "zero dimension"));
    }
    let little_endian = scale < 0.0;
    let factor = scale.abs();

    let row_len = width * channels;
    let mut bytes = vec![0u8; row_len * height * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|e| Error::format("pfm", format!("truncated pixel data: {e}")))?;

    let mut data = vec![0f32; row_len * height];
    for (file_row, chunk) in bytes.chunks_exact(row_len * 4).enumerate() {
        let row = height - 1 - file_row;
        let dst = &mut data[row * row_len..(row + 1) * row_len];
        for (d, b) in dst.iter_mut().zip(chunk.chunks_exact(4)) {
            let b = [b[0], b[1], b[2], b[3]];
            let v = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            *d = if factor == 1.0 { v } else { v * factor };
        }
    }
    if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidPixel { index, value });
    }
    Ok((width, height, channels, data))
}

pub fn write_pfm<W: Write>(img: &RadianceImage, writer: &mut W) -> io::Result<()> {
    write_pfm_samples(img.width(), img.height(), img.channels(), img.data(), writer)
}

pub(crate) fn write_pfm_samples<W: Write>(
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
    writer: &mut W,
) -> io::Result<()> {
    let magic = if channels == 3 { "PF" } else { "Pf" };
    write!(writer, "{magic}\n{width} {height}\n-1.0\n")?;
    let row_len = width * channels;
    for row in data.chunks_exact(row_len).rev() {
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_token<R: BufRead>(reader: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(Error::format("pfm", e.to_string())),
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            // exactly one whitespace byte separates the header from the data
            break;
        }
        token.push(byte[0]);
        if token.len() > 64 {
            return Err(Error::format("pfm", "header token too long"));
        }
    }
    if token.is_empty() {
        return Err(Error::format("pfm", "unexpected end of header"));
    }
    String::from_utf8(token).map_err(|_| Error::format("pfm", "non-ascii header"))
}

fn parse_token<R: BufRead, T: std::str::FromStr>(reader: &mut R, what: &str) -> Result<T> {
    let token = read_token(reader)?;
    token
        .parse()
        .map_err(|_| Error::format("pfm", format!("bad {what} {token:?}")))
}
