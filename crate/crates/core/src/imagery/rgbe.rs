//! Radiance RGBE (`.hdr`) shared-exponent format.
//!
//! A pixel `(r, g, b, e)` decodes to `m * 2^(e - 136)` per channel, and to zero
//! when `e == 0`. Scanlines may be flat, new-style run-length encoded (per
//! component), or use old-style `(1, 1, 1, n)` repeat markers.

use std::io::{self, BufRead, Write};

use super::RadianceImage;
use crate::error::{Error, Result};

const FMT: &str = "rgbe";

/// Decodes one shared-exponent pixel.
pub fn rgbe_to_rgb(px: [u8; 4]) -> [f32; 3] {
    if px[3] == 0 {
        return [0.0; 3];
    }
    let f = (px[3] as f32 - 136.0).exp2();
    [px[0] as f32 * f, px[1] as f32 * f, px[2] as f32 * f]
}

/// Encodes a linear RGB triple (Ward's `float2rgbe`, truncating mantissas).
pub fn rgb_to_rgbe(rgb: [f32; 3]) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if v < 1e-32 {
        return [0; 4];
    }
    let (mant, exp) = frexp(v);
    let k = mant * 256.0 / v;
    [
        (rgb[0] * k) as u8,
        (rgb[1] * k) as u8,
        (rgb[2] * k) as u8,
        (exp + 128) as u8,
    ]
}

/// `v = m * 2^e` with `m` in `[0.5, 1)`.
fn frexp(v: f32) -> (f32, i32) {
    let mut e = v.log2().floor() as i32 + 1;
    let mut m = v / (e as f32).exp2();
    // log2 rounding can miss by one at powers of two
    if m >= 1.0 {
        m /= 2.0;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    (m, e)
}

pub fn read_rgbe<R: BufRead>(reader: &mut R) -> Result<RadianceImage> {
    let mut first = true;
    loop {
        let line = read_line(reader)?;
        if first {
            first = false;
            if !line.starts_with("#?") {
                return Err(Error::format(FMT, "missing #? signature"));
            }
            continue;
        }
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt.trim() != "32-bit_rle_rgbe" {
                return Err(Error::format(FMT, format!("unsupported FORMAT {fmt}")));
            }
        }
    }
    let dims = read_line(reader)?;
    let tokens: Vec<&str> = dims.split_whitespace().collect();
    let (height, width, flip) = match tokens.as_slice() {
        ["-Y", h, "+X", w] => (parse_dim(h)?, parse_dim(w)?, false),
        ["+Y", h, "+X", w] => (parse_dim(h)?, parse_dim(w)?, true),
        _ => {
            return Err(Error::format(
                FMT,
                format!("unsupported resolution line {dims:?}"),
            ))
        }
    };

    let mut data = vec![0f32; width * height * 3];
    let mut scanline = vec![[0u8; 4]; width];
    for file_row in 0..height {
        read_scanline(reader, &mut scanline)?;
        let row = if flip { height - 1 - file_row } else { file_row };
        for (col, px) in scanline.iter().enumerate() {
            let rgb = rgbe_to_rgb(*px);
            data[(row * width + col) * 3..][..3].copy_from_slice(&rgb);
        }
    }
    RadianceImage::new(width, height, 3, data)
}

/// Writes a Radiance file. Single-channel images are replicated to gray RGB.
pub fn write_rgbe<W: Write>(img: &RadianceImage, writer: &mut W, rle: bool) -> io::Result<()> {
    let (w, h) = (img.width(), img.height());
    write!(
        writer,
        "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {h} +X {w}\n"
    )?;
    let mut line = Vec::with_capacity(w);
    for r in 0..h {
        line.clear();
        for c in 0..w {
            let rgb = if img.channels() == 3 {
                [img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2)]
            } else {
                [img.get(r, c, 0); 3]
            };
            line.push(rgb_to_rgbe(rgb));
        }
        if rle && (8..0x8000).contains(&w) {
            write_rle_scanline(writer, &line)?;
        } else {
            for px in &line {
                writer.write_all(px)?;
            }
        }
    }
    Ok(())
}

fn write_rle_scanline<W: Write>(writer: &mut W, line: &[[u8; 4]]) -> io::Result<()> {
    let w = line.len();
    writer.write_all(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8])?;
    for comp in 0..4 {
        let values: Vec<u8> = line.iter().map(|p| p[comp]).collect();
        let mut i = 0;
        while i < w {
            let mut run = 1;
            while i + run < w && run < 127 && values[i + run] == values[i] {
                run += 1;
            }
            if run >= 3 {
                writer.write_all(&[128 + run as u8, values[i]])?;
                i += run;
                continue;
            }
            // literal block up to the next run of three
            let start = i;
            let mut end = i;
            while end < w && end - start < 128 {
                if end + 2 < w && values[end] == values[end + 1] && values[end] == values[end + 2] {
                    break;
                }
                end += 1;
            }
            writer.write_all(&[(end - start) as u8])?;
            writer.write_all(&values[start..end])?;
            i = end;
        }
    }
    Ok(())
}

fn read_scanline<R: BufRead>(reader: &mut R, out: &mut [[u8; 4]]) -> Result<()> {
    let width = out.len();
    let first = read_pixel(reader)?;
    let new_rle = (8..0x8000).contains(&width) && first[0] == 2 && first[1] == 2 && first[2] < 128;
    if !new_rle {
        return read_flat_scanline(reader, first, out);
    }
    let encoded = ((first[2] as usize) << 8) | first[3] as usize;
    if encoded != width {
        return Err(Error::format(FMT, "scanline width mismatch"));
    }
    for comp in 0..4 {
        let mut col = 0;
        while col < width {
            let count = read_byte(reader)? as usize;
            if count > 128 {
                let run = count - 128;
                if col + run > width {
                    return Err(Error::format(FMT, "run overflows scanline"));
                }
                let value = read_byte(reader)?;
                for px in &mut out[col..col + run] {
                    px[comp] = value;
                }
                col += run;
            } else {
                if count == 0 || col + count > width {
                    return Err(Error::format(FMT, "bad literal count"));
                }
                for px in &mut out[col..col + count] {
                    px[comp] = read_byte(reader)?;
                }
                col += count;
            }
        }
    }
    Ok(())
}

fn read_flat_scanline<R: BufRead>(reader: &mut R, first: [u8; 4], out: &mut [[u8; 4]]) -> Result<()> {
    let mut col = 0;
    let mut shift = 0;
    let mut px = first;
    loop {
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            // old-style repeat of the previous pixel
            if col == 0 {
                return Err(Error::format(FMT, "repeat marker at scanline start"));
            }
            let run = (px[3] as usize) << shift;
            if col + run > out.len() {
                return Err(Error::format(FMT, "repeat overflows scanline"));
            }
            let prev = out[col - 1];
            for slot in &mut out[col..col + run] {
                *slot = prev;
            }
            col += run;
            shift += 8;
        } else {
            out[col] = px;
            col += 1;
            shift = 0;
        }
        if col >= out.len() {
            return Ok(());
        }
        px = read_pixel(reader)?;
    }
}

fn read_pixel<R: BufRead>(reader: &mut R) -> Result<[u8; 4]> {
    let mut px = [0u8; 4];
    reader
        .read_exact(&mut px)
        .map_err(|e| Error::format(FMT, format!("truncated pixel data: {e}")))?;
    Ok(px)
}

fn read_byte<R: BufRead>(reader: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    reader
        .read_exact(&mut b)
        .map_err(|e| Error::format(FMT, format!("truncated pixel data: {e}")))?;
    Ok(b[0])
}

fn read_line<R: BufRead>(reader: &mut R) -> Result<String> {
    let mut buf = Vec::new();
    reader
        .read_until(b'\n', &mut buf)
        .map_err(|e| Error::format(FMT, e.to_string()))?;
    if buf.is_empty() {
        return Err(Error::format(FMT, "unexpected end of header"));
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    if buf.len() > 4096 {
        return Err(Error::format(FMT, "header line too long"));
    }
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn parse_dim(s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::format(FMT, format!("bad dimension {s:?}"))),
    }
}
