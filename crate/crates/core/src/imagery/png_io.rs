use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Seek, Write};
use std::path::Path;

use super::LdrImage;
use crate::error::{Error, Result};

pub fn write_png<W: Write>(img: &LdrImage, writer: W) -> Result<()> {
    let mut encoder = png::Encoder::new(writer, img.width() as u32, img.height() as u32);
    encoder.set_color(if img.channels() == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut w = encoder
        .write_header()
        .map_err(|e| Error::format("png", e.to_string()))?;
    w.write_image_data(img.data())
        .map_err(|e| Error::format("png", e.to_string()))?;
    w.finish().map_err(|e| Error::format("png", e.to_string()))
}

pub fn save_png(img: &LdrImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_png(img, &mut writer)?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Decodes to 8-bit gray or RGB; alpha is dropped and 16-bit samples truncated.
pub fn read_png<R: BufRead + Seek>(reader: R) -> Result<LdrImage> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("png", e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png", "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("png", e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, data) = match info.color_type {
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::GrayscaleAlpha => (1, buf.chunks_exact(2).map(|p| p[0]).collect()),
        png::ColorType::Rgb => (3, buf),
        png::ColorType::Rgba => (
            3,
            buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        ),
        png::ColorType::Indexed => {
            return Err(Error::format("png", "palette not expanded"));
        }
    };
    LdrImage::new(w, h, channels, data)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<LdrImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_png(BufReader::new(file))
}
