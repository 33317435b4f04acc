//! PPM (P6) and PNG reading/writing.
//!
//! PPM is parsed by hand so malformed headers can be reported with a byte
//! offset. PNG goes through the `png` crate and is always written as 8-bit
//! RGB.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

use super::image::Image;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("png") => Ok(ImageFormat::Png),
            _ => Err(Error::Config(format!(
                "cannot infer image format from {}",
                path.display()
            ))),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path)?;
    decode_image(&bytes)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Ppm => encode_ppm(image),
        ImageFormat::Png => encode_png(image)?,
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Sniffs the format from magic bytes.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty file"));
    }
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(PNG_MAGIC) {
        decode_png(bytes)
    } else {
        Err(Error::parse(0, "unrecognised image signature"))
    }
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_rgb8());
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::parse(0, "missing P6 magic"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(maxval_at, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(maxval_at, format!("maxval {maxval} not in 1..=65535")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::parse(cur.pos, "expected single whitespace before raster")),
    }
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let need = width * height * 3 * sample_bytes;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(Error::parse(
            cur.pos + raster.len(),
            format!("raster truncated: need {need} bytes, have {}", raster.len()),
        ));
    }
    let scale = maxval as f32;
    let mut data = Vec::with_capacity(width * height * 3);
    for (i, chunk) in raster[..need].chunks_exact(sample_bytes).enumerate() {
        let v = if sample_bytes == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]]) as usize
        } else {
            chunk[0] as usize
        };
        if v > maxval {
            return Err(Error::parse(
                cur.pos + i * sample_bytes,
                format!("sample {v} exceeds maxval {maxval}"),
            ));
        }
        data.push(v as f32 / scale);
    }
    Image::new(height, width, data)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(&image.to_rgb8())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let png_err = |e: png::DecodingError| Error::parse(0, format!("png: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::parse(0, "png: image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf.to_vec(),
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::parse(0, "png: palette not expanded")),
    };
    Image::from_rgb8(h, w, &rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        Image::from_fn(5, 7, |r, c| [r as f32 / 4.0, c as f32 / 6.0, ((r + c) % 3) as f32 / 2.0])
    }

    fn quantized(img: &Image) -> Image {
        Image::from_rgb8(img.height(), img.width(), &img.to_rgb8()).unwrap()
    }

    #[test]
    fn ppm_round_trip_after_quantization() {
        let img = sample();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, quantized(&img));
    }

    #[test]
    fn png_round_trip_within_one_level() {
        let img = sample();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-7);
        }
        assert_eq!(back, quantized(&img));
    }

    #[test]
    fn png_encoding_is_deterministic() {
        let img = sample();
        assert_eq!(encode_png(&img).unwrap(), encode_png(&img).unwrap());
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(decode_image(&[]), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn known_bytes_two_by_two() {
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        bytes.extend([0, 51, 102, 153, 204, 255, 1, 2, 3, 254, 128, 127]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        let want: Vec<f32> = [0u8, 51, 102, 153, 204, 255, 1, 2, 3, 254, 128, 127]
            .iter()
            .map(|&k| k as f32 / 255.0)
            .collect();
        assert_eq!(img.data(), &want[..]);
    }

    #[test]
    fn truncated_raster_reports_offset() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend([1, 2, 3]);
        match decode_ppm(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_header_reports_offset() {
        match decode_ppm(b"P6 2 x 255\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample();
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), quantized(&img));
        }
        assert!(save_image(&img, dir.path().join("a.bmp")).is_err());
    }
}
