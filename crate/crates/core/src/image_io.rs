//! 8-bit image reading and writing (binary PGM and PNG), with values
//! mapped onto the configured pixel scale.
//!
//! Grayscale images load as `[1, 1, H, W]` tensors, RGB PNGs as
//! `[1, 3, H, W]` channel planes. Writing quantizes by clamping to the
//! scale's range and rounding to 8 bits, so a write-then-read round trip
//! of 8-bit data is lossless.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Value range pixels occupy in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelScale {
    /// Pixels in `[0, 1]` (default).
    Unit,
    /// Pixels in `[0, 255]`.
    Byte,
}

impl PixelScale {
    pub fn peak(self) -> f64 {
        match self {
            PixelScale::Unit => 1.0,
            PixelScale::Byte => 255.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PixelScale::Unit => "unit",
            PixelScale::Byte => "byte",
        }
    }

    fn decode(self, byte: u8) -> f64 {
        match self {
            PixelScale::Unit => byte as f64 / 255.0,
            PixelScale::Byte => byte as f64,
        }
    }

    fn encode(self, value: f64) -> u8 {
        let v = match self {
            PixelScale::Unit => value * 255.0,
            PixelScale::Byte => value,
        };
        v.clamp(0.0, 255.0).round() as u8
    }
}

impl std::str::FromStr for PixelScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" | "0-1" => Ok(PixelScale::Unit),
            "byte" | "0-255" => Ok(PixelScale::Byte),
            other => Err(Error::Parse(format!("unknown pixel scale '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(ext) if ext == "pgm" => Ok(ImageFormat::Pgm),
            Some(ext) if ext == "png" => Ok(ImageFormat::Png),
            other => Err(Error::Parse(format!(
                "unsupported image extension {other:?} for {}",
                path.display()
            ))),
        }
    }
}

fn tensor_from_bytes<T: Element>(
    bytes: &[u8],
    channels: usize,
    h: usize,
    w: usize,
    scale: PixelScale,
) -> Result<Tensor<T>> {
    // Interleaved samples to channel planes.
    let mut out = Tensor::zeros(Shape::nchw(1, channels, h, w)?);
    let dst = out.values_mut();
    for i in 0..h * w {
        for c in 0..channels {
            dst[c * h * w + i] = T::from_f64_c(scale.decode(bytes[i * channels + c]));
        }
    }
    Ok(out)
}

fn bytes_from_tensor<T: Element>(image: &Tensor<T>, scale: PixelScale) -> Result<(usize, usize, usize, Vec<u8>)> {
    let (n, c, h, w) = image.shape().as_nchw()?;
    if n != 1 || !matches!(c, 1 | 3) {
        return Err(Error::shape(format!(
            "image write expects [1,1,H,W] or [1,3,H,W], got {}",
            image.shape()
        )));
    }
    let src = image.values();
    let mut bytes = vec![0u8; c * h * w];
    for i in 0..h * w {
        for ch in 0..c {
            bytes[i * c + ch] = scale.encode(src[ch * h * w + i].as_f64());
        }
    }
    Ok((c, h, w, bytes))
}

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit)
// ---------------------------------------------------------------------------

/// Parse a binary PGM: `P5`, whitespace/comment-separated width, height,
/// maxval (must be 255), then raw bytes.
pub fn read_pgm<T: Element>(path: &Path, scale: PixelScale) -> Result<Tensor<T>> {
    let data = fs::read(path)?;
    parse_pgm(&data, scale).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_pgm<T: Element>(data: &[u8], scale: PixelScale) -> Result<Tensor<T>> {
    if data.len() < 2 || &data[0..2] != b"P5" {
        return Err(Error::Parse("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        *field = std::str::from_utf8(&data[start..pos])
            .map_err(|_| Error::Parse("bad PGM header".into()))?
            .parse()
            .map_err(|_| Error::Parse("bad PGM header number".into()))?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Parse(format!("only 8-bit PGM supported, maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Parse("zero-sized PGM".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::Parse("missing raster separator".into()));
    }
    pos += 1;
    let need = w * h;
    if data.len() < pos + need {
        return Err(Error::Parse(format!(
            "truncated raster: need {need} bytes, have {}",
            data.len() - pos
        )));
    }
    tensor_from_bytes(&data[pos..pos + need], 1, h, w, scale)
}

/// Write a single-channel tensor as binary PGM with header
/// `P5\n<w> <h>\n255\n`.
pub fn write_pgm<T: Element>(path: &Path, image: &Tensor<T>, scale: PixelScale) -> Result<()> {
    let (c, h, w, bytes) = bytes_from_tensor(image, scale)?;
    if c != 1 {
        return Err(Error::shape("PGM is single-channel"));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&bytes);
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PNG (8-bit grayscale or RGB)
// ---------------------------------------------------------------------------

pub fn read_png<T: Element>(path: &Path, scale: PixelScale) -> Result<Tensor<T>> {
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Parse("png too large".into()))?];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Parse(format!("only 8-bit PNG supported, got {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::Parse(format!(
                "unsupported PNG color type {other:?} (grayscale or RGB)"
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    tensor_from_bytes(&buf[..channels * w * h], channels, h, w, scale)
}

pub fn write_png<T: Element>(path: &Path, image: &Tensor<T>, scale: PixelScale) -> Result<()> {
    let (c, h, w, bytes) = bytes_from_tensor(image, scale)?;
    let file = fs::File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Parse(format!("png encode: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Parse(format!("png encode: {e}")))?;
    Ok(())
}

/// Read an image, dispatching on the file extension.
pub fn image_read<T: Element>(path: &Path, scale: PixelScale) -> Result<Tensor<T>> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Pgm => read_pgm(path, scale),
        ImageFormat::Png => read_png(path, scale),
    }
}

/// Write an image, dispatching on the file extension.
pub fn image_write<T: Element>(path: &Path, image: &Tensor<T>, scale: PixelScale) -> Result<()> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Pgm => write_pgm(path, image, scale),
        ImageFormat::Png => write_png(path, image, scale),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // keep the tempdir alive by leaking it; tests are short-lived
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    fn random_bytes(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = SplitMix64::new(seed);
        (0..n).map(|_| (rng.next_u64() & 0xFF) as u8).collect()
    }

    #[test]
    fn pgm_write_then_read_is_byte_identical() {
        let path = tmp("roundtrip.pgm");
        let bytes = random_bytes(128 * 128, 1);
        let t = tensor_from_bytes::<f32>(&bytes, 1, 128, 128, PixelScale::Unit).unwrap();
        write_pgm(&path, &t, PixelScale::Unit).unwrap();
        let raw = fs::read(&path).unwrap();
        assert!(raw.starts_with(b"P5\n128 128\n255\n"));
        assert_eq!(&raw[15..], &bytes[..]);
        let back = read_pgm::<f32>(&path, PixelScale::Unit).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn pgm_header_parses_with_comments() {
        let mut data = b"P5\n# a comment\n4 2\n255\n".to_vec();
        data.extend_from_slice(&[0, 64, 128, 255, 1, 2, 3, 4]);
        let t = parse_pgm::<f64>(&data, PixelScale::Byte).unwrap();
        assert_eq!(t.shape().dims(), &[1, 1, 2, 4]);
        assert_eq!(t.values()[3], 255.0);
    }

    #[test]
    fn truncated_pgm_is_a_parse_error() {
        let mut data = b"P5\n128 128\n255\n".to_vec();
        data.extend_from_slice(&[0u8; 100]); // far short of 16384
        let err = parse_pgm::<f32>(&data, PixelScale::Unit).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "got {err:?}");
        assert!(parse_pgm::<f32>(b"P6\n1 1\n255\n\0", PixelScale::Unit).is_err());
        assert!(parse_pgm::<f32>(b"P5\n1 1\n65535\n\0\0", PixelScale::Unit).is_err());
    }

    #[test]
    fn png_gray_and_rgb_round_trip() {
        let gray = tmp("g.png");
        let bytes = random_bytes(32 * 16, 2);
        let t = tensor_from_bytes::<f32>(&bytes, 1, 16, 32, PixelScale::Unit).unwrap();
        write_png(&gray, &t, PixelScale::Unit).unwrap();
        assert_eq!(read_png::<f32>(&gray, PixelScale::Unit).unwrap(), t);

        let rgb = tmp("c.png");
        let bytes = random_bytes(8 * 8 * 3, 3);
        let t = tensor_from_bytes::<f32>(&bytes, 3, 8, 8, PixelScale::Byte).unwrap();
        write_png(&rgb, &t, PixelScale::Byte).unwrap();
        assert_eq!(read_png::<f32>(&rgb, PixelScale::Byte).unwrap(), t);
    }

    #[test]
    fn extension_dispatch_and_unknown_extension() {
        let path = tmp("img.bmp");
        assert!(ImageFormat::from_path(&path).is_err());
        let t = tensor_from_bytes::<f32>(&random_bytes(16, 4), 1, 4, 4, PixelScale::Unit).unwrap();
        let p = tmp("img.pgm");
        image_write(&p, &t, PixelScale::Unit).unwrap();
        assert_eq!(image_read::<f32>(&p, PixelScale::Unit).unwrap(), t);
    }

    #[test]
    fn byte_scale_values_survive_quantization() {
        let t = tensor_from_bytes::<f64>(&random_bytes(64, 5), 1, 8, 8, PixelScale::Byte).unwrap();
        let p = tmp("q.pgm");
        write_pgm(&p, &t, PixelScale::Byte).unwrap();
        assert_eq!(read_pgm::<f64>(&p, PixelScale::Byte).unwrap(), t);
    }
}
