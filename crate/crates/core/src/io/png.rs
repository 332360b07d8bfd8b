//! Lossless PNG codecs for depth (16-bit gray), label (8-bit gray) and
//! color (8-bit RGB) frames.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::frame::{ColorImage, DepthMap, LabelMap};

/// Decoder allocation cap; comfortably above a 640×480 16-bit frame.
const DECODE_LIMIT_BYTES: usize = 64 << 20;

struct Raw {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn format_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{what}: {e}"))
}

fn decode(bytes: &[u8]) -> Result<Raw> {
    let mut decoder = png::Decoder::new_with_limits(
        Cursor::new(bytes),
        png::Limits {
            bytes: DECODE_LIMIT_BYTES,
        },
    );
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| format_err("png", e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png: image too large".into()))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(|e| format_err("png", e))?;
    data.truncate(info.buffer_size());
    Ok(Raw {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn expect(raw: &Raw, kind: &str, color: ColorType, depth: BitDepth) -> Result<()> {
    if raw.color != color || raw.depth != depth {
        return Err(Error::Format(format!(
            "{kind} png must be {depth:?}-bit {color:?}, found {:?}-bit {:?}",
            raw.depth, raw.color
        )));
    }
    Ok(())
}

fn encode(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| format_err("png", e))?;
        writer.write_image_data(data).map_err(|e| format_err("png", e))?;
        writer.finish().map_err(|e| format_err("png", e))?;
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthMap> {
    let raw = decode(bytes)?;
    expect(&raw, "depth", ColorType::Grayscale, BitDepth::Sixteen)?;
    let values = raw.data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    DepthMap::new(raw.width, raw.height, values)
}

pub fn encode_depth_png(depth: &DepthMap) -> Result<Vec<u8>> {
    let data: Vec<u8> = depth.values().iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(depth.width(), depth.height(), ColorType::Grayscale, BitDepth::Sixteen, &data)
}

pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap> {
    let raw = decode(bytes)?;
    expect(&raw, "label", ColorType::Grayscale, BitDepth::Eight)?;
    LabelMap::new(raw.width, raw.height, raw.data)
}

pub fn encode_label_png(labels: &LabelMap) -> Result<Vec<u8>> {
    encode(labels.width(), labels.height(), ColorType::Grayscale, BitDepth::Eight, labels.classes())
}

pub fn decode_color_png(bytes: &[u8]) -> Result<ColorImage> {
    let raw = decode(bytes)?;
    expect(&raw, "color", ColorType::Rgb, BitDepth::Eight)?;
    let pixels = raw.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    ColorImage::new(raw.width, raw.height, pixels)
}

pub fn encode_color_png(color: &ColorImage) -> Result<Vec<u8>> {
    let data: Vec<u8> = color.pixels().iter().flatten().copied().collect();
    encode(color.width(), color.height(), ColorType::Rgb, BitDepth::Eight, &data)
}

pub fn load_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_depth_png(&read(path.as_ref())?).map_err(|e| e.in_file(path.as_ref()))
}

pub fn save_depth_png(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write(path.as_ref(), &encode_depth_png(depth)?)
}

pub fn load_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_label_png(&read(path.as_ref())?).map_err(|e| e.in_file(path.as_ref()))
}

pub fn save_label_png(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write(path.as_ref(), &encode_label_png(labels)?)
}

pub fn load_color_png(path: impl AsRef<Path>) -> Result<ColorImage> {
    decode_color_png(&read(path.as_ref())?).map_err(|e| e.in_file(path.as_ref()))
}

pub fn save_color_png(path: impl AsRef<Path>, color: &ColorImage) -> Result<()> {
    write(path.as_ref(), &encode_color_png(color)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_round_trip_is_bitwise() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let d = DepthMap::new(13, 7, (0..91).map(|_| r.random()).collect()).unwrap();
        assert_eq!(decode_depth_png(&encode_depth_png(&d).unwrap()).unwrap(), d);
    }

    #[test]
    fn label_and_color_round_trip() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let l = LabelMap::new(5, 9, (0..45).map(|_| r.random_range(0..3)).collect()).unwrap();
        assert_eq!(decode_label_png(&encode_label_png(&l).unwrap()).unwrap(), l);
        let c = ColorImage::new(6, 4, (0..24).map(|_| r.random()).collect()).unwrap();
        assert_eq!(decode_color_png(&encode_color_png(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn wrong_bit_depth_rejected() {
        let eight = encode(4, 4, ColorType::Grayscale, BitDepth::Eight, &[0; 16]).unwrap();
        let err = decode_depth_png(&eight).unwrap_err();
        assert!(err.to_string().contains("Sixteen"), "{err}");
        let sixteen = encode_depth_png(&DepthMap::filled(4, 4, 1)).unwrap();
        assert!(decode_label_png(&sixteen).is_err());
        assert!(decode_color_png(&eight).is_err());
        assert!(decode_depth_png(b"not a png").is_err());
    }

    #[test]
    fn label_value_three_rejected() {
        let bytes = encode(2, 2, ColorType::Grayscale, BitDepth::Eight, &[0, 1, 2, 3]).unwrap();
        assert!(matches!(decode_label_png(&bytes), Err(Error::LabelOutOfRange { value: 3, .. })));
    }

    #[test]
    fn file_round_trip_and_errors_name_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let d = DepthMap::filled(3, 2, 512);
        save_depth_png(&p, &d).unwrap();
        assert_eq!(load_depth_png(&p).unwrap(), d);
        let err = load_label_png(&p).unwrap_err();
        assert!(err.to_string().contains("d.png"), "{err}");
        let err = load_depth_png(dir.path().join("missing.png")).unwrap_err();
        assert!(err.to_string().contains("missing.png"), "{err}");
    }
}
