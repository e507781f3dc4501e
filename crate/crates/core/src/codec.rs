//! File codecs: 16-bit PNG depth maps (value = depth·256, 0 = invalid),
//! binary PPM (P6) colour images and binary PGM (P5) masks.

use std::io::Cursor;

use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::image::{Mask, RgbImage};

/// Depth resolution of the PNG16 convention, in metres.
pub const DEPTH_PNG_QUANTUM_M: f64 = 1.0 / 256.0;

/// Encodes `round(depth·256)` per pixel; valid depths round to at least 1 so
/// they stay distinguishable from invalid pixels.
pub fn encode_depth_png16(map: &DepthMap) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(map.depth.len() * 2);
    for &d in &map.depth {
        let v = if d > 0.0 {
            let q = (d * 256.0).round();
            if q > u16::MAX as f64 {
                return Err(Error::Contract(format!("depth {d} m exceeds the 16-bit range")));
            }
            q.max(1.0) as u16
        } else {
            0
        };
        raw.extend_from_slice(&v.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, map.width as u32, map.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().map_err(|e| Error::Decode(e.to_string()))?;
        w.write_image_data(&raw).map_err(|e| Error::Decode(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_depth_png16(bytes: &[u8]) -> Result<DepthMap> {
    let dec = png::Decoder::new(Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::Decode(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Decode(format!(
            "expected 16-bit grayscale, found {:?} at {:?} bits",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Decode(e.to_string()))?;
    let depth = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 256.0)
        .collect();
    DepthMap::new(width, height, depth)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (width, height, body) = parse_netpbm(bytes, b"P6")?;
    if body.len() < width * height * 3 {
        return Err(Error::Decode(format!("PPM body holds {} of {} bytes", body.len(), width * height * 3)));
    }
    RgbImage::new(width, height, body[..width * height * 3].to_vec())
}

/// Mask pixels are written as 255 (set) or 0.
pub fn encode_pgm_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn decode_pgm_mask(bytes: &[u8]) -> Result<Mask> {
    let (width, height, body) = parse_netpbm(bytes, b"P5")?;
    if body.len() < width * height {
        return Err(Error::Decode(format!("PGM body holds {} of {} bytes", body.len(), width * height)));
    }
    Mask::new(width, height, body[..width * height].iter().map(|&v| v > 127).collect())
}

/// Parses a binary netpbm header with maxval 255, skipping `#` comments.
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(usize, usize, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::Decode(format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode("malformed netpbm header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Decode("malformed netpbm header".into()));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 || width == 0 || height == 0 {
        return Err(Error::Decode(format!("unsupported netpbm geometry {width}x{height} maxval {maxval}")));
    }
    Ok((width, height, &bytes[pos + 1..]))
}
