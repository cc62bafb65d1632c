//! Binary PPM (P6) images.
//!
//! Channels are quantized as `round(clamp(v, 0, 1) · 255)` with halves rounded
//! away from zero, so `0.5` encodes as 128.

use splatdiff::raster_forward::ImageBuffer;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(image: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| quantize(v)));
    out
}

/// Single-channel image written as gray P6.
pub fn encode_gray(width: u32, height: u32, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().flat_map(|&v| [quantize(v); 3]));
    out
}

/// Parses a P6 file with maxval ≤ 255; channels become `byte / maxval`.
pub fn decode(bytes: &[u8]) -> Result<ImageBuffer, String> {
    let mut pos = 0;
    let mut fields = [0u32; 3];
    let magic = header_token(bytes, &mut pos)?;
    if magic != "P6" {
        return Err(format!("expected P6 magic, found {magic:?}"));
    }
    for (field, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let token = header_token(bytes, &mut pos)?;
        *field = token
            .parse()
            .map_err(|_| format!("invalid {name} {token:?}"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let expected = 3 * width as usize * height as usize;
    let payload = bytes.get(pos..).unwrap_or_default();
    if payload.len() != expected {
        return Err(format!(
            "expected {expected} payload bytes, found {}",
            payload.len()
        ));
    }
    let scale = maxval as f64;
    let data = payload.iter().map(|&b| b as f64 / scale).collect();
    ImageBuffer::from_data(width, height, data).map_err(|e| e.to_string())
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("truncated header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    if *pos >= bytes.len() {
        return Err("truncated header".into());
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| "non-ASCII header".into())
}
