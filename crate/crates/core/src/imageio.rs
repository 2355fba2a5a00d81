//! Image decode/encode, resizing, and channel normalization.
//!
//! PPM (binary `P6`, maxval 255) is always available. PNG (8-bit RGB) is
//! behind the `png` feature.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Per-channel RGB mean of the normalization.
pub const CHANNEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// Per-channel RGB standard deviation of the normalization.
pub const CHANNEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// 8-bit sRGB image, row-major `RGBRGB…`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(format!("image dims must be >= 1, got {width}x{height}")));
        }
        if rgb.len() != width * height * 3 {
            return Err(Error::config(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        Ok(ImageBuffer { width, height, rgb })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                rgb.extend(f(x, y));
            }
        }
        ImageBuffer { width, height, rgb }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Values scaled to `[0, 1]`, row-major interleaved.
    pub fn unit_values(&self) -> Vec<f64> {
        self.rgb.iter().map(|&v| v as f64 / 255.0).collect()
    }
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

/// Parse a binary PPM. Header comments are allowed; maxval must be 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::parse(0, "missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::parse(pos, "truncated header")),
            }
        }
        if pos == 2 {
            return Err(Error::parse(pos, "expected whitespace after magic"));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(pos, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::parse(start, format!("header field {k} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::parse(pos, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::parse(pos, format!("maxval {maxval} unsupported, expected 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::parse(pos, "expected whitespace after maxval")),
        None => return Err(Error::parse(pos, "truncated header")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::parse(pos, "image dimensions overflow"))?;
    let available = bytes.len() - pos;
    if available < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: {available} of {need} bytes"),
        ));
    }
    ImageBuffer::new(width, height, bytes[pos..pos + need].to_vec())
}

#[cfg(feature = "png")]
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(&img.rgb)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

#[cfg(feature = "png")]
pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::parse(0, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::parse(0, "png too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(0, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let rgb = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::parse(0, "unexpanded indexed png")),
    };
    ImageBuffer::new(w, h, rgb)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Load by extension: `.png` needs the `png` feature, everything else is read as PPM.
pub fn load(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path)?;
    if is_png(path) {
        #[cfg(feature = "png")]
        return decode_png(&bytes);
        #[cfg(not(feature = "png"))]
        return Err(Error::usage(format!(
            "{}: PNG support is not compiled in (enable the png feature)",
            path.display()
        )));
    }
    decode_ppm(&bytes)
}

pub fn save(img: &ImageBuffer, path: &Path) -> Result<()> {
    if is_png(path) {
        #[cfg(feature = "png")]
        return Ok(fs::write(path, encode_png(img)?)?);
        #[cfg(not(feature = "png"))]
        return Err(Error::usage(format!(
            "{}: PNG support is not compiled in (enable the png feature)",
            path.display()
        )));
    }
    Ok(fs::write(path, encode_ppm(img))?)
}

/// `(x/255 − mean_c) / std_c`, laid out as a `1×3×H×W` tensor.
pub fn normalize<T: Real>(img: &ImageBuffer) -> Tensor<T> {
    let (w, h) = (img.width, img.height);
    let plane = w * h;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in img.rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::of((px[c] as f64 / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c]);
        }
    }
    Tensor::new(vec![1, 3, h, w], data).expect("consistent dims")
}

/// Inverse of [`normalize`], rounded half-up and clamped to `[0, 255]`.
pub fn denormalize<T: Real>(t: &Tensor<T>) -> Result<ImageBuffer> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::config(format!("expected a 1x3xHxW image, got {:?}", t.shape())));
    }
    let plane = w * h;
    let d = t.data();
    let mut rgb = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            let unit = d[ch * plane + i].f64() * CHANNEL_STD[ch] + CHANNEL_MEAN[ch];
            rgb.push(quantize(unit * 255.0));
        }
    }
    ImageBuffer::new(w, h, rgb)
}

/// Denormalized values in `[0, 1]` without 8-bit quantization.
pub fn denormalize_unit<T: Real>(t: &Tensor<T>) -> Result<Vec<f64>> {
    let (_, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::config("expected 3 channels"));
    }
    let plane = w * h;
    let d = t.data();
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            let v = d[ch * plane + i].f64() * CHANNEL_STD[ch] + CHANNEL_MEAN[ch];
            out.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Normalized-space bounds `[(0 − mean)/std, (1 − mean)/std]` per channel.
pub fn normalized_range() -> [(f64, f64); 3] {
    std::array::from_fn(|c| {
        (
            (0.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c],
            (1.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c],
        )
    })
}

fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for ResizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResizeMode::Nearest),
            "bilinear" => Ok(ResizeMode::Bilinear),
            _ => Err(Error::usage(format!("unknown resize mode {s:?}"))),
        }
    }
}

pub fn resize(img: &ImageBuffer, width: usize, height: usize, mode: ResizeMode) -> Result<ImageBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::config("resize target must be at least 1x1"));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let out = match mode {
        ResizeMode::Nearest => ImageBuffer::from_fn(width, height, |x, y| {
            let sx = x * img.width / width;
            let sy = y * img.height / height;
            img.pixel(sx, sy)
        }),
        ResizeMode::Bilinear => {
            let source = |dst: usize, src_len: usize, dst_len: usize| {
                let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
                let s = s.clamp(0.0, (src_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, s - i0 as f64)
            };
            ImageBuffer::from_fn(width, height, |x, y| {
                let (x0, x1, fx) = source(x, img.width, width);
                let (y0, y1, fy) = source(y, img.height, height);
                let (p00, p10, p01, p11) = (
                    img.pixel(x0, y0),
                    img.pixel(x1, y0),
                    img.pixel(x0, y1),
                    img.pixel(x1, y1),
                );
                std::array::from_fn(|c| {
                    let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                    let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                    quantize(top * (1.0 - fy) + bottom * fy)
                })
            })
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_pixel_ppm() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(encode_ppm(&img), bytes);
    }

    #[test]
    fn ppm_with_comments() {
        let mut bytes = b"P6 # made by hand\n2 # width\n1\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5, 6]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
    }

    #[test]
    fn ppm_errors_carry_offsets() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0; 11]);
        match decode_ppm(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"), Err(Error::Parse { .. })));
        assert!(matches!(decode_ppm(b"P6\n1"), Err(Error::Parse { .. })));
        assert!(matches!(decode_ppm(b"P6\nx 1\n255\n"), Err(Error::Parse { offset: 3, .. })));
    }

    #[test]
    fn mean_pixel_normalizes_near_zero() {
        let img = ImageBuffer::new(1, 1, vec![124, 116, 104]).unwrap();
        let t = normalize::<f64>(&img);
        assert!(t.data().iter().all(|v| v.abs() < 0.01), "{:?}", t.data());
    }

    #[test]
    fn white_pixel_normalizes_by_formula() {
        let img = ImageBuffer::new(1, 1, vec![255, 255, 255]).unwrap();
        let t = normalize::<f32>(&img);
        for (v, want) in t.data().iter().zip([2.2489, 2.4286, 2.6400]) {
            assert!((*v as f64 - want).abs() < 1e-3);
        }
    }

    #[test]
    fn normalization_round_trip_within_quantization() {
        let img = ImageBuffer::from_fn(16, 9, |x, y| [(x * 16) as u8, (y * 28) as u8, ((x + y) * 7) as u8]);
        let back = denormalize(&normalize::<f32>(&img)).unwrap();
        let worst = img
            .rgb()
            .iter()
            .zip(back.rgb())
            .map(|(a, b)| (*a as i32 - *b as i32).abs())
            .max()
            .unwrap();
        assert!(worst <= 1);
    }

    #[test]
    fn denormalize_clamps() {
        let t = Tensor::<f32>::full(vec![1, 3, 1, 1], 100.0);
        assert_eq!(denormalize(&t).unwrap().rgb(), &[255, 255, 255]);
        let t = Tensor::<f32>::full(vec![1, 3, 1, 1], -100.0);
        assert_eq!(denormalize(&t).unwrap().rgb(), &[0, 0, 0]);
    }

    #[test]
    fn resize_cases() {
        let img = ImageBuffer::from_fn(5, 3, |x, y| [x as u8, y as u8, 9]);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            assert_eq!(resize(&img, 5, 3, mode).unwrap(), img);
        }
        let checker = ImageBuffer::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { [255; 3] } else { [0; 3] });
        let big = resize(&checker, 4, 4, ResizeMode::Nearest).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(big.pixel(x, y), checker.pixel(x / 2, y / 2));
            }
        }
        let pair = ImageBuffer::new(2, 1, vec![0, 0, 0, 255, 255, 255]).unwrap();
        let mid = resize(&pair, 3, 1, ResizeMode::Bilinear).unwrap();
        assert_eq!(mid.pixel(1, 0), [128, 128, 128]);
    }

    #[test]
    fn resize_preserves_range() {
        let img = ImageBuffer::from_fn(7, 5, |x, y| [(x * 30) as u8, 200 + y as u8, 17]);
        let r = resize(&img, 13, 11, ResizeMode::Bilinear).unwrap();
        let (lo, hi) = (img.rgb().iter().min().unwrap(), img.rgb().iter().max().unwrap());
        assert!(r.rgb().iter().all(|v| v >= lo && v <= hi));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(3, 2, |x, y| [x as u8 * 80, y as u8 * 100, 7]);
        let p = dir.path().join("a.ppm");
        save(&img, &p).unwrap();
        assert_eq!(load(&p).unwrap(), img);
    }

    #[cfg(feature = "png")]
    #[test]
    fn png_round_trip() {
        let img = ImageBuffer::from_fn(3, 2, |x, y| [x as u8 * 80, y as u8 * 100, 7]);
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
    }
}
