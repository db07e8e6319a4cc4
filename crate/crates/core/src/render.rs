//! Integer-only rasterization of paths onto images.
//!
//! Points are denormalized with round-half-up and clamped to the image, so
//! the output is a pure function of its inputs on every platform. Segments
//! use a supercover traversal (every cell the centre-to-centre line touches)
//! dilated by a square brush; gripper events are filled discs drawn after
//! all segments.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::{events, GripperEventKind, Path2D};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("expected a {expected}-channel image, got {actual}")]
    ChannelMismatch { expected: u8, actual: u8 },
    #[error("style mode {0:?} does not match the requested drawing operation")]
    ModeMismatch(RenderMode),
    #[error("invalid style: {0}")]
    InvalidStyle(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major, channel-interleaved 8-bit image with 3 or 6 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

const PLANAR_MAGIC: &[u8; 4] = b"VLPI";

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::InvalidImage("zero-sized image".into()));
        }
        if channels != 3 && channels != 6 {
            return Err(RenderError::InvalidImage(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(RenderError::InvalidImage(format!("expected {expected} bytes, got {}", data.len())));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn black(width: u32, height: u32, channels: u8) -> Result<Self, RenderError> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![0; len])
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, RenderError> {
        let mut img = Self::black(width, height, 3)?;
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&color.0);
        }
        Ok(img)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * self.channels as usize;
        self.data[i..i + 3].copy_from_slice(&color.0);
    }

    /// Channels `range` of every pixel as a new 3-channel image.
    pub fn split_rgb(&self, first_channel: usize) -> Result<Image, RenderError> {
        if first_channel + 3 > self.channels as usize {
            return Err(RenderError::ChannelMismatch { expected: 6, actual: self.channels });
        }
        let data = self
            .data
            .chunks_exact(self.channels as usize)
            .flat_map(|px| px[first_channel..first_channel + 3].iter().copied())
            .collect();
        Image::new(self.width, self.height, 3, data)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Image, RenderError> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info()?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| RenderError::InvalidImage("png too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            png::ColorType::Indexed => return Err(RenderError::InvalidImage("unexpanded palette".into())),
        };
        Image::new(info.width, info.height, 3, rgb)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RenderError> {
        if self.channels != 3 {
            return Err(RenderError::ChannelMismatch { expected: 3, actual: self.channels });
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.data)?;
        }
        Ok(out)
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Image, RenderError> {
        Self::decode_png(&fs::read(path)?)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    /// Raw planar dump: `VLPI`, then width, height and channels as
    /// little-endian `u32`, then one full plane per channel.
    pub fn encode_planar(&self) -> Vec<u8> {
        let c = self.channels as usize;
        let mut out = Vec::with_capacity(16 + self.data.len());
        out.extend_from_slice(PLANAR_MAGIC);
        for v in [self.width, self.height, self.channels as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for ch in 0..c {
            out.extend(self.data.iter().skip(ch).step_by(c));
        }
        out
    }

    pub fn decode_planar(bytes: &[u8]) -> Result<Image, RenderError> {
        if bytes.len() < 16 || &bytes[..4] != PLANAR_MAGIC {
            return Err(RenderError::InvalidImage("missing planar header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let (w, h, c) = (word(4), word(8), word(12));
        let plane = w as usize * h as usize;
        let body = &bytes[16..];
        if c > 6 || body.len() != plane * c as usize {
            return Err(RenderError::InvalidImage("planar body size mismatch".into()));
        }
        let mut data = vec![0; body.len()];
        for ch in 0..c as usize {
            for (i, &v) in body[ch * plane..(ch + 1) * plane].iter().enumerate() {
                data[i * c as usize + ch] = v;
            }
        }
        Image::new(w, h, c as u8, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLUE: Rgb = Rgb([0, 0, 255]);
    pub const RED: Rgb = Rgb([255, 0, 0]);
    pub const GREEN: Rgb = Rgb([0, 255, 0]);

    /// `self + (other - self) * num / den`, rounded half up per channel.
    fn lerp(self, other: Rgb, num: u32, den: u32) -> Rgb {
        let mut out = [0u8; 3];
        for (o, (&a, &b)) in out.iter_mut().zip(self.0.iter().zip(&other.0)) {
            let v = (a as u32 * (den - num) + b as u32 * num) * 2 + den;
            *o = (v / (2 * den)) as u8;
        }
        Rgb(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RenderMode {
    #[serde(rename = "overlay")]
    Overlay,
    #[serde(rename = "concat")]
    ConcatChannels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    pub line_width: u32,
    pub gradient_start: Rgb,
    pub gradient_end: Rgb,
    pub close_color: Rgb,
    pub open_color: Rgb,
    pub circle_radius: u32,
    pub mode: RenderMode,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            line_width: 3,
            gradient_start: Rgb::BLUE,
            gradient_end: Rgb::RED,
            close_color: Rgb::GREEN,
            open_color: Rgb::BLUE,
            circle_radius: 6,
            mode: RenderMode::Overlay,
        }
    }
}

impl OverlayStyle {
    pub fn concat() -> Self {
        Self { mode: RenderMode::ConcatChannels, ..Self::default() }
    }

    /// Convention of the ranking figures: blue circle closes, red opens.
    pub fn ranking() -> Self {
        Self { close_color: Rgb::BLUE, open_color: Rgb::RED, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.line_width < 1 {
            return Err(RenderError::InvalidStyle("line_width must be >= 1".into()));
        }
        if self.circle_radius < 1 {
            return Err(RenderError::InvalidStyle("circle_radius must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Segment { from: (i64, i64), to: (i64, i64), color: Rgb },
    Circle { center: (i64, i64), radius: u32, color: Rgb },
}

/// Normalized coordinate to pixel index: round half up, then clamp.
pub fn denormalize(v: f64, size: u32) -> i64 {
    ((v * size as f64 + 0.5).floor() as i64).clamp(0, size as i64 - 1)
}

/// Display list for a path, in drawing order.
pub fn overlay_primitives(path: &Path2D, style: &OverlayStyle, width: u32, height: u32) -> Vec<Primitive> {
    let px: Vec<(i64, i64)> = path
        .points()
        .iter()
        .map(|p| (denormalize(p.x, width), denormalize(p.y, height)))
        .collect();
    let mut out = Vec::new();
    if px.len() == 1 {
        out.push(Primitive::Segment { from: px[0], to: px[0], color: style.gradient_start });
    }
    let segments = px.len().saturating_sub(1) as u32;
    for (k, w) in px.windows(2).enumerate() {
        let color = if segments <= 1 {
            style.gradient_start
        } else {
            style.gradient_start.lerp(style.gradient_end, k as u32, segments - 1)
        };
        out.push(Primitive::Segment { from: w[0], to: w[1], color });
    }
    for ev in events(path) {
        let color = match ev.kind {
            GripperEventKind::Close => style.close_color,
            GripperEventKind::Open => style.open_color,
        };
        out.push(Primitive::Circle { center: px[ev.index], radius: style.circle_radius, color });
    }
    out
}

/// Cells crossed by the segment between two cell centres. Where the line
/// passes exactly through a corner, both side cells are included.
pub fn supercover_line(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = ((to.0 - from.0).abs(), (to.1 - from.1).abs());
    let (sx, sy) = ((to.0 - from.0).signum(), (to.1 - from.1).signum());
    let (mut x, mut y) = from;
    let (mut ix, mut iy) = (0, 0);
    let mut cells = vec![(x, y)];
    while ix < dx || iy < dy {
        let decision = (1 + 2 * ix) * dy - (1 + 2 * iy) * dx;
        if decision == 0 {
            cells.push((x + sx, y));
            cells.push((x, y + sy));
            x += sx;
            y += sy;
            ix += 1;
            iy += 1;
        } else if decision < 0 {
            x += sx;
            ix += 1;
        } else {
            y += sy;
            iy += 1;
        }
        cells.push((x, y));
    }
    cells
}

fn rasterize(img: &mut Image, prims: &[Primitive], line_width: u32) {
    let lo = -((line_width as i64 - 1) / 2);
    let hi = line_width as i64 / 2;
    for prim in prims {
        match *prim {
            Primitive::Segment { from, to, color } => {
                for (x, y) in supercover_line(from, to) {
                    for oy in lo..=hi {
                        for ox in lo..=hi {
                            img.put(x + ox, y + oy, color);
                        }
                    }
                }
            }
            Primitive::Circle { center, radius, color } => {
                let r = radius as i64;
                for oy in -r..=r {
                    for ox in -r..=r {
                        if ox * ox + oy * oy <= r * r {
                            img.put(center.0 + ox, center.1 + oy, color);
                        }
                    }
                }
            }
        }
    }
}

fn overlay_unchecked(img: &Image, path: &Path2D, style: &OverlayStyle) -> Result<Image, RenderError> {
    style.validate()?;
    if img.channels != 3 {
        return Err(RenderError::ChannelMismatch { expected: 3, actual: img.channels });
    }
    let mut out = img.clone();
    let prims = overlay_primitives(path, style, img.width, img.height);
    rasterize(&mut out, &prims, style.line_width);
    Ok(out)
}

/// Draws the path over a copy of a 3-channel image.
pub fn draw_overlay(img: &Image, path: &Path2D, style: &OverlayStyle) -> Result<Image, RenderError> {
    if style.mode != RenderMode::Overlay {
        return Err(RenderError::ModeMismatch(style.mode));
    }
    overlay_unchecked(img, path, style)
}

/// Six-channel image: the input in channels 0–2, the path drawn on black in
/// channels 3–5.
pub fn draw_concat(img: &Image, path: &Path2D, style: &OverlayStyle) -> Result<Image, RenderError> {
    if style.mode != RenderMode::ConcatChannels {
        return Err(RenderError::ModeMismatch(style.mode));
    }
    if img.channels != 3 {
        return Err(RenderError::ChannelMismatch { expected: 3, actual: img.channels });
    }
    let layer = overlay_unchecked(&Image::black(img.width, img.height, 3)?, path, style)?;
    let data = img
        .data
        .chunks_exact(3)
        .zip(layer.data.chunks_exact(3))
        .flat_map(|(a, b)| a.iter().chain(b).copied())
        .collect();
    Image::new(img.width, img.height, 6, data)
}

/// Renders in whichever mode the style names.
pub fn draw(img: &Image, path: &Path2D, style: &OverlayStyle) -> Result<Image, RenderError> {
    match style.mode {
        RenderMode::Overlay => draw_overlay(img, path, style),
        RenderMode::ConcatChannels => draw_concat(img, path, style),
    }
}
