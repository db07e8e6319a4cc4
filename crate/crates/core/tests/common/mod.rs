//! Golden rendering fixtures shared by the golden and acceptance targets.
//!
//! Each case lives in `tests/fixtures/golden/<name>/` as `image.png`,
//! `path.json` and `style.json` inputs plus the expected `overlay.png` and
//! `concat.vlpi` outputs. Set `UPDATE_GOLDEN=1` to regenerate them.

#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlapath::render::{self, Image, OverlayStyle, RenderMode, Rgb};
use vlapath::{Path2D, PathPoint};

pub const GOLDEN_CASES: usize = 20;

pub struct GoldenCase {
    pub name: String,
    pub image: Image,
    pub path: Path2D,
    pub style: OverlayStyle,
    pub overlay: Image,
    pub concat: Image,
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn generated_inputs() -> Vec<(String, Image, Path2D, OverlayStyle)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x601d);
    (0..GOLDEN_CASES)
        .map(|i| {
            let (w, h) = (24 + 8 * (i as u32 % 5), 20 + 6 * (i as u32 % 4));
            let mut data = Vec::with_capacity((w * h * 3) as usize);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3u32 {
                        data.push(((x * 7 + y * 3 + c * 50 + i as u32 * 11) % 256) as u8);
                    }
                }
            }
            let image = Image::new(w, h, 3, data).unwrap();
            let n = if i < 2 { i + 1 } else { rng.random_range(2..9) };
            let mut open = true;
            let points = (0..n)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        open = !open;
                    }
                    PathPoint::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0), open)
                })
                .collect();
            let path = Path2D::new(points).unwrap();
            let mut style = if i % 4 == 3 { OverlayStyle::ranking() } else { OverlayStyle::default() };
            style.line_width = 1 + (i as u32 % 4);
            style.circle_radius = 1 + (i as u32 % 6);
            if i % 5 == 4 {
                style.gradient_start = Rgb([255, 255, 0]);
                style.gradient_end = Rgb([0, 255, 255]);
            }
            (format!("case{i:02}"), image, path, style)
        })
        .collect()
}

pub fn render_both(image: &Image, path: &Path2D, style: &OverlayStyle) -> (Image, Image) {
    let overlay = render::draw(image, path, &OverlayStyle { mode: RenderMode::Overlay, ..style.clone() }).unwrap();
    let concat = render::draw(image, path, &OverlayStyle { mode: RenderMode::ConcatChannels, ..style.clone() }).unwrap();
    (overlay, concat)
}

pub fn write_golden() {
    let root = golden_dir();
    for (name, image, path, style) in generated_inputs() {
        let dir = root.join(&name);
        fs::create_dir_all(&dir).unwrap();
        image.write_png(dir.join("image.png")).unwrap();
        fs::write(dir.join("path.json"), serde_json::to_string_pretty(&path).unwrap() + "\n").unwrap();
        fs::write(dir.join("style.json"), serde_json::to_string_pretty(&style).unwrap() + "\n").unwrap();
        let (overlay, concat) = render_both(&image, &path, &style);
        overlay.write_png(dir.join("overlay.png")).unwrap();
        fs::write(dir.join("concat.vlpi"), concat.encode_planar()).unwrap();
    }
}

pub fn load_golden() -> Vec<GoldenCase> {
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        write_golden();
    }
    let root = golden_dir();
    (0..GOLDEN_CASES)
        .map(|i| {
            let name = format!("case{i:02}");
            let dir = root.join(&name);
            let read = |f: &str| fs::read(dir.join(f)).unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDEN=1)", dir.join(f).display()));
            GoldenCase {
                image: Image::decode_png(&read("image.png")).unwrap(),
                path: serde_json::from_slice(&read("path.json")).unwrap(),
                style: serde_json::from_slice(&read("style.json")).unwrap(),
                overlay: Image::decode_png(&read("overlay.png")).unwrap(),
                concat: Image::decode_planar(&read("concat.vlpi")).unwrap(),
                name,
            }
        })
        .collect()
}
