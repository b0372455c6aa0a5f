//! Synthetic KITTI-format street scenes.
//!
//! Frames have KITTI geometry by default: a smooth sky, a textured band of
//! facades and foliage around the horizon, a smooth road, and vehicles
//! (car, van, truck, tram) standing on the road near the horizon band.
//! Each frame comes with a KITTI object label file, so the accuracy
//! evaluation can run without the real dataset.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::ObjectClass;
use crate::imageio::{self, Image, ImageError};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 1242,
            height: 375,
        }
    }
}

/// A labelled object in a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub kitti_type: &'static str,
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Image,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// KITTI label text; 3-D fields carry plausible placeholders.
    pub fn label_text(&self) -> String {
        let mut out = String::new();
        for o in &self.objects {
            let (h, w, l) = match o.kitti_type {
                "Truck" => (3.2, 2.5, 8.0),
                "Tram" => (3.4, 2.6, 16.0),
                "Van" => (2.1, 1.9, 4.8),
                "DontCare" => (-1.0, -1.0, -1.0),
                _ => (1.5, 1.6, 3.9),
            };
            out.push_str(&format!(
                "{} 0.00 0 -1.57 {:.2} {:.2} {:.2} {:.2} {h:.2} {w:.2} {l:.2} 1.00 1.65 20.00 -1.57\n",
                o.kitti_type, o.left, o.top, o.right, o.bottom
            ));
        }
        out
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        if x < self.w && y < self.h {
            let i = (y * self.w + x) * 3;
            for c in 0..3 {
                self.px[i + c] = rgb[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    fn rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, mut color: impl FnMut(usize, usize) -> [f64; 3]) {
        for y in y0..y1.min(self.h) {
            for x in x0..x1.min(self.w) {
                let c = color(x, y);
                self.put(x, y, c);
            }
        }
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 7] = [
        [200.0, 30.0, 30.0],
        [30.0, 60.0, 170.0],
        [235.0, 235.0, 235.0],
        [25.0, 25.0, 25.0],
        [140.0, 140.0, 150.0],
        [210.0, 170.0, 30.0],
        [40.0, 120.0, 60.0],
    ];
    PALETTE[rng.gen_range(0..PALETTE.len())]
}

/// Draw a vehicle body with windows, trim and wheels into `[x0, x1) x [y0, y1)`.
fn draw_vehicle(c: &mut Canvas, rng: &mut ChaCha8Rng, class: ObjectClass, x0: usize, y0: usize, x1: usize, y1: usize) {
    let body = random_color(rng);
    let (w, h) = (x1 - x0, y1 - y0);
    let roof = match class {
        ObjectClass::Car => y0 + h * 2 / 5,
        _ => y0,
    };
    // cabin silhouette for cars, box body otherwise
    let cabin_inset = if class == ObjectClass::Car { w / 6 } else { 0 };
    c.rect(x0 + cabin_inset, y0, x1 - cabin_inset, roof.max(y0 + 1), |_, _| body);
    let noise_seed: u64 = rng.gen();
    c.rect(x0, roof, x1, y1 - h / 6, |x, y| {
        let n = (((x as u64 * 2_654_435_761) ^ (y as u64 * 40_503) ^ noise_seed) % 17) as f64 - 8.0;
        [body[0] + n, body[1] + n, body[2] + n]
    });
    // windows
    let (rows, cols) = match class {
        ObjectClass::Tram => (1, (w / 28).max(3)),
        ObjectClass::Truck => (1, 1),
        ObjectClass::Van => (1, 3),
        _ => (1, 2),
    };
    let win_top = y0 + h / 8;
    let win_bot = y0 + h * 3 / 8 + if class == ObjectClass::Tram { h / 8 } else { 0 };
    let span = w - 2 * cabin_inset.max(w / 12);
    let cell = span / cols;
    for r in 0..rows {
        for k in 0..cols {
            let wx0 = x0 + cabin_inset.max(w / 12) + k * cell + cell / 8;
            let wx1 = wx0 + cell * 3 / 4;
            let wy0 = win_top + r * (win_bot - win_top) / rows;
            c.rect(wx0, wy0, wx1, win_bot, |x, _| {
                let glare = if (x - wx0) % 7 < 2 { 40.0 } else { 0.0 };
                [30.0 + glare, 45.0 + glare, 60.0 + glare]
            });
        }
    }
    // bumper / trim line
    let trim_y = y1 - h / 4;
    c.rect(x0, trim_y, x1, trim_y + (h / 20).max(1), |_, _| [15.0, 15.0, 15.0]);
    // wheels
    let wheel_h = h / 6;
    let wheel_w = (w / 6).max(4);
    let axles: Vec<usize> = match class {
        ObjectClass::Tram => (0..4).map(|i| x0 + w / 10 + i * (w * 8 / 10) / 3).collect(),
        ObjectClass::Truck => vec![x0 + w / 8, x0 + w / 2, x0 + w * 3 / 4],
        _ => vec![x0 + w / 8, x1 - w / 8 - wheel_w],
    };
    for ax in axles {
        c.rect(ax, y1 - wheel_h, ax + wheel_w, y1, |x, y| {
            if (x + y) % 5 == 0 {
                [70.0, 70.0, 70.0]
            } else {
                [10.0, 10.0, 10.0]
            }
        });
    }
}

/// Generate frame `index` of the corpus identified by `seed`.
pub fn generate_scene(params: &SceneParams, seed: u64, index: u64) -> Result<Scene, ImageError> {
    let (w, h) = (params.width, params.height);
    if w < 200 || h < 100 {
        return Err(ImageError::InvalidArgument(format!(
            "scene must be at least 200x100, got {w}x{h}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut c = Canvas {
        w,
        h,
        px: vec![0; w * h * 3],
    };
    let hf = h as f64;
    let band_top = (0.22 + rng.gen_range(-0.03..0.03)) * hf;
    let horizon = (0.50 + rng.gen_range(-0.03..0.03)) * hf;
    let (band_top, horizon) = (band_top as usize, horizon as usize);

    let sky_hi = [120.0, 160.0, 215.0];
    let sky_lo = [175.0, 195.0, 220.0];
    let road_near = [105.0, 105.0, 110.0];
    let road_far = [125.0, 125.0, 128.0];
    c.rect(0, 0, w, horizon, |_, y| lerp(sky_hi, sky_lo, y as f64 / horizon as f64));
    c.rect(0, horizon, w, h, |_, y| {
        lerp(road_far, road_near, (y - horizon) as f64 / (h - horizon) as f64)
    });

    // facades and foliage
    let mut x = 0usize;
    while x < w {
        let bw = rng.gen_range(w / 14..w / 5);
        let top = band_top + rng.gen_range(0..(horizon - band_top) / 2);
        let tree = rng.gen_bool(0.35);
        let base = random_color(&mut rng);
        let tex_seed: u64 = rng.gen();
        c.rect(x, top, x + bw, horizon, |px, py| {
            if tree {
                let n = ((px as u64).wrapping_mul(73_856_093) ^ (py as u64).wrapping_mul(19_349_663) ^ tex_seed) % 90;
                [30.0 + n as f64 * 0.5, 70.0 + n as f64, 30.0 + n as f64 * 0.3]
            } else if (px - x) % 14 < 7 && (py - top) % 16 < 9 {
                [40.0, 50.0, 70.0]
            } else {
                lerp(base, [180.0, 170.0, 160.0], 0.5)
            }
        });
        x += bw;
    }

    // lane markings
    let lane_y = horizon + (h - horizon) * 3 / 4;
    for k in 0..8 {
        let x0 = k * w / 8 + w / 32;
        c.rect(x0, lane_y, x0 + w / 20, lane_y + 3, |_, _| [200.0, 200.0, 200.0]);
    }

    // vehicles, drawn far to near; all stand on the road just below the band
    let mut objects = Vec::new();
    let count = rng.gen_range(2..=5);
    let mut slots: Vec<usize> = (0..6).collect();
    for _ in 0..count {
        let slot = slots.remove(rng.gen_range(0..slots.len()));
        let class = match rng.gen_range(0..100) {
            0..=49 => ObjectClass::Car,
            50..=69 => ObjectClass::Van,
            70..=84 => ObjectClass::Truck,
            _ => ObjectClass::Tram,
        };
        let scale = rng.gen_range(0.8..1.25) * hf / 375.0;
        let (bw, bh) = match class {
            ObjectClass::Car => (110.0, 60.0),
            ObjectClass::Van => (120.0, 80.0),
            ObjectClass::Truck => (170.0, 105.0),
            _ => (260.0, 100.0),
        };
        let (bw, bh) = ((bw * scale) as usize, (bh * scale) as usize);
        let slot_w = w / 6;
        let cx = slot * slot_w + slot_w / 2;
        let x0 = cx.saturating_sub(bw / 2).min(w - bw - 1);
        let bottom = horizon + rng.gen_range(10..(h - horizon) / 3);
        let y0 = bottom - bh;
        draw_vehicle(&mut c, &mut rng, class, x0, y0, x0 + bw, bottom);
        let kitti_type = match class {
            ObjectClass::Car => "Car",
            ObjectClass::Van => "Van",
            ObjectClass::Truck => "Truck",
            _ => "Tram",
        };
        objects.push(SceneObject {
            kitti_type,
            left: x0 as f64,
            top: y0 as f64,
            right: (x0 + bw) as f64,
            bottom: bottom as f64,
        });
    }
    if rng.gen_bool(0.3) {
        let x0 = rng.gen_range(0.0..(w as f64 - 60.0));
        objects.push(SceneObject {
            kitti_type: "DontCare",
            left: x0,
            top: horizon as f64 - 10.0,
            right: x0 + 40.0,
            bottom: horizon as f64 + 5.0,
        });
    }

    Ok(Scene {
        image: Image::new(w, h, 3, c.px)?,
        objects,
    })
}

/// Paths of a corpus laid out as `images/<id>.ppm` + `labels/<id>.txt`.
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl CorpusLayout {
    /// Accepts `images/labels` or KITTI's `image_2/label_2`.
    pub fn locate(root: &Path) -> io::Result<Self> {
        for (img, lab) in [("images", "labels"), ("image_2", "label_2")] {
            let (i, l) = (root.join(img), root.join(lab));
            if i.is_dir() {
                return Ok(CorpusLayout { images: i, labels: l });
            }
        }
        Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{}: no images/ or image_2/ directory", root.display()),
        ))
    }

    /// Frame ids (file stems) of all PGM/PPM images, sorted.
    pub fn frame_ids(&self) -> io::Result<Vec<(String, PathBuf)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.images)? {
            let path = entry?.path();
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            if matches!(ext, "ppm" | "pgm") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.push((stem.to_string(), path.clone()));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Write `frames` scenes to `root/images` and `root/labels`.
pub fn write_corpus(root: &Path, frames: usize, seed: u64, params: &SceneParams) -> Result<(), ImageError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| ImageError::Io { path, source }
    };
    let images = root.join("images");
    let labels = root.join("labels");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&labels).map_err(io_err(&labels))?;
    for i in 0..frames as u64 {
        let scene = generate_scene(params, seed, i)?;
        imageio::write_image(&scene.image, images.join(format!("{i:06}.ppm")))?;
        let label = labels.join(format!("{i:06}.txt"));
        fs::write(&label, scene.label_text()).map_err(io_err(&label))?;
    }
    Ok(())
}
