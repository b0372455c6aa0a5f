//! Slow, direct reference implementations used to cross-check the fast
//! paths. Shared by the core integration tests and the acceptance suite.
#![allow(dead_code)]

use std::f64::consts::PI;

use eodf::detector::{BoundingBox, FrameDetection, FrameTruth};
use rand::Rng;

#[derive(Clone, Copy, Debug)]
struct C {
    re: f64,
    im: f64,
}

/// Direct O(N²) 2-D DFT; `sign = -1` forward, `+1` inverse (unscaled).
fn dft2(data: &[C], w: usize, h: usize, sign: f64) -> Vec<C> {
    let mut out = vec![C { re: 0.0, im: 0.0 }; w * h];
    for v in 0..h {
        for u in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let angle = sign * 2.0 * PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                    let (s, c) = angle.sin_cos();
                    let d = data[y * w + x];
                    re += d.re * c - d.im * s;
                    im += d.re * s + d.im * c;
                }
            }
            out[v * w + u] = C { re, im };
        }
    }
    out
}

fn at(data: &[f64], w: usize, h: usize, x: i64, y: i64) -> f64 {
    let x = x.clamp(0, w as i64 - 1) as usize;
    let y = y.clamp(0, h as i64 - 1) as usize;
    data[y * w + x]
}

/// Spectral-residual saliency written out step by step: direct DFT, log
/// amplitude, 3×3 replicate-edge mean, residual, inverse DFT with the
/// original phase, squared magnitude, full 2-D Gaussian (sigma = w / 8,
/// radius ceil(3 sigma), replicate edges), min-max normalisation.
pub fn saliency_reference(gray: &[u8], w: usize, h: usize) -> Vec<f64> {
    let input: Vec<C> = gray.iter().map(|&p| C { re: p as f64, im: 0.0 }).collect();
    let spec = dft2(&input, w, h, -1.0);
    let log_amp: Vec<f64> = spec.iter().map(|c| (c.re.hypot(c.im) + 1e-9).ln()).collect();
    let mut residual_spec = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut mean = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    mean += at(&log_amp, w, h, x + dx, y + dy);
                }
            }
            mean /= 9.0;
            let i = y as usize * w + x as usize;
            let mag = (log_amp[i] - mean).exp();
            let phase = spec[i].im.atan2(spec[i].re);
            residual_spec.push(C {
                re: mag * phase.cos(),
                im: mag * phase.sin(),
            });
        }
    }
    let back = dft2(&residual_spec, w, h, 1.0);
    let energy: Vec<f64> = back.iter().map(|c| c.re * c.re + c.im * c.im).collect();

    let sigma = w as f64 / 8.0;
    let r = (3.0 * sigma).ceil() as i64;
    let g = |d: i64| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
    let norm: f64 = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| g(dx) * g(dy))).sum();
    let mut blurred = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += g(dx) * g(dy) * at(&energy, w, h, x + dx, y + dy);
                }
            }
            blurred[y as usize * w + x as usize] = acc / norm;
        }
    }
    let lo = blurred.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = blurred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.0; w * h];
    }
    blurred.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right.min(b.right) - a.left.max(b.left);
    let ih = a.bottom.min(b.bottom) - a.top.max(b.top);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let area = |x: &BoundingBox| (x.right - x.left) * (x.bottom - x.top);
    inter / (area(a) + area(b) - inter)
}

/// All-points interpolated AP by brute force: rank, match each detection to
/// the best still-free truth by scanning every truth, then for each rank
/// take the maximum precision over all ranks at or after it.
pub fn ap_reference(dets: &[FrameDetection], truths: &[FrameTruth], iou_threshold: f64) -> f64 {
    if truths.is_empty() {
        return f64::NAN;
    }
    let mut ranked: Vec<&FrameDetection> = dets.iter().collect();
    // Stable: equal keys keep input order.
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.frame.cmp(&b.frame)));

    let mut taken = vec![false; truths.len()];
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (k, d) in ranked.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_iou = f64::NEG_INFINITY;
        for (j, t) in truths.iter().enumerate() {
            if taken[j] || t.frame != d.frame {
                continue;
            }
            let o = overlap(&d.bbox, &t.bbox);
            if o >= iou_threshold && o > best_iou {
                best = Some(j);
                best_iou = o;
            }
        }
        if let Some(j) = best {
            taken[j] = true;
            tp += 1;
        }
        points.push((tp as f64 / truths.len() as f64, tp as f64 / (k + 1) as f64));
    }

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let envelope = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[k].0 - prev_recall) * envelope;
        prev_recall = points[k].0;
    }
    ap
}

/// A small random detection scenario: up to 4 frames, a handful of truths
/// on a coarse grid (so ties and exact-threshold overlaps happen) and up to
/// `max_dets` detections, some jittered copies of truths, some clutter.
pub fn random_scenario<R: Rng>(rng: &mut R, max_dets: usize) -> (Vec<FrameDetection>, Vec<FrameTruth>) {
    let frames = rng.gen_range(1..=4);
    let frame = |rng: &mut R| format!("{:06}", rng.gen_range(0..frames));
    let rand_box = |rng: &mut R| {
        let l = rng.gen_range(0..20) as f64 * 5.0;
        let t = rng.gen_range(0..20) as f64 * 5.0;
        let w = rng.gen_range(1..10) as f64 * 5.0;
        let h = rng.gen_range(1..10) as f64 * 5.0;
        BoundingBox::new(l, t, l + w, t + h).unwrap()
    };
    let n_truths = rng.gen_range(0..=12);
    let truths: Vec<FrameTruth> = (0..n_truths)
        .map(|_| FrameTruth {
            frame: frame(rng),
            bbox: rand_box(rng),
        })
        .collect();
    let n_dets = rng.gen_range(0..=max_dets);
    let dets = (0..n_dets)
        .map(|_| {
            let confidence = rng.gen_range(0..8) as f64 / 8.0;
            if !truths.is_empty() && rng.gen_bool(0.6) {
                let t = &truths[rng.gen_range(0..truths.len())];
                let j = |rng: &mut R| rng.gen_range(-2..=2) as f64 * 2.5;
                let b = &t.bbox;
                let (l, tp) = (b.left + j(rng), b.top + j(rng));
                let (r, bt) = (b.right + j(rng), b.bottom + j(rng));
                let bbox = BoundingBox::new(l.min(r - 1.0), tp.min(bt - 1.0), r.max(l + 1.0), bt.max(tp + 1.0)).unwrap();
                FrameDetection {
                    frame: t.frame.clone(),
                    confidence,
                    bbox,
                }
            } else {
                FrameDetection {
                    frame: frame(rng),
                    confidence,
                    bbox: rand_box(rng),
                }
            }
        })
        .collect();
    (dets, truths)
}
