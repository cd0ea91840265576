//! Deterministic synthetic imagery: separable training patterns, per-gesture
//! glyphs, and condition-tagged scenes for end-to-end harness runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boost::NegativePool;
use crate::dataset::{Distance, Illumination, SceneTag};
use crate::imaging::{GrayImage, Rect};
use crate::{GestureLabel, GESTURES};

/// Canvas size for generated evaluation scenes.
pub const SCENE_W: u32 = 120;
pub const SCENE_H: u32 = 90;
/// Glyph patch side for scenes shot within 3 ft.
pub const NEAR_PATCH_SIDE: u32 = 48;
/// Glyph patch side for scenes shot beyond 3 ft.
pub const FAR_PATCH_SIDE: u32 = 22;
/// Brightness multiplier applied to dim-light scenes.
pub const DIM_GAIN: f64 = 0.4;

fn level(rng: &mut impl Rng, base: i32, amp: i32) -> u8 {
    (base + rng.gen_range(-amp..=amp)).clamp(0, 255) as u8
}

/// Uniform per-pixel noise, the stock structureless negative.
pub fn noise_window(rng: &mut impl Rng, side: u32) -> GrayImage {
    let data: Vec<u8> = (0..side as usize * side as usize).map(|_| rng.gen()).collect();
    GrayImage::new(side, side, data).expect("sized to side x side")
}

fn half_split(rng: &mut impl Rng, side: u32, bright_left: bool) -> GrayImage {
    let bright = rng.gen_range(175..=215);
    let dark = rng.gen_range(30..=55);
    let mut data = Vec::with_capacity(side as usize * side as usize);
    for _ in 0..side {
        for x in 0..side {
            let on_left = x < side / 2;
            let base = if on_left == bright_left { bright } else { dark };
            data.push(level(rng, base, 12));
        }
    }
    GrayImage::new(side, side, data).expect("sized to side x side")
}

/// Bright left half, dark right half: the canonical separable positive.
pub fn bright_left_pattern(rng: &mut impl Rng, side: u32) -> GrayImage {
    half_split(rng, side, true)
}

/// Mirror image of [`bright_left_pattern`].
pub fn bright_right_pattern(rng: &mut impl Rng, side: u32) -> GrayImage {
    half_split(rng, side, false)
}

/// Per-pixel convex blend: weight `t` of `b`, `1 - t` of `a`.
pub fn blend(a: &GrayImage, b: &GrayImage, t: f64) -> GrayImage {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()), "blend needs equal sizes");
    assert!((0.0..=1.0).contains(&t), "blend weight {t} outside [0, 1]");
    let data: Vec<u8> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&pa, &pb)| (pa as f64 * (1.0 - t) + pb as f64 * t).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(a.width(), a.height(), data).expect("same size as inputs")
}

/// Whether glyph pixel (x, y) of a `side`-sized patch is in the bright
/// region for the given gesture. The five layouts split into two contrast
/// polarities: bright structure on a dark field (palm, gs) and dark
/// structure on a bright field (fist, vs, lf). A boosted stump chain can
/// never fire on the flipped sign of its canonical feature, so no window
/// over a bright-family glyph can trigger a dark-family cascade or vice
/// versa, at any scan scale. Within a polarity the layouts are rotations
/// or both-axis combinations, which zero out on each other's row/column
/// cells. Single-polarity families do not survive the multi-scale scan:
/// a window over one bright bar of a three-bar glyph reproduces a
/// one-band glyph exactly, so near scenes leak across cascades.
fn glyph_on(label: GestureLabel, x: u32, y: u32, side: u32) -> bool {
    let s = side;
    match label {
        // Dark centered square on a bright field.
        GestureLabel::Fist => {
            let (d0, d1) = (7 * s / 20, 13 * s / 20);
            !(x >= d0 && x < d1 && y >= d0 && y < d1)
        }
        // Three bright full-height bars: stylized fingers.
        GestureLabel::Palm => {
            let w = (3 * s / 20).max(2);
            let starts = [s / 10, 2 * s / 5, 7 * s / 10];
            starts.iter().any(|&x0| x >= x0 && x < x0 + w)
        }
        // One bright full-width horizontal band across the middle.
        GestureLabel::Gs => y >= 2 * s / 5 && y < s - 2 * s / 5,
        // Dark full-height vertical band on a bright field.
        GestureLabel::Vs => !(x >= 2 * s / 5 && x < s - 2 * s / 5),
        // Dark full-width horizontal band on a bright field.
        GestureLabel::Lf => !(y >= 2 * s / 5 && y < s - 2 * s / 5),
        GestureLabel::None => unreachable!("glyphs exist only for real gestures"),
    }
}

/// One noisy glyph patch for a gesture, with per-patch brightness jitter.
pub fn gesture_patch(rng: &mut impl Rng, label: GestureLabel, side: u32) -> GrayImage {
    assert!(label != GestureLabel::None, "gesture_patch needs a real gesture");
    let bright = rng.gen_range(175..=215);
    let dark = rng.gen_range(30..=55);
    let mut data = Vec::with_capacity(side as usize * side as usize);
    for y in 0..side {
        for x in 0..side {
            let base = if glyph_on(label, x, y, side) { bright } else { dark };
            data.push(level(rng, base, 10));
        }
    }
    GrayImage::new(side, side, data).expect("sized to side x side")
}

/// A seeded batch of base-window glyph positives for one gesture, jittered
/// the way a deployed scan meets them: the pyramid quantizes scale in
/// discrete steps and strides in discrete offsets, and scenes fade contrast,
/// so each positive carries up to ~15% scale error, +/-2 px of shift, and a
/// mild washout. Training on clean aligned glyphs instead would produce
/// thresholds no real scan window can reach.
pub fn training_positives(
    label: GestureLabel,
    count: usize,
    base: u32,
    seed: u64,
) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let g = rng.gen_range(base * 17 / 20..=base * 23 / 20);
            let glyph = gesture_patch(&mut rng, label, g);
            let side = base.max(g) + 4;
            let mut canvas = noise_window(&mut rng, side);
            let gx = rng.gen_range(0..=side - g);
            let gy = rng.gen_range(0..=side - g);
            paste(&mut canvas, &glyph, gx, gy);
            let max0 = (side - base) as i64;
            let x0 = (gx as i64 + g as i64 / 2 - base as i64 / 2 + rng.gen_range(-2..=2))
                .clamp(0, max0) as u32;
            let y0 = (gy as i64 + g as i64 / 2 - base as i64 / 2 + rng.gen_range(-2..=2))
                .clamp(0, max0) as u32;
            let win = crate::dataset::crop(&canvas, Rect::new(x0, y0, base, base))
                .expect("window inside canvas");
            let wash = rng.gen_range(0.0..0.15);
            blend(&win, &noise_window(&mut rng, base), wash)
        })
        .collect()
}

/// Mid-intensity background with a few random blocks: a structured negative
/// that is neither pure noise nor a glyph.
pub fn clutter_window(rng: &mut impl Rng, side: u32) -> GrayImage {
    let mut img = GrayImage::filled(side, side, 0);
    for y in 0..side {
        for x in 0..side {
            img.set(x, y, level(rng, 110, 15));
        }
    }
    let min_block = (side / 5).max(2);
    let max_block = (side / 2).max(min_block + 1);
    for _ in 0..rng.gen_range(2..=4) {
        let w = rng.gen_range(min_block..=max_block).min(side);
        let h = rng.gen_range(min_block..=max_block).min(side);
        let x0 = rng.gen_range(0..=side - w);
        let y0 = rng.gen_range(0..=side - h);
        let shade = rng.gen_range(30..=220);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.set(x, y, level(rng, shade, 8));
            }
        }
    }
    img
}

fn paste(canvas: &mut GrayImage, img: &GrayImage, x0: u32, y0: u32) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            canvas.set(x0 + x, y0 + y, img.get(x, y));
        }
    }
}

/// Infinite negative source for cascade training. Beyond noise and clutter
/// it draws the confusers a deployed scan actually meets: the other four
/// glyphs whole, shifted and rescale-cropped (a multi-scale scan sees big
/// patterns in fragments and at offsets), plus two kinds of own-glyph
/// distractor. Own-glyph draws labelled negative put an error floor under
/// every feature, so stump selection ranks by real separation instead of
/// stopping at the first accidental zero-error split; contaminated
/// own-glyph draws survive the first stage and give later stages something
/// to reject, which is what keeps mining alive.
pub struct SynthPool {
    rng: ChaCha8Rng,
    exclude: GestureLabel,
    base: u32,
}

impl SynthPool {
    pub fn new(exclude: GestureLabel, base: u32, seed: u64) -> Self {
        SynthPool { rng: ChaCha8Rng::seed_from_u64(seed), exclude, base }
    }

    fn other_gesture(&mut self) -> GestureLabel {
        let others: Vec<GestureLabel> =
            GESTURES.into_iter().filter(|&g| g != self.exclude).collect();
        others[self.rng.gen_range(0..others.len())]
    }

    fn random_crop(&mut self, img: &GrayImage) -> GrayImage {
        let x = self.rng.gen_range(0..=img.width() - self.base);
        let y = self.rng.gen_range(0..=img.height() - self.base);
        crate::dataset::crop(img, Rect::new(x, y, self.base, self.base))
            .expect("crop sized within the canvas")
    }

    /// A base-scale glyph translated well off window center: at least 4 px
    /// on each axis, safely past the +/-2 px jitter that training positives
    /// carry, so these anchor the off-pattern side of stump thresholds.
    fn shifted_glyph(&mut self, label: GestureLabel) -> GrayImage {
        let j = (self.base / 4).max(4);
        let side = self.base + 2 * j;
        let mut canvas = noise_window(&mut self.rng, side);
        let patch = gesture_patch(&mut self.rng, label, self.base);
        paste(&mut canvas, &patch, j, j);
        let offset = |rng: &mut ChaCha8Rng| -> u32 {
            let d = rng.gen_range(4..=j as i64);
            let d = if rng.gen_bool(0.5) { d } else { -d };
            (j as i64 + d) as u32
        };
        let x0 = offset(&mut self.rng);
        let y0 = offset(&mut self.rng);
        crate::dataset::crop(&canvas, Rect::new(x0, y0, self.base, self.base))
            .expect("crop sized within the canvas")
    }

    /// The excluded glyph with a random block stamped over it: close enough
    /// to pass a coarse stage, different enough to be separable later.
    fn contaminated_own(&mut self) -> GrayImage {
        let mut img = gesture_patch(&mut self.rng, self.exclude, self.base);
        for _ in 0..self.rng.gen_range(1..=2u32) {
            let side = self.rng.gen_range(self.base / 5..=self.base / 3).max(2);
            let x0 = self.rng.gen_range(0..=self.base - side);
            let y0 = self.rng.gen_range(0..=self.base - side);
            let shade = self.rng.gen_range(30..=220);
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    let v = level(&mut self.rng, shade, 8);
                    img.set(x, y, v);
                }
            }
        }
        img
    }
}

impl NegativePool for SynthPool {
    fn draw(&mut self) -> Option<GrayImage> {
        // Other-gesture views dominate the mix: the scan meets competing
        // glyphs far more often than raw noise, and every stage must keep
        // rejecting them for five-way arbitration to stay clean.
        let roll = self.rng.gen_range(0..100);
        Some(if roll < 12 {
            noise_window(&mut self.rng, self.base)
        } else if roll < 22 {
            clutter_window(&mut self.rng, self.base)
        } else if roll < 30 {
            let canvas = clutter_window(&mut self.rng, self.base * 3);
            self.random_crop(&canvas)
        } else if roll < 48 {
            let pick = self.other_gesture();
            gesture_patch(&mut self.rng, pick, self.base)
        } else if roll < 62 {
            let pick = self.other_gesture();
            self.shifted_glyph(pick)
        } else if roll < 78 {
            // Deploy windows meet other glyphs at every pyramid scale and
            // often straddle the patch boundary, so crop from a padded
            // canvas over a continuous scale range.
            let pick = self.other_gesture();
            let patch_side = self.base + self.rng.gen_range(0..=7 * self.base / 5);
            let mut canvas = noise_window(&mut self.rng, patch_side + self.base);
            let patch = gesture_patch(&mut self.rng, pick, patch_side);
            paste(&mut canvas, &patch, self.base / 2, self.base / 2);
            self.random_crop(&canvas)
        } else if roll < 86 {
            gesture_patch(&mut self.rng, self.exclude, self.base)
        } else if roll < 93 {
            let own = self.exclude;
            self.shifted_glyph(own)
        } else {
            self.contaminated_own()
        })
    }
}

fn rects_overlap(a: Rect, b: Rect) -> bool {
    a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h
}

/// Compose one tagged evaluation scene: a gesture glyph planted in a
/// 120x90 background, degraded according to the condition tag. Distance
/// governs patch size and contrast washout, background adds clutter blocks,
/// and dim light multiplies the whole frame by [`DIM_GAIN`]. Returns the
/// frame and the glyph's bounding box.
pub fn scene(rng: &mut impl Rng, label: GestureLabel, tag: SceneTag) -> (GrayImage, Rect) {
    let side = match tag.distance {
        Distance::Lt3 => NEAR_PATCH_SIDE,
        Distance::Mt3 => FAR_PATCH_SIDE,
    };
    let mut frame = GrayImage::filled(SCENE_W, SCENE_H, 0);
    for y in 0..SCENE_H {
        for x in 0..SCENE_W {
            frame.set(x, y, level(rng, 110, 15));
        }
    }
    let px = rng.gen_range(3..=SCENE_W - side - 3);
    let py = rng.gen_range(3..=SCENE_H - side - 3);
    let bbox = Rect::new(px, py, side, side);

    if tag.background == crate::dataset::Background::Ctb {
        let margin = Rect::new(bbox.x.saturating_sub(2), bbox.y.saturating_sub(2), side + 4, side + 4);
        for _ in 0..8 {
            let w = rng.gen_range(6..=26);
            let h = rng.gen_range(6..=26);
            let x0 = rng.gen_range(0..SCENE_W.saturating_sub(w));
            let y0 = rng.gen_range(0..SCENE_H.saturating_sub(h));
            let block = Rect::new(x0, y0, w, h);
            let shade = 110 + rng.gen_range(-60..=60i32);
            if rects_overlap(block, margin) {
                continue;
            }
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    frame.set(x, y, level(rng, shade, 8));
                }
            }
        }
    }

    let washout = match tag.distance {
        Distance::Lt3 => rng.gen_range(0.0..0.12),
        Distance::Mt3 => rng.gen_range(0.30..0.62),
    };
    let patch = blend(&gesture_patch(rng, label, side), &noise_window(rng, side), washout);
    for y in 0..side {
        for x in 0..side {
            frame.set(px + x, py + y, patch.get(x, y));
        }
    }

    if tag.illumination == Illumination::Dl {
        let dimmed: Vec<u8> =
            frame.data().iter().map(|&p| (p as f64 * DIM_GAIN).round() as u8).collect();
        frame = GrayImage::new(SCENE_W, SCENE_H, dimmed).expect("same size");
    }
    (frame, bbox)
}

/// The full cross-condition suite: `per_cell` scenes for every
/// (condition combination, gesture) cell, deterministically seeded.
pub fn scene_suite(per_cell: usize, seed: u64) -> Vec<(GrayImage, Rect, GestureLabel, SceneTag)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(8 * 5 * per_cell);
    for tag in SceneTag::all_combos() {
        for g in GESTURES {
            for _ in 0..per_cell {
                let (frame, bbox) = scene(&mut rng, g, tag);
                out.push((frame, bbox, g, tag));
            }
        }
    }
    out
}
