//! Haar feature bank: the five classic upright kinds, exhaustive deterministic
//! enumeration over a base window, and integral-image evaluation at arbitrary
//! scale with variance normalization.

use crate::error::{Error, Result};
use crate::imaging::{IntegralImage, Rect};

/// The five upright Haar layouts. White cells carry weight +1 and black cells
/// -1, except the three-rect kinds whose middle cell weighs -2 so constant
/// images evaluate to exactly zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HaarKind {
    /// Left/right halves, white left. Footprint 2w x h.
    TwoH,
    /// Top/bottom halves, white top. Footprint w x 2h.
    TwoV,
    /// Outer thirds minus twice the middle third, horizontal. Footprint 3w x h.
    ThreeH,
    /// Vertical analog of `ThreeH`. Footprint w x 3h.
    ThreeV,
    /// Diagonal quads minus anti-diagonal quads. Footprint 2w x 2h.
    FourDiag,
}

impl HaarKind {
    pub const ALL: [HaarKind; 5] =
        [HaarKind::TwoH, HaarKind::TwoV, HaarKind::ThreeH, HaarKind::ThreeV, HaarKind::FourDiag];

    /// Footprint of the whole feature given per-cell extents.
    pub fn span(self, w: u32, h: u32) -> (u32, u32) {
        match self {
            HaarKind::TwoH => (2 * w, h),
            HaarKind::TwoV => (w, 2 * h),
            HaarKind::ThreeH => (3 * w, h),
            HaarKind::ThreeV => (w, 3 * h),
            HaarKind::FourDiag => (2 * w, 2 * h),
        }
    }

    /// Stable numeric code used in model files.
    pub fn code(self) -> u8 {
        match self {
            HaarKind::TwoH => 0,
            HaarKind::TwoV => 1,
            HaarKind::ThreeH => 2,
            HaarKind::ThreeV => 3,
            HaarKind::FourDiag => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<HaarKind> {
        HaarKind::ALL.get(code as usize).copied()
    }
}

/// One feature: a kind placed at (x, y) in the base window with per-cell
/// extents (w, h).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HaarFeature {
    pub kind: HaarKind,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl HaarFeature {
    pub fn span(&self) -> (u32, u32) {
        self.kind.span(self.w, self.h)
    }
}

/// Base training window size. 20x20 is the canonical sample size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub base: u32,
}

impl WindowSpec {
    pub fn new(base: u32) -> Self {
        WindowSpec { base }
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { base: 20 }
    }
}

/// Every legal (kind, x, y, w, h) tuple inside the base window, kind-major,
/// then y, x, h, w ascending. Indices into this list are stable across runs
/// and platforms and are what trained models refer to.
pub fn enumerate_features(spec: WindowSpec) -> Vec<HaarFeature> {
    let n = spec.base;
    let mut out = Vec::new();
    for kind in HaarKind::ALL {
        for y in 0..n {
            for x in 0..n {
                for h in 1..=n {
                    for w in 1..=n {
                        let (fw, fh) = kind.span(w, h);
                        if x + fw <= n && y + fh <= n {
                            out.push(HaarFeature { kind, x, y, w, h });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Evaluate a feature at `origin` with the geometry scaled by `scale`.
///
/// Cell extents scale as max(1, floor(extent * scale)) and the outer box is
/// rebuilt from the scaled cells, so cells stay exactly adjacent and equal
/// sized and constant images evaluate to zero at every scale. The result is
/// (white - black) * inv_stddev / scaled footprint area; the area normalizer
/// lets thresholds learned at the base size transfer across scales.
pub fn eval_feature(
    ii: &IntegralImage,
    f: &HaarFeature,
    origin: (u32, u32),
    scale: f64,
    inv_stddev: f64,
) -> Result<f64> {
    let cw = (((f.w as f64) * scale).floor() as u32).max(1);
    let ch = (((f.h as f64) * scale).floor() as u32).max(1);
    let ox = origin.0 + ((f.x as f64) * scale).floor() as u32;
    let oy = origin.1 + ((f.y as f64) * scale).floor() as u32;
    let (span_w, span_h) = f.kind.span(cw, ch);
    if ox as u64 + span_w as u64 > ii.width() as u64 || oy as u64 + span_h as u64 > ii.height() as u64 {
        return Err(Error::RectOutOfBounds {
            rect: Rect::new(ox, oy, span_w, span_h),
            width: ii.width(),
            height: ii.height(),
        });
    }
    let cell = |cx: u32, cy: u32| ii.rect_sum_unchecked(Rect::new(ox + cx * cw, oy + cy * ch, cw, ch)) as i64;
    let raw = match f.kind {
        HaarKind::TwoH => cell(0, 0) - cell(1, 0),
        HaarKind::TwoV => cell(0, 0) - cell(0, 1),
        HaarKind::ThreeH => cell(0, 0) + cell(2, 0) - 2 * cell(1, 0),
        HaarKind::ThreeV => cell(0, 0) + cell(0, 2) - 2 * cell(0, 1),
        HaarKind::FourDiag => cell(0, 0) + cell(1, 1) - cell(1, 0) - cell(0, 1),
    };
    Ok(raw as f64 * inv_stddev / (span_w as f64 * span_h as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{integral, GrayImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn naive_enumeration(n: u32) -> HashSet<HaarFeature> {
        let mut set = HashSet::new();
        for kind in HaarKind::ALL {
            for x in 0..n {
                for y in 0..n {
                    for w in 1..=n {
                        for h in 1..=n {
                            let (fw, fh) = kind.span(w, h);
                            if x + fw <= n && y + fh <= n {
                                set.insert(HaarFeature { kind, x, y, w, h });
                            }
                        }
                    }
                }
            }
        }
        set
    }

    /// Pixel-loop evaluation of the same cell geometry, integer arithmetic.
    fn brute_eval(img: &GrayImage, f: &HaarFeature) -> f64 {
        let cell = |cx: u32, cy: u32| -> i64 {
            let x0 = f.x + cx * f.w;
            let y0 = f.y + cy * f.h;
            let mut s = 0i64;
            for y in y0..y0 + f.h {
                for x in x0..x0 + f.w {
                    s += img.get(x, y) as i64;
                }
            }
            s
        };
        let raw = match f.kind {
            HaarKind::TwoH => cell(0, 0) - cell(1, 0),
            HaarKind::TwoV => cell(0, 0) - cell(0, 1),
            HaarKind::ThreeH => cell(0, 0) + cell(2, 0) - 2 * cell(1, 0),
            HaarKind::ThreeV => cell(0, 0) + cell(0, 2) - 2 * cell(0, 1),
            HaarKind::FourDiag => cell(0, 0) + cell(1, 1) - cell(1, 0) - cell(0, 1),
        };
        let (sw, sh) = f.span();
        raw as f64 / (sw as f64 * sh as f64)
    }

    #[test]
    fn enumeration_edge_sizes() {
        assert!(enumerate_features(WindowSpec::new(1)).is_empty());
        let two = enumerate_features(WindowSpec::new(2));
        let two_h = two.iter().filter(|f| f.kind == HaarKind::TwoH).count();
        assert_eq!(two_h, 3, "w=1 with h in {{1,2}} gives 2+1 placements");
        assert_eq!(two.len(), 7);
    }

    #[test]
    fn enumeration_base_20_count() {
        // Per-kind closed forms: sum over legal cell extents of the number of
        // placements, totalling 21000+21000+13230+13230+10000.
        let bank = enumerate_features(WindowSpec::default());
        assert_eq!(bank.len(), 78460);
    }

    #[test]
    fn enumeration_matches_naive_oracle() {
        for n in 2..=24u32 {
            let ordered = enumerate_features(WindowSpec::new(n));
            let as_set: HashSet<_> = ordered.iter().copied().collect();
            assert_eq!(as_set.len(), ordered.len(), "duplicates at base {n}");
            assert_eq!(as_set, naive_enumeration(n), "set mismatch at base {n}");
        }
    }

    #[test]
    fn enumeration_is_stable() {
        let a = enumerate_features(WindowSpec::new(12));
        let b = enumerate_features(WindowSpec::new(12));
        assert_eq!(a, b);
        let serialize = |bank: &[HaarFeature]| -> String {
            bank.iter()
                .map(|f| format!("{} {} {} {} {}\n", f.kind.code(), f.x, f.y, f.w, f.h))
                .collect()
        };
        assert_eq!(serialize(&a).into_bytes(), serialize(&b).into_bytes());
    }

    #[test]
    fn constant_image_evaluates_to_zero_at_every_scale() {
        let ii = integral(&GrayImage::filled(64, 64, 173));
        for f in enumerate_features(WindowSpec::new(4)) {
            for scale in [1.0, 1.5, 2.3, 5.0] {
                let v = eval_feature(&ii, &f, (3, 2), scale, 1.0).unwrap();
                assert_eq!(v, 0.0, "{f:?} at scale {scale}");
            }
        }
    }

    #[test]
    fn two_h_bright_left_fixture() {
        let mut img = GrayImage::filled(8, 8, 0);
        for y in 0..8 {
            for x in 0..4 {
                img.set(x, y, 255);
            }
        }
        let ii = integral(&img);
        let f = HaarFeature { kind: HaarKind::TwoH, x: 0, y: 0, w: 4, h: 2 };
        let v = eval_feature(&ii, &f, (0, 0), 1.0, 1.0).unwrap();
        assert_eq!(v, (255.0 * 8.0 - 0.0) / 16.0);
        assert!(v > 0.0);
    }

    #[test]
    fn integer_path_matches_pixel_loops_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let data = (0..16).map(|_| rng.gen()).collect();
            let img = GrayImage::new(4, 4, data).unwrap();
            let ii = integral(&img);
            for f in enumerate_features(WindowSpec::new(4)) {
                let fast = eval_feature(&ii, &f, (0, 0), 1.0, 1.0).unwrap();
                assert_eq!(fast, brute_eval(&img, &f), "{f:?}");
            }
        }
    }

    #[test]
    fn two_h_antisymmetric_under_mirror() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let data: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
        let img = GrayImage::new(8, 8, data.clone()).unwrap();
        let mut mirrored = GrayImage::filled(8, 8, 0);
        for y in 0..8 {
            for x in 0..8 {
                mirrored.set(7 - x, y, img.get(x, y));
            }
        }
        let ii = integral(&img);
        let mi = integral(&mirrored);
        for f in enumerate_features(WindowSpec::new(8)) {
            if f.kind != HaarKind::TwoH {
                continue;
            }
            let (fw, _) = f.span();
            let reflected = HaarFeature { x: 8 - f.x - fw, ..f };
            let a = eval_feature(&ii, &f, (0, 0), 1.0, 1.0).unwrap();
            let b = eval_feature(&mi, &reflected, (0, 0), 1.0, 1.0).unwrap();
            assert_eq!(a, -b, "{f:?}");
        }
    }

    #[test]
    fn variance_normalized_value_is_gain_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data: Vec<u8> = (0..64).map(|_| rng.gen_range(0..=100)).collect();
        let img = GrayImage::new(8, 8, data.clone()).unwrap();
        let doubled =
            GrayImage::new(8, 8, data.iter().map(|&v| v * 2).collect()).unwrap();
        let ii = integral(&img);
        let di = integral(&doubled);
        let full = Rect::new(0, 0, 8, 8);
        let inv_a = 1.0 / ii.window_stats(full).unwrap().1;
        let inv_b = 1.0 / di.window_stats(full).unwrap().1;
        for f in enumerate_features(WindowSpec::new(8)).iter().step_by(97) {
            let a = eval_feature(&ii, f, (0, 0), 1.0, inv_a).unwrap();
            let b = eval_feature(&di, f, (0, 0), 1.0, inv_b).unwrap();
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12), "{f:?}: {a} vs {b}");
        }
    }

    #[test]
    fn out_of_bounds_placement_rejected() {
        let ii = integral(&GrayImage::filled(10, 10, 7));
        let f = HaarFeature { kind: HaarKind::TwoH, x: 0, y: 0, w: 4, h: 4 };
        assert!(eval_feature(&ii, &f, (0, 0), 1.0, 1.0).is_ok());
        let err = eval_feature(&ii, &f, (4, 0), 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::RectOutOfBounds { .. }));
        assert!(eval_feature(&ii, &f, (0, 0), 2.0, 1.0).is_err(), "scaled 16x8 footprint");
    }
}
