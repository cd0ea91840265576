//! Multi-scale sliding-window scanning, rectangle grouping, five-cascade
//! gesture arbitration, and pinhole distance estimation.

use rayon::prelude::*;

use crate::boost::Cascade;
use crate::error::{Error, Result};
use crate::imaging::{integral, GrayImage, IntegralImage, Rect};
use crate::GestureLabel;

/// One accepted window in frame coordinates. `score` is the sum of
/// (vote sum - stage threshold) margins over the stages the window passed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub rect: Rect,
    pub score: f64,
    pub scale: f64,
}

/// Sliding-window scan parameters.
#[derive(Clone, Debug)]
pub struct ScanConfig {
    /// Geometric growth of the window side between scales (> 1).
    pub scale_factor: f64,
    /// Stride as a fraction of the window side, floored at one pixel.
    pub step_fraction: f64,
    /// Smallest window side; defaults to the cascade's base window.
    pub min_size: Option<u32>,
    /// Largest window side; defaults to the frame's smaller dimension.
    pub max_size: Option<u32>,
    /// Minimum class size for a grouped detection to survive.
    pub min_neighbors: usize,
    /// Relative position/size tolerance when grouping rects.
    pub group_eps: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            scale_factor: 1.25,
            step_fraction: 0.05,
            min_size: None,
            max_size: None,
            min_neighbors: 3,
            group_eps: 0.2,
        }
    }
}

impl ScanConfig {
    /// Resolve (min side, max side) against a cascade base and frame size.
    fn resolve_sizes(&self, base: u32, frame_min: u32) -> Result<(u32, u32)> {
        if !(self.scale_factor > 1.0) || !self.scale_factor.is_finite() {
            return Err(Error::Config(format!("scale_factor {} must exceed 1", self.scale_factor)));
        }
        if !(self.step_fraction > 0.0) || !self.step_fraction.is_finite() {
            return Err(Error::Config(format!("step_fraction {} must be positive", self.step_fraction)));
        }
        if !(self.group_eps >= 0.0) || !self.group_eps.is_finite() {
            return Err(Error::Config(format!("group_eps {} must be non-negative", self.group_eps)));
        }
        let min_size = self.min_size.unwrap_or(base);
        let max_size = self.max_size.unwrap_or(frame_min);
        if min_size < base {
            return Err(Error::Config(format!("min_size {min_size} below base window {base}")));
        }
        if max_size > frame_min {
            return Err(Error::Config(format!(
                "max_size {max_size} exceeds frame minimum dimension {frame_min}"
            )));
        }
        if min_size > max_size {
            return Err(Error::Config(format!("min_size {min_size} exceeds max_size {max_size}")));
        }
        Ok((min_size, max_size))
    }
}

/// Outcome of evaluating one window, including how many stages ran before
/// the verdict (rejection must not compute stages past the failing one).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowEvaluation {
    pub accepted: bool,
    pub score: f64,
    pub stages_evaluated: usize,
}

/// Variance-normalize the window at `origin` and run the cascade's stages in
/// order, early-exiting on the first failed stage.
pub fn evaluate_window(
    cascade: &Cascade,
    ii: &IntegralImage,
    origin: (u32, u32),
    scale: f64,
) -> Result<(bool, f64)> {
    evaluate_window_detail(cascade, ii, origin, scale).map(|ev| (ev.accepted, ev.score))
}

pub fn evaluate_window_detail(
    cascade: &Cascade,
    ii: &IntegralImage,
    origin: (u32, u32),
    scale: f64,
) -> Result<WindowEvaluation> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Input(format!("scale {scale} must be positive")));
    }
    let side = ((cascade.window.base as f64) * scale).round() as u32;
    let window = Rect::new(origin.0, origin.1, side, side);
    let (_, stddev) = ii.window_stats(window)?;
    let inv_stddev = 1.0 / stddev;

    let mut score = 0.0;
    let mut stages_evaluated = 0;
    for stage in &cascade.stages {
        stages_evaluated += 1;
        let sum = stage.vote_at(ii, origin, scale, inv_stddev)?;
        if sum < stage.threshold {
            return Ok(WindowEvaluation { accepted: false, score, stages_evaluated });
        }
        score += sum - stage.threshold;
    }
    Ok(WindowEvaluation { accepted: true, score, stages_evaluated })
}

/// All accepted windows before grouping, scale-major then row-major. Scales
/// run in parallel but results merge in the canonical order.
pub fn scan(frame: &GrayImage, cascade: &Cascade, cfg: &ScanConfig) -> Result<Vec<Detection>> {
    let base = cascade.window.base;
    let frame_min = frame.width().min(frame.height());
    if frame_min < base {
        return Err(Error::Input(format!(
            "frame {}x{} smaller than the {base}x{base} base window",
            frame.width(),
            frame.height()
        )));
    }
    let (min_size, max_size) = cfg.resolve_sizes(base, frame_min)?;
    let ii = integral(frame);

    let mut sides: Vec<u32> = Vec::new();
    let mut s = min_size as f64;
    while s.floor() as u32 <= max_size {
        let side = s.floor() as u32;
        if sides.last() != Some(&side) {
            sides.push(side);
        }
        s *= cfg.scale_factor;
    }

    let per_scale: Vec<Vec<Detection>> = sides
        .par_iter()
        .map(|&side| {
            let scale = side as f64 / base as f64;
            let stride = (((side as f64) * cfg.step_fraction).floor() as u32).max(1);
            let mut dets = Vec::new();
            let mut y = 0;
            while y + side <= frame.height() {
                let mut x = 0;
                while x + side <= frame.width() {
                    let ev = evaluate_window_detail(cascade, &ii, (x, y), scale)?;
                    if ev.accepted {
                        dets.push(Detection { rect: Rect::new(x, y, side, side), score: ev.score, scale });
                    }
                    x += stride;
                }
                y += stride;
            }
            Ok(dets)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_scale.into_iter().flatten().collect())
}

fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let tol_x = eps * 0.5 * (a.w + b.w) as f64;
    let tol_y = eps * 0.5 * (a.h + b.h) as f64;
    (a.x as f64 - b.x as f64).abs() <= tol_x
        && (a.y as f64 - b.y as f64).abs() <= tol_y
        && (a.w as f64 - b.w as f64).abs() <= tol_x
        && (a.h as f64 - b.h as f64).abs() <= tol_y
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index wins so class identity is insertion-ordered.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Similarity classes as member index lists, in first-member order.
pub(crate) fn group_classes(dets: &[Detection], eps: f64) -> Vec<Vec<usize>> {
    let n = dets.len();
    let mut sets = DisjointSet::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if similar(&dets[i].rect, &dets[j].rect, eps) {
                sets.union(i, j);
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut class_of_root = vec![usize::MAX; n];
    for i in 0..n {
        let root = sets.find(i);
        if class_of_root[root] == usize::MAX {
            class_of_root[root] = classes.len();
            classes.push(Vec::new());
        }
        classes[class_of_root[root]].push(i);
    }
    classes
}

/// Merge similar rects into classes, drop classes smaller than
/// `min_neighbors`, and emit each survivor's member-average rect with the
/// class's maximum score. Output classes keep first-member order.
pub fn group_rects(dets: &[Detection], min_neighbors: usize, eps: f64) -> Vec<Detection> {
    group_classes(dets, eps)
        .into_iter()
        .filter(|members| members.len() >= min_neighbors.max(1))
        .map(|members| {
            let k = members.len() as f64;
            let mean = |f: &dyn Fn(usize) -> f64| members.iter().map(|&i| f(i)).sum::<f64>() / k;
            let rect = Rect::new(
                mean(&|i| dets[i].rect.x as f64).round() as u32,
                mean(&|i| dets[i].rect.y as f64).round() as u32,
                mean(&|i| dets[i].rect.w as f64).round() as u32,
                mean(&|i| dets[i].rect.h as f64).round() as u32,
            );
            let score = members.iter().map(|&i| dets[i].score).fold(f64::NEG_INFINITY, f64::max);
            let scale = mean(&|i| dets[i].scale);
            Detection { rect, score, scale }
        })
        .collect()
}

/// Run scan + group per cascade and arbitrate: the label whose best grouped
/// detection scores highest wins; equal scores break by the fixed label order
/// Fist < Palm < Gs < Vs < Lf. No grouped detection anywhere -> None.
pub fn classify_gesture(
    frame: &GrayImage,
    cascades: &[Cascade],
    cfg: &ScanConfig,
) -> Result<(GestureLabel, Option<Detection>)> {
    if cascades.is_empty() {
        return Err(Error::Config("no cascades loaded".into()));
    }
    for (i, a) in cascades.iter().enumerate() {
        for b in &cascades[i + 1..] {
            if a.label == b.label {
                return Err(Error::Config(format!("duplicate cascade label {}", a.label)));
            }
        }
    }

    let mut best: Option<(GestureLabel, Detection)> = None;
    for cascade in cascades {
        let raw = scan(frame, cascade, cfg)?;
        let grouped = group_rects(&raw, cfg.min_neighbors, cfg.group_eps);
        let top = grouped
            .into_iter()
            .reduce(|a, b| if b.score > a.score { b } else { a });
        if let Some(det) = top {
            let replace = match &best {
                None => true,
                Some((label, cur)) => {
                    det.score > cur.score || (det.score == cur.score && cascade.label < *label)
                }
            };
            if replace {
                best = Some((cascade.label, det));
            }
        }
    }
    Ok(match best {
        Some((label, det)) => (label, Some(det)),
        None => (GestureLabel::None, None),
    })
}

/// Single-point pinhole calibration: a hand of `reference_width_px` pixels
/// sits at `reference_distance_ft` feet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub reference_distance_ft: f64,
    pub reference_width_px: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { reference_distance_ft: 3.0, reference_width_px: 80.0 }
    }
}

/// Inverse-proportionality range estimate:
/// distance = reference_distance * reference_width / bbox_width.
pub fn estimate_distance(bbox_width_px: f64, calib: Calibration) -> Result<f64> {
    if !(bbox_width_px >= 1.0) || !bbox_width_px.is_finite() {
        return Err(Error::Input(format!("bbox width {bbox_width_px} px must be at least 1")));
    }
    if !(calib.reference_distance_ft > 0.0) || !(calib.reference_width_px > 0.0) {
        return Err(Error::Input("calibration must be positive".into()));
    }
    Ok(calib.reference_distance_ft * calib.reference_width_px / bbox_width_px)
}

pub const DETECTION_CSV_HEADER: &str = "frame,label,x,y,w,h,score,scale";

pub fn detection_csv_row(frame: &str, label: GestureLabel, d: &Detection) -> String {
    format!(
        "{frame},{label},{},{},{},{},{},{}",
        d.rect.x, d.rect.y, d.rect.w, d.rect.h, d.score, d.scale
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::{cascade_from_str, train_cascade, TrainConfig};
    use crate::haar::WindowSpec;
    use crate::synth;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    /// Left-half-bright detector: a full-window TwoH stump fires at
    /// normalized value 0.5 (a 200-vs-40 split evaluates to exactly 1.0), so
    /// only windows with real left-over-right contrast are accepted.
    fn hand_cascade(label: &str) -> Cascade {
        let text = format!(
            "HAARPILOT-CASCADE 1\nwindow 20\nlabel {label}\nstages 1\n\
             stage 1 threshold 5e-1 stumps 1\nstump 0 0 0 10 20 5e-1 1 1e0\n"
        );
        cascade_from_str(&text).unwrap()
    }

    fn trained_cascade() -> &'static Cascade {
        static CASCADE: OnceLock<Cascade> = OnceLock::new();
        CASCADE.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(51);
            let positives: Vec<GrayImage> =
                (0..40).map(|_| synth::bright_left_pattern(&mut rng, 20)).collect();
            let mut pool_rng = ChaCha8Rng::seed_from_u64(52);
            let mut draw = move || Some(synth::noise_window(&mut pool_rng, 20));
            let config = TrainConfig { max_stages: 3, ..TrainConfig::default() };
            train_cascade(&positives, &mut draw, GestureLabel::Palm, &config).unwrap()
        })
    }

    fn two_stage_cascade(first_threshold: f64) -> Cascade {
        let text = format!(
            "HAARPILOT-CASCADE 1\nwindow 20\nlabel fist\nstages 2\n\
             stage 1 threshold {first_threshold:e} stumps 1\nstump 0 0 0 10 20 5e-1 1 1e0\n\
             stage 2 threshold 5e-1 stumps 1\nstump 0 0 0 10 20 5e-1 1 1e0\n"
        );
        cascade_from_str(&text).unwrap()
    }

    #[test]
    fn rejection_stops_at_failing_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let frame = synth::noise_window(&mut rng, 40);
        let ii = integral(&frame);
        let rejecting = two_stage_cascade(1e6);
        let ev = evaluate_window_detail(&rejecting, &ii, (0, 0), 1.0).unwrap();
        assert!(!ev.accepted);
        assert_eq!(ev.stages_evaluated, 1, "stage 2 must never run");
        assert_eq!(ev.score, 0.0, "stage-1 rejection scores zero");
    }

    #[test]
    fn constant_window_fails_contrast_stage() {
        let frame = GrayImage::filled(20, 20, 128);
        let ii = integral(&frame);
        let (accepted, score) = evaluate_window(&hand_cascade("palm"), &ii, (0, 0), 1.0).unwrap();
        assert!(!accepted, "zero-valued features cannot clear a positive stump threshold");
        assert_eq!(score, 0.0);
    }

    #[test]
    fn hand_cascade_matches_hand_computation() {
        // Window: left half 200, right half 40. Raw TwoH sum is
        // (200 - 40) * 200 = 32000; the window's stddev is exactly 80 and the
        // span area 400, so the value is 32000 / 80 / 400 = 1.0. The stump
        // fires (1.0 >= 0.5), the stage sum is alpha = 1 >= 0.5: accept with
        // score 1 - 0.5 = 0.5.
        let mut img = GrayImage::filled(20, 20, 40);
        for y in 0..20 {
            for x in 0..10 {
                img.set(x, y, 200);
            }
        }
        let ii = integral(&img);
        let ev = evaluate_window_detail(&hand_cascade("palm"), &ii, (0, 0), 1.0).unwrap();
        assert!(ev.accepted);
        assert!((ev.score - 0.5).abs() < 1e-12);

        let mut flipped = GrayImage::filled(20, 20, 200);
        for y in 0..20 {
            for x in 0..10 {
                flipped.set(x, y, 40);
            }
        }
        let ii = integral(&flipped);
        let (accepted, _) = evaluate_window(&hand_cascade("palm"), &ii, (0, 0), 1.0).unwrap();
        assert!(!accepted);
    }

    #[test]
    fn out_of_bounds_window_is_an_error() {
        let frame = GrayImage::filled(30, 30, 7);
        let ii = integral(&frame);
        assert!(matches!(
            evaluate_window(&hand_cascade("palm"), &ii, (15, 0), 1.0),
            Err(Error::RectOutOfBounds { .. })
        ));
    }

    #[test]
    fn blank_frame_scans_empty() {
        let frame = GrayImage::filled(64, 64, 90);
        let dets = scan(&frame, &hand_cascade("palm"), &ScanConfig::default()).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn undersized_frame_is_an_input_error() {
        let frame = GrayImage::filled(16, 64, 90);
        assert!(matches!(
            scan(&frame, &hand_cascade("palm"), &ScanConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn planted_pattern_is_found_with_iou() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let mut frame = GrayImage::filled(160, 160, 110);
        for y in 0..160 {
            for x in 0..160 {
                frame.set(x, y, (105 + rng.gen_range(0..10)) as u8);
            }
        }
        let patch = synth::bright_left_pattern(&mut rng, 40);
        for y in 0..40 {
            for x in 0..40 {
                frame.set(40 + x, 60 + y, patch.get(x, y));
            }
        }
        let truth = Rect::new(40, 60, 40, 40);
        let dets = scan(&frame, trained_cascade(), &ScanConfig::default()).unwrap();
        assert!(
            dets.iter().any(|d| d.rect.iou(&truth) >= 0.5),
            "no raw detection overlaps ground truth; got {} detections",
            dets.len()
        );
    }

    #[test]
    fn scan_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut frame = GrayImage::filled(100, 80, 0);
        for y in 0..80 {
            for x in 0..100 {
                frame.set(x, y, rng.gen_range(0..=255u32) as u8);
            }
        }
        let a = scan(&frame, trained_cascade(), &ScanConfig::default()).unwrap();
        let b = scan(&frame, trained_cascade(), &ScanConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    fn upscale2(img: &GrayImage) -> GrayImage {
        let mut out = GrayImage::filled(img.width() * 2, img.height() * 2, 0);
        for y in 0..out.height() {
            for x in 0..out.width() {
                out.set(x, y, img.get(x / 2, y / 2));
            }
        }
        out
    }

    #[test]
    fn detections_correspond_across_a_2x_upscale() {
        // Pixel doubling preserves normalized window responses, so the 2x
        // scan must cover the doubled location of the 1x best hit. Identity
        // of the argmax is not guaranteed: the pyramid holds no side exactly
        // twice another (round(20 * 1.25^k) skips 40), and a half-split is
        // scale self-similar, so we assert coverage, not equality.
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let mut frame = GrayImage::filled(90, 90, 110);
        let patch = synth::bright_left_pattern(&mut rng, 30);
        for y in 0..30 {
            for x in 0..30 {
                frame.set(25 + x, 30 + y, patch.get(x, y));
            }
        }
        let big = upscale2(&frame);
        let cfg = ScanConfig::default();
        let cascade = hand_cascade("palm");

        let small_best = scan(&frame, &cascade, &cfg)
            .unwrap()
            .into_iter()
            .reduce(|a, b| if b.score > a.score { b } else { a })
            .expect("pattern detected at 1x");
        let doubled = Rect::new(
            small_best.rect.x * 2,
            small_best.rect.y * 2,
            small_best.rect.w * 2,
            small_best.rect.h * 2,
        );

        let big_raw = scan(&big, &cascade, &cfg).unwrap();
        assert!(!big_raw.is_empty(), "pattern detected at 2x");
        let best_iou = big_raw.iter().map(|d| doubled.iou(&d.rect)).fold(0.0, f64::max);
        assert!(best_iou >= 0.6, "no 2x hit near doubled {doubled:?} (best IoU {best_iou:.3})");
    }

    fn det(x: u32, y: u32, w: u32, h: u32, score: f64) -> Detection {
        Detection { rect: Rect::new(x, y, w, h), score, scale: w as f64 / 20.0 }
    }

    #[test]
    fn grouping_fixtures() {
        let cluster = [det(10, 10, 20, 20, 1.0), det(12, 12, 20, 20, 3.0), det(14, 14, 20, 20, 2.0)];
        let grouped = group_rects(&cluster, 3, 0.2);
        assert_eq!(grouped.len(), 1);
        assert_eq!(grouped[0].rect, Rect::new(12, 12, 20, 20));
        assert_eq!(grouped[0].score, 3.0, "class keeps its best score");

        assert!(group_rects(&cluster[..2], 3, 0.2).is_empty());

        let mut two = cluster.to_vec();
        two.extend([det(100, 100, 22, 22, 0.5), det(101, 99, 20, 20, 0.7), det(99, 101, 21, 21, 0.2)]);
        let grouped = group_rects(&two, 3, 0.2);
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0].rect, Rect::new(12, 12, 20, 20), "first-member order");
        assert_eq!(grouped[1].rect, Rect::new(100, 100, 21, 21));
    }

    #[test]
    fn classify_blank_frame_is_none() {
        let frame = GrayImage::filled(60, 60, 128);
        let cascades = vec![hand_cascade("fist"), hand_cascade("palm")];
        let (label, det) = classify_gesture(&frame, &cascades, &ScanConfig::default()).unwrap();
        assert_eq!(label, GestureLabel::None);
        assert!(det.is_none());
    }

    #[test]
    fn classify_single_firing_cascade_wins() {
        // A full-frame left-bright split: no window anywhere presents
        // right-bright structure (an inset patch would, along its border),
        // so only the left-bright cascade can fire.
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let frame = synth::bright_left_pattern(&mut rng, 70);
        let left_bright = hand_cascade("palm");
        let right_bright_text = "HAARPILOT-CASCADE 1\nwindow 20\nlabel fist\nstages 1\n\
                                 stage 1 threshold 5e-1 stumps 1\nstump 0 0 0 10 20 -5e-1 -1 1e0\n";
        let right_bright = cascade_from_str(right_bright_text).unwrap();
        let raw_right = scan(&frame, &right_bright, &ScanConfig::default()).unwrap();
        assert!(raw_right.is_empty(), "right-bright cascade fired {} times", raw_right.len());
        let (label, det) =
            classify_gesture(&frame, &[right_bright, left_bright], &ScanConfig::default()).unwrap();
        assert_eq!(label, GestureLabel::Palm);
        assert!(det.is_some());
    }

    #[test]
    fn classify_ties_break_fist_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let mut frame = GrayImage::filled(70, 70, 110);
        let patch = synth::bright_left_pattern(&mut rng, 30);
        for y in 0..30 {
            for x in 0..30 {
                frame.set(20 + x, 20 + y, patch.get(x, y));
            }
        }
        // Same geometry and stump under two labels: identical scores, and the
        // palm cascade listed first must still lose the tie.
        let cascades = vec![hand_cascade("palm"), hand_cascade("fist")];
        let (label, _) = classify_gesture(&frame, &cascades, &ScanConfig::default()).unwrap();
        assert_eq!(label, GestureLabel::Fist);
    }

    #[test]
    fn classify_rejects_duplicate_labels() {
        let frame = GrayImage::filled(30, 30, 0);
        let cascades = vec![hand_cascade("palm"), hand_cascade("palm")];
        assert!(matches!(
            classify_gesture(&frame, &cascades, &ScanConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn affine_intensity_shift_preserves_detections() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut frame = GrayImage::filled(80, 80, 0);
        for y in 0..80 {
            for x in 0..80 {
                frame.set(x, y, rng.gen_range(20..=60u32) as u8);
            }
        }
        for y in 0..30 {
            for x in 0..30 {
                let v = if x < 15 { 95 + (x as i32 % 3) } else { 8 + (y as i32 % 3) };
                frame.set(25 + x, 25 + y, v as u8);
            }
        }
        let mut shifted = GrayImage::filled(80, 80, 0);
        for y in 0..80 {
            for x in 0..80 {
                shifted.set(x, y, 2 * frame.get(x, y) + 10);
            }
        }
        let cascade = hand_cascade("palm");
        let a = scan(&frame, &cascade, &ScanConfig::default()).unwrap();
        let b = scan(&shifted, &cascade, &ScanConfig::default()).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da.rect, db.rect);
            assert!((da.score - db.score).abs() <= 1e-9);
        }
    }

    #[test]
    fn distance_fixtures() {
        let calib = Calibration::default();
        assert_eq!(estimate_distance(80.0, calib).unwrap(), 3.0);
        assert_eq!(estimate_distance(120.0, calib).unwrap(), 2.0);
        assert!(estimate_distance(0.0, calib).is_err());
        assert!(estimate_distance(
            50.0,
            Calibration { reference_distance_ft: -1.0, reference_width_px: 80.0 }
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn distance_halves_when_width_doubles(
            width in 1.0f64..500.0,
            ref_d in 0.5f64..20.0,
            ref_w in 10.0f64..300.0,
        ) {
            let calib = Calibration { reference_distance_ft: ref_d, reference_width_px: ref_w };
            let near = estimate_distance(width, calib).unwrap();
            let far = estimate_distance(width * 2.0, calib).unwrap();
            prop_assert!((near - 2.0 * far).abs() <= 1e-9 * near.abs());
        }

        #[test]
        fn grouped_centers_stay_in_member_hull(
            seeds in proptest::collection::vec((0u32..200, 0u32..200, 15u32..40, 0.0f64..5.0), 1..40),
        ) {
            let dets: Vec<Detection> =
                seeds.into_iter().map(|(x, y, s, score)| det(x, y, s, s, score)).collect();
            let classes = group_classes(&dets, 0.2);
            let grouped = group_rects(&dets, 1, 0.2);
            prop_assert_eq!(classes.len(), grouped.len());
            for (members, g) in classes.iter().zip(&grouped) {
                let cx = g.rect.x as f64 + g.rect.w as f64 / 2.0;
                let cy = g.rect.y as f64 + g.rect.h as f64 / 2.0;
                let centers: Vec<(f64, f64)> = members
                    .iter()
                    .map(|&i| {
                        let r = dets[i].rect;
                        (r.x as f64 + r.w as f64 / 2.0, r.y as f64 + r.h as f64 / 2.0)
                    })
                    .collect();
                let (min_x, max_x) = centers.iter().fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.0), hi.max(c.0)));
                let (min_y, max_y) = centers.iter().fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.1), hi.max(c.1)));
                // Rounding the averaged rect moves the center by at most one
                // pixel on each axis.
                prop_assert!(cx >= min_x - 1.0 && cx <= max_x + 1.0);
                prop_assert!(cy >= min_y - 1.0 && cy <= max_y + 1.0);
            }
        }
    }
}
