//! Decision-stump AdaBoost stages assembled into an attentional rejection
//! cascade, plus persistence in a versioned text model format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::haar::{enumerate_features, eval_feature, HaarFeature, HaarKind, WindowSpec};
use crate::imaging::{integral, GrayImage, IntegralImage, Rect};
use crate::GestureLabel;

/// Stage counts the full-corpus reference training runs reached for
/// palm, fist, go-symbol, v-shape, and little-finger models. Kept as
/// metadata for comparison, not as a training target.
pub const REFERENCE_STAGE_COUNTS: [(GestureLabel, usize); 5] = [
    (GestureLabel::Palm, 4),
    (GestureLabel::Fist, 16),
    (GestureLabel::Gs, 8),
    (GestureLabel::Vs, 10),
    (GestureLabel::Lf, 5),
];

/// One weak classifier: a thresholded Haar feature with a vote weight.
/// Votes h = 1 iff polarity * value >= polarity * threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Stump {
    /// Index into the canonical enumeration for the cascade's window.
    pub feature_index: usize,
    pub feature: HaarFeature,
    pub threshold: f64,
    pub polarity: i8,
    pub alpha: f64,
}

impl Stump {
    pub fn vote(&self, value: f64) -> bool {
        if self.polarity >= 0 {
            value >= self.threshold
        } else {
            value <= self.threshold
        }
    }
}

/// An alpha-weighted stump committee with a pass threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub stumps: Vec<Stump>,
    pub threshold: f64,
}

impl Stage {
    /// Alpha-weighted vote sum for a window placed at `origin` with `scale`.
    pub fn vote_at(
        &self,
        ii: &IntegralImage,
        origin: (u32, u32),
        scale: f64,
        inv_stddev: f64,
    ) -> Result<f64> {
        let mut sum = 0.0;
        for stump in &self.stumps {
            let value = eval_feature(ii, &stump.feature, origin, scale, inv_stddev)?;
            if stump.vote(value) {
                sum += stump.alpha;
            }
        }
        Ok(sum)
    }

    /// (passed, vote sum) for a preprocessed base-window sample.
    pub fn evaluate_sample(&self, sample: &TrainingSample) -> (bool, f64) {
        let sum = self
            .vote_at(&sample.ii, (0, 0), 1.0, sample.inv_stddev)
            .expect("sample window holds every base feature");
        (sum >= self.threshold, sum)
    }
}

/// An ordered rejection cascade for one gesture. A window is accepted iff it
/// passes every stage in order; the first failing stage rejects immediately.
#[derive(Clone, Debug, PartialEq)]
pub struct Cascade {
    pub window: WindowSpec,
    pub label: GestureLabel,
    pub stages: Vec<Stage>,
}

impl Cascade {
    pub fn accepts_sample(&self, sample: &TrainingSample) -> bool {
        self.stages.iter().all(|stage| stage.evaluate_sample(sample).0)
    }
}

/// A base-window sample preprocessed for feature evaluation: its integral
/// tables plus the reciprocal of its variance-normalization stddev.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    ii: IntegralImage,
    inv_stddev: f64,
}

impl TrainingSample {
    pub fn from_window(img: &GrayImage) -> Self {
        let ii = integral(img);
        let (_, stddev) = ii
            .window_stats(Rect::new(0, 0, img.width(), img.height()))
            .expect("full-image rect is always in bounds");
        TrainingSample { ii, inv_stddev: 1.0 / stddev }
    }

    pub fn eval(&self, feature: &HaarFeature) -> f64 {
        eval_feature(&self.ii, feature, (0, 0), 1.0, self.inv_stddev)
            .expect("sample window holds every base feature")
    }

    pub fn width(&self) -> u32 {
        self.ii.width()
    }

    pub fn height(&self) -> u32 {
        self.ii.height()
    }
}

/// Cascade training targets.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub window: WindowSpec,
    pub max_stages: usize,
    /// Per-stage minimum detection rate on training positives.
    pub min_detection: f64,
    /// Per-stage maximum false-positive rate on training negatives.
    pub max_false_positive: f64,
    /// Stump budget per stage.
    pub max_stumps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: WindowSpec::default(),
            max_stages: 10,
            min_detection: 0.995,
            max_false_positive: 0.5,
            max_stumps: 200,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.base < 4 {
            return Err(Error::Config(format!("window base {} must be at least 4", self.window.base)));
        }
        if !(self.min_detection > 0.0 && self.min_detection <= 1.0) {
            return Err(Error::Config(format!("min_detection {} outside (0, 1]", self.min_detection)));
        }
        if !(self.max_false_positive > 0.0 && self.max_false_positive < 1.0) {
            return Err(Error::Config(format!(
                "max_false_positive {} outside (0, 1)",
                self.max_false_positive
            )));
        }
        if self.max_stages == 0 || self.max_stumps == 0 {
            return Err(Error::Config("max_stages and max_stumps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Best threshold/polarity for one feature's sample values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StumpFit {
    pub threshold: f64,
    pub polarity: i8,
    pub error: f64,
}

/// A fitted stump plus the feature it belongs to, before alpha assignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StumpCandidate {
    pub feature_index: usize,
    pub fit: StumpFit,
}

fn validate_training_input(n_values: usize, labels: &[bool], weights: &[f64]) -> Result<()> {
    if labels.len() != n_values || weights.len() != n_values {
        return Err(Error::Input(format!(
            "mismatched lengths: {n_values} values, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if n_values < 2 {
        return Err(Error::DegenerateData(format!("{n_values} samples, need at least 2")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateData("single-class input".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Input("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Reusable buffers for the sorted threshold sweep.
#[derive(Default)]
struct SweepScratch {
    order: Vec<u32>,
    sorted: Vec<f64>,
    prefix_pos: Vec<f64>,
    prefix_neg: Vec<f64>,
}

/// Single sorted sweep over every candidate threshold. Candidates are one
/// sentinel below the minimum, the midpoint of each adjacent distinct pair,
/// and one sentinel above the maximum. Ties are broken toward the smaller
/// (error, threshold) with polarity +1 preferred.
fn fit_stump_sweep(values: &[f64], labels: &[bool], weights: &[f64], scratch: &mut SweepScratch) -> StumpFit {
    let n = values.len();
    scratch.order.clear();
    scratch.order.extend(0..n as u32);
    scratch.order.sort_unstable_by(|&a, &b| {
        values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b))
    });
    scratch.sorted.clear();
    scratch.sorted.extend(scratch.order.iter().map(|&i| values[i as usize]));
    scratch.prefix_pos.clear();
    scratch.prefix_pos.push(0.0);
    scratch.prefix_neg.clear();
    scratch.prefix_neg.push(0.0);
    for &i in &scratch.order {
        let i = i as usize;
        let (p, q) = if labels[i] { (weights[i], 0.0) } else { (0.0, weights[i]) };
        scratch.prefix_pos.push(scratch.prefix_pos.last().unwrap() + p);
        scratch.prefix_neg.push(scratch.prefix_neg.last().unwrap() + q);
    }
    let sorted = &scratch.sorted;
    let prefix_pos = &scratch.prefix_pos;
    let prefix_neg = &scratch.prefix_neg;
    let total_pos = prefix_pos[n];
    let total_neg = prefix_neg[n];

    let mut best = StumpFit { threshold: f64::INFINITY, polarity: 1, error: f64::INFINITY };
    let consider = |t: f64, best: &mut StumpFit| {
        // Binary-searched splits keep degenerate midpoints (that collapse onto
        // a sample value) classified exactly as a direct scan would.
        let lt = sorted.partition_point(|&v| v < t);
        let le = sorted.partition_point(|&v| v <= t);
        // Polarity +1 predicts positive iff value >= t.
        let err_plus = prefix_pos[lt] + (total_neg - prefix_neg[lt]);
        // Polarity -1 predicts positive iff value <= t.
        let err_minus = (total_pos - prefix_pos[le]) + prefix_neg[le];
        for (error, polarity) in [(err_plus, 1i8), (err_minus, -1i8)] {
            let rank = (polarity < 0) as u8;
            let best_rank = (best.polarity < 0) as u8;
            if error < best.error
                || (error == best.error
                    && (t < best.threshold || (t == best.threshold && rank < best_rank)))
            {
                *best = StumpFit { threshold: t, polarity, error };
            }
        }
    };

    consider(sorted[0] - 1.0, &mut best);
    for k in 1..n {
        if sorted[k] > sorted[k - 1] {
            consider(sorted[k - 1] + (sorted[k] - sorted[k - 1]) / 2.0, &mut best);
        }
    }
    consider(sorted[n - 1] + 1.0, &mut best);
    best
}

/// Optimal decision stump for one feature: the (threshold, polarity) pair
/// minimizing weighted misclassification.
pub fn train_stump(values: &[f64], labels: &[bool], weights: &[f64]) -> Result<StumpFit> {
    validate_training_input(values.len(), labels, weights)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("feature values must be finite".into()));
    }
    let mut scratch = SweepScratch::default();
    Ok(fit_stump_sweep(values, labels, weights, &mut scratch))
}

/// Fit a stump per feature and keep the best. `fill_values` writes feature
/// `fi`'s per-sample values into the provided buffer. Features may be
/// evaluated in parallel; the winner is the lexicographic minimum of
/// (error, feature index), so the result is schedule-independent.
pub fn select_best_stump<F>(
    n_features: usize,
    labels: &[bool],
    weights: &[f64],
    fill_values: F,
) -> Result<StumpCandidate>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    validate_training_input(labels.len(), labels, weights)?;
    if n_features == 0 {
        return Err(Error::Input("no features to select from".into()));
    }
    let n = labels.len();
    let best = (0..n_features)
        .into_par_iter()
        .fold(
            || (None::<StumpCandidate>, vec![0.0f64; n], SweepScratch::default()),
            |(best, mut buf, mut scratch), fi| {
                fill_values(fi, &mut buf);
                let fit = fit_stump_sweep(&buf, labels, weights, &mut scratch);
                let cand = StumpCandidate { feature_index: fi, fit };
                (Some(pick_candidate(best, cand)), buf, scratch)
            },
        )
        .map(|(best, _, _)| best)
        .reduce(
            || None,
            |a, b| match (a, b) {
                (None, x) | (x, None) => x,
                (Some(a), Some(b)) => Some(pick_candidate(Some(a), b)),
            },
        );
    Ok(best.expect("n_features >= 1"))
}

fn pick_candidate(best: Option<StumpCandidate>, cand: StumpCandidate) -> StumpCandidate {
    match best {
        None => cand,
        Some(b) => {
            let better = cand
                .fit
                .error
                .total_cmp(&b.fit.error)
                .then(cand.feature_index.cmp(&b.feature_index))
                .is_lt();
            if better {
                cand
            } else {
                b
            }
        }
    }
}

/// Convenience wrapper over a dense feature-major matrix
/// (`matrix[feature][sample]`).
pub fn select_best_stump_matrix(
    matrix: &[Vec<f64>],
    labels: &[bool],
    weights: &[f64],
) -> Result<StumpCandidate> {
    for (fi, row) in matrix.iter().enumerate() {
        if row.len() != labels.len() {
            return Err(Error::Input(format!(
                "feature {fi} has {} values for {} samples",
                row.len(),
                labels.len()
            )));
        }
    }
    select_best_stump(matrix.len(), labels, weights, |fi, buf| {
        buf.copy_from_slice(&matrix[fi]);
    })
}

/// One boosting round's weight update. Correctly classified samples are
/// scaled by beta = err/(1-err), weights renormalize to sum 1, and the
/// stump's vote weight alpha = ln(1/beta) is returned.
///
/// err = 0 closes the stage: alpha is capped at ln(1e10) and weights are left
/// untouched. err >= 0.5 is a boosting stall.
pub fn adaboost_update(weights: &mut [f64], mistakes: &[bool], err: f64) -> Result<f64> {
    if weights.len() != mistakes.len() {
        return Err(Error::Input(format!(
            "{} weights vs {} mistake flags",
            weights.len(),
            mistakes.len()
        )));
    }
    if !err.is_finite() || err < 0.0 {
        return Err(Error::Input(format!("weighted error {err} must be finite and non-negative")));
    }
    if err >= 0.5 {
        return Err(Error::BoostingStall { err });
    }
    if err == 0.0 {
        return Ok(1e10f64.ln());
    }
    let beta = err / (1.0 - err);
    for (w, &missed) in weights.iter_mut().zip(mistakes) {
        if !missed {
            *w *= beta;
        }
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok((1.0 / beta).ln())
}

/// A trained stage plus the rates it achieved on its own training data.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    /// The stump budget ran out before the false-positive target was met.
    pub hit_stump_budget: bool,
}

fn check_sample_sizes(samples: &[TrainingSample], base: u32, what: &str) -> Result<()> {
    for s in samples {
        if s.width() != base || s.height() != base {
            return Err(Error::Input(format!(
                "{what} sample is {}x{}, expected {base}x{base}",
                s.width(),
                s.height()
            )));
        }
    }
    Ok(())
}

/// Boost stumps until the stage's false-positive rate on the training
/// negatives drops to the target, lowering the stage threshold after every
/// round to the largest value that keeps detection at `min_detection`.
pub fn train_stage(
    positives: &[TrainingSample],
    negatives: &[TrainingSample],
    features: &[HaarFeature],
    config: &TrainConfig,
) -> Result<StageOutcome> {
    config.validate()?;
    if positives.len() < 10 || negatives.len() < 10 {
        return Err(Error::DegenerateData(format!(
            "need at least 10 positives and 10 negatives, got {} and {}",
            positives.len(),
            negatives.len()
        )));
    }
    check_sample_sizes(positives, config.window.base, "positive")?;
    check_sample_sizes(negatives, config.window.base, "negative")?;
    if features.is_empty() {
        return Err(Error::Input("empty feature bank".into()));
    }

    let n_pos = positives.len();
    let n_neg = negatives.len();
    let n = n_pos + n_neg;
    let samples: Vec<&TrainingSample> = positives.iter().chain(negatives).collect();
    let labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    let mut weights = vec![0.0f64; n];
    weights[..n_pos].fill(1.0 / (2.0 * n_pos as f64));
    weights[n_pos..].fill(1.0 / (2.0 * n_neg as f64));

    let k_detect = ((config.min_detection * n_pos as f64).ceil() as usize).clamp(1, n_pos);
    let mut votes = vec![0.0f64; n];
    let mut values = vec![0.0f64; n];
    let mut stumps: Vec<Stump> = Vec::new();
    let mut stage_threshold;
    let mut detection_rate;
    let mut false_positive_rate;
    let mut hit_stump_budget = false;

    loop {
        let cand = select_best_stump(features.len(), &labels, &weights, |fi, buf| {
            for (slot, sample) in buf.iter_mut().zip(&samples) {
                *slot = sample.eval(&features[fi]);
            }
        })?;
        for (slot, sample) in values.iter_mut().zip(&samples) {
            *slot = sample.eval(&features[cand.feature_index]);
        }
        let stump_shape = Stump {
            feature_index: cand.feature_index,
            feature: features[cand.feature_index],
            threshold: cand.fit.threshold,
            polarity: cand.fit.polarity,
            alpha: 0.0,
        };
        let decisions: Vec<bool> = values.iter().map(|&v| stump_shape.vote(v)).collect();
        let mistakes: Vec<bool> =
            decisions.iter().zip(&labels).map(|(&d, &l)| d != l).collect();
        let err = cand.fit.error;
        let alpha = adaboost_update(&mut weights, &mistakes, err)?;
        stumps.push(Stump { alpha, ..stump_shape });
        for (vote, &d) in votes.iter_mut().zip(&decisions) {
            if d {
                *vote += alpha;
            }
        }

        // Stage threshold: the k-th largest positive vote, so at least
        // ceil(min_detection * n_pos) positives stay detected.
        let mut pos_votes: Vec<f64> = votes[..n_pos].to_vec();
        pos_votes.sort_unstable_by(|a, b| b.total_cmp(a));
        stage_threshold = pos_votes[k_detect - 1];
        detection_rate =
            votes[..n_pos].iter().filter(|&&v| v >= stage_threshold).count() as f64 / n_pos as f64;
        false_positive_rate =
            votes[n_pos..].iter().filter(|&&v| v >= stage_threshold).count() as f64 / n_neg as f64;

        if err == 0.0 || false_positive_rate <= config.max_false_positive {
            break;
        }
        if stumps.len() >= config.max_stumps {
            hit_stump_budget = true;
            log::warn!(
                "stage hit the {}-stump budget at false-positive rate {false_positive_rate:.3}",
                config.max_stumps
            );
            break;
        }
    }

    Ok(StageOutcome {
        stage: Stage { stumps, threshold: stage_threshold },
        detection_rate,
        false_positive_rate,
        hit_stump_budget,
    })
}

/// Source of candidate negative windows, already sized to the base window.
/// Returning `None` marks the pool as exhausted.
pub trait NegativePool {
    fn draw(&mut self) -> Option<GrayImage>;
}

impl<F: FnMut() -> Option<GrayImage>> NegativePool for F {
    fn draw(&mut self) -> Option<GrayImage> {
        self()
    }
}

/// Attempts per missing negative before the pool counts as exhausted.
const MINING_ATTEMPT_FACTOR: usize = 200;

/// Per-stage summary of a cascade training run.
#[derive(Clone, Debug)]
pub struct StageReport {
    pub stumps: usize,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    pub hit_stump_budget: bool,
}

/// Train an attentional cascade with hard-negative mining: stage k trains on
/// the positives still detected by stages 1..k-1 plus pool windows that those
/// stages still accept. Training stops at `max_stages` or when mining cannot
/// fill the per-stage quota (one hard negative per surviving positive).
pub fn train_cascade<P: NegativePool>(
    positives: &[GrayImage],
    pool: &mut P,
    label: GestureLabel,
    config: &TrainConfig,
) -> Result<Cascade> {
    train_cascade_report(positives, pool, label, config).map(|(c, _)| c)
}

/// [`train_cascade`] plus the per-stage training rates.
pub fn train_cascade_report<P: NegativePool>(
    positives: &[GrayImage],
    pool: &mut P,
    label: GestureLabel,
    config: &TrainConfig,
) -> Result<(Cascade, Vec<StageReport>)> {
    config.validate()?;
    if label == GestureLabel::None {
        return Err(Error::Config("cascade label must be a gesture, not none".into()));
    }
    if positives.len() < 10 {
        return Err(Error::DegenerateData(format!("{} positives, need at least 10", positives.len())));
    }
    let base = config.window.base;
    for img in positives {
        if img.width() != base || img.height() != base {
            return Err(Error::Input(format!(
                "positive sample is {}x{}, expected {base}x{base}",
                img.width(),
                img.height()
            )));
        }
    }

    let features = enumerate_features(config.window);
    let pos_samples: Vec<TrainingSample> = positives.iter().map(TrainingSample::from_window).collect();
    let mut active: Vec<usize> = (0..pos_samples.len()).collect();
    let mut cascade = Cascade { window: config.window, label, stages: Vec::new() };
    let mut reports: Vec<StageReport> = Vec::new();

    while cascade.stages.len() < config.max_stages {
        let stage_no = cascade.stages.len() + 1;
        if active.len() < 10 {
            return Err(Error::TrainingCollapse {
                stage: stage_no,
                reason: format!("only {} positives survive attrition", active.len()),
            });
        }

        let quota = active.len();
        let max_attempts = quota.saturating_mul(MINING_ATTEMPT_FACTOR);
        let mut negatives: Vec<TrainingSample> = Vec::with_capacity(quota);
        let mut attempts = 0usize;
        while negatives.len() < quota && attempts < max_attempts {
            let Some(img) = pool.draw() else { break };
            attempts += 1;
            if img.width() != base || img.height() != base {
                return Err(Error::Input(format!(
                    "negative pool produced a {}x{} window, expected {base}x{base}",
                    img.width(),
                    img.height()
                )));
            }
            let sample = TrainingSample::from_window(&img);
            if cascade.accepts_sample(&sample) {
                negatives.push(sample);
            }
        }
        if negatives.len() < quota {
            if cascade.stages.is_empty() {
                return Err(Error::DegenerateData(format!(
                    "negative pool exhausted before the first stage ({} of {quota} windows)",
                    negatives.len()
                )));
            }
            log::info!(
                "stage {stage_no}: mining found {} of {quota} surviving negatives; stopping",
                negatives.len()
            );
            break;
        }

        let survivors: Vec<TrainingSample> = active.iter().map(|&i| pos_samples[i].clone()).collect();
        let outcome = train_stage(&survivors, &negatives, &features, config)?;
        log::info!(
            "stage {stage_no}: {} stumps, detection {:.4}, fp {:.4}{}",
            outcome.stage.stumps.len(),
            outcome.detection_rate,
            outcome.false_positive_rate,
            if outcome.hit_stump_budget { " (stump budget hit)" } else { "" }
        );
        active.retain(|&i| outcome.stage.evaluate_sample(&pos_samples[i]).0);
        reports.push(StageReport {
            stumps: outcome.stage.stumps.len(),
            detection_rate: outcome.detection_rate,
            false_positive_rate: outcome.false_positive_rate,
            hit_stump_budget: outcome.hit_stump_budget,
        });
        cascade.stages.push(outcome.stage);
    }

    Ok((cascade, reports))
}

const MODEL_MAGIC: &str = "HAARPILOT-CASCADE";
const MODEL_VERSION: u32 = 1;

/// Serialize a cascade in the versioned text model format. Reals use
/// shortest-round-trip scientific notation, so re-serialization after a load
/// is byte-identical.
pub fn cascade_to_string(c: &Cascade) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
    let _ = writeln!(out, "window {}", c.window.base);
    let _ = writeln!(out, "label {}", c.label);
    let _ = writeln!(out, "stages {}", c.stages.len());
    for (k, stage) in c.stages.iter().enumerate() {
        let _ = writeln!(
            out,
            "stage {} threshold {:e} stumps {}",
            k + 1,
            stage.threshold,
            stage.stumps.len()
        );
        for s in &stage.stumps {
            let _ = writeln!(
                out,
                "stump {} {} {} {} {} {:e} {} {:e}",
                s.feature.kind.code(),
                s.feature.x,
                s.feature.y,
                s.feature.w,
                s.feature.h,
                s.threshold,
                s.polarity,
                s.alpha
            );
        }
    }
    out
}

pub fn save_cascade(c: &Cascade, path: &Path) -> Result<()> {
    if c.stages.is_empty() {
        return Err(Error::Input("refusing to save a cascade with no stages".into()));
    }
    fs::write(path, cascade_to_string(c)).map_err(|e| Error::io(path, e))
}

struct ModelLines<'a> {
    lines: std::str::Lines<'a>,
    current: usize,
}

impl<'a> ModelLines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        self.current += 1;
        self.lines
            .next()
            .ok_or(Error::ParseLine { line: self.current, msg: "unexpected end of file".into() })
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::ParseLine { line: self.current, msg: msg.into() }
    }
}

fn parse_field<T: std::str::FromStr>(lines: &ModelLines<'_>, token: &str, what: &str) -> Result<T> {
    token.parse().map_err(|_| lines.err(format!("invalid {what}: {token:?}")))
}

/// Parse a model from text. Errors carry 1-based line numbers; no partial
/// model is ever returned.
pub fn cascade_from_str(text: &str) -> Result<Cascade> {
    let mut lines = ModelLines { lines: text.lines(), current: 0 };

    let header = lines.next_line()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MODEL_MAGIC) {
        return Err(lines.err(format!("expected {MODEL_MAGIC} header")));
    }
    let version: u32 = match parts.next() {
        Some(v) => parse_field(&lines, v, "version")?,
        None => return Err(lines.err("missing version")),
    };
    if version != MODEL_VERSION {
        return Err(Error::Version(version.to_string()));
    }

    let window_line = lines.next_line()?;
    let base: u32 = match window_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["window", b] => parse_field(&lines, b, "window size")?,
        _ => return Err(lines.err("expected `window <N>`")),
    };
    if base < 4 {
        return Err(lines.err(format!("window base {base} must be at least 4")));
    }
    let window = WindowSpec::new(base);

    let label_line = lines.next_line()?;
    let label: GestureLabel = match label_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["label", l] => l.parse().map_err(|_| lines.err(format!("unknown label {l:?}")))?,
        _ => return Err(lines.err("expected `label <gesture>`")),
    };
    if label == GestureLabel::None {
        return Err(lines.err("cascade label must be a gesture, not none"));
    }

    let stages_line = lines.next_line()?;
    let n_stages: usize = match stages_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["stages", s] => parse_field(&lines, s, "stage count")?,
        _ => return Err(lines.err("expected `stages <S>`")),
    };
    if n_stages == 0 {
        return Err(lines.err("a trained model needs at least one stage"));
    }

    let index_of: HashMap<HaarFeature, usize> = enumerate_features(window)
        .into_iter()
        .enumerate()
        .map(|(i, f)| (f, i))
        .collect();

    let mut stages = Vec::with_capacity(n_stages);
    for expect_k in 1..=n_stages {
        let line = lines.next_line()?;
        let (k, threshold, n_stumps): (usize, f64, usize) =
            match line.split_whitespace().collect::<Vec<_>>()[..] {
                ["stage", k, "threshold", t, "stumps", m] => (
                    parse_field(&lines, k, "stage index")?,
                    parse_field(&lines, t, "stage threshold")?,
                    parse_field(&lines, m, "stump count")?,
                ),
                _ => return Err(lines.err("expected `stage <k> threshold <t> stumps <m>`")),
            };
        if k != expect_k {
            return Err(lines.err(format!("stage index {k}, expected {expect_k}")));
        }
        if !threshold.is_finite() {
            return Err(lines.err("stage threshold must be finite"));
        }
        if n_stumps == 0 {
            return Err(lines.err("a stage needs at least one stump"));
        }
        let mut stumps = Vec::with_capacity(n_stumps);
        for _ in 0..n_stumps {
            let line = lines.next_line()?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let [_, code, x, y, w, h, thr, pol, alpha] = toks[..] else {
                return Err(lines.err("expected `stump <kind> <x> <y> <w> <h> <threshold> <polarity> <alpha>`"));
            };
            if toks[0] != "stump" {
                return Err(lines.err("expected a stump line"));
            }
            let kind = HaarKind::from_code(parse_field(&lines, code, "feature kind")?)
                .ok_or_else(|| lines.err(format!("unknown feature kind {code}")))?;
            let feature = HaarFeature {
                kind,
                x: parse_field(&lines, x, "feature x")?,
                y: parse_field(&lines, y, "feature y")?,
                w: parse_field(&lines, w, "feature w")?,
                h: parse_field(&lines, h, "feature h")?,
            };
            let feature_index = *index_of
                .get(&feature)
                .ok_or_else(|| lines.err(format!("feature {feature:?} does not fit a {base}x{base} window")))?;
            let threshold: f64 = parse_field(&lines, thr, "stump threshold")?;
            let polarity: i8 = match pol {
                "1" => 1,
                "-1" => -1,
                other => return Err(lines.err(format!("polarity {other:?} must be 1 or -1"))),
            };
            let alpha: f64 = parse_field(&lines, alpha, "alpha")?;
            if !threshold.is_finite() || !alpha.is_finite() || alpha <= 0.0 {
                return Err(lines.err("stump threshold must be finite and alpha positive"));
            }
            stumps.push(Stump { feature_index, feature, threshold, polarity, alpha });
        }
        stages.push(Stage { stumps, threshold });
    }
    if let Some(extra) = lines.lines.find(|l| !l.trim().is_empty()) {
        return Err(Error::ParseLine {
            line: lines.current + 1,
            msg: format!("trailing content after last stage: {extra:?}"),
        });
    }
    Ok(Cascade { window, label, stages })
}

pub fn load_cascade(path: &Path) -> Result<Cascade> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cascade_from_str(&text)
}
