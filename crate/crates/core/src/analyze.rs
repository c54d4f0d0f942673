//! Sentence-level sentiment regressions and the rating numeracy probe.
//!
//! A document's sentences are scored individually; six summary statistics
//! of those scores (last, first, mean, max, min, sentence count) are
//! standardized and used as inputs to an L1-regularized logistic regression,
//! so each coefficient reads as the effect of a one standard deviation
//! change in that statistic.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{sigmoid, Classifier};
use crate::corpus::Document;
use crate::ensemble::log_loss;
use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 6] = ["last", "first", "avg", "max", "min", "len"];

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "no", "vol", "mt", "ft", "inc",
    "ltd", "co", "approx", "dept", "fig", "cf", "al",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201D}' | '\u{2019}')
}

/// Length of the whitespace and `<br />` run at the start of `s`.
fn gap_len(s: &str) -> usize {
    let mut i = 0;
    loop {
        let rest = &s[i..];
        if let Some(c) = rest.chars().next().filter(|c| c.is_whitespace()) {
            i += c.len_utf8();
        } else if let Some(tag) = ["<br />", "<br/>", "<br>"].iter().find(|t| rest.starts_with(**t)) {
            i += tag.len();
        } else {
            return i;
        }
    }
}

fn guarded(word_before: &str) -> bool {
    let word = word_before
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let single_initial = word.chars().count() == 1 && word_before.ends_with(|c: char| c.is_uppercase());
    single_initial || ABBREVIATIONS.contains(&word.as_str())
}

/// Splits text after `.`, `!` or `?` runs (plus closing quotes/brackets) that
/// are followed by whitespace or `<br />` tags. A single period after a known
/// abbreviation or an initial is not a boundary. Text without boundaries is
/// returned whole; blank text gives no sentences.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !is_terminal(c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        let mut run = 1;
        while let Some(&(j, d)) = chars.peek() {
            if is_terminal(d) {
                run += 1;
            } else if !is_closer(d) {
                break;
            }
            end = j + d.len_utf8();
            chars.next();
        }
        let gap = gap_len(&text[end..]);
        if gap == 0 || end + gap >= text.len() {
            continue;
        }
        if c == '.' && run == 1 {
            let word_start = text[..i].rfind(char::is_whitespace).map_or(0, |p| p + 1);
            if guarded(&text[word_start..i]) {
                continue;
            }
        }
        let boundary = end + gap;
        let sentence = text[start..boundary].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        start = boundary;
        while chars.peek().is_some_and(|&(j, _)| j < boundary) {
            chars.next();
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Summary statistics of a document's per-sentence scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceFeatures {
    pub last: f64,
    pub first: f64,
    pub avg: f64,
    pub max: f64,
    pub min: f64,
    pub len: f64,
}

impl SentenceFeatures {
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        let (Some(&first), Some(&last)) = (scores.first(), scores.last()) else {
            return Err(Error::EmptyInput("document has no sentences".into()));
        };
        Ok(SentenceFeatures {
            last,
            first,
            avg: scores.iter().sum::<f64>() / scores.len() as f64,
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            len: scores.len() as f64,
        })
    }

    /// Values in [`FEATURE_NAMES`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.last, self.first, self.avg, self.max, self.min, self.len]
    }
}

pub fn sentence_features(doc: &Document, model: &dyn Classifier) -> Result<SentenceFeatures> {
    let scores: Vec<f64> = split_sentences(&doc.text)
        .iter()
        .map(|s| model.predict_proba(s))
        .collect();
    SentenceFeatures::from_scores(&scores).map_err(|_| Error::EmptyInput(format!("document `{}` has no text", doc.id)))
}

pub fn sentence_feature_rows(docs: &[&Document], model: &dyn Classifier) -> Result<Vec<SentenceFeatures>> {
    docs.par_iter().map(|d| sentence_features(d, model)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub rows: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Population standard deviations; zero for constant columns, which are
    /// mapped to all zeros.
    pub stds: Vec<f64>,
}

pub fn standardize(rows: &[Vec<f64>]) -> Result<Standardized> {
    let Some(width) = rows.first().map(Vec::len) else {
        return Err(Error::EmptyInput("no rows to standardize".into()));
    };
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidArgument("rows have different widths".into()));
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..width).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let stds: Vec<f64> = (0..width)
        .map(|j| (rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let rows = rows
        .iter()
        .map(|r| {
            (0..width)
                .map(|j| if stds[j] > 0.0 { (r[j] - means[j]) / stds[j] } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(Standardized { rows, means, stds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    TrueLabel,
    ModelPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Fit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Outer (Newton) iterations used.
    pub iterations: usize,
}

const MAX_NEWTON: usize = 100;
const MAX_INNER_SWEEPS: usize = 10_000;
const TOLERANCE: f64 = 1e-12;
/// Lower bound on the IRLS weights `p(1 - p)`.
const MIN_WEIGHT: f64 = 1e-5;

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_design(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidArgument("need one target per row and at least one row".into()));
    }
    let width = x[0].len();
    if x.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidArgument("rows have different widths".into()));
    }
    let positives = y.iter().filter(|&&t| t).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass {
            positives,
            negatives: y.len() - positives,
        });
    }
    Ok(width)
}

/// Mean logistic loss plus the L1 penalty, for linear predictors `eta`.
fn objective(eta: &[f64], targets: &[f64], w: &[f64], l1_strength: f64) -> f64 {
    let loss = eta
        .iter()
        .zip(targets)
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / eta.len() as f64;
    loss + l1_strength * w.iter().map(|c| c.abs()).sum::<f64>()
}

/// Minimizes mean logistic loss plus `l1_strength * sum(|w|)` by proximal
/// Newton iterations.
///
/// Each iteration solves the weighted least-squares model of the loss around
/// the current fit by coordinate descent with soft-thresholding, so
/// irrelevant coefficients land on exact zeros, then backtracks along the
/// step until the objective does not increase. The intercept is unpenalized.
/// A penalty at or above [`l1_max`] returns the intercept-only model.
pub fn fit_l1_logistic(x: &[Vec<f64>], y: &[bool], l1_strength: f64) -> Result<L1Fit> {
    check_design(x, y)?;
    if !(l1_strength >= 0.0) {
        return Err(Error::InvalidArgument(format!("l1 strength {l1_strength} is negative")));
    }
    let problem = L1Problem::new(x, y);
    if l1_strength >= l1_max(x, y)? {
        return Ok(problem.null_fit());
    }
    Ok(problem.fit(l1_strength, problem.null_fit()))
}

/// Column-major copy of a design with 0/1 targets.
struct L1Problem {
    columns: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl L1Problem {
    fn new(x: &[Vec<f64>], y: &[bool]) -> Self {
        let width = x[0].len();
        L1Problem {
            columns: (0..width).map(|j| x.iter().map(|r| r[j]).collect()).collect(),
            targets: y.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn null_fit(&self) -> L1Fit {
        let base = self.targets.iter().sum::<f64>() / self.targets.len() as f64;
        L1Fit {
            coefficients: vec![0.0; self.columns.len()],
            intercept: (base / (1.0 - base)).ln(),
            iterations: 0,
        }
    }

    fn linear_predictor(&self, w: &[f64], intercept: f64) -> Vec<f64> {
        let mut eta = vec![intercept; self.targets.len()];
        for (column, &wj) in self.columns.iter().zip(w) {
            if wj != 0.0 {
                eta.iter_mut().zip(column).for_each(|(e, v)| *e += wj * v);
            }
        }
        eta
    }

    /// Proximal Newton from `start`.
    fn fit(&self, l1_strength: f64, start: L1Fit) -> L1Fit {
        let n = self.targets.len() as f64;
        let width = self.columns.len();
        let (mut w, mut intercept) = (start.coefficients, start.intercept);
        let mut eta = self.linear_predictor(&w, intercept);
        let mut current = objective(&eta, &self.targets, &w, l1_strength);

        let mut iterations = 0;
        while iterations < MAX_NEWTON {
            iterations += 1;
            // `residual[i]` is the working residual scaled by its weight,
            // `t - p - h * shift`, kept current as coordinates move.
            let p: Vec<f64> = eta.iter().map(|&z| sigmoid(z)).collect();
            let weights: Vec<f64> = p.iter().map(|&q| (q * (1.0 - q)).max(MIN_WEIGHT)).collect();
            let mut residual: Vec<f64> = self.targets.iter().zip(&p).map(|(t, q)| t - q).collect();
            let curvature: Vec<f64> = self
                .columns
                .iter()
                .map(|c| c.iter().zip(&weights).map(|(v, h)| h * v * v).sum::<f64>() / n)
                .collect();
            let weight_sum: f64 = weights.iter().sum();

            let (mut new_w, mut new_b) = (w.clone(), intercept);
            let mut shift = vec![0.0; self.targets.len()];
            let move_coordinate = |j: usize, new_w: &mut [f64], shift: &mut [f64], residual: &mut [f64]| -> f64 {
                if curvature[j] == 0.0 {
                    return 0.0;
                }
                let column = &self.columns[j];
                let grad = column.iter().zip(residual.iter()).map(|(v, r)| v * r).sum::<f64>() / n;
                let updated = soft_threshold(grad + curvature[j] * new_w[j], l1_strength) / curvature[j];
                let delta = updated - new_w[j];
                if delta != 0.0 {
                    for ((s, r), (v, h)) in shift.iter_mut().zip(residual.iter_mut()).zip(column.iter().zip(&weights)) {
                        *s += delta * v;
                        *r -= h * delta * v;
                    }
                    new_w[j] = updated;
                }
                delta.abs()
            };
            let mut full_sweep = true;
            for _ in 0..MAX_INNER_SWEEPS {
                let mut max_change: f64 = 0.0;
                for j in 0..width {
                    if full_sweep || new_w[j] != 0.0 {
                        max_change = max_change.max(move_coordinate(j, &mut new_w, &mut shift, &mut residual));
                    }
                }
                let delta_b = residual.iter().sum::<f64>() / weight_sum;
                if delta_b != 0.0 {
                    for ((s, r), h) in shift.iter_mut().zip(residual.iter_mut()).zip(&weights) {
                        *s += delta_b;
                        *r -= h * delta_b;
                    }
                    new_b += delta_b;
                    max_change = max_change.max(delta_b.abs());
                }
                // Converged on the active set: confirm with a full sweep.
                if max_change < TOLERANCE {
                    if full_sweep {
                        break;
                    }
                    full_sweep = true;
                } else {
                    full_sweep = false;
                }
            }

            // Backtrack toward the current point until the objective does not grow.
            let mut step = 1.0;
            let accepted = loop {
                let trial_w: Vec<f64> = w.iter().zip(&new_w).map(|(a, b)| a + step * (b - a)).collect();
                let trial_b = intercept + step * (new_b - intercept);
                let trial_eta: Vec<f64> = eta.iter().zip(&shift).map(|(e, s)| e + step * s).collect();
                let value = objective(&trial_eta, &self.targets, &trial_w, l1_strength);
                if value <= current {
                    break Some((trial_w, trial_b, trial_eta, value));
                }
                step *= 0.5;
                if step < 1e-10 {
                    break None;
                }
            };
            let Some((trial_w, trial_b, trial_eta, value)) = accepted else {
                break;
            };
            let change = w
                .iter()
                .zip(&trial_w)
                .map(|(a, b)| (a - b).abs())
                .fold((intercept - trial_b).abs(), f64::max);
            w = trial_w;
            intercept = trial_b;
            eta = trial_eta;
            current = value;
            if change < TOLERANCE {
                break;
            }
        }
        L1Fit {
            coefficients: w,
            intercept,
            iterations,
        }
    }
}

/// Smallest penalty at which every coefficient is zero.
pub fn l1_max(x: &[Vec<f64>], y: &[bool]) -> Result<f64> {
    let width = check_design(x, y)?;
    let n = x.len() as f64;
    let base = y.iter().filter(|&&t| t).count() as f64 / n;
    Ok((0..width)
        .map(|j| {
            (x.iter()
                .zip(y)
                .map(|(r, &t)| (base - if t { 1.0 } else { 0.0 }) * r[j])
                .sum::<f64>()
                / n)
                .abs()
        })
        .fold(0.0, f64::max))
}

pub fn mean_log_loss(fit: &L1Fit, x: &[Vec<f64>], y: &[bool]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(r, &t)| {
            let z = fit.intercept + r.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum::<f64>();
            log_loss(sigmoid(z), t)
        })
        .sum::<f64>()
        / x.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub grid: Vec<f64>,
    pub mean_loss: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Penalty with the lowest mean held-out loss.
    pub best: f64,
    /// Largest penalty within one standard error of the best; the default choice.
    pub one_se: f64,
}

pub const CV_FOLDS: usize = 5;
const CV_GRID_POINTS: usize = 30;
const CV_GRID_RATIO: f64 = 1e-3;

/// K-fold cross-validated log-loss over a geometric penalty grid.
///
/// Row `i` belongs to fold `i % folds`.
pub fn cross_validate_l1(x: &[Vec<f64>], y: &[bool], folds: usize) -> Result<CrossValidation> {
    check_design(x, y)?;
    if folds < 2 || folds > x.len() {
        return Err(Error::InvalidArgument(format!("cannot make {folds} folds from {} rows", x.len())));
    }
    let top = l1_max(x, y)?;
    let grid: Vec<f64> = (0..CV_GRID_POINTS)
        .map(|k| top * CV_GRID_RATIO.powf(k as f64 / (CV_GRID_POINTS - 1) as f64))
        .collect();
    let splits: Vec<(Vec<Vec<f64>>, Vec<bool>, Vec<Vec<f64>>, Vec<bool>)> = (0..folds)
        .map(|f| {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, (r, &t)) in x.iter().zip(y).enumerate() {
                if i % folds == f {
                    vx.push(r.clone());
                    vy.push(t);
                } else {
                    tx.push(r.clone());
                    ty.push(t);
                }
            }
            (tx, ty, vx, vy)
        })
        .collect();
    // One warm-started path per fold, from the largest penalty down.
    let by_fold: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|(tx, ty, vx, vy)| {
            check_design(tx, ty)?;
            let problem = L1Problem::new(tx, ty);
            let fold_top = l1_max(tx, ty)?;
            let mut fit = problem.null_fit();
            Ok(grid
                .iter()
                .map(|&l1| {
                    fit = if l1 >= fold_top { problem.null_fit() } else { problem.fit(l1, fit.clone()) };
                    mean_log_loss(&fit, vx, vy)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let losses: Vec<Vec<f64>> = (0..grid.len()).map(|g| by_fold.iter().map(|f| f[g]).collect()).collect();
    let k = folds as f64;
    let mean_loss: Vec<f64> = losses.iter().map(|l| l.iter().sum::<f64>() / k).collect();
    let std_error: Vec<f64> = losses
        .iter()
        .zip(&mean_loss)
        .map(|(l, m)| (l.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt())
        .collect();
    let best_index = (0..grid.len())
        .min_by(|&a, &b| mean_loss[a].total_cmp(&mean_loss[b]))
        .expect("nonempty grid");
    let threshold = mean_loss[best_index] + std_error[best_index];
    let one_se = grid
        .iter()
        .zip(&mean_loss)
        .find(|(_, &m)| m <= threshold)
        .map(|(&l, _)| l)
        .expect("best index satisfies the threshold");
    Ok(CrossValidation {
        best: grid[best_index],
        one_se,
        grid,
        mean_loss,
        std_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub coefficients: BTreeMap<String, f64>,
    pub intercept: f64,
    pub l1_strength: f64,
    pub target_kind: TargetKind,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.get(name).copied()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Standardizes raw sentence features and fits the L1 regression.
///
/// Without an explicit penalty, the one-standard-error choice from 5-fold
/// cross-validation is used.
pub fn regress_sentence_features(
    features: &[SentenceFeatures],
    targets: &[bool],
    target_kind: TargetKind,
    l1_strength: Option<f64>,
) -> Result<RegressionFit> {
    let raw: Vec<Vec<f64>> = features.iter().map(SentenceFeatures::to_vec).collect();
    let standardized = standardize(&raw)?;
    let l1 = match l1_strength {
        Some(l1) => l1,
        None => cross_validate_l1(&standardized.rows, targets, CV_FOLDS)?.one_se,
    };
    let fit = fit_l1_logistic(&standardized.rows, targets, l1)?;
    Ok(RegressionFit {
        coefficients: FEATURE_NAMES
            .iter()
            .zip(&fit.coefficients)
            .map(|(n, c)| (n.to_string(), *c))
            .collect(),
        intercept: fit.intercept,
        l1_strength: l1,
        target_kind,
    })
}

pub const RATING_SLOT: &str = "{rating}";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    /// The probed value, e.g. `6.5`.
    pub rating: String,
    pub p_positive: f64,
}

/// Ratings probed, ascending: 0 through 6, 6.5, then 7 through 10.
pub fn probe_ratings() -> Vec<String> {
    let mut ratings: Vec<String> = (0..=6).map(|x| x.to_string()).collect();
    ratings.push("6.5".into());
    ratings.extend((7..=10).map(|x| x.to_string()));
    ratings
}

/// Scores `template` with its `{rating}` slot replaced by `Rating x/10`.
pub fn numeracy_probe(model: &dyn Classifier, template: &str) -> Result<Vec<ProbeRow>> {
    let slots = template.matches(RATING_SLOT).count();
    if slots != 1 {
        return Err(Error::InvalidTemplate(format!(
            "expected exactly one {RATING_SLOT} slot, found {slots}"
        )));
    }
    Ok(probe_ratings()
        .into_iter()
        .map(|x| {
            let p_positive = model.predict_proba(&template.replace(RATING_SLOT, &format!("Rating {x}/10")));
            ProbeRow { rating: x, p_positive }
        })
        .collect())
}

pub fn write_probe_csv(rows: &[ProbeRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    writer.write_record(["rating", "p_positive"])?;
    for row in rows {
        writer.write_record([row.rating.clone(), row.p_positive.to_string()])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
