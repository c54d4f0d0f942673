//! Test-time augmentation, simplex-weighted ensembles and calibration
//! diagnostics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{synthetic_id, AugTechnique, AugmentFailure, AugmentReport};
use crate::classify::PredictionTable;
use crate::corpus::{Corpus, Document, Origin, Split};
use crate::error::{Error, Result};
use crate::translate::{backtranslate_documents, Backtranslator};

pub const ENSEMBLE_SOURCE: &str = "ensemble";

const SIMPLEX_TOLERANCE: f64 = 1e-9;
const LOSS_TIE: f64 = 1e-12;
const MAX_SWEEPS: usize = 500;
const SWEEP_TOLERANCE: f64 = 1e-10;
const PROBABILITY_FLOOR: f64 = 1e-15;

/// Nonnegative weights over prediction sources that sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    weights: Vec<(String, f64)>,
}

impl SimplexWeights {
    pub fn new<S: Into<String>>(weights: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let weights: Vec<(String, f64)> = weights.into_iter().map(|(s, w)| (s.into(), w)).collect();
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no sources".into()));
        }
        if let Some((s, w)) = weights.iter().find(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeights(format!("weight {w} for `{s}` is not a nonnegative number")));
        }
        let sum: f64 = weights.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        let unique: BTreeSet<&str> = weights.iter().map(|(s, _)| s.as_str()).collect();
        if unique.len() != weights.len() {
            return Err(Error::InvalidWeights("duplicate source".into()));
        }
        Ok(SimplexWeights { weights })
    }

    /// All weight on `source`.
    pub fn vertex(source: &str) -> Self {
        SimplexWeights {
            weights: vec![(source.to_string(), 1.0)],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(s, w)| (s.as_str(), *w))
    }

    pub fn get(&self, source: &str) -> Option<f64> {
        self.iter().find(|(s, _)| *s == source).map(|(_, w)| w)
    }

    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|(_, w)| *w > 0.0).count()
    }
}

/// Weighted average of the sources in `weights` for every id in `doc_ids`.
pub fn combine<'a>(
    preds: &PredictionTable,
    weights: &SimplexWeights,
    doc_ids: impl IntoIterator<Item = &'a str>,
) -> Result<PredictionTable> {
    let doc_ids: BTreeSet<&str> = doc_ids.into_iter().collect();
    let mut gaps = Vec::new();
    let mut combined = PredictionTable::new();
    for doc in &doc_ids {
        let mut p = 0.0;
        for (source, w) in weights.iter() {
            match preds.get(doc, source) {
                Some(ps) => p += w * ps,
                None => gaps.push((source.to_string(), doc.to_string())),
            }
        }
        if gaps.is_empty() {
            combined.insert(*doc, ENSEMBLE_SOURCE, p.clamp(0.0, 1.0))?;
        }
    }
    if !gaps.is_empty() {
        return Err(Error::PredictionGaps(gaps));
    }
    Ok(combined)
}

pub fn log_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean log-loss of one source over the labeled documents it covers.
pub fn source_log_loss(preds: &PredictionTable, source: &str, labels: &HashMap<String, bool>) -> Result<f64> {
    let rows = preds.source(source).ok_or_else(|| Error::UnknownSource(source.to_string()))?;
    let losses: Vec<f64> = rows
        .iter()
        .filter_map(|(doc, p)| labels.get(doc).map(|&l| log_loss(*p, l)))
        .collect();
    if losses.is_empty() {
        return Err(Error::EmptyInput(format!("source `{source}` covers no labeled documents")));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub weights: SimplexWeights,
    /// Mean log-loss of the combination on the fitting documents.
    pub loss: f64,
    pub documents: usize,
}

struct FitProblem {
    /// `columns[s][d]` is source `s`'s prediction for document `d`.
    columns: Vec<Vec<f64>>,
    targets: Vec<bool>,
}

impl FitProblem {
    fn mix(&self, w: &[f64]) -> Vec<f64> {
        (0..self.targets.len())
            .map(|d| self.columns.iter().zip(w).map(|(c, wi)| wi * c[d]).sum())
            .collect()
    }

    /// Same sums, in the same order, as `combine`.
    fn mix_like_combine(&self, weights: &SimplexWeights, sources: &[&str]) -> Vec<f64> {
        let terms: Vec<(usize, f64)> = weights
            .iter()
            .map(|(s, w)| (sources.iter().position(|x| *x == s).expect("weights cover the sources"), w))
            .collect();
        (0..self.targets.len())
            .map(|d| {
                let mut p = 0.0;
                for &(i, w) in &terms {
                    p += w * self.columns[i][d];
                }
                p.clamp(0.0, 1.0)
            })
            .collect()
    }

    fn loss_of(&self, mixed: &[f64]) -> f64 {
        mixed.iter().zip(&self.targets).map(|(&q, &y)| log_loss(q, y)).sum::<f64>() / mixed.len() as f64
    }

    /// Transfers mass between pairs of sources until a sweep stops improving.
    ///
    /// Each step is a safeguarded Newton step on the amount moved from `j`
    /// to `i`, clipped to the segment that keeps both weights nonnegative,
    /// so every iterate lies on the simplex.
    fn descend(&self, mut w: Vec<f64>) -> Vec<f64> {
        let k = w.len();
        let mut mixed = self.mix(&w);
        let mut loss = self.loss_of(&mixed);
        for _ in 0..MAX_SWEEPS {
            let sweep_start = loss;
            for i in 0..k {
                for j in 0..k {
                    if i == j || w[j] <= 0.0 {
                        continue;
                    }
                    let diff: Vec<f64> = self.columns[i].iter().zip(&self.columns[j]).map(|(a, b)| a - b).collect();
                    let (mut grad, mut curv) = (0.0, 0.0);
                    for ((&q, &y), &dd) in mixed.iter().zip(&self.targets).zip(&diff) {
                        let q = q.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
                        let (d1, d2) = if y { (-1.0 / q, 1.0 / (q * q)) } else { (1.0 / (1.0 - q), 1.0 / ((1.0 - q) * (1.0 - q))) };
                        grad += d1 * dd;
                        curv += d2 * dd * dd;
                    }
                    if grad >= 0.0 || curv <= 0.0 {
                        continue;
                    }
                    let mut step = (-grad / curv).min(w[j]);
                    for _ in 0..60 {
                        let trial: Vec<f64> = mixed.iter().zip(&diff).map(|(q, dd)| q + step * dd).collect();
                        let trial_loss = self.loss_of(&trial);
                        if trial_loss < loss {
                            w[i] += step;
                            w[j] -= step;
                            if w[j] < 1e-15 {
                                w[i] += w[j];
                                w[j] = 0.0;
                            }
                            mixed = trial;
                            loss = trial_loss;
                            break;
                        }
                        step *= 0.5;
                    }
                }
            }
            if sweep_start - loss < SWEEP_TOLERANCE {
                break;
            }
        }
        w
    }
}

/// Fits simplex weights minimizing mean log-loss on the labeled documents
/// covered by every source.
///
/// Starts from the uniform point, then compares the descent result against
/// every single-source vertex; the returned loss is never above the best
/// single source. Among candidates within `1e-12` loss, fewer nonzero weights
/// win, then earlier sources in `sources` order.
pub fn fit_weights(preds: &PredictionTable, labels: &HashMap<String, bool>, sources: &[&str]) -> Result<WeightFit> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("weight fitting needs at least one source".into()));
    }
    let tables = sources
        .iter()
        .map(|s| preds.source(s).ok_or_else(|| Error::UnknownSource(s.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let docs: Vec<&String> = tables[0]
        .keys()
        .filter(|d| labels.contains_key(*d) && tables.iter().all(|t| t.contains_key(*d)))
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyInput("no labeled documents are covered by every source".into()));
    }
    let problem = FitProblem {
        columns: tables.iter().map(|t| docs.iter().map(|d| t[*d]).collect()).collect(),
        targets: docs.iter().map(|d| labels[*d]).collect(),
    };

    let k = sources.len();
    let mut candidates: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut v = vec![0.0; k];
            v[i] = 1.0;
            v
        })
        .collect();
    candidates.push(problem.descend(vec![1.0 / k as f64; k]));

    // Candidates are normalized first and scored with the arithmetic of
    // `combine`, so the reported loss is the one a caller will measure.
    let scored = candidates
        .into_iter()
        .map(|w| {
            let total: f64 = w.iter().sum();
            let weights = SimplexWeights::new(sources.iter().zip(&w).map(|(s, wi)| (*s, wi / total)))?;
            let loss = problem.loss_of(&problem.mix_like_combine(&weights, sources));
            Ok((loss, weights))
        })
        .collect::<Result<Vec<_>>>()?;
    let best_loss = scored.iter().map(|(l, _)| *l).fold(f64::INFINITY, f64::min);
    let best_vertex = scored[..k].iter().map(|(l, _)| *l).fold(f64::INFINITY, f64::min);
    let support = |w: &SimplexWeights| -> Vec<usize> {
        (0..k).filter(|&i| w.get(sources[i]).is_some_and(|x| x > 0.0)).collect()
    };
    let (loss, weights) = scored
        .into_iter()
        .filter(|(l, _)| *l <= best_loss + LOSS_TIE && *l <= best_vertex)
        .min_by(|(_, a), (_, b)| {
            let (sa, sb) = (support(a), support(b));
            sa.len().cmp(&sb.len()).then_with(|| sa.cmp(&sb))
        })
        .expect("the best vertex always qualifies");

    Ok(WeightFit {
        weights,
        loss,
        documents: docs.len(),
    })
}

/// On-disk form of fitted weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub weights: BTreeMap<String, f64>,
    pub objective: String,
    pub fitting_set: String,
    pub loss: f64,
}

impl WeightsFile {
    pub fn from_fit(fit: &WeightFit, fitting_set: impl Into<String>) -> Self {
        WeightsFile {
            weights: fit.weights.iter().map(|(s, w)| (s.to_string(), w)).collect(),
            objective: "logloss".into(),
            fitting_set: fitting_set.into(),
            loss: fit.loss,
        }
    }

    pub fn to_weights(&self) -> Result<SimplexWeights> {
        SimplexWeights::new(self.weights.iter().map(|(s, w)| (s.clone(), *w)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub source: String,
    pub n: usize,
    /// Share of predictions below 0.1 or above 0.9.
    pub frac_confident: f64,
    /// Population standard deviation of the predictions.
    pub pred_std: f64,
    /// Accuracy at threshold 0.5 over the labeled documents, if any.
    pub accuracy: Option<f64>,
}

pub fn calibration_report(
    preds: &PredictionTable,
    source: &str,
    labels: Option<&HashMap<String, bool>>,
) -> Result<CalibrationReport> {
    let rows = preds.source(source).ok_or_else(|| Error::UnknownSource(source.to_string()))?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("source `{source}` has no predictions")));
    }
    let n = rows.len() as f64;
    let confident = rows.values().filter(|&&p| !(0.1..=0.9).contains(&p)).count();
    let mean = rows.values().sum::<f64>() / n;
    let variance = rows.values().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    let accuracy = labels.and_then(|labels| {
        let judged: Vec<bool> = rows
            .iter()
            .filter_map(|(doc, &p)| labels.get(doc).map(|&l| (p > 0.5) == l))
            .collect();
        (!judged.is_empty()).then(|| judged.iter().filter(|&&c| c).count() as f64 / judged.len() as f64)
    });
    Ok(CalibrationReport {
        source: source.to_string(),
        n: rows.len(),
        frac_confident: confident as f64 / n,
        pred_std: variance.sqrt(),
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub source: String,
    pub pred_std: f64,
    pub accuracy: f64,
}

/// Spread versus accuracy for every source with labeled predictions,
/// ordered by source id.
pub fn variance_accuracy_table(preds: &PredictionTable, labels: &HashMap<String, bool>) -> Result<Vec<VarianceRow>> {
    let mut rows = Vec::new();
    for source in preds.sources() {
        let report = calibration_report(preds, source, Some(labels))?;
        if let Some(accuracy) = report.accuracy {
            rows.push(VarianceRow {
                source: report.source,
                pred_std: report.pred_std,
                accuracy,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no source has labeled predictions".into()));
    }
    Ok(rows)
}

fn is_tta_parent(doc: &Document) -> bool {
    doc.is_original() && matches!(doc.split, Split::Valid | Split::Test)
}

/// Appends one backtranslated variant per (validation/test original, language).
pub fn tta_generate(corpus: &Corpus, languages: &[String], translator: &Backtranslator) -> Result<(Corpus, AugmentReport)> {
    if languages.is_empty() {
        return Err(Error::InvalidArgument("test-time augmentation needs at least one language".into()));
    }
    let parents: Vec<&Document> = corpus.iter().filter(|d| is_tta_parent(d)).collect();
    let (records, failures) = backtranslate_documents(parents.iter().copied(), languages, translator);
    let variants: Vec<Document> = records
        .into_iter()
        .map(|r| {
            let parent = corpus.get(&r.parent_id).expect("parent from corpus");
            Document {
                id: synthetic_id(&parent.id, AugTechnique::Backtranslate, Some(&r.record.pivot_language), 0),
                text: r.record.final_text,
                label: parent.label,
                split: parent.split,
                origin: Origin::Synthetic {
                    technique: AugTechnique::Backtranslate,
                    lang: Some(r.record.pivot_language),
                    parent: parent.id.clone(),
                },
            }
        })
        .collect();
    let report = AugmentReport {
        originals: parents.len(),
        synthetics: variants.len(),
        unmodified: 0,
        failures,
    };
    Ok((corpus.extended(variants)?, report))
}

pub fn tta_source_name(lang: &str) -> String {
    format!("tta:{lang}")
}

/// Joins variant predictions back to their parents.
///
/// `raw` holds predictions of `source` for originals and variant documents.
/// The result has `source` for the validation/test originals plus one
/// `tta:<lang>` source per language, keyed by parent id. A variant without a
/// prediction (e.g. a skipped translation) falls back to the parent's own
/// prediction; the number of fallbacks is returned.
pub fn tta_sources(
    corpus: &Corpus,
    raw: &PredictionTable,
    source: &str,
    languages: &[String],
) -> Result<(PredictionTable, Vec<AugmentFailure>)> {
    let mut table = PredictionTable::new();
    let mut fallbacks = Vec::new();
    for doc in corpus.iter().filter(|d| is_tta_parent(d)) {
        let Some(base) = raw.get(&doc.id, source) else {
            continue;
        };
        table.insert(doc.id.clone(), source, base)?;
        for lang in languages {
            let variant = synthetic_id(&doc.id, AugTechnique::Backtranslate, Some(lang), 0);
            let p = raw.get(&variant, source).unwrap_or_else(|| {
                log::info!("no prediction for {variant}; using parent prediction");
                fallbacks.push(AugmentFailure {
                    doc_id: doc.id.clone(),
                    lang: Some(lang.clone()),
                    message: "variant prediction missing; parent prediction used".into(),
                });
                base
            });
            table.insert(doc.id.clone(), &tta_source_name(lang), p)?;
        }
    }
    Ok((table, fallbacks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &str, f64)]) -> PredictionTable {
        let mut t = PredictionTable::new();
        for (doc, source, p) in rows {
            t.insert(*doc, source, *p).unwrap();
        }
        t
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexWeights::new([("a", 0.5), ("b", 0.5)]).is_ok());
        assert!(SimplexWeights::new([("a", 0.7), ("b", 0.5)]).is_err());
        assert!(SimplexWeights::new([("a", 1.5), ("b", -0.5)]).is_err());
        assert!(SimplexWeights::new([("a", 0.5), ("a", 0.5)]).is_err());
    }

    #[test]
    fn combine_arithmetic_and_vertex() {
        let t = table(&[("d", "a", 0.2), ("d", "b", 0.8)]);
        let w = SimplexWeights::new([("a", 0.5), ("b", 0.5)]).unwrap();
        assert_eq!(combine(&t, &w, ["d"]).unwrap().get("d", ENSEMBLE_SOURCE), Some(0.5));
        let v = combine(&t, &SimplexWeights::vertex("b"), ["d"]).unwrap();
        assert_eq!(v.get("d", ENSEMBLE_SOURCE), Some(0.8));
    }

    #[test]
    fn combine_lists_gaps() {
        let t = table(&[("d1", "a", 0.2), ("d1", "b", 0.8), ("d2", "a", 0.3)]);
        let w = SimplexWeights::new([("a", 0.5), ("b", 0.5)]).unwrap();
        match combine(&t, &w, ["d1", "d2"]) {
            Err(Error::PredictionGaps(gaps)) => assert_eq!(gaps, [("b".to_string(), "d2".to_string())]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perfect_source_takes_the_weight() {
        let mut t = PredictionTable::new();
        let mut labels = HashMap::new();
        for i in 0..50 {
            let label = i % 3 == 0;
            let doc = format!("d{i}");
            t.insert(doc.clone(), "perfect", if label { 1.0 } else { 0.0 }).unwrap();
            t.insert(doc.clone(), "noisy", if label { 0.6 } else { 0.45 }).unwrap();
            t.insert(doc.clone(), "wrong", if label { 0.3 } else { 0.7 }).unwrap();
            labels.insert(doc, label);
        }
        let fit = fit_weights(&t, &labels, &["noisy", "perfect", "wrong"]).unwrap();
        assert!(fit.weights.get("perfect").unwrap() >= 0.99, "{:?}", fit.weights);
    }

    #[test]
    fn identical_sources_tie_break_to_first() {
        let mut t = PredictionTable::new();
        let mut labels = HashMap::new();
        for i in 0..20 {
            let doc = format!("d{i}");
            let p = 0.1 + 0.04 * i as f64;
            t.insert(doc.clone(), "x", p).unwrap();
            t.insert(doc.clone(), "y", p).unwrap();
            labels.insert(doc, i % 2 == 0);
        }
        let fit = fit_weights(&t, &labels, &["y", "x"]).unwrap();
        assert_eq!(fit.weights.get("y"), Some(1.0));
        assert_eq!(fit.weights.get("x"), Some(0.0));
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let t = table(&[("d", "a", 0.2), ("e", "b", 0.8)]);
        let labels: HashMap<String, bool> = [("d".to_string(), true), ("e".to_string(), false)].into();
        assert!(fit_weights(&t, &labels, &[]).is_err());
        let single = fit_weights(&t, &labels, &["a"]).unwrap();
        assert_eq!(single.weights, SimplexWeights::vertex("a"));
        assert_eq!(single.documents, 1);
        assert!(matches!(fit_weights(&t, &labels, &["a", "b"]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mixture_beats_vertices_when_sources_complement() {
        // each source is right on a different half of the documents
        let mut t = PredictionTable::new();
        let mut labels = HashMap::new();
        for i in 0..40 {
            let doc = format!("d{i}");
            let label = i % 2 == 0;
            let (good, bad) = if label { (0.9, 0.4) } else { (0.1, 0.6) };
            let (a, b) = if i < 20 { (good, bad) } else { (bad, good) };
            t.insert(doc.clone(), "a", a).unwrap();
            t.insert(doc.clone(), "b", b).unwrap();
            labels.insert(doc, label);
        }
        let fit = fit_weights(&t, &labels, &["a", "b"]).unwrap();
        let a = fit.weights.get("a").unwrap();
        assert!((a - 0.5).abs() < 1e-6, "{a}");
        assert!(fit.loss < source_log_loss(&t, "a", &labels).unwrap());
    }

    #[test]
    fn calibration_edge_cases() {
        let half = table(&[("a", "s", 0.5), ("b", "s", 0.5)]);
        let r = calibration_report(&half, "s", None).unwrap();
        assert_eq!((r.frac_confident, r.pred_std, r.accuracy), (0.0, 0.0, None));

        let two = table(&[("a", "s", 0.0), ("b", "s", 1.0)]);
        let labels: HashMap<String, bool> = [("a".to_string(), false), ("b".to_string(), true)].into();
        let r = calibration_report(&two, "s", Some(&labels)).unwrap();
        assert_eq!((r.frac_confident, r.pred_std, r.accuracy), (1.0, 0.5, Some(1.0)));

        assert!(calibration_report(&two, "missing", None).is_err());
    }

    #[test]
    fn variance_table_rows_match_reports() {
        let t = table(&[("a", "s2", 0.3), ("b", "s2", 0.9), ("a", "s1", 0.6), ("b", "s1", 0.2)]);
        let labels: HashMap<String, bool> = [("a".to_string(), false), ("b".to_string(), true)].into();
        let rows = variance_accuracy_table(&t, &labels).unwrap();
        assert_eq!(rows.iter().map(|r| r.source.as_str()).collect::<Vec<_>>(), ["s1", "s2"]);
        for row in rows {
            let report = calibration_report(&t, &row.source, Some(&labels)).unwrap();
            assert_eq!((row.pred_std, Some(row.accuracy)), (report.pred_std, report.accuracy));
        }
    }
}
