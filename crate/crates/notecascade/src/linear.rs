//! Second cascade layer: a binary "contains any annotation?" sentence
//! classifier. TF-IDF features over the shared tokenizer, an L2-regularized
//! class-weighted hinge-loss linear model, and recall-first threshold
//! selection.
//!
//! The TF-IDF variant is pinned: raw term counts, smoothed idf
//! `ln((1+N)/(1+df)) + 1`, then L2 normalization. The solver is full-batch
//! steepest subgradient descent with an exact line search along the descent
//! ray, which makes the objective strictly non-increasing per epoch and the
//! whole fit bit-deterministic for a fixed input order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Sentence, StageStats};
use crate::scalar::Scalar;
use crate::triage::tokenize;

/// Term index and document frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermEntry {
    pub index: u32,
    pub df: u32,
}

/// Fitted vocabulary: term -> (dense index, document frequency), plus the
/// number of fitting documents. Indices follow lexicographic term order so
/// repeated fits of the same data are identical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: BTreeMap<String, TermEntry>,
    n_docs: u64,
}

impl Vocabulary {
    /// Fit from raw document texts. Documents with no tokens still count
    /// toward `n_docs`.
    pub fn fit_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Vocabulary> {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        let mut n_docs = 0u64;
        for text in texts {
            n_docs += 1;
            let unique: BTreeSet<String> = tokenize(text).into_iter().collect();
            for term in unique {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Data("cannot fit a vocabulary on zero documents".into()));
        }
        let terms = df
            .into_iter()
            .enumerate()
            .map(|(index, (term, df))| (term, TermEntry { index: index as u32, df }))
            .collect();
        Ok(Vocabulary { terms, n_docs })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn get(&self, term: &str) -> Option<TermEntry> {
        self.terms.get(term).copied()
    }

    pub fn terms(&self) -> &BTreeMap<String, TermEntry> {
        &self.terms
    }

    /// Smoothed inverse document frequency: `ln((1+N)/(1+df)) + 1`.
    pub fn idf<S: Scalar>(&self, df: u32) -> S {
        let num = S::from_count(1 + self.n_docs as usize);
        let den = S::from_count(1 + df as usize);
        (num / den).ln() + S::one()
    }
}

/// Fit a vocabulary from labeled training sentences.
pub fn fit_vocabulary(data: &[(String, bool)]) -> Result<Vocabulary> {
    Vocabulary::fit_texts(data.iter().map(|(text, _)| text.as_str()))
}

/// A sparse vector of `(index, value)` pairs sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec<S>(pub Vec<(u32, S)>);

impl<S: Scalar> SparseVec<S> {
    pub fn l2_norm(&self) -> S {
        self.0.iter().map(|(_, v)| *v * *v).sum::<S>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[S]) -> S {
        self.0
            .iter()
            .map(|(i, v)| *v * dense[*i as usize])
            .sum()
    }

    /// Cosine similarity; zero against a zero vector.
    pub fn cosine(&self, other: &SparseVec<S>) -> S {
        let mut dot = S::zero();
        let (mut a, mut b) = (self.0.iter().peekable(), other.0.iter().peekable());
        while let (Some((ia, va)), Some((ib, vb))) = (a.peek(), b.peek()) {
            match ia.cmp(ib) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    dot += *va * *vb;
                    a.next();
                    b.next();
                }
            }
        }
        let norms = self.l2_norm() * other.l2_norm();
        if norms == S::zero() {
            S::zero()
        } else {
            dot / norms
        }
    }
}

/// TF-IDF vector for `text`: raw term count times smoothed idf, dropped for
/// out-of-vocabulary terms, then L2-normalized (a zero vector stays zero).
pub fn vectorize<S: Scalar>(text: &str, vocab: &Vocabulary) -> SparseVec<S> {
    let mut counts: BTreeMap<u32, (S, u32)> = BTreeMap::new();
    for token in tokenize(text) {
        if let Some(entry) = vocab.get(&token) {
            counts
                .entry(entry.index)
                .or_insert((S::zero(), entry.df))
                .0 += S::one();
        }
    }
    let mut components: Vec<(u32, S)> = counts
        .into_iter()
        .map(|(index, (tf, df))| (index, tf * vocab.idf::<S>(df)))
        .collect();
    let norm = components
        .iter()
        .map(|(_, v)| *v * *v)
        .sum::<S>()
        .sqrt();
    if norm > S::zero() {
        for (_, v) in &mut components {
            *v = *v / norm;
        }
    }
    SparseVec(components)
}

/// Class-balanced weights `w_c = N / (2 * n_c)`.
pub fn class_weights<S: Scalar>(pos_count: usize, neg_count: usize) -> Result<(S, S)> {
    if pos_count == 0 || neg_count == 0 {
        return Err(Error::Data(
            "both classes need at least one sample to balance weights".into(),
        ));
    }
    let total = S::from_count(pos_count + neg_count);
    let two = S::from_count(2);
    Ok((
        total / (two * S::from_count(pos_count)),
        total / (two * S::from_count(neg_count)),
    ))
}

/// Training configuration. The solver itself is deterministic; `seed` is
/// carried for interface stability and recorded in run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig<S> {
    /// Loss weight C on the hinge term.
    pub c: S,
    pub max_epochs: usize,
    /// Relative objective improvement below which training stops.
    pub tolerance: S,
    pub seed: u64,
    pub class_balanced: bool,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        TrainConfig {
            c: S::one(),
            max_epochs: 50,
            tolerance: S::from_f64_lossy(1e-4),
            seed: 0,
            class_balanced: true,
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    fn validate(&self) -> Result<()> {
        if self.c <= S::zero() || self.tolerance <= S::zero() || self.max_epochs == 0 {
            return Err(Error::Config(
                "train config requires c > 0, tolerance > 0, max_epochs >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Linear decision function over vocabulary indices; a sentence passes when
/// `weights . x + bias >= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<S> {
    pub weights: Vec<S>,
    pub bias: S,
    pub threshold: S,
}

impl<S: Scalar> LinearModel<S> {
    pub fn score(&self, v: &SparseVec<S>) -> S {
        v.dot_dense(&self.weights) + self.bias
    }

    pub fn score_text(&self, text: &str, vocab: &Vocabulary) -> S {
        self.score(&vectorize(text, vocab))
    }

    /// A model that passes every sentence regardless of content.
    pub fn permissive(vocab: &Vocabulary) -> LinearModel<S> {
        LinearModel {
            weights: vec![S::zero(); vocab.len()],
            bias: S::zero(),
            threshold: S::neg_infinity(),
        }
    }
}

/// Solver diagnostics. `objective_trace[0]` is the objective at the zero
/// model; each further entry is the value after one epoch.
#[derive(Debug, Clone)]
pub struct TrainReport<S> {
    pub epochs: usize,
    /// False when `max_epochs` ran out before the tolerance was met.
    pub converged: bool,
    pub objective: S,
    pub objective_trace: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel<S> {
    pub vocabulary: Vocabulary,
    pub model: LinearModel<S>,
    pub report: TrainReport<S>,
}

/// Class-weighted L2-regularized hinge objective:
/// `0.5*||w||^2 + sum_i c_i * max(0, 1 - y_i*(w.x_i + b))`.
pub fn hinge_objective<S: Scalar>(
    samples: &[(SparseVec<S>, S, S)], // (x, y in {-1,+1}, c_i)
    weights: &[S],
    bias: S,
) -> S {
    let reg = weights.iter().map(|w| *w * *w).sum::<S>() * S::from_f64_lossy(0.5);
    let loss = samples
        .iter()
        .map(|(x, y, c)| {
            let margin = S::one() - *y * (x.dot_dense(weights) + bias);
            if margin > S::zero() {
                *c * margin
            } else {
                S::zero()
            }
        })
        .sum::<S>();
    reg + loss
}

/// Exact minimizer of the 1D restriction of the objective along `-g`.
///
/// With `hinge(t) = max(0, m_i + t*d_i)` the derivative is piecewise linear
/// and non-decreasing, so the minimizer sits where it crosses zero; walk the
/// breakpoints accumulating the active hinge slopes.
fn exact_line_search<S: Scalar>(
    q: S,          // ||g_w||^2, quadratic coefficient
    r0: S,         // -w.g_w, linear coefficient from the regularizer
    margins: &[S], // m_i at t = 0
    dirs: &[S],    // d_i, margin change rates
    costs: &[S],   // c_i
) -> S {
    let mut events: Vec<(S, S)> = Vec::new(); // (breakpoint t, slope delta)
    let mut active_slope = S::zero();
    for i in 0..margins.len() {
        let (m, d, c) = (margins[i], dirs[i], costs[i]);
        if d == S::zero() {
            continue; // constant hinge term, no slope contribution
        }
        if m > S::zero() || (m == S::zero() && d > S::zero()) {
            active_slope += c * d;
            if d < S::zero() {
                events.push((-m / d, -c * d)); // deactivates at the crossing
            }
        } else if d > S::zero() {
            events.push((-m / d, c * d)); // activates at the crossing
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut t_prev = S::zero();
    let mut slope_const = r0 + active_slope; // J'(t) = q*t + slope_const on this piece
    let mut idx = 0;
    loop {
        let t_next = events.get(idx).map(|e| e.0).unwrap_or_else(S::infinity);
        if q > S::zero() {
            let t_star = -slope_const / q;
            if t_star <= t_prev {
                return t_prev;
            }
            if t_star < t_next {
                return t_star;
            }
        } else if slope_const >= S::zero() {
            return t_prev;
        }
        if idx >= events.len() {
            // Objective is bounded below, so the slope must turn non-negative
            // at some breakpoint; reaching here means q == 0 past the last
            // event with negative slope, which the bound rules out.
            return t_prev;
        }
        slope_const += events[idx].1;
        t_prev = t_next;
        idx += 1;
    }
}

/// Train the binary sentence filter.
///
/// Both classes must be present. Returns the fitted vocabulary, the model
/// (threshold initialized to 0), and a report whose `converged` flag is the
/// non-convergence warning when false.
pub fn train<S: Scalar>(
    data: &[(String, bool)],
    cfg: &TrainConfig<S>,
) -> Result<TrainedModel<S>> {
    cfg.validate()?;
    let pos = data.iter().filter(|(_, label)| *label).count();
    let neg = data.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "training data must contain both classes (got {pos} positive, {neg} negative)"
        )));
    }
    let vocabulary = fit_vocabulary(data)?;

    let (w_pos, w_neg) = if cfg.class_balanced {
        class_weights::<S>(pos, neg)?
    } else {
        (S::one(), S::one())
    };
    let samples: Vec<(SparseVec<S>, S, S)> = data
        .iter()
        .map(|(text, label)| {
            let x = vectorize::<S>(text, &vocabulary);
            let y = if *label { S::one() } else { -S::one() };
            let c = cfg.c * if *label { w_pos } else { w_neg };
            (x, y, c)
        })
        .collect();

    let dim = vocabulary.len();
    let mut weights = vec![S::zero(); dim];
    let mut bias = S::zero();
    let mut scores: Vec<S> = vec![S::zero(); samples.len()];

    let mut objective = hinge_objective(&samples, &weights, bias);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut epochs = 0;

    for _ in 0..cfg.max_epochs {
        // Subgradient: g_w = w - sum_{m_i>0} c_i y_i x_i ; g_b = -sum c_i y_i.
        let mut g_w = weights.clone();
        let mut g_b = S::zero();
        for (i, (x, y, c)) in samples.iter().enumerate() {
            let margin = S::one() - *y * scores[i];
            if margin > S::zero() {
                let cy = *c * *y;
                for (idx, v) in &x.0 {
                    g_w[*idx as usize] -= cy * *v;
                }
                g_b -= cy;
            }
        }
        let q = g_w.iter().map(|g| *g * *g).sum::<S>();
        let grad_sq = q + g_b * g_b;
        if grad_sq <= S::from_f64_lossy(1e-24) {
            converged = true;
            break;
        }

        let r0 = -weights
            .iter()
            .zip(&g_w)
            .map(|(w, g)| *w * *g)
            .sum::<S>();
        let mut margins = Vec::with_capacity(samples.len());
        let mut dirs = Vec::with_capacity(samples.len());
        let mut costs = Vec::with_capacity(samples.len());
        for (i, (x, y, c)) in samples.iter().enumerate() {
            margins.push(S::one() - *y * scores[i]);
            dirs.push(*y * (x.dot_dense(&g_w) + g_b));
            costs.push(*c);
        }
        let t = exact_line_search(q, r0, &margins, &dirs, &costs);
        if t <= S::zero() {
            // Stalled at a kink: no descent available along the subgradient.
            converged = true;
            break;
        }

        for (w, g) in weights.iter_mut().zip(&g_w) {
            *w -= t * *g;
        }
        bias -= t * g_b;
        for (i, (_, y, _)) in samples.iter().enumerate() {
            scores[i] -= t * *y * dirs[i]; // y_i*d_i = g_w.x_i + g_b
        }

        let new_objective = hinge_objective(&samples, &weights, bias);
        debug_assert!(new_objective <= objective + S::from_f64_lossy(1e-9));
        epochs += 1;
        trace.push(new_objective);
        let improvement = (objective - new_objective) / objective.max(S::from_f64_lossy(1e-12));
        objective = new_objective;
        if improvement < cfg.tolerance {
            converged = true;
            break;
        }
    }

    Ok(TrainedModel {
        vocabulary,
        model: LinearModel {
            weights,
            bias,
            threshold: S::zero(),
        },
        report: TrainReport {
            epochs,
            converged,
            objective,
            objective_trace: trace,
        },
    })
}

/// Pick a score threshold on validation data, recall first.
///
/// Candidate cut points are every distinct validation score plus one above
/// the maximum (pass nothing), i.e. n+1 candidates for n distinct scores.
/// Among candidates reaching `min_recall`, the winner maximizes F1, then
/// recall, then takes the lowest threshold. If no candidate reaches
/// `min_recall`, the winner maximizes recall, then precision, then takes the
/// lowest threshold.
pub fn select_threshold<S: Scalar>(
    vocab: &Vocabulary,
    model: &LinearModel<S>,
    validation: &[(String, bool)],
    min_recall: S,
) -> Result<S> {
    let total_pos = validation.iter().filter(|(_, l)| *l).count();
    if total_pos == 0 {
        return Err(Error::Data(
            "threshold selection requires at least one positive validation sample".into(),
        ));
    }
    let mut scored: Vec<(S, bool)> = validation
        .iter()
        .map(|(text, label)| (model.score_text(text, vocab), *label))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let total_pos = S::from_count(total_pos);
    let mut best_feasible: Option<(S, S, S)> = None; // (f1, recall, threshold)
    let mut best_fallback: Option<(S, S, S)> = None; // (recall, precision, threshold)
    let mut consider = |threshold: S, tp: S, fp: S| {
        let recall = tp / total_pos;
        let precision = if tp + fp > S::zero() {
            tp / (tp + fp)
        } else {
            S::zero()
        };
        let f1 = if precision + recall > S::zero() {
            S::from_count(2) * precision * recall / (precision + recall)
        } else {
            S::zero()
        };
        if recall >= min_recall {
            let better = match best_feasible {
                None => true,
                Some((bf1, brec, bthr)) => {
                    (f1, recall, -threshold) > (bf1, brec, -bthr)
                }
            };
            if better {
                best_feasible = Some((f1, recall, threshold));
            }
        }
        let better = match best_fallback {
            None => true,
            Some((brec, bprec, bthr)) => (recall, precision, -threshold) > (brec, bprec, -bthr),
        };
        if better {
            best_fallback = Some((recall, precision, threshold));
        }
    };

    // Pass-nothing candidate.
    let top = scored.first().map(|(s, _)| *s).unwrap_or_else(S::zero);
    consider(top + S::one(), S::zero(), S::zero());
    // Sweep: threshold = each distinct score, passing everything above it.
    let mut tp = S::zero();
    let mut fp = S::zero();
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += S::one();
            } else {
                fp += S::one();
            }
            i += 1;
        }
        consider(threshold, tp, fp);
    }

    Ok(match (best_feasible, best_fallback) {
        (Some((_, _, t)), _) => t,
        (None, Some((_, _, t))) => t,
        (None, None) => unreachable!("at least one candidate is always considered"),
    })
}

/// Apply the trained filter to a sentence batch; passes sentences scoring at
/// or above the model threshold, preserving order.
pub fn predict<S: Scalar>(
    sentences: impl IntoIterator<Item = Sentence>,
    vocab: &Vocabulary,
    model: &LinearModel<S>,
) -> (Vec<Sentence>, StageStats) {
    let start = Instant::now();
    let mut stats = StageStats::new("linear-filter");
    let mut passed = Vec::new();
    for sentence in sentences {
        stats.items_in += 1;
        if model.score_text(&sentence.text, vocab) >= model.threshold {
            passed.push(sentence);
        }
    }
    stats.items_out = passed.len() as u64;
    stats.wall_time = start.elapsed().as_secs_f64();
    (passed, stats)
}

/// On-disk model layout (versioned JSON).
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile<S> {
    format_version: u32,
    terms: BTreeMap<String, (u32, u32)>,
    n_docs: u64,
    weights: Vec<S>,
    bias: S,
    threshold: S,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_model<S: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    model: &LinearModel<S>,
) -> Result<()> {
    if model.weights.len() != vocab.len() {
        return Err(Error::Data(format!(
            "model dimension {} does not match vocabulary size {}",
            model.weights.len(),
            vocab.len()
        )));
    }
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        terms: vocab
            .terms()
            .iter()
            .map(|(term, e)| (term.clone(), (e.index, e.df)))
            .collect(),
        n_docs: vocab.n_docs(),
        weights: model.weights.clone(),
        bias: model.bias,
        threshold: model.threshold,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Data(format!("serialize model: {e}")))?;
    let mut writer = crate::model::AtomicFile::create(path)?;
    writer.write_line(&json)?;
    writer.commit()
}

pub fn load_model<S: Scalar>(path: &Path) -> Result<(Vocabulary, LinearModel<S>)> {
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile<S> = serde_json::from_str(&contents)
        .map_err(|e| Error::Data(format!("{}: bad model file: {e}", path.display())))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported model format_version {}",
            path.display(),
            file.format_version
        )));
    }
    let mut terms = BTreeMap::new();
    for (term, (index, df)) in file.terms {
        terms.insert(term, TermEntry { index, df });
    }
    let vocab = Vocabulary {
        terms,
        n_docs: file.n_docs,
    };
    if file.weights.len() != vocab.len() {
        return Err(Error::Data(format!(
            "{}: weight vector length {} does not match {} terms",
            path.display(),
            file.weights.len(),
            vocab.len()
        )));
    }
    Ok((
        vocab,
        LinearModel {
            weights: file.weights,
            bias: file.bias,
            threshold: file.threshold,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocabulary_counts_by_hand() {
        let data = vec![("a b".to_string(), true), ("b c".to_string(), false)];
        let vocab = fit_vocabulary(&data).unwrap();
        assert_eq!(vocab.n_docs(), 2);
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.get("a").unwrap(), TermEntry { index: 0, df: 1 });
        assert_eq!(vocab.get("b").unwrap(), TermEntry { index: 1, df: 2 });
        assert_eq!(vocab.get("c").unwrap(), TermEntry { index: 2, df: 1 });
    }

    #[test]
    fn vocabulary_on_single_empty_sentence() {
        let data = vec![(String::new(), false)];
        let vocab = fit_vocabulary(&data).unwrap();
        assert_eq!(vocab.len(), 0);
        assert_eq!(vocab.n_docs(), 1);
        assert!(fit_vocabulary(&[]).is_err());
    }

    #[test]
    fn vocabulary_fit_is_deterministic() {
        let data = vec![
            ("zeta alpha beta".to_string(), true),
            ("beta gamma".to_string(), false),
        ];
        assert_eq!(fit_vocabulary(&data).unwrap(), fit_vocabulary(&data).unwrap());
    }

    /// Independent TF-IDF computation straight from the stated formula.
    fn naive_tfidf(text: &str, vocab: &Vocabulary) -> Vec<f64> {
        let tokens = tokenize(text);
        let n = vocab.n_docs() as f64;
        let mut dense = vec![0.0; vocab.len()];
        for (term, entry) in vocab.terms() {
            let tf = tokens.iter().filter(|t| *t == term).count() as f64;
            let idf = ((1.0 + n) / (1.0 + entry.df as f64)).ln() + 1.0;
            dense[entry.index as usize] = tf * idf;
        }
        let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut dense {
                *v /= norm;
            }
        }
        dense
    }

    #[test]
    fn vectorize_matches_hand_oracle() {
        let docs = vec![
            ("dementia memory dementia".to_string(), true),
            ("memory loss".to_string(), false),
        ];
        let vocab = fit_vocabulary(&docs).unwrap();
        // Frozen from the formula: idf(df=1) = ln(3/2)+1, idf(df=2) = 1.
        let v: SparseVec<f64> = vectorize("dementia memory dementia", &vocab);
        assert_eq!(v.0.len(), 2);
        assert_eq!(v.0[0].0, 0); // "dementia"
        assert!((v.0[0].1 - 0.9421556246632359).abs() < 1e-12);
        assert_eq!(v.0[1].0, 2); // "memory"
        assert!((v.0[1].1 - 0.33517574332792605).abs() < 1e-12);

        for (text, _) in &docs {
            let sparse: SparseVec<f64> = vectorize(text, &vocab);
            let naive = naive_tfidf(text, &vocab);
            let mut dense = vec![0.0; vocab.len()];
            for (i, val) in &sparse.0 {
                dense[*i as usize] = *val;
            }
            for (a, b) in dense.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vectorize_single_known_term_is_unit() {
        let docs = vec![("dementia".to_string(), true), ("other".to_string(), false)];
        let vocab = fit_vocabulary(&docs).unwrap();
        let v: SparseVec<f64> = vectorize("dementia", &vocab);
        assert_eq!(v.0.len(), 1);
        assert!((v.0[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vectorize_oov_only_is_zero() {
        let docs = vec![("known terms".to_string(), true), ("more known".to_string(), false)];
        let vocab = fit_vocabulary(&docs).unwrap();
        let v: SparseVec<f64> = vectorize("entirely novel words", &vocab);
        assert!(v.0.is_empty());
    }

    #[test]
    fn class_weight_formula() {
        let (wp, wn): (f64, f64) = class_weights(10, 90).unwrap();
        assert!((wp - 5.0).abs() < 1e-12);
        assert!((wn - 100.0 / 180.0).abs() < 1e-12);
        let (wp, wn): (f64, f64) = class_weights(50, 50).unwrap();
        assert!((wp - 1.0).abs() < 1e-12 && (wn - 1.0).abs() < 1e-12);
        let (wp, wn): (f64, f64) = class_weights(1, 999).unwrap();
        assert!((wp - 500.0).abs() < 1e-12);
        assert!((wn - 1000.0 / 1998.0).abs() < 1e-12);
        assert!(class_weights::<f64>(0, 10).is_err());
    }

    #[test]
    fn separable_points_train_to_full_accuracy() {
        let data = vec![
            ("dementia noted today".to_string(), true),
            ("routine visit only".to_string(), false),
        ];
        let trained = train::<f64>(&data, &TrainConfig::default()).unwrap();
        for (text, label) in &data {
            let score = trained.model.score_text(text, &trained.vocabulary);
            assert_eq!(score >= 0.0, *label, "score {score} for {text:?}");
        }
    }

    #[test]
    fn single_class_training_is_an_error() {
        let data = vec![("a".to_string(), true), ("b".to_string(), true)];
        assert!(train::<f64>(&data, &TrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data: Vec<(String, bool)> = (0..40)
            .map(|i| {
                if i % 3 == 0 {
                    (format!("dementia case {i}"), true)
                } else {
                    (format!("routine note {i}"), false)
                }
            })
            .collect();
        let cfg = TrainConfig::default();
        let a = train::<f64>(&data, &cfg).unwrap();
        let b = train::<f64>(&data, &cfg).unwrap();
        assert_eq!(a.model.weights, b.model.weights);
        assert_eq!(a.model.bias.to_bits(), b.model.bias.to_bits());
        for (x, y) in a.model.weights.iter().zip(&b.model.weights) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn objective_trace_is_monotone_non_increasing() {
        let data: Vec<(String, bool)> = (0..60)
            .map(|i| {
                if i % 4 == 0 {
                    (format!("memory loss dementia {}", i % 7), true)
                } else {
                    (format!("stable visit {} {}", i % 5, i % 3), false)
                }
            })
            .collect();
        let trained = train::<f64>(&data, &TrainConfig::default()).unwrap();
        for pair in trained.report.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "objective rose: {pair:?}");
        }
    }

    /// Brute-force threshold scan over every candidate cut, recomputing the
    /// confusion from scratch; the oracle for `select_threshold`.
    fn naive_threshold(
        scores: &[(f64, bool)],
        min_recall: f64,
    ) -> f64 {
        let mut candidates: Vec<f64> = scores.iter().map(|(s, _)| *s).collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let max = candidates.last().copied().unwrap();
        candidates.push(max + 1.0);
        let total_pos = scores.iter().filter(|(_, l)| *l).count() as f64;
        let stats = |thr: f64| {
            let tp = scores.iter().filter(|(s, l)| *l && *s >= thr).count() as f64;
            let fp = scores.iter().filter(|(s, l)| !*l && *s >= thr).count() as f64;
            let r = tp / total_pos;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f1)
        };
        let feasible: Vec<f64> = candidates
            .iter()
            .copied()
            .filter(|t| stats(*t).1 >= min_recall)
            .collect();
        let pick = |cands: &[f64], key: &dyn Fn(f64) -> (f64, f64, f64)| {
            let mut best = cands[0];
            for &c in &cands[1..] {
                if key(c) > key(best) {
                    best = c;
                }
            }
            best
        };
        if feasible.is_empty() {
            pick(&candidates, &|t| {
                let (p, r, _) = stats(t);
                (r, p, -t)
            })
        } else {
            pick(&feasible, &|t| {
                let (_, r, f1) = stats(t);
                (f1, r, -t)
            })
        }
    }

    fn fixture_model(scores: &[(f64, bool)]) -> (Vocabulary, LinearModel<f64>, Vec<(String, bool)>) {
        // One distinct token per sample; weight = desired score, bias 0.
        let data: Vec<(String, bool)> = scores
            .iter()
            .enumerate()
            .map(|(i, (_, l))| (format!("tok{i:03}"), *l))
            .collect();
        let vocab = fit_vocabulary(&data).unwrap();
        let mut weights = vec![0.0; vocab.len()];
        for (i, (s, _)) in scores.iter().enumerate() {
            let entry = vocab.get(&format!("tok{i:03}")).unwrap();
            weights[entry.index as usize] = *s;
        }
        (
            vocab,
            LinearModel { weights, bias: 0.0, threshold: 0.0 },
            data,
        )
    }

    #[test]
    fn threshold_matches_exhaustive_scan_on_20_points() {
        // 20 distinct scores -> 21 candidate cut points.
        let scores: Vec<(f64, bool)> = (0..20)
            .map(|i| {
                let s = (i as f64) * 0.37 - 3.0;
                let label = i % 3 != 0 && i > 6;
                (s, label)
            })
            .collect();
        let (vocab, model, data) = fixture_model(&scores);
        for min_recall in [0.0, 0.5, 0.9, 0.99] {
            let got = select_threshold(&vocab, &model, &data, min_recall).unwrap();
            let want = naive_threshold(&scores, min_recall);
            assert!(
                (got - want).abs() < 1e-9,
                "min_recall {min_recall}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn threshold_on_perfectly_ranked_data_reaches_full_recall() {
        let scores: Vec<(f64, bool)> = (0..10)
            .map(|i| (i as f64, i >= 5))
            .collect();
        let (vocab, model, data) = fixture_model(&scores);
        let t = select_threshold(&vocab, &model, &data, 1.0).unwrap();
        assert!(t > 4.0 && t <= 5.0, "threshold {t} should separate the classes");
    }

    #[test]
    fn threshold_requires_a_positive() {
        let scores = vec![(0.5, false), (0.2, false)];
        let (vocab, model, data) = fixture_model(&scores);
        assert!(select_threshold(&vocab, &model, &data, 0.9).is_err());
    }

    fn sentence(i: usize, text: &str) -> Sentence {
        Sentence {
            sentence_id: format!("n:s{i}"),
            note_id: "n".into(),
            patient_id: "p".into(),
            index: i,
            start: 0,
            end: text.chars().count(),
            text: text.into(),
        }
    }

    #[test]
    fn predict_empty_stream() {
        let docs = vec![("a".to_string(), true), ("b".to_string(), false)];
        let trained = train::<f64>(&docs, &TrainConfig::default()).unwrap();
        let (passed, stats) = predict(vec![], &trained.vocabulary, &trained.model);
        assert!(passed.is_empty());
        assert_eq!((stats.items_in, stats.items_out), (0, 0));
    }

    #[test]
    fn predict_all_oov_decided_by_bias_vs_threshold() {
        let docs = vec![("alpha".to_string(), true), ("beta".to_string(), false)];
        let vocab = fit_vocabulary(&docs).unwrap();
        let mut model = LinearModel {
            weights: vec![0.0; vocab.len()],
            bias: 0.5,
            threshold: 0.4,
        };
        let sentences = vec![sentence(0, "unseen words"), sentence(1, "also novel")];
        let (passed, _) = predict(sentences.clone(), &vocab, &model);
        assert_eq!(passed.len(), 2);
        model.threshold = 0.6;
        let (passed, _) = predict(sentences, &vocab, &model);
        assert!(passed.is_empty());
    }

    #[test]
    fn model_file_round_trip_and_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let data = vec![
            ("dementia noted".to_string(), true),
            ("routine visit".to_string(), false),
        ];
        let trained = train::<f64>(&data, &TrainConfig::default()).unwrap();
        save_model(&path, &trained.vocabulary, &trained.model).unwrap();

        let raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for field in ["format_version", "terms", "n_docs", "weights", "bias", "threshold"] {
            assert!(raw.get(field).is_some(), "missing field {field}");
        }
        assert!(raw["terms"]["dementia"].is_array());

        let (vocab, model) = load_model::<f64>(&path).unwrap();
        assert_eq!(vocab, trained.vocabulary);
        assert_eq!(model, trained.model);
    }

    proptest! {
        /// Duplicating every token changes tf but not the normalized
        /// direction.
        #[test]
        fn vectorize_is_scale_free(tokens in proptest::collection::vec("[a-f]{1,4}", 1..8)) {
            let text = tokens.join(" ");
            let doubled = format!("{text} {text}");
            let docs = vec![(text.clone(), true), ("unrelated filler".to_string(), false)];
            let vocab = fit_vocabulary(&docs).unwrap();
            let a: SparseVec<f64> = vectorize(&text, &vocab);
            let b: SparseVec<f64> = vectorize(&doubled, &vocab);
            if !a.0.is_empty() {
                prop_assert!((a.cosine(&b) - 1.0).abs() <= 1e-12);
            }
        }

        /// Raising the threshold never increases the pass count or recall.
        #[test]
        fn threshold_is_monotone(
            raw in proptest::collection::vec((-5.0f64..5.0, proptest::bool::ANY), 1..40),
            t1 in -5.0f64..5.0,
            delta in 0.0f64..5.0,
        ) {
            let (vocab, mut model, _) = fixture_model(&raw);
            let sentences: Vec<Sentence> = raw
                .iter()
                .enumerate()
                .map(|(i, _)| sentence(i, &format!("tok{i:03}")))
                .collect();
            model.threshold = t1;
            let (lo, _) = predict(sentences.clone(), &vocab, &model);
            model.threshold = t1 + delta;
            let (hi, _) = predict(sentences, &vocab, &model);
            prop_assert!(hi.len() <= lo.len());
            let lo_ids: BTreeSet<String> = lo.iter().map(|s| s.sentence_id.clone()).collect();
            for s in &hi {
                prop_assert!(lo_ids.contains(&s.sentence_id));
            }
        }
    }
}
