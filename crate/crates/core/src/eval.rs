//! Ranking and classification metrics: graded relevance and similarity,
//! DCG/nDCG, ACG, precision, rank-based ROC AUC, and the aggregate report
//! over a query set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::inference::{retrieve, RetrievalHit, RetrievalIndex};
use crate::labels::LabelVector;
use crate::synth::Dataset;
use crate::trainer::TrainedModel;
use crate::{Error, Result};

/// How label vectors map to relevance bits.
///
/// Raw mode compares the disease classes only, so two all-negative samples
/// have nothing in common. Augmented mode appends a virtual no-findings bit,
/// making all-negative samples relevant to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    Raw,
    Augmented,
}

fn relevance_bits(labels: &LabelVector, mode: RelevanceMode) -> Vec<bool> {
    let mut bits = labels.effective_bits();
    if mode == RelevanceMode::Augmented {
        let none = !bits.iter().any(|&b| b);
        bits.push(none);
    }
    bits
}

/// Number of classes present in both vectors. Uncertain entries count as
/// present: they may turn out positive, and retrieval should not hide them.
pub fn graded_relevance(
    query: &LabelVector,
    retrieved: &LabelVector,
    mode: RelevanceMode,
) -> Result<u32> {
    if query.len() != retrieved.len() {
        return Err(Error::DimensionMismatch {
            expected: query.len(),
            got: retrieved.len(),
        });
    }
    let q = relevance_bits(query, mode);
    let r = relevance_bits(retrieved, mode);
    Ok(q.iter().zip(&r).filter(|(a, b)| **a && **b).count() as u32)
}

/// Shared present classes divided by the query's present classes, in [0, 1].
/// A raw-mode all-negative query has no present classes to share, so the
/// ratio is undefined and the caller must skip the query.
pub fn graded_similarity(
    query: &LabelVector,
    retrieved: &LabelVector,
    mode: RelevanceMode,
) -> Result<f64> {
    if query.len() != retrieved.len() {
        return Err(Error::DimensionMismatch {
            expected: query.len(),
            got: retrieved.len(),
        });
    }
    let q = relevance_bits(query, mode);
    let q_count = q.iter().filter(|&&b| b).count();
    if q_count == 0 {
        return Err(Error::NoPositiveQueryLabels);
    }
    let shared = graded_relevance(query, retrieved, mode)?;
    Ok(f64::from(shared) / q_count as f64)
}

/// Discounted cumulative gain with exponential gain and base-2 log discount:
/// the item at position n contributes (2^r - 1) / log2(n + 1), n from 1.
pub fn dcg(relevances: &[u32]) -> f64 {
    relevances
        .iter()
        .enumerate()
        .map(|(i, &r)| (2f64.powi(r as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the retrieved list divided by the best DCG any ordering of the
/// whole database could achieve at depth k. Defined as 0 when nothing in the
/// database is relevant to the query.
pub fn ndcg(
    query: &LabelVector,
    retrieved: &[RetrievalHit],
    index: &RetrievalIndex,
    k: usize,
    mode: RelevanceMode,
) -> Result<f64> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let actual: Vec<u32> = retrieved
        .iter()
        .map(|h| graded_relevance(query, &h.labels, mode))
        .collect::<Result<_>>()?;
    let mut all: Vec<u32> = index
        .rows()
        .iter()
        .map(|row| graded_relevance(query, &row.labels, mode))
        .collect::<Result<_>>()?;
    all.sort_unstable_by(|a, b| b.cmp(a));
    all.truncate(k);
    let ideal = dcg(&all);
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(&actual) / ideal)
}

/// Average cumulative gain: the mean graded similarity of the list. Empty
/// lists yield 0.
pub fn acg(similarities: &[f64]) -> f64 {
    if similarities.is_empty() {
        return 0.0;
    }
    debug_assert!(similarities.iter().all(|s| (0.0..=1.0).contains(s)));
    similarities.iter().sum::<f64>() / similarities.len() as f64
}

/// Fraction of the list sharing at least one class with the query. Empty
/// lists yield 0.
pub fn precision_at_k(relevances: &[u32]) -> f64 {
    if relevances.is_empty() {
        return 0.0;
    }
    relevances.iter().filter(|&&r| r > 0).count() as f64 / relevances.len() as f64
}

/// Rank-based (Mann-Whitney) ROC AUC with midrank tie handling: the
/// probability that a uniformly random positive outscores a uniformly random
/// negative, counting exact ties as half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassOnly);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the score; ranks are 1-based.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Retrieval and classification quality of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub id: String,
    pub ndcg: f64,
    /// Absent when the query was skipped for ACG (raw mode, no present
    /// classes).
    pub acg: Option<f64>,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub db: String,
    pub queries: String,
    pub seed: u64,
}

/// Aggregate evaluation over a query set, plus the per-query rows it was
/// averaged from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub k: usize,
    pub mode: RelevanceMode,
    pub n_queries: usize,
    pub mean_ndcg: f64,
    /// Absent when every query was skipped for ACG.
    pub mean_acg: Option<f64>,
    pub acg_skipped: usize,
    pub mean_precision: f64,
    /// One entry per disease class; absent where the query set shows only
    /// one truth value and AUC is undefined.
    pub per_class_auc: Vec<Option<f64>>,
    /// Unweighted mean of the defined disease-class entries.
    pub macro_auc: Option<f64>,
    /// AUC of the no-findings score against all-negative ground truth, when
    /// the model carries a negative class. Kept out of the macro mean so
    /// models with and without the negative class stay comparable.
    pub negative_class_auc: Option<f64>,
    /// Disease classes whose AUC was undefined on this query set.
    pub auc_excluded_classes: Vec<usize>,
    pub per_query: Vec<QueryMetrics>,
    pub meta: ReportMeta,
}

struct QueryOutcome {
    metrics: QueryMetrics,
    scores: Vec<f64>,
    truth: Vec<bool>,
}

fn eval_one(
    model: &TrainedModel,
    index: &RetrievalIndex,
    sample: &crate::synth::Sample,
    k: usize,
    mode: RelevanceMode,
) -> Result<QueryOutcome> {
    let embedding = model.embed(&sample.features)?;
    let hits = retrieve(&embedding, index, k)?;
    let relevances: Vec<u32> = hits
        .iter()
        .map(|h| graded_relevance(&sample.labels, &h.labels, mode))
        .collect::<Result<_>>()?;
    let ndcg_value = ndcg(&sample.labels, &hits, index, k, mode)?;
    let acg_value = match graded_similarity(&sample.labels, &hits[0].labels, mode) {
        Err(Error::NoPositiveQueryLabels) => None,
        Err(e) => return Err(e),
        Ok(_) => {
            let sims: Vec<f64> = hits
                .iter()
                .map(|h| graded_similarity(&sample.labels, &h.labels, mode))
                .collect::<Result<_>>()?;
            Some(acg(&sims))
        }
    };
    Ok(QueryOutcome {
        metrics: QueryMetrics {
            id: sample.id.clone(),
            ndcg: ndcg_value,
            acg: acg_value,
            precision: precision_at_k(&relevances),
        },
        scores: model.class_scores(&sample.features)?,
        truth: sample.labels.effective_bits(),
    })
}

/// Evaluates every query against the index: retrieval metrics at depth k and
/// per-class classification AUC. `threads` caps fan-out for the per-query
/// work; the aggregation order is fixed, so results are identical at any
/// thread count. Callers should warn when query ids also appear in the
/// index, since self-retrieval inflates every metric.
pub fn run_retrieval_eval(
    model: &TrainedModel,
    index: &RetrievalIndex,
    queries: &Dataset,
    k: usize,
    mode: RelevanceMode,
    threads: usize,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }

    let threads = threads.max(1).min(queries.len());
    let outcomes: Vec<QueryOutcome> = if threads == 1 {
        queries
            .samples
            .iter()
            .map(|s| eval_one(model, index, s, k, mode))
            .collect::<Result<_>>()?
    } else {
        let chunk = queries.len().div_ceil(threads);
        let nested: Result<Vec<Vec<QueryOutcome>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = queries
                .samples
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|s| eval_one(model, index, s, k, mode))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        nested?.into_iter().flatten().collect()
    };

    let n = outcomes.len();
    let mean_ndcg = outcomes.iter().map(|o| o.metrics.ndcg).sum::<f64>() / n as f64;
    let mean_precision = outcomes.iter().map(|o| o.metrics.precision).sum::<f64>() / n as f64;
    let acg_values: Vec<f64> = outcomes.iter().filter_map(|o| o.metrics.acg).collect();
    let acg_skipped = n - acg_values.len();
    let mean_acg = if acg_values.is_empty() {
        None
    } else {
        Some(acg_values.iter().sum::<f64>() / acg_values.len() as f64)
    };

    let n_classes = queries.n_classes;
    let mut per_class_auc = Vec::with_capacity(n_classes);
    let mut auc_excluded_classes = Vec::new();
    for j in 0..n_classes {
        let scores: Vec<f64> = outcomes.iter().map(|o| o.scores[j]).collect();
        let truth: Vec<bool> = outcomes.iter().map(|o| o.truth[j]).collect();
        match roc_auc(&scores, &truth) {
            Ok(a) => per_class_auc.push(Some(a)),
            Err(Error::SingleClassOnly) => {
                per_class_auc.push(None);
                auc_excluded_classes.push(j);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_class_auc.iter().flatten().copied().collect();
    let macro_auc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };

    let negative_class_auc = if model.c_total() > n_classes {
        let scores: Vec<f64> = outcomes.iter().map(|o| o.scores[n_classes]).collect();
        let truth: Vec<bool> = outcomes
            .iter()
            .map(|o| !o.truth.iter().any(|&b| b))
            .collect();
        match roc_auc(&scores, &truth) {
            Ok(a) => Some(a),
            Err(Error::SingleClassOnly) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    Ok(EvalReport {
        version: 1,
        k,
        mode,
        n_queries: n,
        mean_ndcg,
        mean_acg,
        acg_skipped,
        mean_precision,
        per_class_auc,
        macro_auc,
        negative_class_auc,
        auc_excluded_classes,
        per_query: outcomes.into_iter().map(|o| o.metrics).collect(),
        meta: ReportMeta {
            seed: model.config.seed,
            ..ReportMeta::default()
        },
    })
}

/// Writes the per-query rows as CSV: id, ndcg, acg, precision. Skipped ACG
/// entries stay empty. Floats print in shortest round-trip form.
pub fn write_csv(report: &EvalReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "id,ndcg,acg,precision")?;
    for q in &report.per_query {
        let acg_field = q.acg.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", q.id, q.ndcg, acg_field, q.precision)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::IndexRow;
    use crate::labels::LabelState;
    use crate::labels::LabelState::{Negative as N, Positive as P, Uncertain as U};
    use proptest::prelude::*;

    fn lv(states: &[LabelState]) -> LabelVector {
        LabelVector(states.to_vec())
    }

    fn hit(id: &str, labels: &[LabelState]) -> RetrievalHit {
        RetrievalHit {
            id: id.into(),
            distance: 0.0,
            labels: lv(labels),
        }
    }

    fn row(id: &str, labels: &[LabelState]) -> IndexRow {
        IndexRow {
            id: id.into(),
            embedding: vec![1.0, 0.0],
            labels: lv(labels),
        }
    }

    #[test]
    fn relevance_counts_shared_present_classes() {
        let r = graded_relevance(&lv(&[P, P, N]), &lv(&[P, N, N]), RelevanceMode::Raw).unwrap();
        assert_eq!(r, 1);
        // Uncertain counts as present on either side.
        let r = graded_relevance(&lv(&[U, N]), &lv(&[P, N]), RelevanceMode::Raw).unwrap();
        assert_eq!(r, 1);
    }

    #[test]
    fn all_negative_pairs_split_by_mode() {
        let q = lv(&[N, N]);
        let d = lv(&[N, N]);
        assert_eq!(
            graded_relevance(&q, &d, RelevanceMode::Augmented).unwrap(),
            1
        );
        assert_eq!(graded_relevance(&q, &d, RelevanceMode::Raw).unwrap(), 0);
    }

    #[test]
    fn relevance_rejects_length_mismatch() {
        assert!(matches!(
            graded_relevance(&lv(&[P]), &lv(&[P, N]), RelevanceMode::Raw),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn similarity_is_shared_over_query_count() {
        let s = graded_similarity(&lv(&[P, P]), &lv(&[P, P]), RelevanceMode::Raw).unwrap();
        assert_eq!(s, 1.0);
        let s = graded_similarity(&lv(&[P, P]), &lv(&[P, N]), RelevanceMode::Raw).unwrap();
        assert_eq!(s, 0.5);
        assert!(matches!(
            graded_similarity(&lv(&[N, N]), &lv(&[P, N]), RelevanceMode::Raw),
            Err(Error::NoPositiveQueryLabels)
        ));
        // Augmented mode gives the all-negative query a class of its own.
        let s = graded_similarity(&lv(&[N, N]), &lv(&[N, N]), RelevanceMode::Augmented).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn dcg_matches_the_formula() {
        assert_eq!(dcg(&[0, 0, 0]), 0.0);
        assert_eq!(dcg(&[1]), 1.0);
        let v = dcg(&[3, 1, 0]);
        assert!((v - 7.6309).abs() < 5e-5, "got {v}");
        let oracle = (2f64.powi(3) - 1.0) / 2f64.log2()
            + (2f64.powi(1) - 1.0) / 3f64.log2()
            + 0.0 / 4f64.log2();
        assert!((v - oracle).abs() < 1e-15);
    }

    #[test]
    fn ndcg_is_one_for_the_ideal_order_and_penalizes_swaps() {
        // Query shares 2 classes with "b", 1 with "a".
        let index = RetrievalIndex::new(vec![row("a", &[P, N]), row("b", &[P, P])]);
        let q = lv(&[P, P]);
        let ideal_first = vec![hit("b", &[P, P]), hit("a", &[P, N])];
        let v = ndcg(&q, &ideal_first, &index, 2, RelevanceMode::Raw).unwrap();
        assert!((v - 1.0).abs() < 1e-15);

        let swapped = vec![hit("a", &[P, N]), hit("b", &[P, P])];
        let v = ndcg(&q, &swapped, &index, 2, RelevanceMode::Raw).unwrap();
        // Relevances [1, 2] against the ideal [2, 1].
        let expected = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((v - 0.7967).abs() < 5e-5, "got {v}");
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn ndcg_is_zero_when_nothing_is_relevant() {
        let index = RetrievalIndex::new(vec![row("a", &[N, P])]);
        let q = lv(&[P, N]);
        let hits = vec![hit("a", &[N, P])];
        let v = ndcg(&q, &hits, &index, 1, RelevanceMode::Raw).unwrap();
        assert_eq!(v, 0.0);
        assert!(matches!(
            ndcg(&q, &hits, &RetrievalIndex::default(), 1, RelevanceMode::Raw),
            Err(Error::EmptyIndex)
        ));
    }

    #[test]
    fn ndcg_ideal_draws_from_the_whole_database_not_the_list() {
        // The database holds a perfect match the retrieval missed, so even a
        // sorted retrieved list scores below 1.
        let index = RetrievalIndex::new(vec![row("a", &[P, N]), row("b", &[P, P])]);
        let q = lv(&[P, P]);
        let only_a = vec![hit("a", &[P, N])];
        let v = ndcg(&q, &only_a, &index, 1, RelevanceMode::Raw).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn acg_and_precision_examples() {
        assert_eq!(acg(&[1.0, 0.5]), 0.75);
        assert_eq!(acg(&[0.0, 0.0]), 0.0);
        assert_eq!(acg(&[]), 0.0);
        let rel = [2, 1, 0, 1, 0, 0, 1, 3, 1, 1];
        assert_eq!(precision_at_k(&rel), 0.7);
        assert_eq!(precision_at_k(&[1, 1]), 1.0);
        assert_eq!(precision_at_k(&[]), 0.0);
    }

    #[test]
    fn auc_examples() {
        let perfect = roc_auc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(perfect, 1.0);
        let mixed = roc_auc(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).unwrap();
        assert!((mixed - 0.75).abs() < 1e-15);
        let ties = roc_auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert!((ties - 0.5).abs() < 1e-15);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::SingleClassOnly)
        ));
    }

    fn auc_pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (sp, yp) in scores.iter().zip(labels) {
            if !yp {
                continue;
            }
            for (sn, yn) in scores.iter().zip(labels) {
                if *yn {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    fn arb_state() -> impl Strategy<Value = LabelState> {
        prop_oneof![Just(P), Just(N), Just(U)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]

        #[test]
        fn auc_matches_the_pairwise_counting_oracle(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..40),
            flips in proptest::collection::vec(any::<bool>(), 2..40),
        ) {
            let n = scores.len().min(flips.len());
            let scores = &scores[..n];
            // Quantize so exact ties actually occur.
            let scores: Vec<f64> = scores.iter().map(|s| (s * 4.0).round() / 4.0).collect();
            let labels = &flips[..n];
            let n_pos = labels.iter().filter(|&&y| y).count();
            prop_assume!(n_pos > 0 && n_pos < n);
            let a = roc_auc(&scores, labels).unwrap();
            let oracle = auc_pair_oracle(&scores, labels);
            prop_assert!((a - oracle).abs() < 1e-10, "{a} vs {oracle}");
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn auc_flips_under_score_negation(
            raw in proptest::collection::vec(-5.0f64..5.0, 4..30),
            flips in proptest::collection::vec(any::<bool>(), 4..30),
        ) {
            let n = raw.len().min(flips.len());
            // Force distinct scores: tie-free negation symmetry.
            let mut scores: Vec<f64> = raw[..n].to_vec();
            scores.sort_by(f64::total_cmp);
            let scores: Vec<f64> = scores.iter().enumerate()
                .map(|(i, s)| s + i as f64 * 20.0).collect();
            let labels = &flips[..n];
            let n_pos = labels.iter().filter(|&&y| y).count();
            prop_assume!(n_pos > 0 && n_pos < n);
            let a = roc_auc(&scores, labels).unwrap();
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let b = roc_auc(&negated, labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-10);
        }

        #[test]
        fn dcg_is_strictly_increasing_in_any_position(
            rel in proptest::collection::vec(0u32..6, 1..12),
            pos in any::<proptest::sample::Index>(),
        ) {
            let base = dcg(&rel);
            let mut bumped = rel.clone();
            let i = pos.index(bumped.len());
            bumped[i] += 1;
            prop_assert!(dcg(&bumped) > base);
        }

        #[test]
        fn ndcg_is_invariant_to_class_relabeling(
            rows in proptest::collection::vec(
                proptest::collection::vec(arb_state(), 4), 2..12),
            query in proptest::collection::vec(arb_state(), 4),
            rot in 1usize..4,
        ) {
            let permute = |states: &[LabelState]| -> Vec<LabelState> {
                let mut p = states.to_vec();
                p.rotate_left(rot);
                p
            };
            let index = RetrievalIndex::new(
                rows.iter().enumerate()
                    .map(|(i, r)| row(&format!("r{i}"), r)).collect());
            let hits: Vec<RetrievalHit> = rows.iter().enumerate()
                .map(|(i, r)| hit(&format!("r{i}"), r)).collect();
            let q = lv(&query);
            let a = ndcg(&q, &hits, &index, 3, RelevanceMode::Augmented).unwrap();

            let index_p = RetrievalIndex::new(
                rows.iter().enumerate()
                    .map(|(i, r)| row(&format!("r{i}"), &permute(r))).collect());
            let hits_p: Vec<RetrievalHit> = rows.iter().enumerate()
                .map(|(i, r)| hit(&format!("r{i}"), &permute(r))).collect();
            let b = ndcg(&lv(&permute(&query)), &hits_p, &index_p, 3,
                RelevanceMode::Augmented).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn metrics_stay_in_the_unit_interval(
            rows in proptest::collection::vec(
                proptest::collection::vec(arb_state(), 3), 1..10),
            query in proptest::collection::vec(arb_state(), 3),
            k in 1usize..12,
        ) {
            let index = RetrievalIndex::new(
                rows.iter().enumerate()
                    .map(|(i, r)| row(&format!("r{i}"), r)).collect());
            let hits: Vec<RetrievalHit> = rows.iter().enumerate().take(k)
                .map(|(i, r)| hit(&format!("r{i}"), r)).collect();
            let q = lv(&query);
            let v = ndcg(&q, &hits, &index, k, RelevanceMode::Augmented).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let rel: Vec<u32> = hits.iter()
                .map(|h| graded_relevance(&q, &h.labels, RelevanceMode::Augmented).unwrap())
                .collect();
            prop_assert!((0.0..=1.0).contains(&precision_at_k(&rel)));
            let sims: Vec<f64> = hits.iter()
                .map(|h| graded_similarity(&q, &h.labels, RelevanceMode::Augmented).unwrap())
                .collect();
            prop_assert!((0.0..=1.0).contains(&acg(&sims)));
        }

        #[test]
        fn precision_dominates_acg_for_positive_queries(
            rows in proptest::collection::vec(
                proptest::collection::vec(arb_state(), 4), 1..10),
            query in proptest::collection::vec(arb_state(), 4),
        ) {
            let q = lv(&query);
            prop_assume!(q.effective_bits().iter().any(|&b| b));
            let rel: Vec<u32> = rows.iter()
                .map(|r| graded_relevance(&q, &lv(r), RelevanceMode::Raw).unwrap())
                .collect();
            let sims: Vec<f64> = rows.iter()
                .map(|r| graded_similarity(&q, &lv(r), RelevanceMode::Raw).unwrap())
                .collect();
            prop_assert!(precision_at_k(&rel) >= acg(&sims) - 1e-12);
        }

        #[test]
        fn similarity_matches_a_bitset_oracle(
            q in proptest::collection::vec(arb_state(), 5),
            r in proptest::collection::vec(arb_state(), 5),
        ) {
            let q = lv(&q);
            let r = lv(&r);
            prop_assume!(q.effective_bits().iter().any(|&b| b));
            let qb = q.effective_bits();
            let rb = r.effective_bits();
            let shared = qb.iter().zip(&rb).filter(|(a, b)| **a && **b).count();
            let total = qb.iter().filter(|&&b| b).count();
            let s = graded_similarity(&q, &r, RelevanceMode::Raw).unwrap();
            prop_assert!((s - shared as f64 / total as f64).abs() < 1e-15);
        }
    }

    mod report {
        use super::*;
        use crate::inference::RetrievalIndex;
        use crate::synth::{generate, SynthConfig};
        use crate::trainer::{train, TrainConfig};

        fn small_setup() -> (crate::trainer::TrainedModel, RetrievalIndex, Dataset) {
            let data = generate(&SynthConfig {
                n_samples: 70,
                n_classes: 2,
                input_dim: 6,
                seed: 21,
                ..SynthConfig::default()
            })
            .unwrap();
            let config = TrainConfig {
                epochs: 2,
                batch_size: 16,
                hidden_dims: vec![8, 4],
                ..TrainConfig::default()
            };
            let model = train(&data, &config).unwrap();
            let mut db_rows = Vec::new();
            let mut queries = Dataset {
                n_classes: data.n_classes,
                input_dim: data.input_dim,
                samples: Vec::new(),
            };
            for (i, s) in data.samples.iter().enumerate() {
                if i < 50 {
                    db_rows.push(IndexRow {
                        id: s.id.clone(),
                        embedding: model.embed(&s.features).unwrap(),
                        labels: s.labels.clone(),
                    });
                } else {
                    queries.samples.push(s.clone());
                }
            }
            (model, RetrievalIndex::new(db_rows), queries)
        }

        #[test]
        fn report_aggregates_equal_means_of_per_query_rows() {
            let (model, index, queries) = small_setup();
            let report =
                run_retrieval_eval(&model, &index, &queries, 5, RelevanceMode::Augmented, 1)
                    .unwrap();
            assert_eq!(report.n_queries, queries.len());
            assert_eq!(report.per_query.len(), queries.len());
            let mean_ndcg: f64 = report.per_query.iter().map(|q| q.ndcg).sum::<f64>()
                / report.per_query.len() as f64;
            assert_eq!(report.mean_ndcg, mean_ndcg);
            let acgs: Vec<f64> = report.per_query.iter().filter_map(|q| q.acg).collect();
            assert_eq!(report.acg_skipped, report.per_query.len() - acgs.len());
            // Augmented mode never skips.
            assert_eq!(report.acg_skipped, 0);
            let mean_acg = acgs.iter().sum::<f64>() / acgs.len() as f64;
            assert_eq!(report.mean_acg, Some(mean_acg));
            assert_eq!(report.per_class_auc.len(), 2);
            assert!(report.negative_class_auc.is_some());
        }

        #[test]
        fn raw_mode_skips_all_negative_queries() {
            let (model, index, mut queries) = small_setup();
            queries.samples[0].labels = lv(&[N, N]);
            let report =
                run_retrieval_eval(&model, &index, &queries, 5, RelevanceMode::Raw, 1).unwrap();
            assert!(report.acg_skipped >= 1);
            assert!(report.per_query[0].acg.is_none());
            // Skipped queries still score ndcg (0 by the iDCG convention
            // when nothing matches) and precision.
            assert!(report.per_query[0].ndcg.is_finite());
        }

        #[test]
        fn thread_count_does_not_change_the_report() {
            let (model, index, queries) = small_setup();
            let a = run_retrieval_eval(&model, &index, &queries, 5, RelevanceMode::Augmented, 1)
                .unwrap();
            for threads in [2, 3, 8] {
                let b = run_retrieval_eval(
                    &model,
                    &index,
                    &queries,
                    5,
                    RelevanceMode::Augmented,
                    threads,
                )
                .unwrap();
                assert_eq!(a, b);
            }
        }

        #[test]
        fn degenerate_truth_excludes_classes_from_auc() {
            let (model, index, mut queries) = small_setup();
            for s in &mut queries.samples {
                s.labels = lv(&[N, N]);
            }
            let report =
                run_retrieval_eval(&model, &index, &queries, 5, RelevanceMode::Augmented, 1)
                    .unwrap();
            assert_eq!(report.per_class_auc, vec![None, None]);
            assert_eq!(report.macro_auc, None);
            assert_eq!(report.auc_excluded_classes, vec![0, 1]);
            assert_eq!(report.negative_class_auc, None);
        }

        #[test]
        fn csv_has_header_plus_one_row_per_query() {
            let (model, index, queries) = small_setup();
            let report =
                run_retrieval_eval(&model, &index, &queries, 5, RelevanceMode::Augmented, 1)
                    .unwrap();
            let mut buf = Vec::new();
            write_csv(&report, &mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(lines.len(), queries.len() + 1);
            assert_eq!(lines[0], "id,ndcg,acg,precision");
            assert!(lines[1].starts_with(&queries.samples[0].id));
        }
    }
}
