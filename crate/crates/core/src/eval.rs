//! Classification and retrieval metrics: prec@k, one-vs-rest mAP,
//! single-query CMC with retrieval mAP, and confusion matrices.
//!
//! Every ranking breaks ties by ascending class or gallery index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::condense::{argmax, ScoreVector};
use crate::data::IdentityLabel;
use crate::error::{Error, Result};

/// Which ground-truth rows and classes a metric considers. `Pid` drops rows
/// labelled unknown and, for mAP, the unknown class, but keeps every score
/// column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    Pid,
}

impl Scope {
    fn keeps(self, label: IdentityLabel) -> bool {
        self == Scope::All || label.is_known()
    }
}

/// Test scores, one row per sample and one column per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    scores: Vec<Vec<f64>>,
    labels: Vec<IdentityLabel>,
    n_classes: usize,
}

impl ScoreMatrix {
    pub fn new(scores: Vec<Vec<f64>>, labels: Vec<IdentityLabel>, n_classes: usize) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} score rows for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        for (i, (row, l)) in scores.iter().zip(&labels).enumerate() {
            if row.len() != n_classes {
                return Err(Error::Shape(format!("row {i} has {} scores, expected {n_classes}", row.len())));
            }
            if l.index() >= n_classes {
                return Err(Error::Shape(format!("row {i} has label {l} outside {n_classes} classes")));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Shape(format!("row {i} is not a probability vector (sum {sum})")));
            }
        }
        Ok(ScoreMatrix {
            scores,
            labels,
            n_classes,
        })
    }

    pub fn from_vectors(vectors: Vec<ScoreVector>, labels: Vec<IdentityLabel>, n_classes: usize) -> Result<Self> {
        Self::new(vectors.into_iter().map(|v| v.0).collect(), labels, n_classes)
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn labels(&self) -> &[IdentityLabel] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, scope: Scope) -> impl Iterator<Item = (&[f64], IdentityLabel)> {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(move |(_, l)| scope.keeps(**l))
            .map(|(s, l)| (s.as_slice(), *l))
    }
}

/// Zero-based rank of class `c` in `row` under the tie-break rule.
fn class_rank(row: &[f64], c: usize) -> usize {
    let s = row[c];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < c))
        .count()
}

/// Fraction of in-scope rows whose true class is among the `k` best.
pub fn prec_at_k(matrix: &ScoreMatrix, k: usize, scope: Scope) -> Result<f64> {
    if k < 1 || k > matrix.n_classes {
        return Err(Error::UndefinedMetric(format!(
            "prec@{k} with {} classes",
            matrix.n_classes
        )));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (row, l) in matrix.rows(scope) {
        total += 1;
        if class_rank(row, l.index()) < k {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(format!("no rows in {scope:?} scope")));
    }
    Ok(hits as f64 / total as f64)
}

/// Average precision of a ranked relevance list (non-interpolated).
fn average_precision(ranked_relevant: impl Iterator<Item = bool>) -> f64 {
    let (mut hits, mut sum) = (0usize, 0.0);
    for (i, rel) in ranked_relevant.enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub value: f64,
    pub per_class: BTreeMap<IdentityLabel, f64>,
    /// Classes without positive rows, left out of the mean.
    pub excluded: Vec<IdentityLabel>,
}

/// Mean over in-scope classes of one-vs-rest AP, ranking in-scope rows by
/// that class's score.
pub fn mean_ap_classification(matrix: &ScoreMatrix, scope: Scope) -> Result<ClassMap> {
    let rows: Vec<(&[f64], IdentityLabel)> = matrix.rows(scope).collect();
    let first = if scope == Scope::Pid { 1 } else { 0 };
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    for c in first..matrix.n_classes {
        let label = IdentityLabel(c as u32);
        if !rows.iter().any(|(_, l)| *l == label) {
            excluded.push(label);
            continue;
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[b].0[c].total_cmp(&rows[a].0[c]).then(a.cmp(&b)));
        per_class.insert(label, average_precision(order.iter().map(|&i| rows[i].1 == label)));
    }
    if per_class.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no class has positive rows in {scope:?} scope"
        )));
    }
    let value = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(ClassMap {
        value,
        per_class,
        excluded,
    })
}

/// Embeddings with identity and camera (session) tags.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<IdentityLabel>,
    pub cameras: Vec<u32>,
}

impl RetrievalSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalProtocol {
    /// Drop gallery entries recorded by the query's camera.
    pub exclude_same_camera: bool,
    /// Length of the reported CMC vector; defaults to the gallery size.
    pub max_rank: Option<usize>,
}

impl Default for RetrievalProtocol {
    fn default() -> Self {
        RetrievalProtocol {
            exclude_same_camera: true,
            max_rank: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcResult {
    pub cmc: Vec<f64>,
    pub map: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Single-query CMC and retrieval mAP with Euclidean ranking.
pub fn cmc_single_query(query: &RetrievalSet, gallery: &RetrievalSet, protocol: RetrievalProtocol) -> Result<CmcResult> {
    if query.is_empty() {
        return Err(Error::UndefinedMetric("no queries".into()));
    }
    let len = protocol.max_rank.unwrap_or(gallery.len());
    let mut first_hits = vec![0usize; len];
    let mut ap_sum = 0.0;
    for q in 0..query.len() {
        let cam = query.cameras[q];
        let mut cands: Vec<(f64, usize)> = (0..gallery.len())
            .filter(|&g| !(protocol.exclude_same_camera && gallery.cameras[g] == cam))
            .map(|g| (sq_dist(&query.embeddings[q], &gallery.embeddings[g]), g))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let rel: Vec<bool> = cands.iter().map(|&(_, g)| gallery.labels[g] == query.labels[q]).collect();
        let Some(first) = rel.iter().position(|&r| r) else {
            return Err(Error::Protocol(format!(
                "query {q} (identity {}, camera {cam}) has no gallery match",
                query.labels[q]
            )));
        };
        if first < len {
            first_hits[first] += 1;
        }
        ap_sum += average_precision(rel.into_iter());
    }
    let n = query.len() as f64;
    let mut acc = 0usize;
    let cmc = first_hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    Ok(CmcResult { cmc, map: ap_sum / n })
}

/// Counts of (true, predicted) pairs; `present[c]` is false when class `c`
/// never occurs as ground truth, in which case its row is all zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub present: Vec<bool>,
}

pub fn confusion_matrix(matrix: &ScoreMatrix) -> ConfusionMatrix {
    let k = matrix.n_classes;
    let mut counts = vec![vec![0u64; k]; k];
    let mut present = vec![false; k];
    for (row, l) in matrix.rows(Scope::All) {
        counts[l.index()][argmax(row)] += 1;
        present[l.index()] = true;
    }
    ConfusionMatrix { counts, present }
}

/// Everything measured on one test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub prec_at: BTreeMap<Scope, BTreeMap<usize, f64>>,
    pub map_all: Option<f64>,
    pub map_pid: Option<f64>,
    /// Single-query retrieval results, when a retrieval protocol was run.
    pub retrieval: Option<CmcResult>,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn prec(&self, scope: Scope, k: usize) -> Option<f64> {
        self.prec_at.get(&scope)?.get(&k).copied()
    }
}

/// Computes prec@k for each `k` (values above `N + 1` are skipped) and mAP
/// in both scopes. A scope without rows yields absent values and a warning.
pub fn evaluate(matrix: &ScoreMatrix, ks: &[usize], retrieval: Option<CmcResult>) -> Result<EvalReport> {
    if matrix.is_empty() {
        return Err(Error::UndefinedMetric("empty test set".into()));
    }
    let mut warnings = Vec::new();
    let mut prec_at = BTreeMap::new();
    let mut maps = BTreeMap::new();
    for scope in [Scope::All, Scope::Pid] {
        let mut by_k = BTreeMap::new();
        for &k in ks.iter().filter(|&&k| k >= 1 && k <= matrix.n_classes) {
            match prec_at_k(matrix, k, scope) {
                Ok(v) => {
                    by_k.insert(k, v);
                }
                Err(Error::UndefinedMetric(m)) => {
                    warnings.push(format!("prec@{k} {scope:?}: {m}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        prec_at.insert(scope, by_k);
        match mean_ap_classification(matrix, scope) {
            Ok(m) => {
                for c in &m.excluded {
                    warnings.push(format!("mAP {scope:?}: class {c} has no test rows and is excluded"));
                }
                maps.insert(scope, m.value);
            }
            Err(Error::UndefinedMetric(m)) => warnings.push(format!("mAP {scope:?}: {m}")),
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport {
        n_test: matrix.len(),
        prec_at,
        map_all: maps.get(&Scope::All).copied(),
        map_pid: maps.get(&Scope::Pid).copied(),
        retrieval,
        confusion: confusion_matrix(matrix),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(scores: Vec<Vec<f64>>, labels: &[u32]) -> ScoreMatrix {
        let k = scores[0].len();
        ScoreMatrix::new(scores, labels.iter().map(|&l| IdentityLabel(l)).collect(), k).unwrap()
    }

    #[test]
    fn perfect_scores() {
        let s = m(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]], &[0, 2]);
        for k in 1..=3 {
            assert_eq!(prec_at_k(&s, k, Scope::All).unwrap(), 1.0);
        }
        assert_eq!(mean_ap_classification(&s, Scope::Pid).unwrap().value, 1.0);
    }

    #[test]
    fn two_of_three_correct() {
        let s = m(
            vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4]],
            &[0, 1, 1],
        );
        assert!((prec_at_k(&s, 1, Scope::All).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(prec_at_k(&s, 3, Scope::All).is_err());
    }

    #[test]
    fn hand_enumerated_map() {
        let s = m(
            vec![vec![0.9, 0.1], vec![0.6, 0.4], vec![0.3, 0.7], vec![0.2, 0.8]],
            &[0, 1, 0, 1],
        );
        let r = mean_ap_classification(&s, Scope::All).unwrap();
        assert!((r.value - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lower_class() {
        let s = m(vec![vec![0.5, 0.5]], &[1]);
        assert_eq!(prec_at_k(&s, 1, Scope::All).unwrap(), 0.0);
        assert_eq!(confusion_matrix(&s).counts[1][0], 1);
    }

    #[test]
    fn pid_without_known_rows_is_undefined() {
        let s = m(vec![vec![0.5, 0.5]], &[0]);
        assert!(matches!(prec_at_k(&s, 1, Scope::Pid), Err(Error::UndefinedMetric(_))));
        let r = evaluate(&s, &[1], None).unwrap();
        assert_eq!(r.map_pid, None);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn invalid_rows_are_rejected() {
        assert!(ScoreMatrix::new(vec![vec![0.5, 0.6]], vec![IdentityLabel(0)], 2).is_err());
        assert!(ScoreMatrix::new(vec![vec![0.5, 0.5]], vec![IdentityLabel(2)], 2).is_err());
    }

    fn set(emb: &[f64], labels: &[u32], cams: &[u32]) -> RetrievalSet {
        RetrievalSet {
            embeddings: emb.iter().map(|&v| vec![v]).collect(),
            labels: labels.iter().map(|&l| IdentityLabel(l)).collect(),
            cameras: cams.to_vec(),
        }
    }

    #[test]
    fn first_match_at_rank_three() {
        let q = set(&[0.0], &[1], &[0]);
        let g = set(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2, 3, 1, 2, 3], &[1; 5]);
        let r = cmc_single_query(&q, &g, RetrievalProtocol::default()).unwrap();
        assert_eq!(r.cmc, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!((r.map - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn same_camera_gallery_is_excluded() {
        let q = set(&[0.0], &[1], &[0]);
        let g = set(&[0.0, 1.0], &[1, 2], &[0, 1]);
        let err = cmc_single_query(&q, &g, RetrievalProtocol::default()).unwrap_err();
        assert!(matches!(err, Error::Protocol(m) if m.contains("query 0")));
        let open = RetrievalProtocol {
            exclude_same_camera: false,
            max_rank: Some(1),
        };
        assert_eq!(cmc_single_query(&q, &g, open).unwrap().cmc, vec![1.0]);
    }

    #[test]
    fn top1_with_late_second_match_keeps_map_below_one() {
        let q = set(&[0.0], &[1], &[0]);
        let g = set(&[0.1, 0.2, 0.3], &[1, 2, 1], &[1, 1, 1]);
        let r = cmc_single_query(&q, &g, RetrievalProtocol::default()).unwrap();
        assert_eq!(r.cmc[0], 1.0);
        assert!(r.map < 1.0);
    }

    #[test]
    fn confusion_flags_absent_classes() {
        let s = m(vec![vec![0.9, 0.1, 0.0], vec![0.8, 0.2, 0.0]], &[1, 1]);
        let c = confusion_matrix(&s);
        assert_eq!(c.counts[1][0], 2);
        assert_eq!(c.present, vec![false, true, false]);
        assert_eq!(c.counts[2], vec![0, 0, 0]);
    }
}
