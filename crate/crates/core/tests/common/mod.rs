//! Brute-force metric oracles and random fixtures shared by the metric and
//! acceptance suites. Everything here is written from the definitions, with
//! ranks found by pairwise comparison rather than sorting.
#![allow(dead_code)]

use rand::Rng;

use reidgen::data::IdentityLabel;
use reidgen::eval::{RetrievalSet, ScoreMatrix};

/// 1-based rank of item `i` when items are ordered by `better`, where
/// `better(a, b)` says `a` comes strictly before `b`.
fn rank_of(n: usize, i: usize, better: &dyn Fn(usize, usize) -> bool) -> usize {
    1 + (0..n).filter(|&j| j != i && better(j, i)).count()
}

/// Mean of precision at each relevant position.
fn ap_from_ranks(ranks_of_relevant: &[usize]) -> f64 {
    if ranks_of_relevant.is_empty() {
        return 0.0;
    }
    let total: f64 = ranks_of_relevant
        .iter()
        .map(|&r| ranks_of_relevant.iter().filter(|&&o| o <= r).count() as f64 / r as f64)
        .sum();
    total / ranks_of_relevant.len() as f64
}

pub fn oracle_prec_at_k(scores: &[Vec<f64>], labels: &[u32], k: usize, pid: bool) -> Option<f64> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| !pid || labels[i] != 0).collect();
    if rows.is_empty() {
        return None;
    }
    let hits = rows
        .iter()
        .filter(|&&i| {
            let s = &scores[i];
            let better = |a: usize, b: usize| s[a] > s[b] || (s[a] == s[b] && a < b);
            rank_of(s.len(), labels[i] as usize, &better) <= k
        })
        .count();
    Some(hits as f64 / rows.len() as f64)
}

pub fn oracle_class_map(scores: &[Vec<f64>], labels: &[u32], n_classes: usize, pid: bool) -> Option<f64> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| !pid || labels[i] != 0).collect();
    let mut aps = Vec::new();
    for c in usize::from(pid)..n_classes {
        let better = |a: usize, b: usize| {
            let (sa, sb) = (scores[rows[a]][c], scores[rows[b]][c]);
            sa > sb || (sa == sb && a < b)
        };
        let ranks: Vec<usize> = (0..rows.len())
            .filter(|&p| labels[rows[p]] as usize == c)
            .map(|p| rank_of(rows.len(), p, &better))
            .collect();
        if !ranks.is_empty() {
            aps.push(ap_from_ranks(&ranks));
        }
    }
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

pub struct OracleRetrieval {
    pub cmc: Vec<f64>,
    pub map: f64,
}

pub fn oracle_retrieval(q: &RetrievalSet, g: &RetrievalSet, exclude_same_camera: bool) -> OracleRetrieval {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut first_ranks = Vec::new();
    let mut ap_sum = 0.0;
    for qi in 0..q.len() {
        let cands: Vec<usize> = (0..g.len())
            .filter(|&j| !(exclude_same_camera && g.cameras[j] == q.cameras[qi]))
            .collect();
        let d: Vec<f64> = cands.iter().map(|&j| dist(&q.embeddings[qi], &g.embeddings[j])).collect();
        let better = |a: usize, b: usize| d[a] < d[b] || (d[a] == d[b] && cands[a] < cands[b]);
        let ranks: Vec<usize> = (0..cands.len())
            .filter(|&p| g.labels[cands[p]] == q.labels[qi])
            .map(|p| rank_of(cands.len(), p, &better))
            .collect();
        first_ranks.push(*ranks.iter().min().expect("fixture guarantees a match"));
        ap_sum += ap_from_ranks(&ranks);
    }
    let n = q.len() as f64;
    let cmc = (1..=g.len())
        .map(|r| first_ranks.iter().filter(|&&f| f <= r).count() as f64 / n)
        .collect();
    OracleRetrieval { cmc, map: ap_sum / n }
}

/// A probability matrix whose entries are small-integer weights normalised
/// per row, so ties are common. `M ≤ 20` rows, `N ≤ 7` identities.
pub fn random_matrix<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<u32>, usize) {
    let n_classes = rng.gen_range(2..=8);
    let m = rng.gen_range(1..=20);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..m {
        let mut w: Vec<f64> = (0..n_classes).map(|_| rng.gen_range(0..4) as f64).collect();
        if w.iter().all(|&x| x == 0.0) {
            w[rng.gen_range(0..n_classes)] = 1.0;
        }
        let s: f64 = w.iter().sum();
        scores.push(w.iter().map(|x| x / s).collect());
        labels.push(rng.gen_range(0..n_classes as u32));
    }
    (scores, labels, n_classes)
}

pub fn to_matrix(scores: &[Vec<f64>], labels: &[u32], n_classes: usize) -> ScoreMatrix {
    ScoreMatrix::new(scores.to_vec(), labels.iter().map(|&l| IdentityLabel(l)).collect(), n_classes).unwrap()
}

/// Query and gallery sets on a coarse grid (distance ties happen) where
/// every query identity also appears in the gallery under another camera.
pub fn random_retrieval<R: Rng>(rng: &mut R) -> (RetrievalSet, RetrievalSet) {
    let ids = rng.gen_range(1..=7u32);
    let cams = rng.gen_range(2..=4u32);
    let point = |rng: &mut R| (0..3).map(|_| rng.gen_range(0..3) as f64).collect::<Vec<f64>>();
    let nq = rng.gen_range(1..=20);
    let mut q = RetrievalSet {
        embeddings: vec![],
        labels: vec![],
        cameras: vec![],
    };
    let mut g = q.clone();
    for _ in 0..nq {
        let id = rng.gen_range(0..ids);
        let cam = rng.gen_range(0..cams);
        q.embeddings.push(point(rng));
        q.labels.push(IdentityLabel(id));
        q.cameras.push(cam);
        g.embeddings.push(point(rng));
        g.labels.push(IdentityLabel(id));
        g.cameras.push((cam + 1) % cams);
    }
    for _ in 0..rng.gen_range(0..=15) {
        g.embeddings.push(point(rng));
        g.labels.push(IdentityLabel(rng.gen_range(0..ids)));
        g.cameras.push(rng.gen_range(0..cams));
    }
    (q, g)
}

pub const FD_STEP: f64 = 1e-6;

pub fn fd_close(a: f64, n: f64) -> bool {
    (a - n).abs() <= 1e-4 * a.abs().max(n.abs()) + 1e-8
}

/// Compares every analytic partial that `loss` leaves in `params(state)`
/// with a central difference. Returns the number of entries checked, or
/// the first mismatch.
pub fn fd_check<S>(
    state: &mut S,
    params: for<'a> fn(&'a mut S) -> Vec<&'a mut reidgen::nn::Param>,
    loss: &dyn Fn(&mut S) -> f64,
) -> Result<usize, String> {
    loss(state);
    let analytic: Vec<Vec<f64>> = params(state).iter().map(|p| p.grad.clone()).collect();
    let mut checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            params(state)[pi].value[i] += FD_STEP;
            let up = loss(state);
            params(state)[pi].value[i] -= 2.0 * FD_STEP;
            let down = loss(state);
            params(state)[pi].value[i] += FD_STEP;
            let n = (up - down) / (2.0 * FD_STEP);
            if !fd_close(a, n) {
                return Err(format!("param {pi}[{i}]: analytic {a:e}, numeric {n:e}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn random_toy_corpus<R: Rng>(rng: &mut R) -> reidgen::data::Dataset {
    let cfg = reidgen::data::ToyCorpusConfig {
        n_identities: rng.gen_range(1..=5),
        sessions: rng.gen_range(2..=6),
        per_session: rng.gen_range(4..=30),
        patch_size: 8,
        ..Default::default()
    };
    reidgen::data::synth_toy_corpus(&cfg, rng.gen()).unwrap()
}

fn sample_keys(d: &reidgen::data::Dataset) -> std::collections::BTreeMap<(u32, u32, u32), usize> {
    let mut m = std::collections::BTreeMap::new();
    for s in d.samples() {
        *m.entry((s.session_id, s.tracklet_id, s.label.0)).or_default() += 1;
    }
    m
}

/// Every session is tested exactly once, train and test sessions never
/// overlap, and each fold uses every sample once.
pub fn check_loso(ds: &reidgen::data::Dataset) -> Result<(), String> {
    use std::collections::BTreeSet;
    let sessions: BTreeSet<u32> = ds.samples().iter().map(|s| s.session_id).collect();
    let plan = reidgen::data::make_loso_splits(ds).map_err(|e| e.to_string())?;
    if plan.folds.len() != sessions.len() {
        return Err(format!("{} folds for {} sessions", plan.folds.len(), sessions.len()));
    }
    let mut tested = BTreeSet::new();
    for (k, fold) in plan.folds.iter().enumerate() {
        if fold.test.len() != 1 || !fold.train.is_disjoint(&fold.test) {
            return Err(format!("fold {k} overlaps or tests several sessions"));
        }
        if fold.train.union(&fold.test).copied().collect::<BTreeSet<_>>() != sessions {
            return Err(format!("fold {k} does not cover every session"));
        }
        if !tested.insert(*fold.test.first().unwrap()) {
            return Err(format!("fold {k} repeats a test session"));
        }
        let (train, test) = plan.apply(ds, k);
        if train.len() + test.len() != ds.len()
            || test.samples().iter().any(|s| !fold.test.contains(&s.session_id))
            || train.samples().iter().any(|s| !fold.train.contains(&s.session_id))
        {
            return Err(format!("fold {k} materialises the wrong samples"));
        }
    }
    Ok(())
}

/// Per-class test counts are `max(1, ⌊0.15·n⌋)`, in integer arithmetic, and
/// train ∪ test is the input multiset.
pub fn check_holdout(ds: &reidgen::data::Dataset, seed: u64) -> Result<(), String> {
    let (train, test) = reidgen::data::holdout_per_class(ds, 0.15, seed).map_err(|e| e.to_string())?;
    let test_counts = test.class_counts();
    for (label, &n) in &ds.class_counts() {
        let want = (15 * n / 100).max(1);
        let got = test_counts.get(label).copied().unwrap_or(0);
        if got != want {
            return Err(format!("class {label} of {n}: {got} held out, expected {want}"));
        }
    }
    let mut both = sample_keys(&train);
    for (k, v) in sample_keys(&test) {
        *both.entry(k).or_default() += v;
    }
    if both != sample_keys(ds) {
        return Err("train and test do not partition the input".into());
    }
    Ok(())
}
