mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use reidgen::eval::{cmc_single_query, evaluate, mean_ap_classification, prec_at_k, RetrievalProtocol, Scope};

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn classification_metrics_match_the_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels, n) = random_matrix(&mut rng);
        let m = to_matrix(&scores, &labels, n);
        for (scope, pid) in [(Scope::All, false), (Scope::Pid, true)] {
            for k in 1..=n {
                let got = prec_at_k(&m, k, scope).ok();
                let want = oracle_prec_at_k(&scores, &labels, k, pid);
                prop_assert_eq!(got.is_some(), want.is_some());
                if let (Some(g), Some(w)) = (got, want) {
                    prop_assert!(near(g, w), "prec@{} {:?}: {} vs {}", k, scope, g, w);
                }
            }
            let got = mean_ap_classification(&m, scope).ok().map(|c| c.value);
            let want = oracle_class_map(&scores, &labels, n, pid);
            prop_assert_eq!(got.is_some(), want.is_some());
            if let (Some(g), Some(w)) = (got, want) {
                prop_assert!(near(g, w), "mAP {:?}: {} vs {}", scope, g, w);
            }
        }
    }

    #[test]
    fn retrieval_metrics_match_the_oracle(seed in any::<u64>(), exclude in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, g) = random_retrieval(&mut rng);
        let protocol = RetrievalProtocol { exclude_same_camera: exclude, max_rank: None };
        let got = cmc_single_query(&q, &g, protocol).unwrap();
        let want = oracle_retrieval(&q, &g, exclude);
        prop_assert!(near(got.map, want.map));
        prop_assert_eq!(got.cmc.len(), want.cmc.len());
        for (a, b) in got.cmc.iter().zip(&want.cmc) {
            prop_assert!(near(*a, *b));
        }
    }

    #[test]
    fn prec_at_k_is_monotone_and_reaches_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels, n) = random_matrix(&mut rng);
        let m = to_matrix(&scores, &labels, n);
        let ks: Vec<usize> = (1..=n).collect();
        let r = evaluate(&m, &ks, None).unwrap();
        let all: Vec<f64> = ks.iter().map(|&k| r.prec(Scope::All, k).unwrap()).collect();
        prop_assert!(all.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(near(all[n - 1], 1.0));
        let total: u64 = r.confusion.counts.iter().flatten().sum();
        prop_assert_eq!(total as usize, labels.len());
        let diag: u64 = (0..n).map(|c| r.confusion.counts[c][c]).sum();
        prop_assert!(near(diag as f64 / labels.len() as f64, all[0]));
    }
}

#[test]
fn cmc_is_truncated_to_the_rank_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (q, g) = random_retrieval(&mut rng);
    let full = cmc_single_query(&q, &g, RetrievalProtocol { exclude_same_camera: false, max_rank: None }).unwrap();
    let cap = cmc_single_query(&q, &g, RetrievalProtocol { exclude_same_camera: false, max_rank: Some(2) }).unwrap();
    assert_eq!(cap.cmc, full.cmc[..2]);
    assert_eq!(cap.map, full.map);
    assert!(near(*full.cmc.last().unwrap(), 1.0));
}
