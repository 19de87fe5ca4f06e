mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{check_holdout, check_loso, random_toy_corpus};
use reidgen::data::{holdout_per_class, synth_toy_corpus, ToyCorpusConfig};

#[test]
fn loso_folds_partition_sessions() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        check_loso(&random_toy_corpus(&mut rng)).unwrap();
    }
}

#[test]
fn holdout_counts_follow_the_floor_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut checked = 0;
    while checked < 100 {
        let ds = random_toy_corpus(&mut rng);
        if ds.class_counts().values().any(|&n| n < 2) {
            assert!(holdout_per_class(&ds, 0.15, 1).is_err());
            continue;
        }
        check_holdout(&ds, rng.gen()).unwrap();
        checked += 1;
    }
}

#[test]
fn holdout_is_seeded() {
    let ds = synth_toy_corpus(&ToyCorpusConfig { patch_size: 8, ..Default::default() }, 3).unwrap();
    let a = holdout_per_class(&ds, 0.15, 5).unwrap();
    let b = holdout_per_class(&ds, 0.15, 5).unwrap();
    let c = holdout_per_class(&ds, 0.15, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);
}
