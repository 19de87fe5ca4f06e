use proptest::prelude::*;

use reidgen::data::{IdentityLabel, Origin, Patch, Sample};
use reidgen::semfilter::{face_present, filter_samples, ExternalDetector, Keypoint, KeypointDetection};

fn samples_with(confidences: &[Vec<f64>]) -> (Vec<Sample>, ExternalDetector) {
    let mut det = ExternalDetector::default();
    let samples = confidences
        .iter()
        .enumerate()
        .map(|(i, cs)| {
            let path = format!("images/{i}.png");
            det.insert(
                path.clone(),
                cs.iter().map(|&c| Keypoint { x: 0.5, y: 0.2, confidence: c }).collect(),
            );
            Sample {
                image: Patch::blank(8),
                label: IdentityLabel((i % 3) as u32),
                session_id: 0,
                tracklet_id: i as u32,
                origin: Origin::Original,
                face: None,
                source: Some(path),
            }
        })
        .collect();
    (samples, det)
}

proptest! {
    #[test]
    fn raising_the_threshold_never_admits_more(
        confs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 0..4), 0..30),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (samples, det) = samples_with(&confs);
        let (keep_lo, _) = filter_samples(&samples, &det, lo).unwrap();
        let (keep_hi, stats) = filter_samples(&samples, &det, hi).unwrap();
        prop_assert!(keep_hi.iter().all(|s| keep_lo.contains(s)));
        prop_assert_eq!(stats.kept, keep_hi.len());
        prop_assert_eq!(stats.per_class.values().map(|c| c.kept).sum::<usize>(), stats.kept);
    }

    #[test]
    fn filtering_is_idempotent(
        confs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 0..4), 0..30),
        t in 0.0f64..=1.0,
    ) {
        let (samples, det) = samples_with(&confs);
        let (once, _) = filter_samples(&samples, &det, t).unwrap();
        let (twice, stats) = filter_samples(&once, &det, t).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!(stats.kept == stats.total);
    }

    #[test]
    fn verdict_is_any_keypoint_at_or_above_threshold(
        cs in prop::collection::vec(0.0f64..=1.0, 0..5),
        t in 0.0f64..=1.0,
    ) {
        let kps = cs.iter().map(|&c| Keypoint { x: 0.1, y: 0.1, confidence: c }).collect();
        let v = face_present(&KeypointDetection::new(kps).unwrap(), t);
        prop_assert_eq!(v.passed(), cs.iter().any(|&c| c >= t));
    }
}

#[test]
fn external_detections_load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.csv");
    std::fs::write(&path, "path,x,y,confidence\na.png,0.5,0.2,0.9\nb.png,0.4,0.1,0.2\n").unwrap();
    let det = ExternalDetector::from_file(&path).unwrap();
    let mk = |p: &str| Sample {
        image: Patch::blank(8),
        label: IdentityLabel(1),
        session_id: 0,
        tracklet_id: 0,
        origin: Origin::Original,
        face: None,
        source: Some(p.into()),
    };
    let (kept, _) = filter_samples(&[mk("a.png"), mk("b.png"), mk("c.png")], &det, 0.5).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].source.as_deref(), Some("a.png"));
    std::fs::write(&path, "path,x,y,confidence\na.png,0.5,0.2,1.7\n").unwrap();
    assert!(ExternalDetector::from_file(&path).is_err());
}
