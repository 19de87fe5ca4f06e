//! Semantic gate `F`: face presence from keypoint detections.
//!
//! A [`KeypointDetector`] maps a sample to facial keypoints with confidences.
//! A sample passes the gate when at least one keypoint reaches the confidence
//! threshold. Three detectors plug in:
//!
//! * [`OracleDetector`] reads the face-glyph metadata recorded by the toy
//!   corpus renderer, so its verdicts are exact.
//! * [`ExternalDetector`] replays detections produced offline by a real
//!   keypoint model, keyed by the sample's manifest path
//!   (`path,x,y,confidence`, one row per keypoint).
//! * [`NoDetector`] always fails; selecting it with filtering enabled is an
//!   error rather than a silent bypass.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{IdentityLabel, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointDetection {
    pub keypoints: Vec<Keypoint>,
}

impl KeypointDetection {
    pub fn new(keypoints: Vec<Keypoint>) -> Result<Self> {
        for k in &keypoints {
            let ok = [k.x, k.y, k.confidence].iter().all(|v| (0.0..=1.0).contains(v));
            if !ok {
                return Err(Error::Detector(format!(
                    "keypoint ({}, {}, {}) outside [0, 1]",
                    k.x, k.y, k.confidence
                )));
            }
        }
        Ok(KeypointDetection { keypoints })
    }

    pub fn empty() -> Self {
        KeypointDetection::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    /// 1 if a face was established, else 0.
    pub present: u8,
    pub detection: KeypointDetection,
}

impl FilterVerdict {
    pub fn passed(&self) -> bool {
        self.present == 1
    }
}

/// Image → facial keypoints. Implementations must be deterministic.
/// `Sync` detectors may be shared across threads; filtering itself only
/// needs sequential access.
pub trait KeypointDetector {
    fn name(&self) -> &str;

    /// Side lengths this detector accepts, inclusive.
    fn accepted_sizes(&self) -> (usize, usize) {
        (1, usize::MAX)
    }

    fn detect(&self, sample: &Sample) -> Result<KeypointDetection>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDetector;

impl KeypointDetector for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn detect(&self, sample: &Sample) -> Result<KeypointDetection> {
        Ok(match sample.face {
            Some(f) => KeypointDetection {
                keypoints: vec![Keypoint {
                    x: f.x,
                    y: f.y,
                    confidence: 1.0,
                }],
            },
            None => KeypointDetection::empty(),
        })
    }
}

/// Detections loaded from a delimited file written by an external model.
#[derive(Debug, Clone, Default)]
pub struct ExternalDetector {
    by_path: HashMap<String, Vec<Keypoint>>,
}

#[derive(Deserialize)]
struct DetectionRow {
    path: String,
    x: f64,
    y: f64,
    confidence: f64,
}

impl ExternalDetector {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut by_path: HashMap<String, Vec<Keypoint>> = HashMap::new();
        for (i, row) in reader.deserialize::<DetectionRow>().enumerate() {
            let row = row.map_err(|e| Error::Detector(format!("detections row {}: {e}", i + 1)))?;
            let kp = Keypoint {
                x: row.x,
                y: row.y,
                confidence: row.confidence,
            };
            KeypointDetection::new(vec![kp])?;
            by_path.entry(row.path).or_default().push(kp);
        }
        Ok(ExternalDetector { by_path })
    }

    pub fn insert(&mut self, path: impl Into<String>, keypoints: Vec<Keypoint>) {
        self.by_path.insert(path.into(), keypoints);
    }
}

impl KeypointDetector for ExternalDetector {
    fn name(&self) -> &str {
        "external"
    }

    fn detect(&self, sample: &Sample) -> Result<KeypointDetection> {
        let key = sample.source.as_deref().ok_or_else(|| {
            Error::Detector("external detections are keyed by manifest path; sample has none".into())
        })?;
        Ok(KeypointDetection {
            keypoints: self.by_path.get(key).cloned().unwrap_or_default(),
        })
    }
}

/// Stand-in for "no detector configured".
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDetector;

impl KeypointDetector for NoDetector {
    fn name(&self) -> &str {
        "none"
    }

    fn detect(&self, _sample: &Sample) -> Result<KeypointDetection> {
        Err(Error::Detector("no keypoint detector is available".into()))
    }
}

pub fn detect_keypoints(sample: &Sample, detector: &dyn KeypointDetector) -> Result<KeypointDetection> {
    let (lo, hi) = detector.accepted_sizes();
    let size = sample.image.size();
    if size < lo || size > hi {
        return Err(Error::Detector(format!(
            "{} accepts patch sides {lo}..={hi}, got {size}",
            detector.name()
        )));
    }
    detector.detect(sample)
}

/// `present = 1` iff some keypoint has `confidence >= threshold`.
pub fn face_present(detection: &KeypointDetection, confidence_threshold: f64) -> FilterVerdict {
    let present = detection
        .keypoints
        .iter()
        .any(|k| k.confidence >= confidence_threshold);
    FilterVerdict {
        present: present as u8,
        detection: detection.clone(),
    }
}

/// Detector plus threshold: the full gate `F`.
#[derive(Clone, Copy)]
pub struct Gate<'a> {
    pub detector: &'a dyn KeypointDetector,
    pub threshold: f64,
}

impl<'a> Gate<'a> {
    pub fn new(detector: &'a dyn KeypointDetector, threshold: f64) -> Self {
        Gate { detector, threshold }
    }

    pub fn verdict(&self, sample: &Sample) -> Result<FilterVerdict> {
        Ok(face_present(&detect_keypoints(sample, self.detector)?, self.threshold))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRetention {
    pub kept: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub kept: usize,
    pub total: usize,
    pub per_class: BTreeMap<IdentityLabel, ClassRetention>,
}

impl FilterStats {
    /// Fraction of the input that survived; `0` for empty input.
    pub fn retention(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.kept as f64 / self.total as f64
        }
    }
}

/// Keeps samples whose verdict is 1, in input order.
pub fn filter_samples(
    samples: &[Sample],
    detector: &dyn KeypointDetector,
    threshold: f64,
) -> Result<(Vec<Sample>, FilterStats)> {
    let gate = Gate::new(detector, threshold);
    let mut stats = FilterStats::default();
    let mut kept = Vec::new();
    for s in samples {
        let entry = stats.per_class.entry(s.label).or_default();
        entry.total += 1;
        stats.total += 1;
        if gate.verdict(s)?.passed() {
            entry.kept += 1;
            stats.kept += 1;
            kept.push(s.clone());
        }
    }
    Ok((kept, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_toy_corpus, FaceMark, Origin, Patch, ToyCorpusConfig};

    fn kp(x: f64, y: f64, c: f64) -> Keypoint {
        Keypoint { x, y, confidence: c }
    }

    fn sample(face: bool) -> Sample {
        Sample {
            image: Patch::blank(8),
            label: IdentityLabel(1),
            session_id: 0,
            tracklet_id: 0,
            origin: Origin::Original,
            face: face.then_some(FaceMark { x: 0.5, y: 0.2 }),
            source: None,
        }
    }

    #[test]
    fn oracle_reads_glyph_metadata() {
        let d = detect_keypoints(&sample(true), &OracleDetector).unwrap();
        assert_eq!(d.keypoints.len(), 1);
        assert_eq!(d.keypoints[0].confidence, 1.0);
        assert!(detect_keypoints(&sample(false), &OracleDetector)
            .unwrap()
            .keypoints
            .is_empty());
    }

    #[test]
    fn blank_image_has_no_face() {
        let d = OracleDetector.detect(&sample(false)).unwrap();
        assert!(d.keypoints.is_empty());
        assert!(sample(false).image.pixels().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn verdict_examples() {
        let one = KeypointDetection::new(vec![kp(0.5, 0.4, 0.9)]).unwrap();
        assert_eq!(face_present(&one, 0.3).present, 1);
        assert_eq!(face_present(&KeypointDetection::empty(), 0.0).present, 0);
        let weak = KeypointDetection::new(vec![kp(0.2, 0.2, 0.1), kp(0.7, 0.3, 0.25)]).unwrap();
        assert_eq!(face_present(&weak, 0.3).present, 0);
    }

    #[test]
    fn filters_toy_samples_in_order() {
        let mut samples: Vec<Sample> = (0..10).map(|i| sample(i % 5 < 3)).collect();
        for (i, s) in samples.iter_mut().enumerate() {
            s.tracklet_id = i as u32;
        }
        let (kept, stats) = filter_samples(&samples, &OracleDetector, 0.0).unwrap();
        assert_eq!(kept.len(), 6);
        let order: Vec<u32> = kept.iter().map(|s| s.tracklet_id).collect();
        assert_eq!(order, vec![0, 1, 2, 5, 6, 7]);
        assert_eq!(stats.kept, 6);
        assert_eq!(stats.total, 10);
        assert!((stats.retention() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_input_gives_zero_stats() {
        let (kept, stats) = filter_samples(&[], &OracleDetector, 0.0).unwrap();
        assert!(kept.is_empty());
        assert_eq!(stats, FilterStats::default());
        assert_eq!(stats.retention(), 0.0);
    }

    #[test]
    fn missing_detector_is_an_error() {
        assert!(matches!(
            filter_samples(&[sample(true)], &NoDetector, 0.0),
            Err(Error::Detector(_))
        ));
    }

    #[test]
    fn external_detector_replays_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("det.csv");
        fs::write(&f, "path,x,y,confidence\na.png,0.5,0.2,0.8\na.png,0.4,0.2,0.1\n").unwrap();
        let det = ExternalDetector::from_file(&f).unwrap();
        let mut s = sample(false);
        s.source = Some("a.png".into());
        assert_eq!(det.detect(&s).unwrap().keypoints.len(), 2);
        assert!(Gate::new(&det, 0.5).verdict(&s).unwrap().passed());
        assert!(!Gate::new(&det, 0.9).verdict(&s).unwrap().passed());
        s.source = Some("b.png".into());
        assert!(det.detect(&s).unwrap().keypoints.is_empty());
    }

    #[test]
    fn retention_per_class_on_toy_corpus() {
        let ds = synth_toy_corpus(&ToyCorpusConfig::default(), 1).unwrap();
        let (kept, stats) = filter_samples(ds.samples(), &OracleDetector, 0.0).unwrap();
        assert_eq!(kept.len(), ds.samples().iter().filter(|s| s.face.is_some()).count());
        let sum: usize = stats.per_class.values().map(|c| c.kept).sum();
        assert_eq!(sum, stats.kept);
    }
}
