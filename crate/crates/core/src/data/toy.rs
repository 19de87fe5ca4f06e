//! Procedurally rendered desk-scale stand-in for an indoor re-id corpus.
//!
//! Each identity has a fixed body signature (torso/leg/hair colors and body
//! proportions); sessions change the room background and lighting and may put
//! an identity in a jacket. A face glyph (skin disc with two eyes) is drawn on
//! the head with probability `p_face`; its location is kept as metadata.
//! Class `0` patches show either two small people or background clutter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FaceMark, IdentityLabel, Origin, Patch, Sample};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusConfig {
    /// Number of known identities `N`.
    pub n_identities: u32,
    pub sessions: u32,
    pub per_session: usize,
    pub patch_size: usize,
    /// Probability that a rendered sample carries a face glyph.
    pub p_face: f64,
    /// Std-dev of per-pixel Gaussian noise.
    pub noise: f64,
    /// Probability that an identity wears a jacket in a given session.
    pub jacket_prob: f64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            n_identities: 3,
            sessions: 4,
            per_session: 50,
            patch_size: 32,
            p_face: 0.6,
            noise: 0.08,
            jacket_prob: 0.25,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_face) {
            return Err(Error::Config(format!("p_face = {} outside [0, 1]", self.p_face)));
        }
        if !(0.0..=1.0).contains(&self.jacket_prob) {
            return Err(Error::Config(format!(
                "jacket_prob = {} outside [0, 1]",
                self.jacket_prob
            )));
        }
        if self.n_identities < 1 {
            return Err(Error::Config("n_identities must be >= 1".into()));
        }
        if self.sessions < 1 || self.per_session < 1 {
            return Err(Error::Config("sessions and per_session must be >= 1".into()));
        }
        if self.patch_size < 8 {
            return Err(Error::Config("patch_size must be >= 8".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be a finite non-negative std-dev".into()));
        }
        Ok(())
    }
}

type Rgb = [f32; 3];

#[derive(Debug, Clone)]
struct Identity {
    torso: Rgb,
    legs: Rgb,
    hair: Rgb,
    width: f32,
    height: f32,
}

fn random_color<R: Rng>(rng: &mut R) -> Rgb {
    [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)]
}

const SKIN: Rgb = [0.75, 0.35, 0.1];
const EYE: Rgb = [-0.9, -0.9, -0.8];

struct Canvas {
    size: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(size: usize, bg: Rgb) -> Self {
        let mut px = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            px.extend_from_slice(&bg);
        }
        Canvas { size, px }
    }

    fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= self.size as i64 || y >= self.size as i64 {
            return;
        }
        let i = (y as usize * self.size + x as usize) * 3;
        self.px[i..i + 3].copy_from_slice(&c);
    }

    fn rect(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, c: Rgb) {
        for y in y0.round() as i64..y1.round() as i64 {
            for x in x0.round() as i64..x1.round() as i64 {
                self.set(x, y, c);
            }
        }
    }

    fn disc(&mut self, cx: f32, cy: f32, r: f32, c: Rgb) {
        let (lo_y, hi_y) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
        let (lo_x, hi_x) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.set(x, y, c);
                }
            }
        }
    }

    /// Draws a person with feet centred at `(cx, bottom)`; returns the head centre.
    fn person(&mut self, cx: f32, bottom: f32, width: f32, height: f32, torso: Rgb, legs: Rgb, hair: Rgb) -> (f32, f32, f32) {
        let head_r = width * 0.42;
        let body_h = height - 2.0 * head_r;
        let leg_top = bottom - body_h * 0.45;
        let torso_top = bottom - body_h;
        self.rect(cx - width * 0.4, leg_top, cx - width * 0.05, bottom, legs);
        self.rect(cx + width * 0.05, leg_top, cx + width * 0.4, bottom, legs);
        self.rect(cx - width / 2.0, torso_top, cx + width / 2.0, leg_top, torso);
        let head_y = torso_top - head_r;
        self.disc(cx, head_y, head_r, hair);
        (cx, head_y, head_r)
    }

    fn face(&mut self, cx: f32, cy: f32, r: f32) {
        self.disc(cx, cy + r * 0.1, r * 0.8, SKIN);
        let off = (r * 0.35).max(1.0);
        self.set((cx - off).floor() as i64, cy.floor() as i64, EYE);
        self.set((cx + off).floor() as i64 - 1, cy.floor() as i64, EYE);
    }
}

/// Renders a deterministic toy corpus: `sessions × per_session` samples,
/// session-major order, labels cycling through `0..=N` within each session.
pub fn synth_toy_corpus(config: &ToyCorpusConfig, seed_value: u64) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_identities;
    let identities: Vec<Identity> = (1..=n)
        .map(|j| {
            let mut rng = seed::rng(seed_value, "toy-identity", j as u64);
            Identity {
                torso: random_color(&mut rng),
                legs: random_color(&mut rng),
                hair: random_color(&mut rng),
                width: rng.gen_range(0.26..0.40),
                height: rng.gen_range(0.68..0.88),
            }
        })
        .collect();
    let size = config.patch_size;
    let s = size as f32;
    let noise = Normal::new(0.0, config.noise.max(1e-12)).expect("finite noise");
    let mut samples = Vec::with_capacity(config.sessions as usize * config.per_session);
    for session in 0..config.sessions {
        let mut srng = seed::rng(seed_value, "toy-session", session as u64);
        let room: Rgb = [
            srng.gen_range(-0.6..0.2),
            srng.gen_range(-0.6..0.2),
            srng.gen_range(-0.6..0.2),
        ];
        let light: f32 = srng.gen_range(-0.15..0.15);
        let jackets: Vec<Option<Rgb>> = (0..n)
            .map(|_| {
                let wear = srng.gen_bool(config.jacket_prob);
                let color = random_color(&mut srng);
                wear.then_some(color)
            })
            .collect();
        for i in 0..config.per_session {
            let global = session as u64 * config.per_session as u64 + i as u64;
            let mut rng = seed::rng(seed_value, "toy-sample", global);
            let label = ((i as u32) + session) % (n + 1);
            let has_face = rng.gen_bool(config.p_face);
            let mut canvas = Canvas::new(size, room);
            let mut face = None;
            if label == 0 {
                render_unknown(&mut canvas, &mut rng, has_face, &mut face);
            } else {
                let id = &identities[(label - 1) as usize];
                let scale: f32 = rng.gen_range(0.9..1.1);
                let cx = s / 2.0 + rng.gen_range(-0.1..0.1) * s;
                let bottom = s * rng.gen_range(0.93..1.0);
                let torso = jackets[(label - 1) as usize].unwrap_or(id.torso);
                let (hx, hy, hr) = canvas.person(
                    cx,
                    bottom,
                    id.width * s * scale,
                    id.height * s * scale,
                    torso,
                    id.legs,
                    id.hair,
                );
                if has_face {
                    canvas.face(hx, hy, hr);
                    face = Some((hx, hy));
                }
            }
            let px = canvas
                .px
                .iter()
                .map(|v| {
                    let n = if config.noise > 0.0 { noise.sample(&mut rng) as f32 } else { 0.0 };
                    (v + light + n).clamp(-1.0, 1.0)
                })
                .collect();
            samples.push(Sample {
                image: Patch::new(size, px)?,
                label: IdentityLabel(label),
                session_id: session,
                tracklet_id: session * (n + 1) + label,
                origin: Origin::Original,
                face: face.map(|(x, y)| FaceMark {
                    x: (x / s).clamp(0.0, 1.0) as f64,
                    y: (y / s).clamp(0.0, 1.0) as f64,
                }),
                source: None,
            });
        }
    }
    Dataset::new(samples, n)
}

fn render_unknown(canvas: &mut Canvas, rng: &mut ChaCha8Rng, has_face: bool, face: &mut Option<(f32, f32)>) {
    let s = canvas.size as f32;
    if rng.gen_bool(0.5) {
        // two people sharing one box
        let mut heads = Vec::new();
        for k in 0..2 {
            let cx = s * (0.3 + 0.4 * k as f32) + rng.gen_range(-0.05..0.05) * s;
            let w = s * rng.gen_range(0.2..0.28);
            let h = s * rng.gen_range(0.55..0.8);
            heads.push(canvas.person(
                cx,
                s * rng.gen_range(0.9..1.0),
                w,
                h,
                random_color(rng),
                random_color(rng),
                random_color(rng),
            ));
        }
        if has_face {
            let (hx, hy, hr) = heads[rng.gen_range(0..2)];
            canvas.face(hx, hy, hr);
            *face = Some((hx, hy));
        }
    } else {
        // background clutter
        for _ in 0..rng.gen_range(2..5) {
            let (x0, y0) = (rng.gen_range(0.0..s * 0.8), rng.gen_range(0.0..s * 0.8));
            let (w, h) = (rng.gen_range(s * 0.1..s * 0.4), rng.gen_range(s * 0.1..s * 0.4));
            canvas.rect(x0, y0, x0 + w, y0 + h, random_color(rng));
        }
        if has_face {
            let (cx, cy) = (rng.gen_range(s * 0.2..s * 0.8), rng.gen_range(s * 0.2..s * 0.6));
            let r = s * 0.1;
            canvas.disc(cx, cy, r, random_color(rng));
            canvas.face(cx, cy, r);
            *face = Some((cx, cy));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_config() {
        let cfg = ToyCorpusConfig {
            n_identities: 3,
            sessions: 4,
            per_session: 50,
            p_face: 0.6,
            ..Default::default()
        };
        let ds = synth_toy_corpus(&cfg, 11).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.sessions(), vec![0, 1, 2, 3]);
        assert_eq!(ds.n_identities(), 3);
        assert!(ds.session_index().values().all(|v| v.len() == 50));
    }

    #[test]
    fn same_seed_gives_identical_corpus() {
        let cfg = ToyCorpusConfig::default();
        let a = synth_toy_corpus(&cfg, 3).unwrap();
        let b = synth_toy_corpus(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_toy_corpus(&cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn face_frequency_tracks_p_face() {
        let cfg = ToyCorpusConfig {
            sessions: 10,
            per_session: 1000,
            patch_size: 8,
            p_face: 0.6,
            ..Default::default()
        };
        let ds = synth_toy_corpus(&cfg, 2024).unwrap();
        let faces = ds.samples().iter().filter(|s| s.face.is_some()).count();
        let freq = faces as f64 / ds.len() as f64;
        assert!((freq - 0.6).abs() <= 0.02, "face frequency {freq}");
    }

    #[test]
    fn p_face_out_of_range_is_a_config_error() {
        for p in [-0.1, 1.5] {
            let cfg = ToyCorpusConfig {
                p_face: p,
                ..Default::default()
            };
            assert!(matches!(synth_toy_corpus(&cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn face_marks_are_normalized() {
        let ds = synth_toy_corpus(&ToyCorpusConfig::default(), 5).unwrap();
        for s in ds.samples() {
            if let Some(f) = s.face {
                assert!((0.0..=1.0).contains(&f.x) && (0.0..=1.0).contains(&f.y));
            }
        }
    }
}
