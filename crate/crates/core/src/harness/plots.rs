//! Minimal SVG figures for a finished run directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .map(|r| {
            r.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn num(s: &str, path: &Path) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Schema(format!("{}: {s:?} is not a number", path.display())))
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0).max(1e-12) * (W - 2.0 * PAD)
    }
    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0).max(1e-12) * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xlabel}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{ylabel}</text>\n",
        W / 2.0,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0,
    );
    for i in 0..=4 {
        let x = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            f.px(x),
            H - PAD + 16.0,
            trim(x)
        );
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            PAD - 4.0,
            f.py(y) + 4.0,
            trim(y)
        );
    }
    s
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn polyline(points: &[(f64, f64)], f: &Frame, color: &str) -> String {
    let pts: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// Discriminator loss on real samples as a dense line, loss on generated
/// samples as markers every 100 iterations.
pub fn loss_curve_svg(csv_path: &Path, out: &Path) -> Result<()> {
    let rows = read_csv(csv_path)?;
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for r in &rows {
        if r.len() < 4 {
            return Err(Error::Schema(format!("{}: short row", csv_path.display())));
        }
        let it = num(&r[0], csv_path)?;
        real.push((it, num(&r[1], csv_path)?));
        if (it as u64) % 100 == 0 {
            fake.push((it, num(&r[2], csv_path)?));
        }
    }
    let ymax = real.iter().chain(&fake).map(|p| p.1).fold(0.0f64, f64::max).max(1e-3);
    let f = Frame {
        x0: 0.0,
        x1: real.last().map_or(1.0, |p| p.0.max(1.0)),
        y0: 0.0,
        y1: ymax * 1.05,
    };
    let mut s = svg_open("Discriminator loss", "iteration", "loss", &f);
    s += &polyline(&real, &f, "steelblue");
    for (x, y) in &fake {
        s += &format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"darkorange\"/>\n",
            f.px(*x),
            f.py(*y)
        );
    }
    s += "<text x=\"500\" y=\"60\" fill=\"steelblue\">real</text>\n";
    s += "<text x=\"500\" y=\"76\" fill=\"darkorange\">generated</text>\n</svg>\n";
    std::fs::write(out, s).map_err(|e| Error::io(out, e))
}

pub fn cmc_svg(csv_path: &Path, out: &Path, max_rank: usize) -> Result<()> {
    let rows = read_csv(csv_path)?;
    let mut pts = Vec::new();
    for r in rows.iter().take(max_rank) {
        pts.push((num(&r[0], csv_path)?, 100.0 * num(&r[1], csv_path)?));
    }
    let f = Frame {
        x0: 1.0,
        x1: pts.len().max(2) as f64,
        y0: 0.0,
        y1: 100.0,
    };
    let mut s = svg_open("CMC", "rank", "match rate (%)", &f);
    s += &polyline(&pts, &f, "seagreen");
    s += "</svg>\n";
    std::fs::write(out, s).map_err(|e| Error::io(out, e))
}

/// Row-normalised heat table; rows of classes absent from the test set
/// are printed as `nan`.
pub fn confusion_svg(csv_path: &Path, out: &Path) -> Result<()> {
    let rows = read_csv(csv_path)?;
    let k = rows.len();
    let cell = 48.0;
    let (w, h) = (PAD + cell * k as f64 + 20.0, PAD + cell * k as f64 + 20.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"16\" text-anchor=\"middle\">true (rows) vs predicted (columns)</text>\n",
        w / 2.0
    );
    for (t, r) in rows.iter().enumerate() {
        if r.len() != k + 2 {
            return Err(Error::Schema(format!("{}: row width", csv_path.display())));
        }
        let present = r[1] == "1";
        let counts: Vec<f64> = r[2..].iter().map(|v| num(v, csv_path)).collect::<Result<_>>()?;
        let total: f64 = counts.iter().sum();
        for (p, c) in counts.iter().enumerate() {
            let x = PAD + cell * p as f64;
            let y = PAD + cell * t as f64;
            let (fill, label) = if present && total > 0.0 {
                let v = c / total;
                let shade = (255.0 * (1.0 - v)).round() as u8;
                (format!("rgb({shade},{shade},255)"), format!("{v:.2}"))
            } else {
                ("rgb(230,230,230)".to_string(), "nan".to_string())
            };
            s += &format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"white\"/>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{t}</text>\n",
            PAD - 6.0,
            PAD + cell * t as f64 + cell / 2.0 + 4.0
        );
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{t}</text>\n",
            PAD + cell * t as f64 + cell / 2.0,
            PAD - 6.0
        );
    }
    s += "</svg>\n";
    std::fs::write(out, s).map_err(|e| Error::io(out, e))
}

/// Renders every figure a run directory supports into `<run>/plots`.
/// Fails with a missing-artifact error if a fold has no evaluation outputs.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut folds: Vec<PathBuf> = std::fs::read_dir(run_dir)
        .map_err(|e| Error::io(run_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("fold_")))
        .collect();
    folds.sort();
    if folds.is_empty() {
        return Err(Error::MissingArtifact(run_dir.join("fold_0")));
    }
    let out_dir = run_dir.join("plots");
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut written = Vec::new();
    for fold in folds {
        let name = fold.file_name().unwrap().to_string_lossy().to_string();
        let mut losses: Vec<PathBuf> = std::fs::read_dir(&fold)
            .map_err(|e| Error::io(&fold, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with("_loss.csv"))
            .collect();
        losses.sort();
        for l in losses {
            let stem = l.file_stem().unwrap().to_string_lossy().to_string();
            let out = out_dir.join(format!("{name}_{stem}.svg"));
            loss_curve_svg(&l, &out)?;
            written.push(out);
        }
        let out = out_dir.join(format!("{name}_confusion.svg"));
        confusion_svg(&fold.join("confusion.csv"), &out)?;
        written.push(out);
        let cmc = fold.join("cmc.csv");
        if cmc.is_file() {
            let out = out_dir.join(format!("{name}_cmc.svg"));
            cmc_svg(&cmc, &out, 50)?;
            written.push(out);
        }
    }
    Ok(written)
}
