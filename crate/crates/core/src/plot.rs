//! Seed-averaged training curves from metrics CSV files.
//!
//! Files are grouped by their `# row=` header line. Within a group the
//! reward at each `env_steps` value is averaged over the files (seeds) that
//! report it, and the band spans ±1 population standard deviation. Each
//! population gets a PNG (`curves_good.png`, `curves_adv.png`) with one
//! coloured line per group, and a CSV with the plotted numbers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::trainer::MetricsRecord;

/// One metrics file reduced to what the plots need.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub path: PathBuf,
    pub row: String,
    /// `(env_steps, mean_ep_reward_good, mean_ep_reward_adv)`.
    pub points: Vec<(usize, f64, f64)>,
}

pub fn parse_metrics(path: &Path, text: &str) -> Result<MetricsFile> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut row = String::from("run");
    let mut header_seen = false;
    let mut points = Vec::new();
    let n_cols = MetricsRecord::HEADER.split(',').count();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(r) = comment.trim().strip_prefix("row=") {
                row = r.to_string();
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line != MetricsRecord::HEADER {
                return Err(malformed(n, "expected the metrics column header".into()));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(malformed(
                n,
                format!("expected {n_cols} fields, found {}", fields.len()),
            ));
        }
        let steps = fields[1]
            .parse::<usize>()
            .map_err(|_| malformed(n, format!("env_steps `{}` is not an integer", fields[1])))?;
        let num = |j: usize| {
            fields[j]
                .parse::<f64>()
                .map_err(|_| malformed(n, format!("field {} `{}` is not a number", j + 1, fields[j])))
        };
        for j in 3..n_cols {
            num(j)?;
        }
        points.push((steps, num(3)?, num(4)?));
    }
    if !header_seen {
        return Err(malformed(text.lines().count().max(1), "no metrics header".into()));
    }
    Ok(MetricsFile {
        path: path.to_path_buf(),
        row,
        points,
    })
}

/// Mean and ±1 std band of one group at one x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Averages one reward column across files; NaN entries (updates that
/// finished no episode) are skipped.
pub fn average_curve(files: &[&MetricsFile], column: usize) -> Vec<CurvePoint> {
    let mut by_x: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for f in files {
        for &(x, g, a) in &f.points {
            let v = if column == 0 { g } else { a };
            if v.is_finite() {
                by_x.entry(x).or_default().push(v);
            }
        }
    }
    by_x.into_iter()
        .map(|(x, vs)| {
            let n = vs.len() as f64;
            let mean = vs.iter().sum::<f64>() / n;
            let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            CurvePoint {
                x,
                mean,
                std: var.sqrt(),
                n: vs.len(),
            }
        })
        .collect()
}

fn collect_csvs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_csvs(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(p);
        }
    }
    Ok(())
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

const WIDTH: u32 = 800;
const HEIGHT: u32 = 500;
const MARGIN: f64 = 40.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0).max(1e-12) * (WIDTH as f64 - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT as f64 - MARGIN - (y - self.y0) / (self.y1 - self.y0).max(1e-12) * (HEIGHT as f64 - 2.0 * MARGIN)
    }
}

fn blend(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3], alpha: f64) {
    if x < 0 || y < 0 || x >= WIDTH as i64 || y >= HEIGHT as i64 {
        return;
    }
    let p = img.get_pixel_mut(x as u32, y as u32);
    for (channel, &target) in p.0.iter_mut().zip(&c) {
        *channel = (alpha * target as f64 + (1.0 - alpha) * *channel as f64).round() as u8;
    }
}

fn line(img: &mut RgbImage, (ax, ay): (f64, f64), (bx, by): (f64, f64), c: [u8; 3]) {
    let steps = (bx - ax).abs().max((by - ay).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (ax + t * (bx - ax), ay + t * (by - ay));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            blend(img, x.round() as i64 + dx, y.round() as i64 + dy, c, 1.0);
        }
    }
}

fn render(curves: &[(String, Vec<CurvePoint>)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let pts = curves.iter().flat_map(|(_, c)| c.iter());
    let mut f = Frame {
        x0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y0: f64::INFINITY,
        y1: f64::NEG_INFINITY,
    };
    for p in pts {
        f.x0 = f.x0.min(p.x as f64);
        f.x1 = f.x1.max(p.x as f64);
        f.y0 = f.y0.min(p.mean - p.std);
        f.y1 = f.y1.max(p.mean + p.std);
    }
    if !f.x0.is_finite() {
        return img;
    }
    let pad = 0.05 * (f.y1 - f.y0).max(1e-6);
    f.y0 -= pad;
    f.y1 += pad;

    let grey = [120, 120, 120];
    let (l, r) = (MARGIN, WIDTH as f64 - MARGIN);
    let (t, b) = (MARGIN, HEIGHT as f64 - MARGIN);
    line(&mut img, (l, b), (r, b), grey);
    line(&mut img, (l, t), (l, b), grey);
    if f.y0 < 0.0 && f.y1 > 0.0 {
        let y0 = f.py(0.0);
        let mut x = l;
        while x < r {
            line(&mut img, (x, y0), ((x + 4.0).min(r), y0), [200, 200, 200]);
            x += 8.0;
        }
    }

    for (i, (_, curve)) in curves.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        for w in curve.windows(2) {
            let (xa, xb) = (f.px(w[0].x as f64), f.px(w[1].x as f64));
            let (xa_i, xb_i) = (xa.round() as i64, xb.round() as i64);
            for px in xa_i..xb_i.max(xa_i + 1) {
                let s = ((px as f64 - xa) / (xb - xa).max(1e-12)).clamp(0.0, 1.0);
                let lo = w[0].mean - w[0].std + s * ((w[1].mean - w[1].std) - (w[0].mean - w[0].std));
                let hi = w[0].mean + w[0].std + s * ((w[1].mean + w[1].std) - (w[0].mean + w[0].std));
                let (ylo, yhi) = (f.py(hi).round() as i64, f.py(lo).round() as i64);
                for py in ylo..=yhi {
                    blend(&mut img, px, py, c, 0.2);
                }
            }
        }
        for w in curve.windows(2) {
            line(
                &mut img,
                (f.px(w[0].x as f64), f.py(w[0].mean)),
                (f.px(w[1].x as f64), f.py(w[1].mean)),
                c,
            );
        }
        if let [only] = curve.as_slice() {
            let (x, y) = (f.px(only.x as f64), f.py(only.mean));
            line(&mut img, (x - 3.0, y), (x + 3.0, y), c);
        }
    }
    img
}

/// Reads every `metrics.csv` under `metrics_dir` and writes the curve
/// images and tables into `out_dir`. Returns the written paths.
///
/// Nothing is written unless at least one file parses.
pub fn plot_curves(metrics_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    collect_csvs(metrics_dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no metrics.csv files under {}",
            metrics_dir.display()
        )));
    }
    let files = paths
        .iter()
        .map(|p| parse_metrics(p, &fs::read_to_string(p)?))
        .collect::<Result<Vec<_>>>()?;
    let mut groups: BTreeMap<&str, Vec<&MetricsFile>> = BTreeMap::new();
    for f in &files {
        groups.entry(f.row.as_str()).or_default().push(f);
    }

    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (column, name) in ["good", "adv"].into_iter().enumerate() {
        let curves: Vec<(String, Vec<CurvePoint>)> = groups
            .iter()
            .map(|(row, fs)| (row.to_string(), average_curve(fs, column)))
            .collect();
        let mut table = String::from("row,colour,env_steps,mean,std,n_seeds\n");
        for (i, (row, curve)) in curves.iter().enumerate() {
            let [r, g, b] = PALETTE[i % PALETTE.len()];
            for p in curve {
                table.push_str(&format!(
                    "{row},#{r:02x}{g:02x}{b:02x},{},{},{},{}\n",
                    p.x, p.mean, p.std, p.n
                ));
            }
        }
        let csv = out_dir.join(format!("curves_{name}.csv"));
        fs::write(&csv, table)?;
        let png = out_dir.join(format!("curves_{name}.png"));
        render(&curves).save(&png).map_err(|e| Error::Image(e.to_string()))?;
        written.push(png);
        written.push(csv);
    }
    Ok(written)
}
