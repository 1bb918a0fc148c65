//! Experiment result rows, CSV output and a minimal PNG line chart.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub config_id: String,
    pub variant: String,
    /// Angle, resolution or shape of the cell.
    pub condition: String,
    /// Seed, or `all` for rows summarizing several seeds.
    pub seed: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: [&str; 6] = ["config_id", "variant", "condition", "seed", "metric", "value"];

impl ExperimentReport {
    pub fn push(&mut self, config_id: &str, variant: &str, condition: &str, seed: &str, metric: &str, value: f64) {
        self.rows.push(ReportRow {
            config_id: config_id.into(),
            variant: variant.into(),
            condition: condition.into(),
            seed: seed.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
    }

    /// Values of `metric` for `variant`, in row order.
    pub fn values(&self, variant: &str, metric: &str) -> Vec<f64> {
        self.select(|r| r.variant == variant && r.metric == metric).map(|r| r.value).collect()
    }

    pub fn select<'a>(&'a self, f: impl Fn(&ReportRow) -> bool + 'a) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| f(r))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.config_id.as_str(),
                &r.variant,
                &r.condition,
                &r.seed,
                &r.metric,
                &format!("{:.8}", r.value),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];

/// Line chart of `(x, y)` series on a white canvas with axis lines. No text
/// is drawn; series colors follow a fixed palette in order.
pub fn plot_lines(path: &Path, series: &[Vec<(f64, f64)>], width: u32, height: u32) -> Result<()> {
    let pts: Vec<&(f64, f64)> = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if pts.is_empty() || width < 20 || height < 20 {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let margin = 10.0;
    let (w, h) = (f64::from(width), f64::from(height));
    let map = |x: f64, y: f64| (margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin), h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin));
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    let mut put = |x: f64, y: f64, c: [u8; 3]| {
        let (px, py) = (x.round() as i64, y.round() as i64);
        if px >= 0 && py >= 0 && (px as u32) < width && (py as u32) < height {
            img.put_pixel(px as u32, py as u32, image::Rgb(c));
        }
    };
    let line = |a: (f64, f64), b: (f64, f64), c: [u8; 3], put: &mut dyn FnMut(f64, f64, [u8; 3])| {
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            put(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), c);
        }
    };
    let grey = [120, 120, 120];
    line((margin, h - margin), (w - margin, h - margin), grey, &mut put);
    line((margin, margin), (margin, h - margin), grey, &mut put);
    for (s, data) in series.iter().enumerate() {
        let c = PALETTE[s % PALETTE.len()];
        for pair in data.windows(2) {
            line(map(pair[0].0, pair[0].1), map(pair[1].0, pair[1].1), c, &mut put);
        }
        for p in data {
            let (cx, cy) = map(p.0, p.1);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    put(cx + f64::from(dx), cy + f64::from(dy), c);
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}
