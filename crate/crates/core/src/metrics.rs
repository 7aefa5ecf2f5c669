//! Run statistics: per-step traces, 100-episode reward windows, validation
//! scores, and the pass/collision counters behind the accuracy figure.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Episodes per reward window.
pub const WINDOW_EPISODES: usize = 100;

/// Percentage of resolved cars that were passed. `None` when no car has
/// been resolved yet.
pub fn accuracy(passed: u64, collided: u64) -> Option<f64> {
    let total = passed + collided;
    if total == 0 {
        None
    } else {
        Some(100.0 * passed as f64 / total as f64)
    }
}

pub fn format_accuracy(acc: Option<f64>) -> String {
    match acc {
        Some(a) => format!("{a:.2}%"),
        None => "n/a (no cars encountered)".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub episode: u64,
    pub reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRecord {
    pub window: u64,
    pub mean_reward: f64,
    /// Training step at which the window's last episode ended. Not persisted.
    pub end_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRecord {
    pub step: u64,
    pub mean_reward: f64,
    pub accuracy: Option<f64>,
    pub is_new_best: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub steps: Vec<StepRecord>,
    pub windows: Vec<WindowRecord>,
    pub validations: Vec<ValidationRecord>,
    pub passed: u64,
    pub collided: u64,
    pending_episodes: Vec<f64>,
}

impl RunMetrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accuracy(&self) -> Option<f64> {
        accuracy(self.passed, self.collided)
    }

    pub fn record_step(&mut self, step: u64, episode: u64, reward: f64, epsilon: f64) {
        self.steps.push(StepRecord {
            step,
            episode,
            reward,
            epsilon,
        });
    }

    /// Registers a finished episode's accumulated reward, closing a window
    /// every [`WINDOW_EPISODES`] episodes.
    pub fn end_episode(&mut self, total_reward: f64, step: u64) {
        self.pending_episodes.push(total_reward);
        if self.pending_episodes.len() == WINDOW_EPISODES {
            let mean = self.pending_episodes.iter().sum::<f64>() / WINDOW_EPISODES as f64;
            self.windows.push(WindowRecord {
                window: self.windows.len() as u64,
                mean_reward: mean,
                end_step: step,
            });
            self.pending_episodes.clear();
        }
    }

    pub fn completed_episodes(&self) -> usize {
        self.windows.len() * WINDOW_EPISODES + self.pending_episodes.len()
    }

    /// Writes `steps.csv`, `windows.csv`, `validation.csv` and
    /// `counters.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut s = String::from("step,episode,reward,epsilon\n");
        for r in &self.steps {
            writeln!(s, "{},{},{},{}", r.step, r.episode, r.reward, r.epsilon).unwrap();
        }
        write_file(&dir.join("steps.csv"), &s)?;

        let mut s = String::from("window,mean_reward\n");
        for w in &self.windows {
            writeln!(s, "{},{}", w.window, w.mean_reward).unwrap();
        }
        write_file(&dir.join("windows.csv"), &s)?;

        let mut s = String::from("step,mean_reward,accuracy,is_new_best\n");
        for v in &self.validations {
            let acc = v.accuracy.map_or("n/a".to_string(), |a| a.to_string());
            writeln!(s, "{},{},{},{}", v.step, v.mean_reward, acc, v.is_new_best).unwrap();
        }
        write_file(&dir.join("validation.csv"), &s)?;

        let s = format!("passed,collided\n{},{}\n", self.passed, self.collided);
        write_file(&dir.join("counters.csv"), &s)
    }

    pub fn read_csv(dir: &Path) -> Result<RunMetrics> {
        let mut m = RunMetrics::new();

        for (line, f) in read_table(
            &dir.join("steps.csv"),
            &["step", "episode", "reward", "epsilon"],
        )? {
            m.steps.push(StepRecord {
                step: f.int(0, line)?,
                episode: f.int(1, line)?,
                reward: f.real(2, line)?,
                epsilon: f.real(3, line)?,
            });
        }
        for (line, f) in read_table(&dir.join("windows.csv"), &["window", "mean_reward"])? {
            m.windows.push(WindowRecord {
                window: f.int(0, line)?,
                mean_reward: f.real(1, line)?,
                end_step: 0,
            });
        }
        let header = ["step", "mean_reward", "accuracy", "is_new_best"];
        for (line, f) in read_table(&dir.join("validation.csv"), &header)? {
            let accuracy = match f.fields[2].as_str() {
                "n/a" => None,
                _ => Some(f.real(2, line)?),
            };
            let is_new_best = match f.fields[3].as_str() {
                "true" => true,
                "false" => false,
                other => return Err(f.err(line, format!("expected true/false, got {other:?}"))),
            };
            m.validations.push(ValidationRecord {
                step: f.int(0, line)?,
                mean_reward: f.real(1, line)?,
                accuracy,
                is_new_best,
            });
        }
        let counters_path = dir.join("counters.csv");
        let counters = read_table(&counters_path, &["passed", "collided"])?;
        if let Some((line, f)) = counters.first() {
            m.passed = f.int(0, *line)?;
            m.collided = f.int(1, *line)?;
        }
        Ok(m)
    }

    /// Structural equality over the persisted fields.
    pub fn same_records(&self, other: &RunMetrics) -> bool {
        let windows = |m: &RunMetrics| -> Vec<(u64, f64)> {
            m.windows
                .iter()
                .map(|w| (w.window, w.mean_reward))
                .collect()
        };
        self.steps == other.steps
            && windows(self) == windows(other)
            && self.validations == other.validations
            && self.passed == other.passed
            && self.collided == other.collided
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

struct Fields<'a> {
    path: &'a Path,
    fields: Vec<String>,
}

impl Fields<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.path.display(), line, msg)
    }

    fn int(&self, i: usize, line: usize) -> Result<u64> {
        self.fields[i]
            .parse()
            .map_err(|_| self.err(line, format!("bad integer {:?}", self.fields[i])))
    }

    fn real(&self, i: usize, line: usize) -> Result<f64> {
        self.fields[i]
            .parse()
            .map_err(|_| self.err(line, format!("bad number {:?}", self.fields[i])))
    }
}

fn read_table<'a>(path: &'a Path, header: &[&str]) -> Result<Vec<(usize, Fields<'a>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let expected = header.join(",");
    match lines.next() {
        Some((_, h)) if h == expected => {}
        Some((_, h)) => {
            return Err(Error::parse(
                path.display(),
                1,
                format!("header {h:?} does not match {expected:?}"),
            ))
        }
        None => return Err(Error::parse(path.display(), 1, "missing header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(Error::parse(
                path.display(),
                line_no,
                format!("expected {} columns, found {}", header.len(), fields.len()),
            ));
        }
        out.push((line_no, Fields { path, fields }));
    }
    Ok(out)
}

pub const SVG_WIDTH: f64 = 960.0;
pub const SVG_HEIGHT: f64 = 540.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Renders `(x, y)` series as a standalone SVG line chart.
pub fn plot_svg(series: &[Vec<(f64, f64)>], labels: &[&str], y_label: &str) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Usage("nothing to plot".into()));
    }
    if labels.len() != series.len() {
        return Err(Error::Usage(format!(
            "{} series but {} labels",
            series.len(),
            labels.len()
        )));
    }
    if let Some(i) = series.iter().position(Vec::is_empty) {
        return Err(Error::Usage(format!("series {:?} is empty", labels[i])));
    }

    let points = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Numeric(format!("cannot plot point ({x}, {y})")));
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 == y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }

    let (left, right, top, bottom) = (80.0, 30.0, 30.0, 60.0);
    let pw = SVG_WIDTH - left - right;
    let ph = SVG_HEIGHT - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = SVG_WIDTH,
        h = SVG_HEIGHT
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#,
        l = left,
        r = left + pw,
        t = top,
        b = top + ph
    )
    .unwrap();

    writeln!(
        s,
        r#"<g font-family="sans-serif" font-size="12" fill="black">"#
    )
    .unwrap();
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 18.0,
            tick_label(xv)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            tick_label(yv)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">window (100 episodes)</text>"#,
        left + pw / 2.0,
        SVG_HEIGHT - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    writeln!(s, "</g>").unwrap();

    for (i, pts) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        )
        .unwrap();
    }

    let lx = left + pw - 180.0;
    for (i, label) in labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = top + 16.0 + 20.0 * i as f64;
        writeln!(
            s,
            r#"<g class="legend"><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text></g>"#,
            lx,
            ly,
            lx + 24.0,
            ly,
            lx + 30.0,
            ly + 4.0,
            escape(label)
        )
        .unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

pub fn write_svg(
    series: &[Vec<(f64, f64)>],
    labels: &[&str],
    y_label: &str,
    path: &Path,
) -> Result<()> {
    let svg = plot_svg(series, labels, y_label)?;
    write_file(path, &svg)
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
