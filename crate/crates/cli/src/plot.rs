//! Trajectory CSV reader and a small self-contained SVG line-chart writer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    /// log10 of each agent's distance to y* against time.
    GapLog,
    /// First two output components against each other.
    Phase,
    /// Every output component against time.
    Components,
}

/// Samples of one agent, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentSeries {
    pub t: Vec<f64>,
    /// `y[k]` is the output vector at `t[k]`.
    pub y: Vec<Vec<f64>>,
    pub gap: Vec<f64>,
}

/// A parsed trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub m: usize,
    pub agents: BTreeMap<usize, AgentSeries>,
}

impl TrajectoryTable {
    /// Distinct sample instants.
    pub fn sample_count(&self) -> usize {
        self.agents.values().next().map_or(0, |a| a.t.len())
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::MissingColumn(name.to_string()))
}

pub fn read_table(path: &Path) -> Result<TrajectoryTable, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(optcons::Error::from)?;
    let headers = rd.headers().map_err(optcons::Error::from)?.clone();
    if headers.is_empty() {
        return Err(CliError::EmptyCsv(path.display().to_string()));
    }
    let t_col = column(&headers, "t")?;
    let agent_col = column(&headers, "agent")?;
    let gap_col = column(&headers, "gap")?;
    let m = headers.iter().filter(|h| h.starts_with("y_")).count();
    if m == 0 {
        return Err(CliError::MissingColumn("y_1".into()));
    }
    let y_cols = (1..=m)
        .map(|k| column(&headers, &format!("y_{k}")))
        .collect::<Result<Vec<_>, _>>()?;

    let mut agents: BTreeMap<usize, AgentSeries> = BTreeMap::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(optcons::Error::from)?;
        let num = |c: usize| -> Result<f64, CliError> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CliError::BadValue {
                    row: line + 2,
                    column: headers[c].to_string(),
                })
        };
        let agent = num(agent_col)? as usize;
        let entry = agents.entry(agent).or_default();
        entry.t.push(num(t_col)?);
        entry.y.push(
            y_cols
                .iter()
                .map(|&c| num(c))
                .collect::<Result<Vec<_>, _>>()?,
        );
        entry.gap.push(num(gap_col)?);
    }
    if agents.is_empty() {
        return Err(CliError::EmptyCsv(path.display().to_string()));
    }
    Ok(TrajectoryTable { m, agents })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A rendered chart and the data that went into it.
#[derive(Debug, Clone)]
pub struct Chart {
    pub series: Vec<Series>,
    pub marker: Option<(f64, f64)>,
    pub log_y: bool,
    pub svg: String,
}

/// Build the series for `kind`. For phase plots the marker is `y_star` if
/// given, else the mean of the agents' final outputs.
pub fn build_chart(
    table: &TrajectoryTable,
    kind: PlotKind,
    y_star: Option<&[f64]>,
) -> Result<Chart, CliError> {
    let mut series = Vec::new();
    let mut marker = None;
    let (title, xl, yl, log_y) = match kind {
        PlotKind::GapLog => {
            for (i, a) in &table.agents {
                let points =
                    a.t.iter()
                        .zip(&a.gap)
                        .map(|(t, g)| (*t, g.max(1e-16).log10()))
                        .collect();
                series.push(Series {
                    label: format!("agent {i}"),
                    points,
                });
            }
            ("distance to optimum", "t", "||y_i - y*||", true)
        }
        PlotKind::Phase => {
            if table.m < 2 {
                return Err(CliError::MissingColumn("y_2".into()));
            }
            for (i, a) in &table.agents {
                let points = a.y.iter().map(|v| (v[0], v[1])).collect();
                series.push(Series {
                    label: format!("agent {i}"),
                    points,
                });
            }
            marker = Some(match y_star {
                Some(p) if p.len() >= 2 => (p[0], p[1]),
                Some(_) => {
                    return Err(CliError::Usage(
                        "--ystar needs at least two components".into(),
                    ))
                }
                None => {
                    let n = table.agents.len() as f64;
                    let (sx, sy) = table
                        .agents
                        .values()
                        .filter_map(|a| a.y.last())
                        .fold((0.0, 0.0), |(sx, sy), v| (sx + v[0], sy + v[1]));
                    (sx / n, sy / n)
                }
            });
            ("output phase portrait", "y_1", "y_2", false)
        }
        PlotKind::Components => {
            for (i, a) in &table.agents {
                for k in 0..table.m {
                    let points = a.t.iter().zip(&a.y).map(|(t, v)| (*t, v[k])).collect();
                    series.push(Series {
                        label: format!("agent {i} y_{}", k + 1),
                        points,
                    });
                }
            }
            ("output components", "t", "y", false)
        }
    };
    let svg = render_svg(title, xl, yl, &series, marker, log_y);
    Ok(Chart {
        series,
        marker,
        log_y,
        svg,
    })
}

const W: f64 = 800.0;
const H: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|f| f * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn render_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    marker: Option<(f64, f64)>,
    log_y: bool,
) -> String {
    let all = || {
        series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .chain(marker)
    };
    let (x0, x1) = bounds(all().map(|p| p.0));
    let (y0, y1) = bounds(all().map(|p| p.1));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        esc(title)
    );

    for t in nice_ticks(x0, x1, 8) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e6e6e6"/>"##,
            TOP + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            fmt_tick(t)
        );
    }
    let yticks = if log_y {
        let lo = y0.ceil() as i32;
        let hi = y1.floor() as i32;
        let stride = ((hi - lo) / 8 + 1).max(1);
        (lo..=hi).step_by(stride as usize).map(f64::from).collect()
    } else {
        nice_ticks(y0, y1, 6)
    };
    for t in yticks {
        let y = sy(t);
        let label = if log_y {
            format!("1e{}", t as i32)
        } else {
            fmt_tick(t)
        };
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e6e6e6"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        esc(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(ylabel)
    );

    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &ser.points {
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
            }
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{}"/>"#,
            pts.trim_end()
        );
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            esc(&ser.label)
        );
    }
    if let Some((mx, my)) = marker {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="black" stroke-width="2"><title>y* = ({mx}, {my})</title></circle>"#,
            sx(mx),
            sy(my)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
