//! Plain SVG renderings of back-test and cause-of-death outputs.

use std::fmt::Write as _;

use crate::cod::{ResidualGrid, ThetaSurface};
use crate::domain::{Feature, FeatureSpace, Gender, RateSurface};
use crate::error::{Error, Result};

/// Default half-width of the white band around zero in delta heatmaps.
pub const DEFAULT_WHITE_BAND: f64 = 0.05;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// Diverging colour: white inside `[-band, band]`, otherwise blue for
/// negative and red for positive values, saturating at `|v| = max_abs`.
pub fn diverging_colour(v: f64, band: f64, max_abs: f64) -> String {
    if v.abs() <= band || !v.is_finite() {
        return "#ffffff".to_string();
    }
    let span = (max_abs - band).max(f64::MIN_POSITIVE);
    let t = ((v.abs() - band) / span).clamp(0.0, 1.0);
    // from a pale tint at the band edge to the full colour
    let mix = |full: u8| -> u8 { (235.0 + (full as f64 - 235.0) * (0.25 + 0.75 * t)).round() as u8 };
    let (r, g, b) = if v > 0.0 { (178, 24, 43) } else { (33, 102, 172) };
    format!("#{:02x}{:02x}{:02x}", mix(r), mix(g), mix(b))
}

fn open(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, s: &str) {
    let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{s}</text>"#);
}

/// Age-by-year heatmap of `delta` for one gender; years run left to right
/// and ages bottom to top.
pub fn delta_heatmap(space: &FeatureSpace, delta: &[f64], gender: Gender, white_band: f64) -> Result<String> {
    let block = space
        .gender_block(gender)
        .ok_or_else(|| Error::domain(format!("no {gender} cells in the grid")))?;
    if delta.len() != space.len() {
        return Err(Error::data("delta grid does not match the feature space"));
    }
    if !(white_band >= 0.0) {
        return Err(Error::config("white band must be nonnegative"));
    }
    let (na, nt) = (space.n_ages(), space.n_years());
    let cell = (600.0 / nt as f64).clamp(2.0, 12.0);
    let (left, top) = (50.0, 30.0);
    let (w, h) = (left + cell * nt as f64 + 90.0, top + cell * na as f64 + 40.0);
    let values = &delta[block];
    let max_abs = values.iter().fold(white_band, |m, v| m.max(v.abs()));
    let mut out = String::new();
    open(&mut out, w, h);
    text(&mut out, left, 18.0, "start", &format!("relative change, {gender} (white: |delta| <= {white_band})"));
    for (i, v) in values.iter().enumerate() {
        let (a, t) = (i / nt, i % nt);
        let x = left + t as f64 * cell;
        let y = top + (na - 1 - a) as f64 * cell;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"/>"#,
            diverging_colour(*v, white_band, max_abs)
        );
    }
    let (a0, t0) = (*space.ages().start(), *space.years().start());
    let bottom = top + cell * na as f64;
    text(&mut out, left, bottom + 14.0, "start", &t0.to_string());
    text(&mut out, left + cell * nt as f64, bottom + 14.0, "end", &space.years().end().to_string());
    text(&mut out, left - 4.0, bottom, "end", &a0.to_string());
    text(&mut out, left - 4.0, top + 10.0, "end", &space.ages().end().to_string());
    text(&mut out, left + cell * nt as f64 / 2.0, bottom + 30.0, "middle", "year");
    // legend
    let lx = left + cell * nt as f64 + 20.0;
    for (j, v) in [max_abs, max_abs / 2.0, 0.0, -max_abs / 2.0, -max_abs].iter().enumerate() {
        let y = top + j as f64 * 18.0;
        let _ = writeln!(
            out,
            r##"<rect x="{lx}" y="{y}" width="14" height="14" fill="{}" stroke="#999"/>"##,
            diverging_colour(*v, white_band, max_abs)
        );
        text(&mut out, lx + 18.0, y + 11.0, "start", &format!("{v:+.3}"));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.left + (v - lo) / (hi - lo).max(f64::MIN_POSITIVE) * self.width
    }

    fn y(&self, v: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.top + self.height - (v - lo) / (hi - lo).max(f64::MIN_POSITIVE) * self.height
    }

    fn draw_axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            self.left, self.top, self.width, self.height
        );
        let b = self.top + self.height;
        text(out, self.left, b + 13.0, "start", &format!("{}", self.x_range.0));
        text(out, self.left + self.width, b + 13.0, "end", &format!("{}", self.x_range.1));
        text(out, self.left - 3.0, b, "end", &format!("{:.3}", self.y_range.0));
        text(out, self.left - 3.0, self.top + 9.0, "end", &format!("{:.3}", self.y_range.1));
        text(out, self.left + self.width / 2.0, b + 13.0, "middle", x_label);
        text(out, self.left + 2.0, self.top - 3.0, "start", y_label);
    }

    fn polyline(&self, out: &mut String, pts: &[(f64, f64)], colour: &str, dashed: bool) {
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.x(x), self.y(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="4,3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.2"{dash}/>"#,
            coords.join(" ")
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Log-rates over age for selected years: `initial` dashed, `improved` solid.
pub fn rate_lines(initial: &RateSurface, improved: &RateSurface, gender: Gender, years: &[i32]) -> Result<String> {
    let space = initial.space();
    if improved.space() != space {
        return Err(Error::domain("rate surfaces use different grids"));
    }
    if space.gender_position(gender).is_none() {
        return Err(Error::domain(format!("no {gender} cells in the grid")));
    }
    if let Some(t) = years.iter().find(|t| !space.years().contains(t)) {
        return Err(Error::domain(format!("year {t} outside the grid")));
    }
    let ages: Vec<u32> = space.ages().collect();
    let log = |s: &RateSurface, a: u32, t: i32| s.rate(&Feature::new(gender, a, t)).unwrap().ln();
    let y_range = range(years.iter().flat_map(|&t| {
        ages.iter()
            .flat_map(move |&a| [log(initial, a, t), log(improved, a, t)])
    }));
    let frame = Frame {
        left: 60.0,
        top: 30.0,
        width: 520.0,
        height: 320.0,
        x_range: (ages[0] as f64, *ages.last().unwrap() as f64),
        y_range,
    };
    let mut out = String::new();
    open(&mut out, 700.0, 390.0);
    frame.draw_axes(&mut out, "age", &format!("log rate, {gender}"));
    for (j, &t) in years.iter().enumerate() {
        let colour = PALETTE[j % PALETTE.len()];
        let pts = |s: &RateSurface| -> Vec<(f64, f64)> { ages.iter().map(|&a| (a as f64, log(s, a, t))).collect() };
        frame.polyline(&mut out, &pts(initial), colour, true);
        frame.polyline(&mut out, &pts(improved), colour, false);
        text(&mut out, 600.0, 40.0 + 14.0 * j as f64, "start", &t.to_string());
        let _ = writeln!(out, r#"<rect x="588" y="{}" width="8" height="8" fill="{colour}"/>"#, 32.0 + 14.0 * j as f64);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Small multiples, one panel per age group: `theta` over years, one line
/// per cause.
pub fn theta_panels(theta: &ThetaSurface, gender: Gender, labels: &[String], bucket_labels: &[String]) -> Result<String> {
    let space = theta.space();
    let block = space
        .gender_block(gender)
        .ok_or_else(|| Error::domain(format!("no {gender} cells in the grid")))?;
    let k_count = theta.n_causes();
    let (na, nt) = (space.n_ages(), space.n_years());
    let years: Vec<i32> = space.years().collect();
    let vals = &theta.values()[block.start * k_count..block.end * k_count];
    let cols = 3usize;
    let rows = na.div_ceil(cols);
    let (pw, ph) = (260.0, 180.0);
    let legend = 20.0 + 14.0 * k_count as f64;
    let mut out = String::new();
    open(&mut out, cols as f64 * pw + 160.0, rows as f64 * ph + 20.0f64.max(legend - rows as f64 * ph));
    for b in 0..na {
        let y_range = range((0..nt * k_count).map(|j| vals[b * nt * k_count + j]));
        let frame = Frame {
            left: (b % cols) as f64 * pw + 50.0,
            top: (b / cols) as f64 * ph + 25.0,
            width: pw - 70.0,
            height: ph - 55.0,
            x_range: (years[0] as f64, *years.last().unwrap() as f64),
            y_range,
        };
        let label = bucket_labels.get(b).cloned().unwrap_or_else(|| (b + 1).to_string());
        frame.draw_axes(&mut out, "year", &format!("age {label}"));
        for k in 0..k_count {
            let pts: Vec<(f64, f64)> = (0..nt)
                .map(|t| (years[t] as f64, vals[(b * nt + t) * k_count + k]))
                .collect();
            frame.polyline(&mut out, &pts, PALETTE[k % PALETTE.len()], k >= PALETTE.len());
        }
    }
    let lx = cols as f64 * pw + 10.0;
    for k in 0..k_count {
        let y = 20.0 + 14.0 * k as f64;
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{lx}" y="{}" width="8" height="8" fill="{colour}"/>"#, y - 8.0);
        let name = labels.get(k).cloned().unwrap_or_else(|| (k + 1).to_string());
        text(&mut out, lx + 12.0, y, "start", &name);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Scatter of Pearson residuals against year, all causes and age groups.
pub fn residual_scatter(grid: &ResidualGrid, gender: Gender) -> Result<String> {
    let block = grid
        .space
        .gender_block(gender)
        .ok_or_else(|| Error::domain(format!("no {gender} cells in the grid")))?;
    let k = grid.n_causes;
    let nt = grid.space.n_years();
    let t0 = *grid.space.years().start();
    let vals = &grid.residual[block.start * k..block.end * k];
    let y_range = range(vals.iter().copied());
    let frame = Frame {
        left: 60.0,
        top: 30.0,
        width: 520.0,
        height: 320.0,
        x_range: (t0 as f64, *grid.space.years().end() as f64),
        y_range,
    };
    let mut out = String::new();
    open(&mut out, 620.0, 390.0);
    frame.draw_axes(&mut out, "year", &format!("Pearson residual, {gender}"));
    for (j, v) in vals.iter().enumerate() {
        let t = t0 + ((j / k) % nt) as i32;
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}"/>"#,
            frame.x(t as f64),
            frame.y(*v),
            PALETTE[(j % k) % PALETTE.len()]
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
