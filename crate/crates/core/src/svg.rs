// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Minimal SVG figures: matrix heat maps and labelled scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn save(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Blue below `center`, red above, white at it; missing cells are grey.
fn diverging(v: f64, lo: f64, center: f64, hi: f64) -> String {
    let t = if v >= center {
        if hi > center { ((v - center) / (hi - center)).min(1.0) } else { 0.0 }
    } else if center > lo {
        -((center - v) / (center - lo)).min(1.0)
    } else {
        0.0
    };
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t >= 0.0 {
        format!("rgb(255,{},{})", fade(t), fade(t))
    } else {
        format!("rgb({},{},255)", fade(t), fade(t))
    }
}

/// Square heat map with a diverging scale around `center`.
pub fn heatmap(path: &Path, title: &str, labels: &[String], m: &[Vec<Option<f64>>], center: f64) -> Result<()> {
    let n = m.len();
    let cell = if n > 60 { 4.0 } else { 400.0 / n.max(1) as f64 };
    let margin = 60.0;
    let size = margin + cell * n as f64 + 20.0;
    let vals = m.iter().flatten().flatten().copied();
    let (lo, hi) = vals.fold((center, center), |(a, b), v| (a.min(v), b.max(v)));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{margin}" y="20" font-size="12">{title} (range {lo:.3} to {hi:.3})</text>"#);
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let fill = v.map_or_else(|| "#cccccc".to_string(), |v| diverging(v, lo, center, hi));
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}"/>"#,
                margin + j as f64 * cell,
                margin + i as f64 * cell
            );
        }
    }
    if cell >= 10.0 {
        for (i, l) in labels.iter().enumerate().take(n) {
            let c = margin + (i as f64 + 0.5) * cell;
            let _ = writeln!(s, r#"<text x="{:.2}" y="{c:.2}" text-anchor="end">{l}</text>"#, margin - 4.0);
            let _ = writeln!(s, r#"<text x="{c:.2}" y="{:.2}" text-anchor="middle">{l}</text>"#, margin - 4.0);
        }
    }
    s.push_str("</svg>\n");
    save(path, &s)
}

#[derive(Debug, Clone, Copy)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    /// Marker radius in pixels.
    pub r: f64,
    /// Squares when set, circles otherwise.
    pub square: bool,
    pub group: usize,
}

pub fn scatter(path: &Path, title: &str, x_label: &str, y_label: &str, pts: &[ScatterPoint]) -> Result<()> {
    let (w, h, m) = (520.0, 420.0, 50.0);
    let bounds = |f: fn(&ScatterPoint) -> f64| {
        let (a, b) = pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if a < b { (a, b) } else { (a - 1.0, a + 1.0) }
    };
    let (x0, x1) = bounds(|p| p.x);
    let (y0, y1) = bounds(|p| p.y);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{m}" y="20" font-size="12">{title}</text>"#);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label} ({x0:.1} to {x1:.1})</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{y_label} ({y0:.2} to {y1:.2})</text>"#,
        h / 2.0,
        h / 2.0
    );
    for p in pts {
        let color = PALETTE[p.group % PALETTE.len()];
        let (cx, cy) = (px(p.x), py(p.y));
        if p.square {
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.7"/>"#,
                cx - p.r,
                cy - p.r,
                2.0 * p.r,
                2.0 * p.r
            );
        } else {
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="{color}" fill-opacity="0.7"/>"#,
                p.r
            );
        }
    }
    s.push_str("</svg>\n");
    save(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_well_formed_documents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.svg");
        heatmap(&p, "L", &["1".into(), "2".into()], &[vec![Some(0.5), None], vec![None, Some(1.5)]], 1.0).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        assert_eq!(text.matches("<rect").count(), 4);

        let p = dir.path().join("s.svg");
        let pts = [
            ScatterPoint { x: 30.0, y: 4.0, r: 3.0, square: false, group: 0 },
            ScatterPoint { x: 50.0, y: 6.0, r: 5.0, square: true, group: 1 },
        ];
        scatter(&p, "AFS", "age", "SEG", &pts).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.matches("<circle").count(), 1);
        assert_eq!(text.matches("<rect").count(), 1);
    }
}
