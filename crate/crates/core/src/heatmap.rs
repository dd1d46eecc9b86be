//! Plain-text SVG heatmaps with a linear white-to-red ramp.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const CELL: usize = 56;
const MARGIN_LEFT: usize = 80;
const MARGIN_TOP: usize = 48;
const LEGEND_STEPS: usize = 10;

fn ramp(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let fade = (255.0 * (1.0 - t)).round() as u8;
    (255, fade, fade)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `values[row][col]` as an SVG document. Colors map `[min, max]`
/// linearly to white..red; a constant matrix is drawn white. Every cell
/// carries its value printed with three decimals.
pub fn render_heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> Result<String> {
    if values.len() != row_labels.len() || values.iter().any(|r| r.len() != col_labels.len()) {
        return Err(Error::Shape(format!(
            "heatmap expects {}x{} values",
            row_labels.len(),
            col_labels.len()
        )));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("heatmap values must be finite".into()));
    }
    let (rows, cols) = (row_labels.len(), col_labels.len());
    let lo = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scale = |v: f64| if span > 0.0 { (v - lo) / span } else { 0.0 };

    let grid_w = cols * CELL;
    let grid_h = rows * CELL;
    let legend_x = MARGIN_LEFT + grid_w + 24;
    let width = legend_x + 24 + 72;
    let height = (MARGIN_TOP + grid_h + 24).max(MARGIN_TOP + LEGEND_STEPS * 16 + 24);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN_LEFT}" y="20" font-size="14">{}</text>"#, escape(title));
    for (j, label) in col_labels.iter().enumerate() {
        let x = MARGIN_LEFT + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN_TOP - 8,
            escape(label)
        );
    }
    for (i, label) in row_labels.iter().enumerate() {
        let y = MARGIN_TOP + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8,
            escape(label)
        );
        for (j, &v) in values[i].iter().enumerate() {
            let (r, g, b) = ramp(scale(v));
            let (x, y0) = (MARGIN_LEFT + j * CELL, MARGIN_TOP + i * CELL);
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{x}" y="{y0}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#888888"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}" text-anchor="middle">{v:.3}</text>"#,
                x + CELL / 2
            );
        }
    }
    let _ = writeln!(s, r#"<g class="legend">"#);
    for step in 0..LEGEND_STEPS {
        // Top of the legend is the maximum.
        let t = 1.0 - step as f64 / (LEGEND_STEPS - 1) as f64;
        let (r, g, b) = ramp(t);
        let y = MARGIN_TOP + step * 16;
        let _ = writeln!(
            s,
            r##"<rect x="{legend_x}" y="{y}" width="24" height="16" fill="#{r:02x}{g:02x}{b:02x}"/>"##
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">{hi:.3}</text>"#,
        legend_x + 30,
        MARGIN_TOP + 12
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">{lo:.3}</text>"#,
        legend_x + 30,
        MARGIN_TOP + LEGEND_STEPS * 16
    );
    let _ = writeln!(s, "</g>\n</svg>");
    Ok(s)
}
