use std::fmt::Write as _;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn marker(out: &mut String, class: usize, x: f64, y: f64, color: &str) {
    let r = 3.5;
    let _ = match class % 3 {
        0 => writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}" fill-opacity="0.7"/>"#),
        1 => writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{color}" fill-opacity="0.7"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        _ => writeln!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}" fill-opacity="0.7"/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
    };
}

const SHAPES: [&str; 3] = ["circle", "square", "triangle"];

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Text-only legend so every marker element stays one sample.
fn legend(out: &mut String, classes: &[usize], domains: &[usize]) {
    let x = SIZE - MARGIN - 110.0;
    let mut y = 16.0;
    for c in distinct(classes) {
        let _ = writeln!(
            out,
            r#"<text class="legend" x="{x}" y="{y}" font-family="sans-serif" font-size="10">class {c}: {}</text>"#,
            SHAPES[c % SHAPES.len()]
        );
        y += 12.0;
    }
    for d in distinct(domains) {
        let color = PALETTE[d % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<text class="legend" x="{x}" y="{y}" font-family="sans-serif" font-size="10" fill="{color}">domain {d}</text>"#
        );
        y += 12.0;
    }
}

/// Standalone SVG scatter of 2-D points: marker shape encodes class, color
/// encodes domain; a text legend names both.
pub fn scatter_svg(coords: ArrayView2<'_, f64>, classes: &[usize], domains: &[usize], title: &str) -> Result<String> {
    let n = coords.nrows();
    if coords.ncols() != 2 {
        return Err(Error::DimMismatch { expected: 2, got: coords.ncols() });
    }
    if classes.len() != n || domains.len() != n {
        return Err(Error::DimMismatch { expected: n, got: classes.len().min(domains.len()) });
    }
    let bounds = |c: usize| {
        let col = coords.column(c);
        let lo = col.fold(f64::INFINITY, |m, &v| m.min(v));
        let hi = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) }
    };
    let ((x0, x1), (y0, y1)) = (bounds(0), bounds(1));
    let span = SIZE - 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let escaped = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{escaped}</text>"#);
    for i in 0..n {
        let x = MARGIN + (coords[[i, 0]] - x0) / (x1 - x0) * span;
        let y = SIZE - MARGIN - (coords[[i, 1]] - y0) / (y1 - y0) * span;
        marker(&mut out, classes[i], x, y, PALETTE[domains[i] % PALETTE.len()]);
    }
    legend(&mut out, classes, domains);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_shape_per_class_one_color_per_domain() {
        let c = array![[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]];
        let svg = scatter_svg(c.view(), &[0, 1, 0], &[0, 0, 1], "a < b").unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<rect x=").count(), 1);
        assert!(svg.contains(PALETTE[1]));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains(">class 1: square<"));
        assert!(svg.contains(">domain 1<"));
        assert_eq!(svg.matches(r#"class="legend""#).count(), 4);
    }
}
