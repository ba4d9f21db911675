//! Minimal SVG figures: polar skyplot and time-series line charts.

use std::fmt::Write as _;

use ndtslam_core::urban::Skyplot;

const SIZE: f64 = 400.0;

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

/// Polar plot, north up, azimuth clockwise. The building mask is shaded
/// between the horizon and the mask contour.
pub fn skyplot(plot: &Skyplot, title: &str) -> String {
    let (cx, cy, r) = (SIZE / 2.0, SIZE / 2.0 + 10.0, SIZE / 2.0 - 30.0);
    let at = |az_deg: f64, elev: f64| {
        let rr = r * (90.0 - elev) / 90.0;
        let a = az_deg.to_radians();
        (cx + rr * a.sin(), cy - rr * a.cos())
    };
    let mut out = String::new();
    header(&mut out, SIZE, SIZE + 20.0);
    let _ = writeln!(out, r#"<text x="{cx}" y="16" text-anchor="middle">{}</text>"#, escape(title));

    let mut d = format!("M {} {} A {r} {r} 0 1 0 {} {} A {r} {r} 0 1 0 {} {} Z ", cx, cy - r, cx, cy + r, cx, cy - r);
    for (i, elev) in plot.mask.iter().enumerate() {
        let (x, y) = at(i as f64, *elev);
        let _ = write!(d, "{} {x:.2} {y:.2} ", if i == 0 { "M" } else { "L" });
    }
    d.push('Z');
    let _ = writeln!(out, r##"<path d="{d}" fill="#8a8f98" fill-opacity="0.6" fill-rule="evenodd" stroke="#333" stroke-width="1"/>"##);

    for elev in [0.0, 30.0, 60.0] {
        let rr = r * (90.0 - elev) / 90.0;
        let _ = writeln!(out, r##"<circle cx="{cx}" cy="{cy}" r="{rr:.2}" fill="none" stroke="#bbb"/>"##);
        let _ = writeln!(out, r##"<text x="{:.2}" y="{:.2}" fill="#666">{elev:.0}°</text>"##, cx + 3.0, cy - rr + 12.0);
    }
    for (label, az) in [("N", 0.0), ("E", 90.0), ("S", 180.0), ("W", 270.0)] {
        let (x, y) = at(az, -8.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, y + 4.0);
    }
    out.push_str("</svg>\n");
    out
}

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with linear axes starting at zero on y.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 45.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - y / y1 * (h - top - bottom);

    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M {left} {top} L {left} {} L {} {}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y1 * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), h - bottom + 16.0, tick(fx));
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 8.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            pts.join(" "),
            s.color
        );
        let ly = top + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            w - right - 150.0,
            w - right - 130.0,
            s.color,
            w - right - 125.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndtslam_core::urban::AZIMUTH_BINS;

    #[test]
    fn skyplot_has_mask_path_and_rings() {
        let plot = Skyplot {
            origin: [0.0, 0.0, 2.0],
            mask: [30.0; AZIMUTH_BINS],
        };
        let svg = skyplot(&plot, "a < b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("evenodd"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn chart_handles_empty_and_flat_series() {
        let svg = line_chart("t", "x", "y", &[Series { label: "none", color: "red", points: vec![] }]);
        assert!(svg.trim_end().ends_with("</svg>"));
        let svg = line_chart("t", "x", "y", &[Series { label: "flat", color: "red", points: vec![(1.0, 0.0), (1.0, 0.0)] }]);
        assert!(!svg.contains("NaN"));
    }
}
