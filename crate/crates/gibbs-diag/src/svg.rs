//! Minimal SVG bar and line charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        r##"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="#333"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="#333"/>"##,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    )
    .unwrap();
    s
}

fn axis_label(s: &mut String, value: f64, y: f64) {
    writeln!(
        s,
        r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#,
        MARGIN - 4.0,
        y + 3.0,
        short(value)
    )
    .unwrap();
}

fn short(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Bars for `values`, with an optional shaded `(low, high)` band per bar.
pub fn bar_chart(title: &str, values: &[f64], band: Option<&[(f64, f64)]>) -> String {
    let mut s = open(title);
    let top = values
        .iter()
        .copied()
        .chain(band.into_iter().flatten().map(|b| b.1))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / values.len().max(1) as f64;
    let y_of = |v: f64| HEIGHT - MARGIN - plot_h * v / top;
    if let Some(band) = band {
        for (i, (lo, hi)) in band.iter().enumerate() {
            writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#bbbbbb" fill-opacity="0.5"/>"##,
                MARGIN + i as f64 * bar_w,
                y_of(*hi),
                bar_w,
                y_of(*lo) - y_of(*hi)
            )
            .unwrap();
        }
    }
    for (i, v) in values.iter().enumerate() {
        writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a7ab5" fill-opacity="0.8"/>"##,
            MARGIN + i as f64 * bar_w + 0.1 * bar_w,
            y_of(*v),
            0.8 * bar_w,
            HEIGHT - MARGIN - y_of(*v)
        )
        .unwrap();
    }
    axis_label(&mut s, 0.0, HEIGHT - MARGIN);
    axis_label(&mut s, top, MARGIN);
    s.push_str("</svg>\n");
    s
}

/// Equal-width histogram of `values` over their range.
pub fn histogram(title: &str, values: &[f64], bins: usize) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0.0; bins.max(1)];
    if hi > lo {
        for v in &finite {
            let k = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1.0;
        }
    } else if !finite.is_empty() {
        counts[0] = finite.len() as f64;
    }
    bar_chart(
        &format!("{title} [{}, {}]", short(lo), short(hi)),
        &counts,
        None,
    )
}

/// Polylines sharing one pair of axes.
pub fn line_chart(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let mut s = open(title);
    let points = series
        .iter()
        .flat_map(|(_, p)| p.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let colours = ["#4a7ab5", "#c0504d", "#9bbb59", "#8064a2", "#f79646"];
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    for (k, (label, pts)) in series.iter().enumerate() {
        let colour = colours[k % colours.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    MARGIN + plot_w * (x - x0) / (x1 - x0),
                    HEIGHT - MARGIN - plot_h * (y - y0) / (y1 - y0)
                )
            })
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{colour}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * (k as f64 + 1.0),
            escape(label)
        )
        .unwrap();
    }
    axis_label(&mut s, y0, HEIGHT - MARGIN);
    axis_label(&mut s, y1, MARGIN);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let bars = bar_chart("ranks <L>", &[1.0, 3.0, 2.0], Some(&[(0.0, 4.0); 3]));
        assert!(bars.starts_with("<svg") && bars.trim_end().ends_with("</svg>"));
        assert_eq!(bars.matches("<rect").count(), 1 + 3 + 3);
        assert!(bars.contains("ranks &lt;L&gt;"));

        let lines = line_chart(
            "rhat",
            &[("a", vec![(1.0, 2.0), (2.0, 1.5)]), ("b", vec![(1.0, 1.0)])],
        );
        assert_eq!(lines.matches("<polyline").count(), 2);

        let h = histogram("x", &[1.0, 1.0, 1.0], 5);
        assert!(h.contains("<svg"));
        assert!(!histogram("empty", &[], 4).contains("NaN"));
    }
}
