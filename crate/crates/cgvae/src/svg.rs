//! Minimal native SVG rendering for the plot command: line charts for
//! loss logs, bar charts with error bars for metric reports, and 2-D
//! histograms for dihedral-angle distributions.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;

fn header(title: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{cx}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>
"#,
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = escape(title),
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_labels(xlabel: &str, ylabel: &str) -> String {
    format!(
        r#"<text x="{cx}" y="{by}" text-anchor="middle" font-family="sans-serif" font-size="12">{x}</text>
<text x="16" y="{cy}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {cy})">{y}</text>
"#,
        cx = WIDTH / 2.0,
        by = HEIGHT - 12.0,
        cy = HEIGHT / 2.0,
        x = escape(xlabel),
        y = escape(ylabel),
    )
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Multi-series line chart. Series with non-positive values fall back
/// from the log scale to linear.
pub fn line_chart(
    series: &[(String, Vec<(f64, f64)>)],
    title: &str,
    xlabel: &str,
    ylabel: &str,
    log_y: bool,
) -> String {
    let mut svg = header(title);
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if points.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let log_ok = log_y && points.iter().all(|&(_, y)| y > 0.0);
    let ty = |y: f64| if log_ok { y.log10() } else { y };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(ty(y));
        y1 = y1.max(ty(y));
    }
    if (x1 - x0).abs() < 1e-12 {
        x1 = x0 + 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    svg.push_str(&format!(
        r#"<rect x="{m}" y="{m}" width="{iw}" height="{ih}" fill="none" stroke="black"/>
"#,
        m = MARGIN,
        iw = WIDTH - 2.0 * MARGIN,
        ih = HEIGHT - 2.0 * MARGIN,
    ));
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, sx(x), sy(y))
            })
            .collect();
        svg.push_str(&format!(
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>
"#,
            path.join(" "),
            color
        ));
        svg.push_str(&format!(
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" fill="{c}">{n}</text>
"#,
            x = WIDTH - MARGIN - 120.0,
            y = MARGIN + 16.0 * (si + 1) as f64,
            c = color,
            n = escape(name),
        ));
    }
    svg.push_str(&axis_labels(
        xlabel,
        &if log_ok { format!("log10 {}", ylabel) } else { ylabel.to_string() },
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Bar chart with error bars: one bar per (label, value, stderr).
pub fn bar_chart(bars: &[(String, f64, f64)], title: &str, ylabel: &str) -> String {
    let mut svg = header(title);
    if bars.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let top = bars
        .iter()
        .map(|&(_, v, e)| v + e)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let iw = WIDTH - 2.0 * MARGIN;
    let ih = HEIGHT - 2.0 * MARGIN;
    let slot = iw / bars.len() as f64;
    let bw = slot * 0.6;
    for (i, (label, value, err)) in bars.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + (slot - bw) / 2.0;
        let h = (value / top) * ih;
        let y = HEIGHT - MARGIN - h;
        let color = PALETTE[i % PALETTE.len()];
        svg.push_str(&format!(
            r#"<rect x="{x:.2}" y="{y:.2}" width="{bw:.2}" height="{h:.2}" fill="{color}" fill-opacity="0.8"/>
"#,
        ));
        if *err > 0.0 {
            let cx = x + bw / 2.0;
            let e = (err / top) * ih;
            svg.push_str(&format!(
                r#"<line x1="{cx:.2}" y1="{t:.2}" x2="{cx:.2}" y2="{b:.2}" stroke="black"/>
"#,
                t = y - e,
                b = y + e,
            ));
        }
        svg.push_str(&format!(
            r#"<text x="{cx:.2}" y="{ly}" text-anchor="middle" font-family="sans-serif" font-size="10">{l}</text>
"#,
            cx = x + bw / 2.0,
            ly = HEIGHT - MARGIN + 14.0,
            l = escape(label),
        ));
    }
    svg.push_str(&format!(
        r#"<rect x="{m}" y="{m}" width="{iw}" height="{ih}" fill="none" stroke="black"/>
"#,
        m = MARGIN,
    ));
    svg.push_str(&axis_labels("", ylabel));
    svg.push_str("</svg>\n");
    svg
}

/// Square 2-D histogram over `[-π,π]²` (Ramachandran-style density map).
pub fn dihedral_histogram(points: &[(f64, f64)], bins: usize, title: &str) -> String {
    let mut svg = header(title);
    let bins = bins.max(1);
    let mut counts = vec![0u64; bins * bins];
    let pi = std::f64::consts::PI;
    for &(a, b) in points {
        let bx = (((a + pi) / (2.0 * pi)) * bins as f64).clamp(0.0, bins as f64 - 1.0) as usize;
        let by = (((b + pi) / (2.0 * pi)) * bins as f64).clamp(0.0, bins as f64 - 1.0) as usize;
        counts[by * bins + bx] += 1;
    }
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    let side = (HEIGHT - 2.0 * MARGIN).min(WIDTH - 2.0 * MARGIN);
    let cell = side / bins as f64;
    let (ox, oy) = ((WIDTH - side) / 2.0, MARGIN);
    for by in 0..bins {
        for bx in 0..bins {
            let c = counts[by * bins + bx];
            if c == 0 {
                continue;
            }
            let t = (c as f64 / max.max(1.0)).sqrt();
            let shade = (255.0 * (1.0 - t)) as u8;
            svg.push_str(&format!(
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({s},{s},255)"/>
"#,
                x = ox + bx as f64 * cell,
                y = oy + side - (by + 1) as f64 * cell,
                s = shade,
            ));
        }
    }
    svg.push_str(&format!(
        r#"<rect x="{ox}" y="{oy}" width="{side:.2}" height="{side:.2}" fill="none" stroke="black"/>
"#,
    ));
    svg.push_str(&axis_labels("phi (rad)", "psi (rad)"));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let line = line_chart(
            &[("loss".to_string(), vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.1)])],
            "loss",
            "epoch",
            "L",
            true,
        );
        assert!(line.starts_with("<svg"));
        assert!(line.ends_with("</svg>\n"));
        assert!(line.contains("<path"));

        let bars = bar_chart(
            &[("cgvae".to_string(), 0.2, 0.01), ("linear".to_string(), 0.9, 0.05)],
            "rmsd",
            "Å",
        );
        assert!(bars.matches("<rect").count() >= 3);

        let hist = dihedral_histogram(&[(0.0, 0.0), (1.0, -1.0), (0.0, 0.1)], 16, "rama");
        assert!(hist.contains("rgb("));
        assert!(hist.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_inputs_do_not_panic() {
        assert!(line_chart(&[], "t", "x", "y", false).ends_with("</svg>\n"));
        assert!(bar_chart(&[], "t", "y").ends_with("</svg>\n"));
        assert!(dihedral_histogram(&[], 8, "t").ends_with("</svg>\n"));
    }
}
