//! Static SVG bar chart of accuracy deltas.

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One bar per `(label, delta in percentage points)`, centred on a zero line.
pub fn delta_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let (w, h) = (120.0 + 110.0 * bars.len() as f64, 320.0);
    let (top, bottom) = (50.0, h - 50.0);
    let zero = (top + bottom) / 2.0;
    let half = (bottom - top) / 2.0;
    let peak = bars.iter().map(|(_, d)| d.abs()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { half / peak } else { 0.0 };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        escape(title)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{zero}\" transform=\"rotate(-90 16 {zero})\" text-anchor=\"middle\">Δ accuracy (pp)</text>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"60\" y1=\"{zero}\" x2=\"{}\" y2=\"{zero}\" stroke=\"black\"/>\n",
        w - 20.0
    ));
    for (k, (label, d)) in bars.iter().enumerate() {
        let x = 80.0 + 110.0 * k as f64;
        let len = d.abs() * scale;
        let y = if *d >= 0.0 { zero - len } else { zero };
        let fill = if *d >= 0.0 { "#2b7bb9" } else { "#c0392b" };
        s.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y:.2}\" width=\"70\" height=\"{len:.2}\" fill=\"{fill}\"/>\n"
        ));
        let ty = if *d >= 0.0 { y - 6.0 } else { y + len + 16.0 };
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{ty:.2}\" text-anchor=\"middle\">{d:+.2}</text>\n",
            x + 35.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x + 35.0,
            h - 20.0,
            escape(label)
        ));
    }
    s.push_str("</svg>\n");
    s
}
