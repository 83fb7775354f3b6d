//! Tiny SVG emission helpers shared by the report renderers.

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" \
         fill=\"white\"/>\n{body}</svg>\n",
        w = width,
        h = height,
        body = body
    )
}

pub fn rect(x: f64, y: f64, w: f64, h: f64, fill: &str) -> String {
    format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
        x, y, w, h, fill
    )
}

pub fn line(x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) -> String {
    format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"{}\"/>\n",
        x1, y1, x2, y2, stroke, width
    )
}

pub fn text(x: f64, y: f64, size: f64, anchor: &str, content: &str, transform: Option<&str>) -> String {
    let t = transform.map(|t| format!(" transform=\"{}\"", t)).unwrap_or_default();
    format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"{}\" font-family=\"sans-serif\" \
         text-anchor=\"{}\"{}>{}</text>\n",
        x,
        y,
        size,
        anchor,
        t,
        escape(content)
    )
}

pub fn polyline(points: &[(f64, f64)], stroke: &str, width: f64, id: Option<&str>) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{:.2},{:.2}", x, y)).collect();
    let id_attr = id.map(|i| format!(" id=\"{}\"", i)).unwrap_or_default();
    format!(
        "<polyline{} points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>\n",
        id_attr,
        pts.join(" "),
        stroke,
        width
    )
}

pub fn circle(x: f64, y: f64, r: f64, fill: &str) -> String {
    format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"{}\"/>\n", x, y, r, fill)
}

/// White-to-dark-blue scale for heatmap cells, `v` in [0, 1].
pub fn heat_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - v * 0.85)) as u8;
    let g = (255.0 * (1.0 - v * 0.70)) as u8;
    let b = (255.0 * (1.0 - v * 0.25)) as u8;
    format!("#{:02x}{:02x}{:02x}", r, g, b)
}
