//! Minimal native SVG line plots (optionally log-scaled axes) so figure
//! reproduction needs no external plotting runtime.

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let a = lo.log10().floor() as i32;
        let b = hi.log10().ceil() as i32;
        (a..=b).map(|e| 10f64.powi(e)).collect()
    } else {
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        let step = 10f64.powf(span.log10().floor());
        let step = if span / step > 5.0 { step } else { step / 2.0 };
        let mut t = (lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= hi + 1e-12 * span {
            out.push(t);
            t += step;
        }
        out
    }
}

/// Renders one line plot. Points with non-positive coordinates on a log axis
/// are dropped.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
    log_y: bool,
) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if (log_x && x <= 0.0) || (log_y && y <= 0.0) {
                continue;
            }
            xs.push(x);
            ys.push(y);
        }
    }
    let (xlo, xhi) = bounds(&xs);
    let (ylo, yhi) = bounds(&ys);
    let tx = |x: f64| -> f64 {
        let (a, b, v) = if log_x { (xlo.log10(), xhi.log10(), x.log10()) } else { (xlo, xhi, x) };
        let frac = if b > a { (v - a) / (b - a) } else { 0.5 };
        ML + frac * (W - ML - MR)
    };
    let ty = |y: f64| -> f64 {
        let (a, b, v) = if log_y { (ylo.log10(), yhi.log10(), y.log10()) } else { (ylo, yhi, y) };
        let frac = if b > a { (v - a) / (b - a) } else { 0.5 };
        H - MB - frac * (H - MT - MB)
    };

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    ));

    // Axes box.
    out.push_str(&format!(
        "<rect x=\"{ML:.1}\" y=\"{MT:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    for t in ticks(xlo, xhi, log_x) {
        if t < xlo || t > xhi {
            continue;
        }
        let x = tx(t);
        out.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#ccc\"/>\n",
            MT,
            H - MB
        ));
        out.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            H - MB + 16.0,
            tick_label(t, log_x)
        ));
    }
    for t in ticks(ylo, yhi, log_y) {
        if t < ylo || t > yhi {
            continue;
        }
        let y = ty(t);
        out.push_str(&format!(
            "<line x1=\"{ML:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ccc\"/>\n",
            W - MR
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            ML - 6.0,
            y + 4.0,
            tick_label(t, log_y)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        escape(y_label)
    ));

    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|&&(x, y)| !(log_x && x <= 0.0 || log_y && y <= 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", tx(x), ty(y)))
            .collect();
        if pts.len() > 1 {
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        for p in &pts {
            let (px, py) = p.split_once(',').expect("point is formatted as x,y");
            out.push_str(&format!("<circle cx=\"{px}\" cy=\"{py}\" r=\"2.5\" fill=\"{color}\"/>\n"));
        }
        let ly = MT + 16.0 + 16.0 * k as f64;
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ML + 8.0,
            ML + 28.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            ML + 34.0,
            ly + 4.0,
            escape(&s.name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (0.1, 1.0);
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
    } else {
        (lo, hi)
    }
}

fn tick_label(t: f64, log: bool) -> String {
    if log {
        format!("1e{}", t.log10().round() as i32)
    } else if t == 0.0 {
        "0".to_string()
    } else if t.abs() >= 0.01 && t.abs() < 10000.0 {
        let s = format!("{t:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{t:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
