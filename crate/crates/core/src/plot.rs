use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const ACTUAL_COLOR: &str = "#1f77b4";
const PREDICTED_COLOR: &str = "#d62728";

/// Hourly window to draw: one x label per hour and two aligned series.
pub struct PlotData<'a> {
    pub title: &'a str,
    pub hours: &'a [String],
    pub actual: &'a [Option<f64>],
    pub predicted: &'a [Option<f64>],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Smallest value of the form {1, 2, 5}·10ⁿ that is at least `x`.
fn nice_step(x: f64) -> f64 {
    let mag = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|&s| s >= x).unwrap_or(10.0 * mag)
}

fn path_data(values: &[Option<f64>], x: impl Fn(usize) -> f64, y: impl Fn(f64) -> f64) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(v) => {
                if !d.is_empty() {
                    d.push(' ');
                }
                let _ = write!(d, "{}{:.2},{:.2}", if pen_down { "L" } else { "M" }, x(i), y(*v));
                pen_down = true;
            }
            None => pen_down = false,
        }
    }
    d
}

/// Actual vs predicted line chart. Output depends only on the inputs.
pub fn render(p: &PlotData) -> String {
    let n = p.hours.len();
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let max = p
        .actual
        .iter()
        .chain(p.predicted)
        .flatten()
        .fold(0.0f64, |m, &v| m.max(v));
    let step = nice_step((max / 5.0).max(1e-9));
    let y_max = (max / step).ceil().max(1.0) * step;
    let x = |i: usize| {
        if n <= 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y = |v: f64| TOP + plot_h * (1.0 - v.max(0.0) / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(p.title)
    );

    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP, TOP + plot_h);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y1:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);

    let n_ticks = (y_max / step).round() as usize;
    for k in 0..=n_ticks {
        let v = step * k as f64;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{yy:.2}" x2="{x1:.2}" y2="{yy:.2}" stroke="#dddddd"/>"##,
            x0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            yy + 4.0,
            format_tick(v)
        );
    }
    let label_every = n.div_ceil(6).max(1);
    for i in (0..n).step_by(label_every) {
        let xx = x(i);
        let _ = writeln!(s, r#"<line x1="{xx:.2}" y1="{y1:.2}" x2="{xx:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y1 + 19.0,
            escape(&p.hours[i])
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">NO₂ (µg/m³)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">hour (UTC)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0
    );

    let _ = writeln!(
        s,
        r#"<path d="{}" fill="none" stroke="{ACTUAL_COLOR}" stroke-width="1.5"/>"#,
        path_data(p.actual, x, y)
    );
    let _ = writeln!(
        s,
        r#"<path d="{}" fill="none" stroke="{PREDICTED_COLOR}" stroke-width="1.5" stroke-dasharray="5 3"/>"#,
        path_data(p.predicted, x, y)
    );

    for (k, (label, color)) in [("Actual", ACTUAL_COLOR), ("Predicted", PREDICTED_COLOR)].into_iter().enumerate() {
        let lx = x1 - 130.0;
        let ly = y0 + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, lx + 30.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}
