//! Deterministic SVG line charts from CSV text. The output is a pure
//! function of (CSV, plot spec): no timestamps, no randomness, fixed
//! two-decimal pixel coordinates — rendering the same data twice yields
//! byte-identical files.

use crate::error::CliError;

/// One plotted series: a CSV column and its legend label.
#[derive(Debug, Clone)]
pub struct SeriesSpec {
    pub column: String,
    pub label: String,
}

impl SeriesSpec {
    pub fn new(column: &str, label: &str) -> Self {
        SeriesSpec { column: column.into(), label: label.into() }
    }
}

/// Chart layout and column selection.
#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_column: String,
    pub series: Vec<SeriesSpec>,
    /// Plot log₁₀ of the values with power-of-ten ticks; non-positive values
    /// are skipped.
    pub log_x: bool,
    pub log_y: bool,
    /// Draw a circle at every data point (for sparse sweep grids).
    pub markers: bool,
}

impl PlotSpec {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_column: &str) -> Self {
        PlotSpec {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_column: x_column.into(),
            series: Vec::new(),
            log_x: false,
            log_y: false,
            markers: false,
        }
    }

    pub fn with_series(mut self, column: &str, label: &str) -> Self {
        self.series.push(SeriesSpec::new(column, label));
        self
    }

    pub fn with_log_x(mut self, on: bool) -> Self {
        self.log_x = on;
        self
    }

    pub fn with_log_y(mut self, on: bool) -> Self {
        self.log_y = on;
        self
    }

    pub fn with_markers(mut self, on: bool) -> Self {
        self.markers = on;
        self
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 38.0;
const MARGIN_BOTTOM: f64 = 52.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Renders the chart; fails with a configuration error when a named column
/// is missing from the CSV header.
pub fn render_plot(csv: &str, spec: &PlotSpec) -> Result<String, CliError> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::config("empty CSV: no header row"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let col_index = |name: &str| -> Result<usize, CliError> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| {
                CliError::config(format!(
                    "CSV column '{name}' not found (header: {})",
                    columns.join(", ")
                ))
            })
    };
    let xi = col_index(&spec.x_column)?;
    let yis: Vec<usize> =
        spec.series.iter().map(|s| col_index(&s.column)).collect::<Result<_, _>>()?;

    // Collect per-series points; unparsable/non-finite entries become breaks.
    let parse = |field: Option<&str>| -> f64 {
        field.and_then(|f| f.trim().parse::<f64>().ok()).unwrap_or(f64::NAN)
    };
    let transform = |v: f64, log: bool| -> f64 {
        if log {
            if v > 0.0 { v.log10() } else { f64::NAN }
        } else {
            v
        }
    };
    let mut series_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); yis.len()];
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let x = transform(parse(fields.get(xi).copied()), spec.log_x);
        for (s, &yi) in yis.iter().enumerate() {
            let y = transform(parse(fields.get(yi).copied()), spec.log_y);
            series_points[s].push((x, y));
        }
    }

    // Data ranges over finite points only; an empty chart still gets axes.
    let finite = series_points
        .iter()
        .flatten()
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &(x, y) in finite {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_max == x_min {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max == y_min {
        y_min -= 0.5;
        y_max += 0.5;
    }
    // 4% padding so curves do not sit on the frame.
    let (xp, yp) = (0.04 * (x_max - x_min), 0.04 * (y_max - y_min));
    let (x_lo, x_hi) = (x_min - xp, x_max + xp);
    let (y_lo, y_hi) = (y_min - yp, y_max + yp);

    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let sy = |y: f64| {
        HEIGHT - MARGIN_BOTTOM - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    };

    let mut out = String::with_capacity(8192);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        escape(&spec.title)
    ));

    // Grid and ticks.
    for (value, label) in ticks(x_lo, x_hi, spec.log_x) {
        let px = sx(value);
        out.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_TOP,
            HEIGHT - MARGIN_BOTTOM
        ));
        out.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" class=\"tick\">{label}</text>\n",
            HEIGHT - MARGIN_BOTTOM + 16.0
        ));
    }
    for (value, label) in ticks(y_lo, y_hi, spec.log_y) {
        let py = sy(value);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" class=\"tick\">{label}</text>\n",
            MARGIN_LEFT - 6.0,
            py + 4.0
        ));
    }

    // Axes frame and labels.
    out.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"none\" stroke=\"black\" class=\"axes\"/>\n",
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(&spec.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        escape(&spec.y_label)
    ));

    // Series: one path per contiguous run of finite points (single points
    // fall back to markers so they stay visible).
    for (s, points) in series_points.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let mut path = String::new();
        let mut run_len = 0usize;
        let mut lone_points: Vec<(f64, f64)> = Vec::new();
        let mut last: Option<(f64, f64)> = None;
        for &(x, y) in points {
            if x.is_finite() && y.is_finite() {
                let cmd = if run_len == 0 { 'M' } else { 'L' };
                path.push_str(&format!("{cmd}{:.2} {:.2}", sx(x), sy(y)));
                run_len += 1;
                last = Some((x, y));
            } else {
                if run_len == 1 {
                    lone_points.push(last.unwrap());
                }
                run_len = 0;
            }
        }
        if run_len == 1 {
            lone_points.push(last.unwrap());
        }
        if !path.is_empty() {
            out.push_str(&format!(
                "<path class=\"series\" d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
            ));
        }
        let marker_points: Vec<(f64, f64)> = if spec.markers {
            points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect()
        } else {
            lone_points
        };
        for (x, y) in marker_points {
            out.push_str(&format!(
                "<circle class=\"pt\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
    }

    // Legend, top-right inside the frame.
    for (s, series) in spec.series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let y = MARGIN_TOP + 16.0 + 16.0 * s as f64;
        let x = WIDTH - MARGIN_RIGHT - 150.0;
        out.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            y - 4.0,
            x + 20.0,
            y - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\" class=\"legend\">{}</text>\n",
            x + 26.0,
            escape(&series.label)
        ));
    }

    out.push_str("</svg>\n");
    Ok(out)
}

/// Tick positions and labels. Linear axes use a 1/2/5·10ᵏ step aiming for
/// about five ticks; log axes tick integer powers of ten.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    let mut out = Vec::new();
    if log {
        let (k_lo, k_hi) = (lo.ceil() as i64, hi.floor() as i64);
        // Wide ranges label every ⌈span/6⌉-th decade to avoid clutter.
        let stride = (((k_hi - k_lo).max(0) as usize + 5) / 6).max(1) as i64;
        let mut k = k_lo;
        while k <= k_hi {
            out.push((k as f64, format!("1e{k}")));
            k += stride;
        }
        return out;
    }
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 5.5)
        .unwrap_or(10.0 * mag);
    let mut v = (lo / step).ceil() * step;
    while v <= hi + 1e-9 * step {
        // Snap near-zero ticks so "-0" never appears in labels.
        let snapped = if v.abs() < 1e-9 * step { 0.0 } else { v };
        out.push((snapped, format_tick(snapped)));
        v += step;
    }
    out
}

/// Short deterministic number format for tick labels.
fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.0e}");
    }
    let mut s = format!("{v:.4}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> PlotSpec {
        PlotSpec::new("demo", "x", "y", "t").with_series("a", "series a")
    }

    #[test]
    fn header_only_csv_renders_axes_without_series_paths() {
        let svg = render_plot("t,a\n", &base_spec()).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("class=\"axes\""));
        assert!(!svg.contains("class=\"series\""));
    }

    #[test]
    fn two_points_render_one_path_with_one_line_segment() {
        let svg = render_plot("t,a\n0,1\n1,3\n", &base_spec()).unwrap();
        assert_eq!(svg.matches("class=\"series\"").count(), 1);
        let d = svg.split("d=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(d.matches('M').count(), 1, "path: {d}");
        assert_eq!(d.matches('L').count(), 1, "path: {d}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let csv = "t,a,b\n0,0.5,1\n0.25,0.75,2\n0.5,0.25,4\n";
        let spec = base_spec().with_series("b", "series b").with_markers(true);
        assert_eq!(render_plot(csv, &spec).unwrap(), render_plot(csv, &spec).unwrap());
    }

    #[test]
    fn missing_column_is_a_config_error() {
        let err = render_plot("t,a\n0,1\n", &PlotSpec::new("d", "x", "y", "t").with_series("zz", "?"))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn blank_and_nan_cells_split_the_path_and_keep_lone_points_visible() {
        // Middle cell empty: two lone points -> no L command, two markers.
        let svg = render_plot("t,a\n0,1\n1,\n2,3\n", &base_spec()).unwrap();
        let d = svg.split("d=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(d.matches('M').count(), 2);
        assert_eq!(d.matches('L').count(), 0);
        assert_eq!(svg.matches("class=\"pt\"").count(), 2);
    }

    #[test]
    fn log_axis_ticks_are_powers_of_ten() {
        let csv = "t,a\n1,0.001\n10,1000\n";
        let svg = render_plot(csv, &base_spec().with_log_y(true)).unwrap();
        for k in -3..=3 {
            assert!(svg.contains(&format!(">1e{k}<")), "missing decade 1e{k}");
        }
    }

    #[test]
    fn constant_series_still_gets_a_finite_y_range() {
        let svg = render_plot("t,a\n0,2\n1,2\n2,2\n", &base_spec()).unwrap();
        assert!(svg.contains("class=\"series\""));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn tick_label_format_is_compact() {
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(2.0), "2");
        assert_eq!(format_tick(12000.0), "12000");
        assert_eq!(format_tick(1e-6), "1e-6");
    }
}
