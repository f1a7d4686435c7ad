//! Minimal hand-rolled SVG emission: epoch-series line charts and 2-D
//! decision-region rasters. All coordinates are written with fixed
//! precision so identical inputs produce identical bytes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const SERIES_COLORS: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];
const REGION_FILLS: &[&str] = &[
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#dbdb8d",
];
const POINT_FILLS: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22",
];

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

/// One named line on a chart: (epoch, value) pairs.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Renders named epoch series as polylines with point markers, a framed
/// plot area, axis ticks, and a legend. `y_range` fixes the vertical axis
/// (accuracies use (0, 1); losses pass their own range).
pub fn curve_chart(title: &str, y_label: &str, y_range: (f64, f64), series: &[Series]) -> String {
    let (x_min, x_max) = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    // Pad degenerate ranges (single epoch) so the point lands mid-plot.
    let (x_min, x_max) = if x_min >= x_max {
        (x_min - 1.0, x_min + 1.0)
    } else {
        (x_min, x_max)
    };
    let (y_min, y_max) = y_range;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_T + (y_max - y) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        fmt2(MARGIN_L + plot_w / 2.0)
    );
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\"/>",
        fmt2(MARGIN_L),
        fmt2(MARGIN_T),
        fmt2(plot_w),
        fmt2(plot_h)
    );

    for i in 0..=5 {
        let y = y_min + (y_max - y_min) * i as f64 / 5.0;
        let yp = py(y);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>",
            fmt2(MARGIN_L),
            fmt2(yp),
            fmt2(MARGIN_L + plot_w),
            fmt2(yp)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            fmt2(MARGIN_L - 6.0),
            fmt2(yp + 4.0),
            fmt2(y)
        );
    }
    let x_ticks = 5usize.min((x_max - x_min).round() as usize).max(1);
    for i in 0..=x_ticks {
        let x = x_min + (x_max - x_min) * i as f64 / x_ticks as f64;
        let xp = px(x);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>",
            fmt2(xp),
            fmt2(MARGIN_T + plot_h),
            fmt2(xp),
            fmt2(MARGIN_T + plot_h + 5.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            fmt2(xp),
            fmt2(MARGIN_T + plot_h + 18.0),
            fmt2(x)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">epoch</text>",
        fmt2(MARGIN_L + plot_w / 2.0),
        fmt2(HEIGHT - 12.0)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        fmt2(MARGIN_T + plot_h / 2.0),
        fmt2(MARGIN_T + plot_h / 2.0)
    );

    for (idx, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[idx % SERIES_COLORS.len()];
        if s.points.len() > 1 {
            let coords: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt2(px(x)), fmt2(py(y))))
                .collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                coords.join(" ")
            );
        }
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>",
                fmt2(px(x)),
                fmt2(py(y))
            );
        }
        let ly = MARGIN_T + 14.0 + 18.0 * idx as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            fmt2(WIDTH - MARGIN_R + 10.0),
            fmt2(ly),
            fmt2(WIDTH - MARGIN_R + 34.0),
            fmt2(ly)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            fmt2(WIDTH - MARGIN_R + 40.0),
            fmt2(ly + 4.0),
            s.name
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Renders a class raster over a 2-D bounding box with the dataset points
/// drawn on top. `grid` holds the predicted class of each cell, row-major
/// with `resolution` columns; rows scan the vertical axis bottom-up.
/// Horizontal runs of equal class are merged into single rectangles.
pub fn region_chart(
    title: &str,
    grid: &[usize],
    resolution: usize,
    extent: (f64, f64, f64, f64),
    points: &[(f64, f64, usize)],
) -> String {
    assert_eq!(grid.len(), resolution * resolution);
    let (x_min, x_max, y_min, y_max) = extent;
    let side = 500.0;
    let margin = 50.0;
    let total = side + 2.0 * margin;
    let cell = side / resolution as f64;
    let px = |x: f64| margin + (x - x_min) / (x_max - x_min) * side;
    let py = |y: f64| margin + (y_max - y) / (y_max - y_min) * side;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total}\" height=\"{total}\" viewBox=\"0 0 {total} {total}\">"
    );
    let _ = writeln!(out, "<rect width=\"{total}\" height=\"{total}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"30\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        fmt2(total / 2.0)
    );

    for row in 0..resolution {
        // Row 0 is the bottom of the data range; SVG y grows downward.
        let top = margin + side - (row + 1) as f64 * cell;
        let mut col = 0;
        while col < resolution {
            let class = grid[row * resolution + col];
            let mut end = col + 1;
            while end < resolution && grid[row * resolution + end] == class {
                end += 1;
            }
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                fmt2(margin + col as f64 * cell),
                fmt2(top),
                fmt2((end - col) as f64 * cell + 0.1),
                fmt2(cell + 0.1),
                REGION_FILLS[class % REGION_FILLS.len()]
            );
            col = end;
        }
    }

    for &(x, y, class) in points {
        let _ = writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{}\" stroke=\"#333333\" stroke-width=\"0.4\"/>",
            fmt2(px(x)),
            fmt2(py(y)),
            POINT_FILLS[class % POINT_FILLS.len()]
        );
    }

    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\"/>",
        fmt2(margin),
        fmt2(margin),
        fmt2(side),
        fmt2(side)
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">[{}, {}] x [{}, {}]</text>",
        fmt2(margin),
        fmt2(total - 14.0),
        fmt2(x_min),
        fmt2(x_max),
        fmt2(y_min),
        fmt2(y_max)
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_series_emits_a_marker() {
        let s = [Series {
            name: "test",
            points: vec![(1.0, 0.5)],
        }];
        let svg = curve_chart("t", "accuracy", (0.0, 1.0), &s);
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("<polyline"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn multi_point_series_emits_a_polyline() {
        let s = [Series {
            name: "a",
            points: vec![(1.0, 0.1), (2.0, 0.9)],
        }];
        let svg = curve_chart("t", "accuracy", (0.0, 1.0), &s);
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn identical_inputs_produce_identical_bytes() {
        let s = [Series {
            name: "a",
            points: vec![(1.0, 0.25), (2.0, 0.75), (3.0, 0.5)],
        }];
        let one = curve_chart("t", "accuracy", (0.0, 1.0), &s);
        let two = curve_chart("t", "accuracy", (0.0, 1.0), &s);
        assert_eq!(one, two);
    }

    #[test]
    fn region_runs_are_merged() {
        // A 4x4 grid split into left/right halves: one rect per row half.
        let grid = vec![0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1];
        let svg = region_chart("r", &grid, 4, (0.0, 1.0, 0.0, 1.0), &[]);
        let rects = svg.matches("<rect").count();
        // 8 run rects + background + frame.
        assert_eq!(rects, 10);
    }
}
