//! Minimal SVG scatter rendering for 2-D feature tables. A convenience view
//! only; the CSV outputs are the source of truth.

use ndarray::Array2;

const VIEWPORT: f64 = 600.0;
const MARGIN: f64 = 40.0;

/// Fixed 10-color palette; class `k` uses entry `k % 10`.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Renders one circle per node in a fixed 600x600 viewport, colored by
/// class. Expects exactly two feature columns.
pub fn scatter(points: &Array2<f64>, labels: Option<&[usize]>) -> String {
    assert_eq!(points.ncols(), 2, "svg scatter needs 2-D features");
    let n = points.nrows();

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in 0..n {
        for k in 0..2 {
            lo[k] = lo[k].min(points[[i, k]]);
            hi[k] = hi[k].max(points[[i, k]]);
        }
    }
    let mut range = [hi[0] - lo[0], hi[1] - lo[1]];
    for r in range.iter_mut() {
        if !(*r > 0.0) {
            *r = 1.0;
        }
    }

    let span = VIEWPORT - 2.0 * MARGIN;
    let map = |v: f64, k: usize| MARGIN + (v - lo[k]) / range[k] * span;

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{VIEWPORT}\" height=\"{VIEWPORT}\" viewBox=\"0 0 {VIEWPORT} {VIEWPORT}\">\n<rect width=\"{VIEWPORT}\" height=\"{VIEWPORT}\" fill=\"white\"/>\n"
    );
    for i in 0..n {
        let x = map(points[[i, 0]], 0);
        // SVG y grows downward.
        let y = VIEWPORT - map(points[[i, 1]], 1);
        let color = match labels {
            Some(l) => PALETTE[l[i] % PALETTE.len()],
            None => PALETTE[0],
        };
        out.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.8\"/>\n"
        ));
    }
    out.push_str("</svg>\n");
    out
}
