//! Self-contained SVG plots.
//!
//! Hand-rolled on purpose: the plots must be deterministic bytes given
//! the same data, with no external services or font dependencies. Points
//! in more than two dimensions are shown in the first two coordinates.

use ndarray::Array2;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 40.0;

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

struct Frame {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl Frame {
    fn around(point_sets: &[&Array2<f64>]) -> Frame {
        let mut f = Frame {
            min_x: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            min_y: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for set in point_sets {
            for row in set.rows() {
                let (x, y) = (row[0], *row.get(1).unwrap_or(&0.0));
                f.min_x = f.min_x.min(x);
                f.max_x = f.max_x.max(x);
                f.min_y = f.min_y.min(y);
                f.max_y = f.max_y.max(y);
            }
        }
        // Degenerate extents still need a nonzero span.
        if f.max_x - f.min_x < 1e-9 {
            f.min_x -= 1.0;
            f.max_x += 1.0;
        }
        if f.max_y - f.min_y < 1e-9 {
            f.min_y -= 1.0;
            f.max_y += 1.0;
        }
        let mx = 0.08 * (f.max_x - f.min_x);
        let my = 0.08 * (f.max_y - f.min_y);
        f.min_x -= mx;
        f.max_x += mx;
        f.min_y -= my;
        f.max_y += my;
        f
    }

    fn sx(&self, x: f64) -> f64 {
        PAD + (x - self.min_x) / (self.max_x - self.min_x) * (W - 2.0 * PAD)
    }

    fn sy(&self, y: f64) -> f64 {
        // SVG y grows downward.
        H - PAD - (y - self.min_y) / (self.max_y - self.min_y) * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"monospace\" \
         font-size=\"13\">{title}</text>\n",
        W / 2.0
    )
}

/// Generated samples (dots), extracted centroids (rings), and the
/// fine-tuning targets (crosses), projected to the first two dimensions.
pub fn scatter_svg(
    title: &str,
    samples: &Array2<f64>,
    extracted: &Array2<f64>,
    targets: &Array2<f64>,
) -> String {
    let frame = Frame::around(&[samples, extracted, targets]);
    let mut s = svg_open(title);
    for row in samples.rows() {
        s.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"#9aa7b1\" fill-opacity=\"0.6\"/>\n",
            fmt(frame.sx(row[0])),
            fmt(frame.sy(*row.get(1).unwrap_or(&0.0)))
        ));
    }
    for row in extracted.rows() {
        s.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"6\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
            fmt(frame.sx(row[0])),
            fmt(frame.sy(*row.get(1).unwrap_or(&0.0)))
        ));
    }
    for row in targets.rows() {
        let (cx, cy) = (frame.sx(row[0]), frame.sy(*row.get(1).unwrap_or(&0.0)));
        s.push_str(&format!(
            "<path d=\"M {} {} L {} {} M {} {} L {} {}\" stroke=\"#d62728\" stroke-width=\"2\"/>\n",
            fmt(cx - 5.0),
            fmt(cy - 5.0),
            fmt(cx + 5.0),
            fmt(cy + 5.0),
            fmt(cx - 5.0),
            fmt(cy + 5.0),
            fmt(cx + 5.0),
            fmt(cy - 5.0)
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Metric-vs-parameter curves, one polyline per labeled series.
pub fn sweep_svg(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
    }
    if !min_x.is_finite() {
        (min_x, max_x, min_y, max_y) = (0.0, 1.0, 0.0, 1.0);
    }
    if max_x - min_x < 1e-9 {
        max_x = min_x + 1.0;
    }
    if max_y - min_y < 1e-9 {
        max_y = min_y + 1.0;
    }
    let sx = |x: f64| PAD + (x - min_x) / (max_x - min_x) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - min_y) / (max_y - min_y) * (H - 2.0 * PAD);

    let mut s = svg_open(title);
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        H - PAD,
        W - PAD,
        H - PAD
    ));
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"#333\"/>\n",
        H - PAD
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">{x_label}</text>\n",
        W / 2.0,
        H - 8.0
    ));
    for (label, x) in [(fmt(min_x), PAD), (fmt(max_x), W - PAD)] {
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"10\">{label}</text>\n",
            H - PAD + 14.0
        ));
    }
    for (label, y) in [(fmt(min_y), H - PAD), (fmt(max_y), PAD)] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\">{label}</text>\n",
            PAD - 4.0,
            y + 3.0
        ));
    }
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y))))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            s.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                fmt(sx(x)),
                fmt(sy(y))
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            W - PAD - 110.0,
            PAD + 16.0 * si as f64 + 4.0
        ));
    }
    s.push_str("</svg>\n");
    s
}
