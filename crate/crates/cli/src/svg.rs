//! Minimal SVG output built from polylines only.

use std::fmt::Write as _;

use cgrelax::envelope::SurfaceRow;
use cgrelax::extract::WirePoint;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;

struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        Self {
            lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.lo[0]) * self.scale,
            SIZE - MARGIN - (p[1] - self.lo[1]) * self.scale,
        )
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[[f64; 2]], color: &str, width: f64) {
    let mut coords = String::new();
    for &p in pts {
        let (x, y) = frame.map(p);
        let _ = write!(coords, "{x:.2},{y:.2} ");
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
        coords.trim_end()
    );
}

fn document(body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Reference grid in black, deformed grid in red.
pub fn wireframe(points: &[WirePoint]) -> String {
    let frame = Frame::fit(
        points
            .iter()
            .flat_map(|p| [[p.x[0], p.x[1]], [p.y[0], p.y[1]]]),
    );
    let mut body = String::new();
    let mut start = 0;
    while start < points.len() {
        let id = points[start].line_id;
        let end = points[start..]
            .iter()
            .position(|p| p.line_id != id)
            .map_or(points.len(), |k| start + k);
        let line = &points[start..end];
        let src: Vec<[f64; 2]> = line.iter().map(|p| [p.x[0], p.x[1]]).collect();
        let img: Vec<[f64; 2]> = line.iter().map(|p| [p.y[0], p.y[1]]).collect();
        polyline(&mut body, &frame, &src, "black", 1.0);
        polyline(&mut body, &frame, &img, "red", 1.5);
        start = end;
    }
    document(&body)
}

/// Oblique projection of the `W` (gray) and `W_quasi` (blue) surfaces over
/// the singular-value grid; rows are ordered `s1`-major as produced upstream.
pub fn surface(rows: &[SurfaceRow], n1: usize, n2: usize) -> String {
    let n1 = n1.max(1);
    let n2 = n2.max(1);
    let zmax = rows
        .iter()
        .map(|r| r.wquasi.max(r.w))
        .filter(|v| v.is_finite())
        .fold(1e-12, f64::max);
    let (s1max, s2max) = rows.iter().fold((1e-12f64, 1e-12f64), |(a, b), r| {
        (a.max(r.s1.abs()), b.max(r.s2.abs()))
    });
    let project = |r: &SurfaceRow, z: f64| {
        let u = r.s1 / s1max;
        let v = r.s2 / s2max;
        let h = z.min(zmax) / zmax;
        [u - 0.5 * v, 0.35 * v + 0.8 * h]
    };
    let mut all = Vec::new();
    for r in rows {
        all.push(project(r, r.w));
        all.push(project(r, r.wquasi));
    }
    let frame = Frame::fit(all.into_iter());
    let mut body = String::new();
    for (pick, color) in [(0usize, "#999999"), (1, "#1f5fbf")] {
        let z = |r: &SurfaceRow| if pick == 0 { r.w } else { r.wquasi };
        for i in 0..n1 {
            let line: Vec<[f64; 2]> = (0..n2)
                .filter_map(|j| rows.get(i * n2 + j))
                .map(|r| project(r, z(r)))
                .collect();
            polyline(&mut body, &frame, &line, color, 1.0);
        }
        for j in 0..n2 {
            let line: Vec<[f64; 2]> = (0..n1)
                .filter_map(|i| rows.get(i * n2 + j))
                .map(|r| project(r, z(r)))
                .collect();
            polyline(&mut body, &frame, &line, color, 1.0);
        }
    }
    document(&body)
}
