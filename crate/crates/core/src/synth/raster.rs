//! Pixel sets of filled shapes; a pixel belongs to a shape when its center
//! does. Sets are returned as row-major indices.

fn collect(h: usize, w: usize, x0: f64, y0: f64, x1: f64, y1: f64, inside: impl Fn(f64, f64) -> bool) -> Option<Vec<usize>> {
    let cx0 = (x0.floor().max(0.0)) as usize;
    let cy0 = (y0.floor().max(0.0)) as usize;
    let cx1 = (x1.ceil().max(0.0) as usize).min(w);
    let cy1 = (y1.ceil().max(0.0) as usize).min(h);
    let mut out = Vec::new();
    for y in cy0..cy1 {
        for x in cx0..cx1 {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                out.push(y * w + x);
            }
        }
    }
    (!out.is_empty()).then_some(out)
}

pub fn rectangle(h: usize, w: usize, cx: f64, cy: f64, bw: f64, bh: f64) -> Option<Vec<usize>> {
    collect(h, w, cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0, |x, y| {
        (x - cx).abs() <= bw / 2.0 && (y - cy).abs() <= bh / 2.0
    })
}

pub fn ellipse(h: usize, w: usize, cx: f64, cy: f64, rx: f64, ry: f64) -> Option<Vec<usize>> {
    collect(h, w, cx - rx, cy - ry, cx + rx, cy + ry, |x, y| {
        ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
    })
}

pub fn triangle(h: usize, w: usize, v: &[(f64, f64); 3]) -> Option<Vec<usize>> {
    let xs = v.map(|p| p.0);
    let ys = v.map(|p| p.1);
    let edge = |a: (f64, f64), b: (f64, f64), x: f64, y: f64| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
    collect(
        h,
        w,
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        ys.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        |x, y| {
            let d0 = edge(v[0], v[1], x, y);
            let d1 = edge(v[1], v[2], x, y);
            let d2 = edge(v[2], v[0], x, y);
            (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
        },
    )
}

fn segment_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - qx).powi(2) + (p.1 - qy).powi(2)
}

/// Thick limbs between `joints` plus a disc around joint 0. `None` unless
/// the whole figure lies inside the image.
pub fn stick_figure(
    h: usize,
    w: usize,
    joints: &[(f64, f64)],
    limbs: &[(usize, usize)],
    thick: f64,
    head_r: f64,
) -> Option<Vec<usize>> {
    let reach = thick.max(head_r);
    let x0 = joints.iter().map(|j| j.0).fold(f64::INFINITY, f64::min) - reach;
    let y0 = joints.iter().map(|j| j.1).fold(f64::INFINITY, f64::min) - reach;
    let x1 = joints.iter().map(|j| j.0).fold(f64::NEG_INFINITY, f64::max) + reach;
    let y1 = joints.iter().map(|j| j.1).fold(f64::NEG_INFINITY, f64::max) + reach;
    if x0 < 0.0 || y0 < 0.0 || x1 > w as f64 || y1 > h as f64 {
        return None;
    }
    let t2 = thick * thick;
    let r2 = head_r * head_r;
    collect(h, w, x0, y0, x1, y1, |x, y| {
        let head = joints[0];
        (x - head.0).powi(2) + (y - head.1).powi(2) <= r2
            || limbs.iter().any(|&(a, b)| segment_dist2((x, y), joints[a], joints[b]) <= t2)
    })
}
