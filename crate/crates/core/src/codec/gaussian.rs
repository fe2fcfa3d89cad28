use crate::error::{Error, Result};

/// Minimum IoU a box jittered within the radius must keep with the original.
pub const MIN_OVERLAP: f64 = 0.7;

/// Radius, in feature pixels, of the gaussian drawn for a box of the given
/// feature-pixel size. Smallest of the three corner-jitter cases, floored,
/// at least 1.
pub fn gaussian_radius(box_h: f64, box_w: f64, min_overlap: f64) -> Result<usize> {
    if !(box_h > 0.0 && box_w > 0.0) || !box_h.is_finite() || !box_w.is_finite() {
        return Err(Error::invalid(format!("box size must be positive, got {box_h}x{box_w}")));
    }
    if !(min_overlap > 0.0 && min_overlap < 1.0) {
        return Err(Error::invalid(format!("min_overlap must lie in (0, 1), got {min_overlap}")));
    }
    let (h, w, o) = (box_h, box_w, min_overlap);

    let b1 = h + w;
    let c1 = w * h * (1.0 - o) / (1.0 + o);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;

    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - o) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).sqrt()) / 2.0;

    let a3 = 4.0 * o;
    let b3 = -2.0 * o * (h + w);
    let c3 = (o - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;

    let r = r1.min(r2).min(r3).floor();
    Ok((r as usize).max(1))
}

/// Max-combines a gaussian with σ = r/3 centered on cell `(cx, cy)` into a
/// row-major `h × w` map. Patch cells outside the map are dropped.
pub fn render_gaussian(heatmap: &mut [f64], h: usize, w: usize, cx: usize, cy: usize, radius: usize) {
    debug_assert_eq!(heatmap.len(), h * w);
    let sigma = radius as f64 / 3.0;
    let denom = 2.0 * sigma * sigma;
    let r = radius as isize;
    for dy in -r..=r {
        let y = cy as isize + dy;
        if y < 0 || y >= h as isize {
            continue;
        }
        for dx in -r..=r {
            let x = cx as isize + dx;
            if x < 0 || x >= w as isize {
                continue;
            }
            let v = (-((dx * dx + dy * dy) as f64) / denom).exp();
            let cell = &mut heatmap[y as usize * w + x as usize];
            *cell = cell.max(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_radii() {
        // Roots evaluated independently: (10,10) → 19.07, 36.73, 2.73.
        assert_eq!(gaussian_radius(10.0, 10.0, 0.7).unwrap(), 2);
        assert_eq!(gaussian_radius(3.0, 5.0, 0.7).unwrap(), 1);
        assert_eq!(gaussian_radius(20.0, 8.0, 0.7).unwrap(), 3);
        assert_eq!(gaussian_radius(40.0, 40.0, 0.7).unwrap(), 10);
        assert_eq!(gaussian_radius(1.0, 1.0, 0.7).unwrap(), 1);
    }

    #[test]
    fn radius_rejects_bad_input() {
        assert!(gaussian_radius(0.0, 3.0, 0.7).is_err());
        assert!(gaussian_radius(3.0, -1.0, 0.7).is_err());
        assert!(gaussian_radius(3.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn render_center_and_sigma() {
        let mut m = vec![0.0; 15 * 15];
        render_gaussian(&mut m, 15, 15, 7, 7, 3);
        assert_eq!(m[7 * 15 + 7], 1.0);
        // σ = 1 cell for r = 3
        assert!((m[7 * 15 + 8] - 0.606_530_66).abs() < 1e-8);
        assert_eq!(m[7 * 15 + 11], 0.0);
    }

    #[test]
    fn render_is_idempotent_and_max_combines() {
        let mut a = vec![0.0; 12 * 12];
        let mut b = a.clone();
        render_gaussian(&mut a, 12, 12, 3, 4, 3);
        render_gaussian(&mut b, 12, 12, 6, 5, 2);
        let mut both = vec![0.0; 12 * 12];
        render_gaussian(&mut both, 12, 12, 3, 4, 3);
        render_gaussian(&mut both, 12, 12, 6, 5, 2);
        let twice = {
            let mut t = both.clone();
            render_gaussian(&mut t, 12, 12, 6, 5, 2);
            t
        };
        assert_eq!(twice, both);
        for i in 0..a.len() {
            assert_eq!(both[i], a[i].max(b[i]));
        }
    }

    #[test]
    fn render_clips_at_border() {
        let mut m = vec![0.0; 4 * 4];
        render_gaussian(&mut m, 4, 4, 0, 0, 3);
        assert_eq!(m[0], 1.0);
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
