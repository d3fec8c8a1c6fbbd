//! Integer-grid drawing primitives. Pixel `(u, v)` has its center at the
//! continuous coordinate `(u, v)` and covers `[u - ½, u + ½) × [v - ½, v + ½)`.

use crate::geom::Vec2;

/// Calls `span(v, u0, u1)` for every row of the polygon's interior, with
/// `u0..u1` the half-open run of pixel centers inside it (even-odd rule).
pub fn polygon_spans(points: &[Vec2], width: usize, height: usize, mut span: impl FnMut(usize, usize, usize)) {
    if points.len() < 3 || width == 0 || height == 0 {
        return;
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = lo.min(p.y);
        hi = hi.max(p.y);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return;
    }
    let v_start = lo.ceil().max(0.0);
    let v_end = hi.ceil().min(height as f64);
    if v_start >= v_end {
        return;
    }

    let mut xs: Vec<f64> = Vec::with_capacity(points.len());
    for v in v_start as usize..v_end as usize {
        let y = v as f64;
        xs.clear();
        for i in 0..points.len() {
            let a = points[i];
            let b = points[(i + 1) % points.len()];
            if (a.y <= y) != (b.y <= y) {
                xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let u0 = pair[0].ceil().max(0.0);
            let u1 = pair[1].ceil().min(width as f64);
            if u0 < u1 {
                span(v, u0 as usize, u1 as usize);
            }
        }
    }
}

/// Fills a polygon into a single-channel `width × height` plane.
pub fn fill_polygon(plane: &mut [u8], width: usize, height: usize, points: &[Vec2], value: u8) {
    polygon_spans(points, width, height, |v, u0, u1| {
        plane[v * width + u0..v * width + u1].fill(value);
    });
}

/// Liang–Barsky clip of segment `a → b` to the pixel footprint.
fn clip_segment(a: Vec2, b: Vec2, width: usize, height: usize) -> Option<(Vec2, Vec2)> {
    let (xmin, ymin) = (-0.5, -0.5);
    let (xmax, ymax) = (width as f64 - 0.5, height as f64 - 0.5);
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x - xmin),
        (d.x, xmax - a.x),
        (-d.y, a.y - ymin),
        (d.y, ymax - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((a + d * t0, a + d * t1))
}

/// Visits the pixels of a 1-px-wide line (Bresenham over the clipped,
/// rounded endpoints).
pub fn line_pixels(a: Vec2, b: Vec2, width: usize, height: usize, mut plot: impl FnMut(usize, usize)) {
    if !(a.is_finite() && b.is_finite()) {
        return;
    }
    let Some((a, b)) = clip_segment(a, b, width, height) else {
        return;
    };
    let (w, h) = (width as i64, height as i64);
    let (mut x0, mut y0) = (a.x.round() as i64, a.y.round() as i64);
    let (x1, y1) = (b.x.round() as i64, b.y.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (0..w).contains(&x0) && (0..h).contains(&y0) {
            plot(x0 as usize, y0 as usize);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

pub fn polyline_pixels(points: &[Vec2], width: usize, height: usize, mut plot: impl FnMut(usize, usize)) {
    if let [single] = points {
        line_pixels(*single, *single, width, height, &mut plot);
    }
    for seg in points.windows(2) {
        line_pixels(seg[0], seg[1], width, height, &mut plot);
    }
}

/// A filled `(2r+1)²` square around the rounded point.
pub fn marker_pixels(p: Vec2, radius: i64, width: usize, height: usize, mut plot: impl FnMut(usize, usize)) {
    if !p.is_finite() {
        return;
    }
    let (cu, cv) = (p.x.round() as i64, p.y.round() as i64);
    for v in cv - radius..=cv + radius {
        for u in cu - radius..=cu + radius {
            if (0..width as i64).contains(&u) && (0..height as i64).contains(&v) {
                plot(u as usize, v as usize);
            }
        }
    }
}
