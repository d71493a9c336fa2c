use crate::geom::{clip_polygon, polygon_area, OrientedBox, Se2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("degenerate box {length} x {width}")]
pub struct DegenerateBox {
    pub length: f64,
    pub width: f64,
}

/// Intersection over union of two oriented boxes by convex polygon
/// clipping.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> Result<f64, DegenerateBox> {
    for x in [a, b] {
        if !(x.length > 0.0 && x.width > 0.0) || !x.length.is_finite() || !x.width.is_finite() {
            return Err(DegenerateBox {
                length: x.length,
                width: x.width,
            });
        }
    }
    Ok(iou_unchecked(a, b))
}

/// [`rotated_iou`] for boxes already known to have positive size.
pub fn iou_unchecked(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
    if (a.cx - b.cx).hypot(a.cy - b.cy) > reach {
        return 0.0;
    }
    let inter = polygon_area(&clip_polygon(&a.corners(), &b.corners())).max(0.0);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Sweeps the heading of a `length × width` box centred `pivot_distance`
/// from a pivot, pairing it with its copy rotated by `rotation` about the
/// pivot. Returns `(heading relative to the pivot ray, IoU)` for `n`
/// headings over `[0, π)`.
pub fn pivot_sweep(length: f64, width: f64, pivot_distance: f64, rotation: f64, n: usize) -> Vec<(f64, f64)> {
    let rot = Se2::new(rotation, 0.0, 0.0);
    (0..n)
        .map(|i| {
            let heading = std::f64::consts::PI * i as f64 / n as f64;
            let a = OrientedBox::new(pivot_distance, 0.0, length, width, heading);
            (heading, iou_unchecked(&a, &a.transformed(&rot)))
        })
        .collect()
}
