//! Box geometry in normalized `cxcywh`, IoU and generalized IoU with its
//! analytic gradient.

use crate::error::{Error, Result};

pub type BoxCxcywh = [f64; 4];

/// `[x1, y1, x2, y2]`.
pub fn to_xyxy(b: &BoxCxcywh) -> [f64; 4] {
    [b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0, b[1] + b[3] / 2.0]
}

pub fn from_xyxy(b: &[f64; 4]) -> BoxCxcywh {
    [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0, b[2] - b[0], b[3] - b[1]]
}

fn check(b: &BoxCxcywh) -> Result<()> {
    if !(b[2] > 0.0 && b[3] > 0.0) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("box {b:?} must have finite coordinates and positive size")));
    }
    Ok(())
}

pub fn iou(a: &BoxCxcywh, b: &BoxCxcywh) -> f64 {
    let (a, b) = (to_xyxy(a), to_xyxy(b));
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `IoU − (enclosure − union) / enclosure`, in `(−1, 1]`.
pub fn generalized_iou(a: &BoxCxcywh, b: &BoxCxcywh) -> Result<f64> {
    check(a)?;
    check(b)?;
    Ok(giou_with_grad(a, b).0)
}

/// GIoU and its gradient with respect to the `cxcywh` coordinates of `a`.
/// Inputs are assumed valid. At the kinks of the min/max operations the
/// one-sided derivative taking `a`'s side on ties is returned.
pub fn giou_with_grad(a: &BoxCxcywh, b: &BoxCxcywh) -> (f64, [f64; 4]) {
    let pa = to_xyxy(a);
    let pb = to_xyxy(b);
    let wa = pa[2] - pa[0];
    let ha = pa[3] - pa[1];
    let area_a = wa * ha;
    let area_b = (pb[2] - pb[0]) * (pb[3] - pb[1]);

    let raw_iw = pa[2].min(pb[2]) - pa[0].max(pb[0]);
    let raw_ih = pa[3].min(pb[3]) - pa[1].max(pb[1]);
    let (iw, ih) = (raw_iw.max(0.0), raw_ih.max(0.0));
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    let ew = pa[2].max(pb[2]) - pa[0].min(pb[0]);
    let eh = pa[3].max(pb[3]) - pa[1].min(pb[1]);
    let enc = ew * eh;
    let giou = inter / union - (enc - union) / enc;

    // derivatives with respect to x1, y1, x2, y2 of `a`
    let d_iw = if raw_iw > 0.0 {
        [if pa[0] >= pb[0] { -1.0 } else { 0.0 }, 0.0, if pa[2] <= pb[2] { 1.0 } else { 0.0 }, 0.0]
    } else {
        [0.0; 4]
    };
    let d_ih = if raw_ih > 0.0 {
        [0.0, if pa[1] >= pb[1] { -1.0 } else { 0.0 }, 0.0, if pa[3] <= pb[3] { 1.0 } else { 0.0 }]
    } else {
        [0.0; 4]
    };
    let d_area = [-ha, -wa, ha, wa];
    let d_ew = [if pa[0] <= pb[0] { -1.0 } else { 0.0 }, 0.0, if pa[2] >= pb[2] { 1.0 } else { 0.0 }, 0.0];
    let d_eh = [0.0, if pa[1] <= pb[1] { -1.0 } else { 0.0 }, 0.0, if pa[3] >= pb[3] { 1.0 } else { 0.0 }];

    let mut g_xyxy = [0.0; 4];
    for i in 0..4 {
        let d_inter = ih * d_iw[i] + iw * d_ih[i];
        let d_union = d_area[i] - d_inter;
        let d_enc = eh * d_ew[i] + ew * d_eh[i];
        let d_iou = (d_inter * union - inter * d_union) / (union * union);
        // −(enc − union)/enc = union/enc − 1
        let d_pen = (d_union * enc - union * d_enc) / (enc * enc);
        g_xyxy[i] = d_iou + d_pen;
    }
    // x1 = cx − w/2, x2 = cx + w/2
    let grad = [
        g_xyxy[0] + g_xyxy[2],
        g_xyxy[1] + g_xyxy[3],
        (g_xyxy[2] - g_xyxy[0]) / 2.0,
        (g_xyxy[3] - g_xyxy[1]) / 2.0,
    ];
    (giou, grad)
}

/// True when moving `a` by up to `eps` in coordinate `coord` could cross one
/// of GIoU's non-differentiable points.
pub fn giou_near_kink(a: &BoxCxcywh, b: &BoxCxcywh, coord: usize, eps: f64) -> bool {
    let pa = to_xyxy(a);
    let pb = to_xyxy(b);
    let axis = coord % 2;
    let (lo, hi) = (axis, axis + 2);
    let margin = 2.0 * eps;
    (pa[lo] - pb[lo]).abs() < margin
        || (pa[hi] - pb[hi]).abs() < margin
        || (pa[hi].min(pb[hi]) - pa[lo].max(pb[lo])).abs() < margin
}
