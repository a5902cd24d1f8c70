use crate::det::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resized proposal crops `[N, C, side, side]`; `degenerate[i]` marks a
/// zero-area box filled from a single pixel.
#[derive(Debug, Clone)]
pub struct CropBatch {
    pub crops: Tensor,
    pub degenerate: Vec<bool>,
}

/// Half-pixel source coordinate for output index `o`, clamped to the image.
fn source(o: usize, start: f64, extent: f64, side: usize, limit: usize) -> (usize, usize, f64) {
    let v = (start + (o as f64 + 0.5) * extent / side as f64 - 0.5).clamp(0.0, (limit - 1) as f64);
    let lo = v.floor() as usize;
    let hi = (lo + 1).min(limit - 1);
    (lo, hi, v - lo as f64)
}

/// Bilinear resize of each box region of `image: [C, H, W]` to `side × side`.
/// The result carries no gradient.
pub fn crop_and_resize_proposals(image: &Tensor, boxes: &[BBox], side: usize) -> Result<CropBatch> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "crop_and_resize",
            lhs: s.to_vec(),
            rhs: vec![side, side],
        });
    }
    if boxes.is_empty() || side == 0 {
        return Err(Error::InvalidArgument("crop_and_resize needs boxes and a positive side".into()));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let data = image.data();
    let mut out = Vec::with_capacity(boxes.len() * c * side * side);
    let mut degenerate = Vec::with_capacity(boxes.len());
    for b in boxes {
        if !b.is_valid() {
            return Err(Error::InvalidArgument(format!("invalid box {b:?}")));
        }
        let flat = b.width() <= 0.0 || b.height() <= 0.0;
        degenerate.push(flat);
        if flat {
            let y = (b.y1.floor().max(0.0) as usize).min(h - 1);
            let x = (b.x1.floor().max(0.0) as usize).min(w - 1);
            for ch in 0..c {
                out.extend(std::iter::repeat_n(data[(ch * h + y) * w + x], side * side));
            }
            continue;
        }
        let ys: Vec<_> = (0..side).map(|o| source(o, b.y1, b.height(), side, h)).collect();
        let xs: Vec<_> = (0..side).map(|o| source(o, b.x1, b.width(), side, w)).collect();
        for ch in 0..c {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            for &(y0, y1, ly) in &ys {
                for &(x0, x1, lx) in &xs {
                    let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                    let bottom = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                    out.push(top * (1.0 - ly) + bottom * ly);
                }
            }
        }
    }
    Ok(CropBatch {
        crops: Tensor::from_vec(out, &[boxes.len(), c, side, side])?,
        degenerate,
    })
}
