use super::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pooled features `[N, C, S, S]` plus a per-box flag for zero-area boxes,
/// which collapse to sampling a single point.
#[derive(Debug, Clone)]
pub struct RoiAlignOutput {
    pub features: Tensor,
    pub degenerate: Vec<bool>,
}

/// Lower/upper neighbour and fractional offset along one axis of length `n`,
/// for `v ≥ 0`; points past the last cell snap onto it.
fn axis_split(v: f64, n: usize) -> (usize, usize, f64) {
    let lo = v.floor() as usize;
    if lo >= n - 1 {
        (n - 1, n - 1, 0.0)
    } else {
        (lo, lo + 1, v - lo as f64)
    }
}

/// Bilinear taps `(flat spatial index, weight)` for one point; none when
/// the point lies more than one cell outside the map.
fn bilinear_taps(y: f64, x: f64, h: usize, w: usize, weight: f64, out: &mut Vec<(usize, f64)>) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return;
    }
    let (y0, y1, ly) = axis_split(y.max(0.0), h);
    let (x0, x1, lx) = axis_split(x.max(0.0), w);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    out.push((y0 * w + x0, weight * hy * hx));
    out.push((y0 * w + x1, weight * hy * lx));
    out.push((y1 * w + x0, weight * ly * hx));
    out.push((y1 * w + x1, weight * ly * lx));
}

/// RoIAlign on a `[C, h, w]` map with half-pixel alignment: each of the
/// `S×S` bins averages `sampling²` bilinear samples at regular sub-bin
/// positions. `spatial_scale` maps image pixels to feature cells.
pub fn roi_align(fmap: &Tensor, boxes: &[BBox], output_size: usize, spatial_scale: f64, sampling: usize) -> Result<RoiAlignOutput> {
    let s = fmap.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "roi_align",
            lhs: s.to_vec(),
            rhs: vec![output_size],
        });
    }
    if output_size == 0 || sampling == 0 {
        return Err(Error::InvalidArgument("roi_align output size and sampling must be ≥ 1".into()));
    }
    if boxes.is_empty() {
        return Err(Error::InvalidArgument("roi_align needs at least one box".into()));
    }
    if let Some(b) = boxes.iter().find(|b| !b.is_valid()) {
        return Err(Error::InvalidArgument(format!("invalid box {b:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let hw = h * w;
    let bins = output_size * output_size;
    let n = boxes.len();

    // taps[start[k]..start[k + 1]] belong to bin k = box·bins + bin.
    let mut taps: Vec<(usize, f64)> = Vec::new();
    let mut start = Vec::with_capacity(n * bins + 1);
    let mut degenerate = Vec::with_capacity(n);
    let per_sample = 1.0 / (sampling * sampling) as f64;
    for b in boxes {
        let x0 = b.x1 * spatial_scale - 0.5;
        let y0 = b.y1 * spatial_scale - 0.5;
        let bw = b.width() * spatial_scale / output_size as f64;
        let bh = b.height() * spatial_scale / output_size as f64;
        degenerate.push(b.width() <= 0.0 || b.height() <= 0.0);
        for py in 0..output_size {
            for px in 0..output_size {
                start.push(taps.len());
                for iy in 0..sampling {
                    let y = y0 + py as f64 * bh + (iy as f64 + 0.5) * bh / sampling as f64;
                    for ix in 0..sampling {
                        let x = x0 + px as f64 * bw + (ix as f64 + 0.5) * bw / sampling as f64;
                        bilinear_taps(y, x, h, w, per_sample, &mut taps);
                    }
                }
            }
        }
    }
    start.push(taps.len());

    let data = fmap.data();
    let mut out = vec![0.0; n * c * bins];
    for bi in 0..n {
        for k in 0..bins {
            let t = &taps[start[bi * bins + k]..start[bi * bins + k + 1]];
            for ch in 0..c {
                let plane = &data[ch * hw..(ch + 1) * hw];
                out[(bi * c + ch) * bins + k] = t.iter().map(|&(i, wt)| wt * plane[i]).sum();
            }
        }
    }
    let total = fmap.numel();
    let features = Tensor::from_op("roi_align", vec![n, c, output_size, output_size], out, vec![fmap.clone()], move |g| {
        let mut gi = vec![0.0; total];
        for bi in 0..n {
            for k in 0..bins {
                let t = &taps[start[bi * bins + k]..start[bi * bins + k + 1]];
                for ch in 0..c {
                    let gv = g[(bi * c + ch) * bins + k];
                    if gv == 0.0 {
                        continue;
                    }
                    let plane = &mut gi[ch * hw..(ch + 1) * hw];
                    for &(i, wt) in t {
                        plane[i] += wt * gv;
                    }
                }
            }
        }
        vec![Some(gi)]
    });
    Ok(RoiAlignOutput { features, degenerate })
}
