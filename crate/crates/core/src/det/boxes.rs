use serde::{Deserialize, Serialize};

/// Axis-aligned box in image pixels, origin top-left, `x2 ≥ x1`, `y2 ≥ y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x2 >= self.x1 && self.y2 >= self.y1
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// Clamps into `[0, width] × [0, height]`.
    pub fn clamp(&self, width: f64, height: f64) -> BBox {
        let x1 = self.x1.clamp(0.0, width);
        let y1 = self.y1.clamp(0.0, height);
        BBox::new(x1, y1, self.x2.clamp(x1, width), self.y2.clamp(y1, height))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

pub fn iou_matrix(a: &[BBox], b: &[BBox]) -> Vec<Vec<f64>> {
    a.iter().map(|x| b.iter().map(|y| x.iou(y)).collect()).collect()
}

/// Candidate region from the RPN; `objectness` is the raw logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
}

/// Final detection; `class_id` indexes the object classes (background excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Center/size delta coding relative to a reference box:
/// `dx = wx·(cx − acx)/aw`, `dw = ww·ln(w/aw)` and likewise for y/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaCoder {
    pub weights: [f64; 4],
    /// Upper bound on decoded `dw`, `dh` before exponentiation.
    pub clip: f64,
}

impl Default for DeltaCoder {
    fn default() -> Self {
        DeltaCoder::new([1.0; 4])
    }
}

impl DeltaCoder {
    pub fn new(weights: [f64; 4]) -> Self {
        DeltaCoder {
            weights,
            clip: (1000.0f64 / 16.0).ln(),
        }
    }

    /// Coder used for second-stage box regression.
    pub fn roi_head() -> Self {
        DeltaCoder::new([10.0, 10.0, 5.0, 5.0])
    }

    /// Both boxes must have positive width and height.
    pub fn encode(&self, target: &BBox, reference: &BBox) -> [f64; 4] {
        let [wx, wy, ww, wh] = self.weights;
        let (aw, ah) = (reference.width(), reference.height());
        let (acx, acy) = reference.center();
        let (gw, gh) = (target.width(), target.height());
        let (gcx, gcy) = target.center();
        [
            wx * (gcx - acx) / aw,
            wy * (gcy - acy) / ah,
            ww * (gw / aw).ln(),
            wh * (gh / ah).ln(),
        ]
    }

    pub fn decode(&self, deltas: &[f64], reference: &BBox) -> BBox {
        let [wx, wy, ww, wh] = self.weights;
        let (aw, ah) = (reference.width(), reference.height());
        let dx = deltas[0] / wx * aw;
        let dy = deltas[1] / wy * ah;
        let w = aw * (deltas[2] / ww).min(self.clip).exp();
        let h = ah * (deltas[3] / wh).min(self.clip).exp();
        // Offsets from the reference edges, so zero deltas return it bitwise.
        let (gx, gy) = (0.5 * (w - aw), 0.5 * (h - ah));
        BBox::new(reference.x1 + dx - gx, reference.y1 + dy - gy, reference.x2 + dx + gx, reference.y2 + dy + gy)
    }
}
