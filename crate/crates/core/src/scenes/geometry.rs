use serde::{Deserialize, Serialize};

/// Pixel rectangle covering columns `x..x+w` and rows `y..y+h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Self { x, y, w, h }
    }

    /// Rectangle of odd size `(w, h)` around a center pixel.
    pub fn centered(center: (i32, i32), size: (i32, i32)) -> Self {
        Self { x: center.0 - (size.0 - 1) / 2, y: center.1 - (size.1 - 1) / 2, w: size.0, h: size.1 }
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) as i64 * self.h.max(0) as i64
    }

    pub fn is_degenerate(&self) -> bool {
        self.w <= 0 || self.h <= 0
    }

    /// Geometric center in pixel-index coordinates.
    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + (self.w - 1) as f64 / 2.0, self.y as f64 + (self.h - 1) as f64 / 2.0)
    }

    pub fn contains(&self, u: i32, v: i32) -> bool {
        u >= self.x && u < self.right() && v >= self.y && v < self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.intersection(other).is_some()
    }

    pub fn inflate(&self, by: i32) -> Rect {
        Rect { x: self.x - by, y: self.y - by, w: self.w + 2 * by, h: self.h + 2 * by }
    }

    pub fn mirrored(&self, image_width: i32) -> Rect {
        Rect { x: image_width - self.right(), ..*self }
    }

    pub fn to_array(self) -> [i32; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// An allowed placement area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Rect(Rect),
    /// Closed polygon in pixel coordinates, even-odd rule on pixel positions.
    Polygon {
        points: Vec<(f64, f64)>,
    },
}

impl Region {
    pub fn contains(&self, u: i32, v: i32) -> bool {
        match self {
            Region::Rect(r) => r.contains(u, v),
            Region::Polygon { points } => {
                let (px, py) = (u as f64, v as f64);
                let mut inside = false;
                let n = points.len();
                for i in 0..n {
                    let (xi, yi) = points[i];
                    let (xj, yj) = points[(i + n - 1) % n];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    /// Row-major membership mask over a `width × height` grid.
    pub fn mask(&self, width: usize, height: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                out.push(self.contains(u as i32, v as i32));
            }
        }
        out
    }

    pub fn polygon_of(rect: &Rect) -> Region {
        let (x0, y0) = (rect.x as f64 - 0.5, rect.y as f64 - 0.5);
        let (x1, y1) = (rect.right() as f64 - 0.5, rect.bottom() as f64 - 0.5);
        Region::Polygon { points: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)] }
    }
}
