use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sub-rectangle of a detected box in normalized coordinates, `[x1, y1, x2, y2]`
/// with the origin at the upper-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Window {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl Window {
    pub const FULL: Window = Window {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(Error::InvalidWindow(format!("{coords:?} outside [0, 1]")));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::InvalidWindow(format!("{coords:?} is not ordered")));
        }
        Ok(Window { x1, y1, x2, y2 })
    }

    /// Centered window covering `ratio` of each side.
    pub fn centred(ratio: f64) -> Result<Self> {
        let m = (1.0 - ratio) / 2.0;
        Window::new(m, m, 1.0 - m, 1.0 - m)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Whether both sides are at least `floor` long (to within 1e-12, so that
    /// e.g. `0.6 − 0.4` counts as 0.2).
    pub fn respects_floor(&self, floor: f64) -> bool {
        self.width() >= floor - 1e-12 && self.height() >= floor - 1e-12
    }

    /// Maps a window expressed inside `self` back to the coordinates of the
    /// original box.
    pub fn compose(&self, inner: &Window) -> Window {
        Window {
            x1: self.x1 + inner.x1 * self.width(),
            y1: self.y1 + inner.y1 * self.height(),
            x2: self.x1 + inner.x2 * self.width(),
            y2: self.y1 + inner.y2 * self.height(),
        }
    }

    /// Intersection-over-union with another window.
    pub fn iou(&self, other: &Window) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = w * h;
        inter / (self.area() + other.area() - inter)
    }

    pub(crate) fn from_raw(x1: f64, y1: f64, x2: f64, y2: f64) -> Window {
        Window { x1, y1, x2, y2 }
    }
}

impl Default for Window {
    fn default() -> Self {
        Window::FULL
    }
}

impl TryFrom<[f64; 4]> for Window {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Window::new(c[0], c[1], c[2], c[3])
    }
}

impl From<Window> for [f64; 4] {
    fn from(w: Window) -> Self {
        w.coords()
    }
}
