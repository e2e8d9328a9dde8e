//! Pixel-space box geometry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("degenerate box: need x1 < x2 and y1 < y2")]
    Degenerate,
    #[error("box coordinate is not finite")]
    NonFinite,
}

/// A point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

/// Axis-aligned box with corners `(x1, y1)` (top-left) and `(x2, y2)`
/// (bottom-right). Serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[T; 4]", into = "[T; 4]")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct BoundingBox<T> {
    x1: T,
    y1: T,
    x2: T,
    y2: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self, GeometryError> {
        // NaN fails both comparisons and lands here too.
        if !(x1 < x2 && y1 < y2) {
            return Err(GeometryError::Degenerate);
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> T {
        self.x1
    }

    pub fn y1(&self) -> T {
        self.y1
    }

    pub fn x2(&self) -> T {
        self.x2
    }

    pub fn y2(&self) -> T {
        self.y2
    }

    pub fn corners(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point<T> {
        Point {
            x: (self.x1 + self.x2) / T::two(),
            y: (self.y1 + self.y2) / T::two(),
        }
    }

    /// Closed-interval containment, so clicks on the border count.
    pub fn contains(&self, p: Point<T>) -> bool {
        self.x1 <= p.x && p.x <= self.x2 && self.y1 <= p.y && p.y <= self.y2
    }

    pub fn contains_strictly(&self, p: Point<T>) -> bool {
        self.x1 < p.x && p.x < self.x2 && self.y1 < p.y && p.y < self.y2
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x2.min_of(other.x2) - self.x1.max_of(other.x1);
        let h = self.y2.min_of(other.y2) - self.y1.max_of(other.y1);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Clip to `[0, width] × [0, height]`. Fails when nothing with positive
    /// area survives.
    pub fn clamp_to(&self, width: T, height: T) -> Result<Self, GeometryError> {
        Self::new(
            self.x1.clamp_between(T::zero(), width),
            self.y1.clamp_between(T::zero(), height),
            self.x2.clamp_between(T::zero(), width),
            self.y2.clamp_between(T::zero(), height),
        )
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Result<BoundingBox<U>, GeometryError> {
        BoundingBox::new(f(self.x1), f(self.y1), f(self.x2), f(self.y2))
    }
}

impl<T: Scalar> TryFrom<[T; 4]> for BoundingBox<T> {
    type Error = GeometryError;

    fn try_from(c: [T; 4]) -> Result<Self, Self::Error> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl<T: Scalar> From<BoundingBox<T>> for [T; 4] {
    fn from(b: BoundingBox<T>) -> Self {
        b.corners()
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp_between(T::zero(), T::one())
}
