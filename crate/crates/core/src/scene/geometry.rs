use serde::{Deserialize, Serialize};

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn extent(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn center(&self) -> [f64; 3] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]), 0.5 * (self.min[2] + self.max[2])]
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn contains(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] - tol && other.max[a] <= self.max[a] + tol)
    }

    /// Smallest per-axis overlap; positive only when the interiors intersect.
    pub fn penetration(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|a| self.max[a].min(other.max[a]) - self.min[a].max(other.min[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance between the closest points of two boxes (0 when touching or overlapping).
    pub fn gap(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|a| (self.min[a] - other.max[a]).max(other.min[a] - self.max[a]).max(0.0))
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn touching_boxes_have_zero_gap() {
        let a = Aabb { min: [0.0; 3], max: [1.0; 3] };
        let b = Aabb { min: [1.0, 0.0, 0.0], max: [2.0, 1.0, 1.0] };
        assert_eq!(a.gap(&b), 0.0);
        assert_eq!(a.penetration(&b), 0.0);
        let c = Aabb { min: [4.0, 0.0, 0.0], max: [5.0, 1.0, 1.0] };
        assert_eq!(a.gap(&c), 3.0);
        assert!(a.penetration(&c) < 0.0);
    }
}
