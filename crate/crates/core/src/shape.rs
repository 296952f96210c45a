use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on `T`, keeps per-sample buffers bounded.
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

/// Number of iterations `T` and per-example participation count `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct MechanismShape {
    iterations: usize,
    participations: usize,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    t: usize,
    k: usize,
}

impl TryFrom<RawShape> for MechanismShape {
    type Error = Error;

    fn try_from(raw: RawShape) -> Result<Self> {
        MechanismShape::new(raw.t, raw.k)
    }
}

impl From<MechanismShape> for RawShape {
    fn from(shape: MechanismShape) -> Self {
        RawShape { t: shape.iterations, k: shape.participations }
    }
}

impl MechanismShape {
    pub fn new(iterations: usize, participations: usize) -> Result<Self> {
        Self::with_cap(iterations, participations, DEFAULT_MAX_ITERATIONS)
    }

    pub fn with_cap(iterations: usize, participations: usize, max_iterations: usize) -> Result<Self> {
        if participations == 0 {
            return Err(Error::InvalidShape("k must be at least 1".into()));
        }
        if participations > iterations {
            return Err(Error::InvalidShape(format!(
                "k = {participations} exceeds T = {iterations}"
            )));
        }
        if iterations > max_iterations {
            return Err(Error::InvalidShape(format!(
                "T = {iterations} exceeds the cap of {max_iterations}"
            )));
        }
        Ok(Self { iterations, participations })
    }

    /// `T`
    #[inline]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `k`
    #[inline]
    pub fn participations(&self) -> usize {
        self.participations
    }

    /// Per-iteration participation probability `k / T`.
    pub fn rate(&self) -> f64 {
        self.participations as f64 / self.iterations as f64
    }

    pub fn is_full_batch(&self) -> bool {
        self.participations == self.iterations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(MechanismShape::new(5, 0).is_err());
        assert!(MechanismShape::new(3, 4).is_err());
        assert!(MechanismShape::new(0, 0).is_err());
        assert!(MechanismShape::with_cap(11, 2, 10).is_err());
        assert!(MechanismShape::new(DEFAULT_MAX_ITERATIONS + 1, 1).is_err());
    }

    #[test]
    fn accepts_boundaries() {
        let s = MechanismShape::new(1, 1).unwrap();
        assert!(s.is_full_batch());
        let s = MechanismShape::new(176, 3).unwrap();
        assert_eq!((s.iterations(), s.participations()), (176, 3));
    }

    #[test]
    fn serde_validates() {
        let s: MechanismShape = serde_json::from_str(r#"{"t":4,"k":2}"#).unwrap();
        assert_eq!(s, MechanismShape::new(4, 2).unwrap());
        assert!(serde_json::from_str::<MechanismShape>(r#"{"t":2,"k":4}"#).is_err());
    }
}
