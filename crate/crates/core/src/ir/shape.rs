use std::fmt;

use serde::{Deserialize, Serialize};

use super::IrError;

/// Highest per-example rank a tensor may carry.
pub const MAX_RANK: usize = 4;

/// Per-example extents of a tensor. The batch dimension is never part of a
/// `TensorShape`; it travels on the model spec.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self, IrError> {
        let dims = dims.into();
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(IrError::InvalidShape(format!("rank {} outside 1..={MAX_RANK}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(IrError::InvalidShape(format!("zero extent in {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn element_count(&self) -> usize {
        self.0.iter().product()
    }

    pub fn last(&self) -> usize {
        *self.0.last().expect("rank >= 1")
    }

    /// Extents of every axis except the last (the "spatial" axes for
    /// channels-last layouts).
    pub fn spatial(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }

    /// Full tensor shape including a leading batch axis.
    pub fn with_batch(&self, batch: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(batch);
        v.extend_from_slice(&self.0);
        v
    }
}

impl TryFrom<Vec<usize>> for TensorShape {
    type Error = IrError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        TensorShape::new(v)
    }
}

impl From<TensorShape> for Vec<usize> {
    fn from(s: TensorShape) -> Self {
        s.0
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl std::str::FromStr for TensorShape {
    type Err = IrError;

    /// Parses `8x8x3` or `8,8,3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims = s
            .split(['x', ',', 'X'])
            .map(|p| p.trim().parse::<usize>().map_err(|_| IrError::InvalidShape(format!("cannot parse `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        TensorShape::new(dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_ranks_and_zero_extents() {
        assert!(TensorShape::new(vec![]).is_err());
        assert!(TensorShape::new(vec![1, 2, 3, 4, 5]).is_err());
        assert!(TensorShape::new(vec![3, 0]).is_err());
        let s = TensorShape::new(vec![8, 8, 3]).unwrap();
        assert_eq!(s.element_count(), 192);
        assert_eq!(s.spatial(), &[8, 8]);
        assert_eq!(s.with_batch(4), vec![4, 8, 8, 3]);
    }

    #[test]
    fn parses_and_displays() {
        let s: TensorShape = "8x8x3".parse().unwrap();
        assert_eq!(s.to_string(), "8x8x3");
        let t: TensorShape = "10".parse().unwrap();
        assert_eq!(t.dims(), &[10]);
        assert!("8xx3".parse::<TensorShape>().is_err());
    }

    #[test]
    fn serde_validates() {
        let s: TensorShape = serde_json::from_str("[4,4]").unwrap();
        assert_eq!(s.rank(), 2);
        assert!(serde_json::from_str::<TensorShape>("[0]").is_err());
    }
}
