use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::Vec3;
use crate::scalar::Real;

/// Positions with RGB colors in `[0, 1]`; the interchange type between initializers and the trainer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<T> {
    pub positions: Vec<Vec3<T>>,
    pub colors: Vec<[T; 3]>,
    pub confidences: Option<Vec<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(positions: Vec<Vec3<T>>, colors: Vec<[T; 3]>) -> Result<Self> {
        let pc = Self {
            positions,
            colors,
            confidences: None,
        };
        pc.validate()?;
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.colors.len() {
            return invalid(format!(
                "{} positions but {} colors",
                self.positions.len(),
                self.colors.len()
            ));
        }
        if let Some(c) = &self.confidences {
            if c.len() != self.positions.len() {
                return invalid("confidence count differs from point count");
            }
        }
        if let Some(i) = self.positions.iter().position(|p| !p.is_finite()) {
            return invalid(format!("point {i} has a non-finite position"));
        }
        if let Some(i) = self
            .colors
            .iter()
            .position(|c| c.iter().any(|v| !v.is_finite()))
        {
            return invalid(format!("point {i} has a non-finite color"));
        }
        Ok(())
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            positions: rows.iter().map(|&i| self.positions[i]).collect(),
            colors: rows.iter().map(|&i| self.colors[i]).collect(),
            confidences: self
                .confidences
                .as_ref()
                .map(|c| rows.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn extend(&mut self, other: &Self) {
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        match (&mut self.confidences, &other.confidences) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (a @ Some(_), None) => *a = None,
            _ => {}
        }
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        let c = |v: T| U::lit(v.as_f64());
        PointCloud {
            positions: self.positions.iter().map(|p| p.cast()).collect(),
            colors: self.colors.iter().map(|rgb| rgb.map(c)).collect(),
            confidences: self
                .confidences
                .as_ref()
                .map(|v| v.iter().map(|&x| c(x)).collect()),
        }
    }
}
