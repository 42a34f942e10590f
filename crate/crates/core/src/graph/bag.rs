use crate::error::{Error, Result};
use crate::numkit::{Matrix, Real};

/// One sample's patches: `N × d` features and `N` pixel coordinates (the MIL bag).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBag {
    pub bag_id: String,
    pub features: Matrix<f32>,
    pub coords: Vec<[f32; 2]>,
}

impl PatchBag {
    pub fn new(bag_id: impl Into<String>, features: Matrix<f32>, coords: Vec<[f32; 2]>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        if coords.len() != features.rows() {
            return Err(Error::Shape(format!(
                "bag has {} feature rows but {} coordinates",
                features.rows(),
                coords.len()
            )));
        }
        if !features.all_finite() || coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::InvalidArgument("bag contains non-finite values".into()));
        }
        Ok(Self { bag_id: bag_id.into(), features, coords })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features_as<T: Real>(&self) -> Matrix<T> {
        self.features.cast()
    }

    /// Applies one permutation jointly to features and coordinates: row `k`
    /// of the result is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            bag_id: self.bag_id.clone(),
            features: self.features.gather_rows(perm),
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}
