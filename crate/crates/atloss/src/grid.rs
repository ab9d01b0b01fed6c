//! Precipitation grid fields.
//!
//! A [`GridField`] carries one time step of precipitation intensities over a
//! rectangular grid, stored row-major. Observed data lives in physical units
//! (mm/h, non-negative); model outputs and normalized data may be any finite
//! real, so two constructors exist with different validation.

use crate::error::{Error, Result};

/// A 2-D field of per-cell values over `height x width` grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl GridField {
    /// Build a field from row-major values, requiring every value to be finite.
    ///
    /// Use this for normalized data, model outputs, and anything else that may
    /// legitimately be negative. Observed precipitation should go through
    /// [`GridField::physical`].
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid { height, width });
        }
        let expected = height * width;
        if values.len() != expected {
            return Err(Error::ValueCount {
                height,
                width,
                len: values.len(),
                expected,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "grid value",
                value: values[index],
            });
        }
        Ok(GridField {
            height,
            width,
            values,
        })
    }

    /// Build a physical-scale (mm/h) field: finite and non-negative.
    pub fn physical(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| *v < 0.0) {
            return Err(Error::NegativeIntensity {
                index,
                value: values[index],
            });
        }
        Self::new(height, width, values)
    }

    /// All-zero physical field.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    /// Constant-valued field.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of grid cells `n = height * width`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Largest value in the field.
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Apply `f` to every value, keeping the shape. The result is validated
    /// as a general (finite) field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridField> {
        GridField::new(
            self.height,
            self.width,
            self.values.iter().map(|v| f(*v)).collect(),
        )
    }
}

/// Check that two fields share a shape, for operations defined cell-by-cell.
pub fn check_same_shape(left: &GridField, right: &GridField) -> Result<()> {
    if left.same_shape(right) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            left_height: left.height(),
            left_width: left.width(),
            right_height: right.height(),
            right_width: right.width(),
        })
    }
}
