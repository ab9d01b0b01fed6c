//! Minimal dense 4-D tensor in NCHW layout, the common currency of the
//! training stack. Values are f64 so gradient checks can use tight
//! finite-difference tolerances.

use crate::error::{Error, Result};

/// Batch x channels x height x width, row-major within each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::TensorShape {
                expected: "all dimensions positive".into(),
                got: format!("{n}x{c}x{h}x{w}"),
            });
        }
        Ok(Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        })
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        let mut t = Self::zeros(n, c, h, w)?;
        if data.len() != t.data.len() {
            return Err(Error::TensorShape {
                expected: format!("{} values for {n}x{c}x{h}x{w}", t.data.len()),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "tensor value",
                value: *v,
            });
        }
        t.data = data;
        Ok(t)
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    fn plane_range(&self, b: usize, c: usize) -> std::ops::Range<usize> {
        debug_assert!(b < self.n && c < self.c);
        let start = (b * self.c + c) * self.h * self.w;
        start..start + self.h * self.w
    }

    /// One spatial plane (sample `b`, channel `c`) as a row-major slice.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        &self.data[self.plane_range(b, c)]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let r = self.plane_range(b, c);
        &mut self.data[r]
    }

    /// One row of one plane.
    pub fn row(&self, b: usize, c: usize, y: usize) -> &[f64] {
        debug_assert!(y < self.h);
        let start = (b * self.c + c) * self.h * self.w + y * self.w;
        &self.data[start..start + self.w]
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_layout_is_nchw() {
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| i as f64).collect();
        let t = Tensor4::from_vec(2, 3, 2, 2, data).unwrap();
        assert_eq!(t.plane(0, 0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.plane(0, 2), &[8.0, 9.0, 10.0, 11.0]);
        assert_eq!(t.plane(1, 0), &[12.0, 13.0, 14.0, 15.0]);
        assert_eq!(t.row(1, 1, 1), &[18.0, 19.0]);
    }

    #[test]
    fn shape_and_value_validation() {
        assert!(Tensor4::zeros(0, 1, 2, 2).is_err());
        assert!(Tensor4::from_vec(1, 1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor4::from_vec(1, 1, 1, 2, vec![0.0, f64::NAN]).is_err());
        let t = Tensor4::zeros(2, 1, 3, 4).unwrap();
        assert_eq!(t.shape(), (2, 1, 3, 4));
        assert_eq!(t.len(), 24);
        assert!(t.is_all_finite());
    }
}
