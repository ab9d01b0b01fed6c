//! Sliding-window dataset assembly and the affine [-1, 1] normalization
//! shared by every training consumer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Every training window spans this many consecutive time steps.
pub const WINDOW_LEN: usize = 6;

/// Invertible affine map between physical intensities
/// `[physical_min, physical_max]` (mm/h) and the model range `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub physical_min: f64,
    pub physical_max: f64,
}

impl NormalizationSpec {
    pub fn new(physical_min: f64, physical_max: f64) -> Result<Self> {
        if !physical_min.is_finite() || !physical_max.is_finite() || physical_max <= physical_min
        {
            return Err(Error::DegenerateRange {
                min: physical_min,
                max: physical_max,
            });
        }
        Ok(NormalizationSpec {
            physical_min,
            physical_max,
        })
    }

    /// Zero-floored range up to `physical_max`.
    pub fn from_max(physical_max: f64) -> Result<Self> {
        Self::new(0.0, physical_max)
    }

    /// Zero-floored range up to the sequence's maximum value.
    pub fn from_sequence(frames: &[GridField]) -> Result<Self> {
        let max = frames
            .iter()
            .map(GridField::max_value)
            .fold(f64::NEG_INFINITY, f64::max);
        Self::from_max(max)
    }

    pub fn span(&self) -> f64 {
        self.physical_max - self.physical_min
    }

    /// `[physical_min, physical_max] -> [-1, 1]`.
    pub fn normalize_value(&self, v: f64) -> f64 {
        (v - self.physical_min) / self.span() * 2.0 - 1.0
    }

    /// `[-1, 1] -> [physical_min, physical_max]`.
    pub fn denormalize_value(&self, v: f64) -> f64 {
        (v + 1.0) * 0.5 * self.span() + self.physical_min
    }

    pub fn normalize_field(&self, field: &GridField) -> Result<GridField> {
        field.map(|v| self.normalize_value(v))
    }

    pub fn denormalize_field(&self, field: &GridField) -> Result<GridField> {
        field.map(|v| self.denormalize_value(v))
    }
}

/// A time-ordered frame sequence exposed as overlapping windows of
/// [`WINDOW_LEN`] consecutive frames (stride 1), with the normalization used
/// to feed them to a model. Frames stay in physical units; windows are views.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    frames: Vec<GridField>,
    norm: NormalizationSpec,
    dt_minutes: f64,
}

impl WindowedDataset {
    /// Assemble windows over `frames`, normalizing by the sequence maximum.
    pub fn build_windows(frames: Vec<GridField>, dt_minutes: f64) -> Result<Self> {
        let norm = NormalizationSpec::from_sequence(&frames)?;
        Self::with_norm(frames, norm, dt_minutes)
    }

    /// Assemble windows with an externally fixed normalization (used to apply
    /// the training set's range to an evaluation sequence).
    pub fn with_norm(
        frames: Vec<GridField>,
        norm: NormalizationSpec,
        dt_minutes: f64,
    ) -> Result<Self> {
        if frames.len() < WINDOW_LEN {
            return Err(Error::SequenceTooShort {
                len: frames.len(),
                window: WINDOW_LEN,
            });
        }
        if !dt_minutes.is_finite() || dt_minutes <= 0.0 {
            return Err(Error::invalid_param(
                "dt_minutes",
                format!("must be finite and > 0, got {dt_minutes}"),
            ));
        }
        for pair in frames.windows(2) {
            crate::grid::check_same_shape(&pair[0], &pair[1])?;
        }
        Ok(WindowedDataset {
            frames,
            norm,
            dt_minutes,
        })
    }

    pub fn frames(&self) -> &[GridField] {
        &self.frames
    }

    pub fn norm(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn dt_minutes(&self) -> f64 {
        self.dt_minutes
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn window_count(&self) -> usize {
        self.frames.len() - WINDOW_LEN + 1
    }

    /// The `i`-th window: frames `i .. i + WINDOW_LEN` in temporal order.
    pub fn window(&self, i: usize) -> &[GridField] {
        &self.frames[i..i + WINDOW_LEN]
    }

    /// Latest frame available to a 1-step forecaster in window `i` (step 5
    /// of 6), in physical units.
    pub fn input_frame(&self, i: usize) -> &GridField {
        &self.frames[i + WINDOW_LEN - 2]
    }

    /// Forecast target of window `i` (step 6 of 6), in physical units.
    pub fn target_frame(&self, i: usize) -> &GridField {
        &self.frames[i + WINDOW_LEN - 1]
    }

    /// The frames a forecaster may condition on in window `i` (steps 1-5).
    pub fn history_frames(&self, i: usize) -> &[GridField] {
        &self.frames[i..i + WINDOW_LEN - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_frames(count: usize) -> Vec<GridField> {
        (0..count)
            .map(|i| GridField::constant(3, 4, i as f64).unwrap())
            .collect()
    }

    #[test]
    fn normalization_maps_endpoints_and_midpoint() {
        let norm = NormalizationSpec::from_max(10.0).unwrap();
        assert_eq!(norm.normalize_value(0.0), -1.0);
        assert_eq!(norm.normalize_value(10.0), 1.0);
        assert_eq!(norm.normalize_value(5.0), 0.0);
        assert_eq!(norm.denormalize_value(-1.0), 0.0);
        assert_eq!(norm.denormalize_value(1.0), 10.0);
    }

    #[test]
    fn degenerate_ranges_are_rejected() {
        assert!(NormalizationSpec::new(0.0, 0.0).is_err());
        assert!(NormalizationSpec::new(5.0, 1.0).is_err());
        assert!(NormalizationSpec::from_max(f64::NAN).is_err());
        // all-zero sequence has no usable range
        let frames = vec![GridField::zeros(2, 2).unwrap(); 6];
        assert!(NormalizationSpec::from_sequence(&frames).is_err());
    }

    #[test]
    fn window_counts_match_length() {
        let ds = WindowedDataset::build_windows(ramp_frames(6), 10.0).unwrap();
        assert_eq!(ds.window_count(), 1);
        let ds = WindowedDataset::build_windows(ramp_frames(10), 10.0).unwrap();
        assert_eq!(ds.window_count(), 5);
        assert!(WindowedDataset::build_windows(ramp_frames(5), 10.0).is_err());
    }

    #[test]
    fn windows_are_source_slices() {
        let frames = ramp_frames(9);
        let ds = WindowedDataset::build_windows(frames.clone(), 10.0).unwrap();
        for i in 0..ds.window_count() {
            let w = ds.window(i);
            assert_eq!(w.len(), WINDOW_LEN);
            for (offset, field) in w.iter().enumerate() {
                assert_eq!(field.values(), frames[i + offset].values());
            }
            assert_eq!(ds.input_frame(i).values(), frames[i + 4].values());
            assert_eq!(ds.target_frame(i).values(), frames[i + 5].values());
            assert_eq!(ds.history_frames(i).len(), 5);
        }
    }

    #[test]
    fn mismatched_frame_shapes_are_rejected() {
        let mut frames = ramp_frames(6);
        frames[3] = GridField::constant(4, 3, 1.0).unwrap();
        assert!(WindowedDataset::build_windows(frames, 10.0).is_err());
    }

    #[test]
    fn sequence_norm_uses_global_maximum() {
        let mut frames = ramp_frames(7);
        frames[2] = GridField::constant(3, 4, 25.0).unwrap();
        let ds = WindowedDataset::build_windows(frames, 10.0).unwrap();
        assert_eq!(ds.norm().physical_max, 25.0);
        assert_eq!(ds.norm().physical_min, 0.0);
    }

    proptest! {
        #[test]
        fn normalize_round_trips(
            max in 0.5f64..200.0,
            frac in 0.0f64..=1.0,
        ) {
            let norm = NormalizationSpec::from_max(max).unwrap();
            let v = frac * max;
            let rt = norm.denormalize_value(norm.normalize_value(v));
            let tol = 1e-12 * v.abs().max(1.0);
            prop_assert!((rt - v).abs() <= tol, "{v} -> {rt}");
            let n = norm.normalize_value(v);
            prop_assert!((-1.0..=1.0).contains(&n));
        }
    }
}
