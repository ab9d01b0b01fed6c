//! Impulse-noise injection for the dirty training track: salt-and-pepper
//! (cells forced to the physical range endpoints) and random-valued impulse
//! (cells overwritten with uniform draws over the range). Exactly
//! `round(fraction * n)` distinct cells are corrupted per call.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::window::NormalizationSpec;
use crate::error::{Error, Result};
use crate::grid::GridField;

/// Corruption fractions outside this range are rejected unless a spec is
/// built with explicit bounds.
pub const DEFAULT_FRACTION_BOUNDS: (f64, f64) = (0.10, 0.30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Corrupted cells become `physical_min` or `physical_max`, equiprobably.
    SaltAndPepper,
    /// Corrupted cells become uniform draws over the physical range.
    RandomValuedImpulse,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::SaltAndPepper => "salt_and_pepper",
            NoiseKind::RandomValuedImpulse => "random_valued_impulse",
        }
    }
}

/// A validated corruption request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Fraction of grid cells to corrupt.
    pub fraction: f64,
    pub seed: u64,
    /// Accepted fraction range; [`DEFAULT_FRACTION_BOUNDS`] unless overridden.
    pub bounds: (f64, f64),
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, fraction: f64, seed: u64) -> Result<Self> {
        Self::with_bounds(kind, fraction, seed, DEFAULT_FRACTION_BOUNDS)
    }

    /// A spec with caller-chosen bounds, e.g. `(0.0, 1.0)` for degenerate
    /// fraction-zero experiments.
    pub fn with_bounds(
        kind: NoiseKind,
        fraction: f64,
        seed: u64,
        bounds: (f64, f64),
    ) -> Result<Self> {
        if !bounds.0.is_finite()
            || !bounds.1.is_finite()
            || bounds.0 < 0.0
            || bounds.1 > 1.0
            || bounds.1 < bounds.0
        {
            return Err(Error::invalid_param(
                "bounds",
                format!("must satisfy 0 <= lo <= hi <= 1, got {bounds:?}"),
            ));
        }
        let spec = NoiseSpec {
            kind,
            fraction,
            seed,
            bounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same corruption at a different seed (per-epoch re-sampling).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fraction.is_finite()
            || self.fraction < self.bounds.0
            || self.fraction > self.bounds.1
        {
            return Err(Error::FractionOutOfBounds {
                fraction: self.fraction,
                lo: self.bounds.0,
                hi: self.bounds.1,
            });
        }
        Ok(())
    }
}

/// Corrupt exactly `round(fraction * n)` distinct cells of `field`, choosing
/// cells and replacement values from a stream seeded by `spec.seed`. The
/// physical range of the replacement values comes from `range`.
pub fn inject_noise(
    field: &GridField,
    spec: &NoiseSpec,
    range: &NormalizationSpec,
) -> Result<GridField> {
    spec.validate()?;
    let n = field.len();
    let count = (spec.fraction * n as f64).round() as usize;
    if count == 0 {
        return Ok(field.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Partial Fisher-Yates: after k swaps the prefix holds a uniform k-subset.
    let mut indices: Vec<u32> = (0..n as u32).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }

    let mut values = field.values().to_vec();
    for &idx in &indices[..count] {
        values[idx as usize] = match spec.kind {
            NoiseKind::SaltAndPepper => {
                if rng.gen::<bool>() {
                    range.physical_max
                } else {
                    range.physical_min
                }
            }
            NoiseKind::RandomValuedImpulse => {
                range.physical_min + rng.gen::<f64>() * range.span()
            }
        };
    }
    GridField::new(field.height(), field.width(), values)
}
