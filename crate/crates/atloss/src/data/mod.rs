//! Synthetic precipitation data pipeline: field generation, Tukey outlier
//! refinement, impulse-noise injection, sliding-window dataset assembly with
//! normalization, and a binary grid-sequence file format.

pub mod gridfile;
pub mod noise;
pub mod refine;
pub mod synthetic;
pub mod window;

pub use gridfile::{export_csv, read_grid_sequence, write_grid_sequence};
pub use noise::{inject_noise, NoiseKind, NoiseSpec, DEFAULT_FRACTION_BOUNDS};
pub use refine::{tukey_fences, tukey_refine, DEFAULT_FENCE_MULTIPLIER};
pub use synthetic::{generate_synthetic_sequence, StormParams};
pub use window::{NormalizationSpec, WindowedDataset, WINDOW_LEN};
