//! Static raster plots of precipitation fields. Cells at or above the
//! exceedance threshold render on a warm ramp, everything below on a dark
//! cool ramp, so the exceedance region reads at a glance.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use atloss::GridField;

use crate::CliError;

/// Pixel edge length per grid cell.
const CELL_PIXELS: u32 = 4;

fn ramp(t: f64, lo: (f64, f64, f64), hi: (f64, f64, f64)) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round().clamp(0.0, 255.0) as u8;
    Rgb([mix(lo.0, hi.0), mix(lo.1, hi.1), mix(lo.2, hi.2)])
}

/// Render one field; `peak` fixes the intensity scale so frames of a
/// sequence share a palette.
pub fn render_field(field: &GridField, theta: f64, peak: f64) -> RgbImage {
    let (h, w) = (field.height() as u32, field.width() as u32);
    let peak = if peak > 0.0 { peak } else { 1.0 };
    let mut img = RgbImage::new(w * CELL_PIXELS, h * CELL_PIXELS);
    for (x, y, pixel) in img.enumerate_pixels_mut() {
        let row = (y / CELL_PIXELS) as usize;
        let col = (x / CELL_PIXELS) as usize;
        let v = field.values()[row * w as usize + col];
        let t = (v / peak).clamp(0.0, 1.0);
        *pixel = if v >= theta {
            ramp(t, (120.0, 40.0, 20.0), (255.0, 220.0, 60.0))
        } else {
            ramp(t, (12.0, 16.0, 28.0), (70.0, 90.0, 130.0))
        };
    }
    img
}

/// Render and write `<path>` atomically.
pub fn save_field_png(
    field: &GridField,
    theta: f64,
    peak: f64,
    path: &Path,
) -> Result<(), CliError> {
    let img = render_field(field, theta, peak);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut out = BufWriter::new(
        File::create(&tmp)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", tmp.display())))?,
    );
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| CliError::Runtime(format!("cannot encode {}: {e}", path.display())))?;
    drop(out);
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("cannot rename to {}: {e}", path.display())))
}
