//! Categorical verification metrics over thresholded precipitation fields.
//!
//! Cells are classified by the pair of hard indicators `(f(x), f(y))` into a
//! 2x2 contingency table, from which CSI, POD, FAR, and HSS are computed.
//! Any metric whose denominator is zero is an explicit [`MetricValue::Undefined`],
//! never 0 or NaN: an all-dry window has no skill to measure, and hiding that
//! as a numeric value would poison aggregates.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{check_same_shape, GridField};
use crate::loss::at::indicator;

/// PSNR reported for identical fields (MSE = 0), in dB.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Per-cell classification counts for one (truth, forecast) pair at one
/// threshold. Counts always sum to the cell count of the classified fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// f(x) = 1 and f(y) = 1.
    pub hits: u64,
    /// f(x) = 1 and f(y) = 0.
    pub misses: u64,
    /// f(x) = 0 and f(y) = 1.
    pub false_alarms: u64,
    /// f(x) = 0 and f(y) = 0.
    pub correct_negatives: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.hits + self.misses + self.false_alarms + self.correct_negatives
    }

    /// Merge counts from another table (cell classification is associative).
    pub fn merge(&mut self, other: &ContingencyTable) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.false_alarms += other.false_alarms;
        self.correct_negatives += other.correct_negatives;
    }
}

/// A verification metric that may be undefined when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

impl MetricValue {
    pub fn is_defined(&self) -> bool {
        matches!(self, MetricValue::Defined(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(*v),
            MetricValue::Undefined => None,
        }
    }

    fn ratio(num: f64, denom: f64) -> MetricValue {
        if denom == 0.0 {
            MetricValue::Undefined
        } else {
            MetricValue::Defined(num / denom)
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Defined(v) => write!(f, "{v}"),
            MetricValue::Undefined => write!(f, "undefined"),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Defined(v) => serializer.serialize_f64(*v),
            MetricValue::Undefined => serializer.serialize_str("undefined"),
        }
    }
}

/// Classify every cell of (truth `x_field`, forecast `y_field`) at `theta`.
pub fn contingency(
    x_field: &GridField,
    y_field: &GridField,
    theta: f64,
) -> Result<ContingencyTable> {
    check_same_shape(x_field, y_field)?;
    if !theta.is_finite() {
        return Err(Error::NonFinite {
            what: "threshold",
            value: theta,
        });
    }
    let mut table = ContingencyTable::default();
    for (x, y) in x_field.values().iter().zip(y_field.values()) {
        match (indicator(*x, theta), indicator(*y, theta)) {
            (true, true) => table.hits += 1,
            (true, false) => table.misses += 1,
            (false, true) => table.false_alarms += 1,
            (false, false) => table.correct_negatives += 1,
        }
    }
    Ok(table)
}

/// Critical success index `h / (h + m + fa)`; undefined on an all-negative
/// table (the dry-period pathology).
pub fn csi(t: &ContingencyTable) -> MetricValue {
    MetricValue::ratio(t.hits as f64, (t.hits + t.misses + t.false_alarms) as f64)
}

/// Probability of detection `h / (h + m)`.
pub fn pod(t: &ContingencyTable) -> MetricValue {
    MetricValue::ratio(t.hits as f64, (t.hits + t.misses) as f64)
}

/// False alarm ratio `fa / (h + fa)`.
pub fn far(t: &ContingencyTable) -> MetricValue {
    MetricValue::ratio(t.false_alarms as f64, (t.hits + t.false_alarms) as f64)
}

/// Heidke skill score `2(h·cn - m·fa) / ((h+m)(m+cn) + (h+fa)(fa+cn))`.
pub fn hss(t: &ContingencyTable) -> MetricValue {
    let h = t.hits as f64;
    let m = t.misses as f64;
    let fa = t.false_alarms as f64;
    let cn = t.correct_negatives as f64;
    let denom = (h + m) * (m + cn) + (h + fa) * (fa + cn);
    MetricValue::ratio(2.0 * (h * cn - m * fa), denom)
}

/// POD, FAR, and HSS of one table, in that order.
pub fn pod_far_hss(t: &ContingencyTable) -> (MetricValue, MetricValue, MetricValue) {
    (pod(t), far(t), hss(t))
}

/// Mean absolute error and peak signal-to-noise ratio between two fields.
///
/// `peak` is the reference dynamic range in physical units (conventionally
/// the truth data's maximum). PSNR is `10 log10(peak^2 / MSE)` in dB, capped
/// at [`PSNR_CAP_DB`]; identical fields report the cap.
pub fn mae_psnr(a: &GridField, b: &GridField, peak: f64) -> Result<(f64, f64)> {
    mae_psnr_with_cap(a, b, peak, PSNR_CAP_DB)
}

/// [`mae_psnr`] with an explicit PSNR cap in dB.
pub fn mae_psnr_with_cap(
    a: &GridField,
    b: &GridField,
    peak: f64,
    cap_db: f64,
) -> Result<(f64, f64)> {
    check_same_shape(a, b)?;
    if !peak.is_finite() || peak <= 0.0 {
        return Err(Error::invalid_param(
            "peak",
            format!("must be finite and > 0, got {peak}"),
        ));
    }
    let n = a.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (av, bv) in a.values().iter().zip(b.values()) {
        let d = av - bv;
        abs_sum += d.abs();
        sq_sum += d * d;
    }
    let mae = abs_sum / n;
    let mse = sq_sum / n;
    let psnr = if mse == 0.0 {
        cap_db
    } else {
        (10.0 * (peak * peak / mse).log10()).min(cap_db)
    };
    Ok((mae, psnr))
}

/// One verification row: all categorical and continuous metrics for a single
/// (threshold, lead time) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub threshold: f64,
    /// Forecast lead time in minutes.
    pub lead_time: f64,
    pub csi: MetricValue,
    pub hss: MetricValue,
    pub pod: MetricValue,
    pub far: MetricValue,
    pub mae: f64,
    pub psnr: f64,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "threshold,lead_time,csi,hss,pod,far,mae,psnr";

    /// One table plus continuous errors, assembled into a row.
    pub fn from_parts(
        threshold: f64,
        lead_time: f64,
        table: &ContingencyTable,
        mae: f64,
        psnr: f64,
    ) -> Self {
        let (pod, far, hss) = pod_far_hss(table);
        MetricRow {
            threshold,
            lead_time,
            csi: csi(table),
            hss,
            pod,
            far,
            mae,
            psnr,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.threshold,
            self.lead_time,
            self.csi,
            self.hss,
            self.pod,
            self.far,
            self.mae,
            self.psnr
        )
    }
}

/// Serialize rows to a CSV document with the standard header.
pub fn metric_rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(MetricRow::CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Mean of the defined entries, with the number excluded as undefined.
/// Returns `(Undefined, count)` when every entry is undefined.
pub fn mean_defined(values: &[MetricValue]) -> (MetricValue, usize) {
    let defined: Vec<f64> = values.iter().filter_map(|v| v.value()).collect();
    let excluded = values.len() - defined.len();
    if defined.is_empty() {
        (MetricValue::Undefined, excluded)
    } else {
        (
            MetricValue::Defined(defined.iter().sum::<f64>() / defined.len() as f64),
            excluded,
        )
    }
}
