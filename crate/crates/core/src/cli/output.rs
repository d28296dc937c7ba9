//! Report formatting. Every number is written with 17 significant digits so
//! outputs round-trip and reruns compare byte for byte.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// `x` in scientific notation with 17 significant digits.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Serializes through [`num`]; non-finite values become `null`.
pub fn sci<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        RawValue::from_string(num(*x)).map_err(serde::ser::Error::custom)?.serialize(s)
    } else {
        s.serialize_none()
    }
}

pub fn sci_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => sci(v, s),
        None => s.serialize_none(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("report types serialize");
    out.push('\n');
    out
}

/// CSV text with a header row. Cells are written as given.
pub fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}
