//! Fixed-precision text helpers shared by every persisted format.

use serde::Serializer;

use crate::geometry::q2;

/// Two-decimal rendering of a quantized value (never prints `-0.00`).
pub fn fmt2(v: f64) -> String {
    format!("{:.2}", q2(v))
}

/// JSON string literal with escaping.
pub fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// `serialize_with` adapter that quantizes to two decimals.
pub fn ser_q2<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(q2(*v))
}

pub fn ser_q2_pair<S: Serializer>(v: &crate::geometry::Vec2, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&q2(v.x))?;
    t.serialize_element(&q2(v.y))?;
    t.end()
}
