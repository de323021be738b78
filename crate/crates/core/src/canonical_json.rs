//! Canonical JSON output: lexicographic keys, reals with 17 significant digits.
//!
//! Every document the crate writes goes through [`to_canonical_string`], so two
//! equal values always serialize to identical bytes.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        // `{:.16e}` is one leading digit plus 16 fractional digits.
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` with sorted object keys and fixed-precision reals.
///
/// Callers must ensure reals are finite; `serde_json` maps NaN and infinities to `null`.
pub fn to_canonical_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // Round-tripping through `serde_json::Value` sorts every object's keys.
    let tree = serde_json::to_value(value)?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    tree.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_and_reals_fixed_precision() {
        let doc = json!({"b": 1, "a": 0.1, "c": [1.0, -2.5]});
        let s = to_canonical_string(&doc).unwrap();
        assert_eq!(
            s,
            "{\"a\":1.0000000000000001e-1,\"b\":1,\"c\":[1.0000000000000000e0,-2.5000000000000000e0]}\n"
        );
    }

    #[test]
    fn reals_round_trip_exactly() {
        let xs = [0.1, 1.0 / 3.0, -1e-300, 6.02e23, f64::MIN_POSITIVE, 3.14];
        let s = to_canonical_string(&xs.to_vec()).unwrap();
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
