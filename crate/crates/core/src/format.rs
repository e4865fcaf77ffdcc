//! Number formatting shared by CSV and JSON output: every value is rounded
//! to 12 significant digits and then printed in shortest round-trip form.

use serde_json::Value;

pub const SIG_DIGITS: usize = 12;

/// Round to 12 significant digits. Non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Text form of [`round_sig`], e.g. `1.0`, `0.398942280401`, `1e-5`.
pub fn fmt_num(x: f64) -> String {
    format!("{:?}", round_sig(x))
}

/// Round every floating-point number inside a JSON tree in place.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .map(round_sig)
                .and_then(serde_json::Number::from_f64)
            {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}
