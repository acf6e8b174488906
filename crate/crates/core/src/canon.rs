//! JSON writer with a fixed float format (17 significant digits) and
//! field order taken from the struct declaration.

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        // JSON has no representation for these.
        "null".to_string()
    }
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(v: &Value, level: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&fmt_f64(n.as_f64().unwrap_or(f64::NAN)));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.iter().all(|x| !x.is_array() && !x.is_object()) {
                out.push('[');
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(x, level, out);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (i, x) in items.iter().enumerate() {
                    indent(level + 1, out);
                    write_value(x, level + 1, out);
                    if i + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                indent(level, out);
                out.push(']');
            }
        }
        Value::Object(map) => {
            out.push_str("{\n");
            let n = map.len();
            for (i, (k, x)) in map.iter().enumerate() {
                indent(level + 1, out);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(x, level + 1, out);
                if i + 1 < n {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(level, out);
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Probe {
        zeta: f64,
        alpha: Vec<f64>,
        n: usize,
    }

    #[test]
    fn floats_round_trip_and_order_is_kept() {
        let p = Probe { zeta: 0.1, alpha: vec![1.0 / 3.0, -2.5e-300], n: 7 };
        let s = to_canonical_json(&p).unwrap();
        assert!(s.find("zeta").unwrap() < s.find("alpha").unwrap());
        assert!(s.contains("1.0000000000000001e-1"));
        let back: Probe = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
