//! Canonical comparison of tool-call argument values.
//!
//! One equality is used everywhere a predicted argument map is checked against the gold map
//! (stopping criterion, Toolargs validator, accuracy metric):
//!
//! * numbers compare numerically, and a string holding a number compares equal to that number
//!   (`"437292"` == `437292`, `1e3` == `1000`);
//! * strings compare after trimming surrounding whitespace;
//! * booleans and null compare strictly;
//! * arrays compare element-wise, objects key-wise, both recursively.

use serde_json::{Map, Value};

/// Argument map of a single tool call.
pub type ArgMap = Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Numeric {
    Int(i128),
    Float(f64),
}

impl Numeric {
    fn from_value(value: &Value) -> Option<Self> {
        match value {
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Some(Numeric::Int(i as i128))
                } else if let Some(u) = n.as_u64() {
                    Some(Numeric::Int(u as i128))
                } else {
                    n.as_f64().map(Numeric::Float)
                }
            }
            Value::String(s) => Self::parse(s.trim()),
            _ => None,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        if s.is_empty() {
            return None;
        }
        if let Ok(i) = s.parse::<i128>() {
            return Some(Numeric::Int(i));
        }
        match s.parse::<f64>() {
            Ok(f) if f.is_finite() => Some(Numeric::Float(f)),
            _ => None,
        }
    }

    fn eq(self, other: Self) -> bool {
        match (self, other) {
            (Numeric::Int(a), Numeric::Int(b)) => a == b,
            (Numeric::Int(a), Numeric::Float(b)) | (Numeric::Float(b), Numeric::Int(a)) => {
                b.fract() == 0.0 && (a as f64) == b
            }
            (Numeric::Float(a), Numeric::Float(b)) => a == b,
        }
    }
}

/// Canonical equality between two argument values.
pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::String(x), Value::String(y)) if x.trim() == y.trim() => true,
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| values_equal(p, q))
        }
        (Value::Object(x), Value::Object(y)) => args_equal(x, y),
        (Value::Number(_), _) | (_, Value::Number(_)) | (Value::String(_), Value::String(_)) => {
            match (Numeric::from_value(a), Numeric::from_value(b)) {
                (Some(p), Some(q)) => p.eq(q),
                _ => false,
            }
        }
        _ => false,
    }
}

/// Key-set equality plus canonical value equality; no missing or superfluous keys.
pub fn args_equal(a: &ArgMap, b: &ArgMap) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .all(|(k, v)| b.get(k).is_some_and(|w| values_equal(v, w)))
}
