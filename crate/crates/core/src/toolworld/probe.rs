//! Bounded probe pools shared by the world generator, the explorer and the
//! schema-only argument guesser.

use super::{ArgValue, DeclaredType};

pub const INT_PROBES: [i64; 7] = [0, 1, -1, 7, 42, 100, 1000];
pub const REAL_PROBES: [f64; 5] = [0.0, 1.0, -1.0, 0.5, 3.14];
pub const TOKEN_POOL: [&str; 16] = [
    "m", "km", "kg", "lb", "usd", "eur", "jpy", "utc", "gmt", "en", "fr", "de", "json", "xml",
    "csv", "yaml",
];

/// Bound to dependency params while exploring a tool in isolation.
pub const DEPENDENCY_SENTINEL: i64 = 0;

/// Every candidate value of the given declared type, in pool order.
pub fn pool_for(declared: DeclaredType) -> Vec<ArgValue> {
    match declared {
        DeclaredType::Integer => INT_PROBES.iter().map(|&v| ArgValue::Int(v)).collect(),
        DeclaredType::Real => REAL_PROBES.iter().map(|&v| ArgValue::Real(v)).collect(),
        DeclaredType::String | DeclaredType::EnumHintAbsent => TOKEN_POOL
            .iter()
            .map(|t| ArgValue::Str((*t).to_string()))
            .collect(),
    }
}

/// Glob match where `?` is any single char and `*` any (possibly empty) run.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}
