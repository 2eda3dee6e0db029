//! Fixed, locale-independent number formatting for CSV artifacts.

use std::fmt::Write;

/// Seventeen significant digits in scientific notation, enough to round-trip
/// any `f64`.
pub fn float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Comma-joined row terminated by `\n`.
pub fn row<I, S>(cells: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (i, c) in cells.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(c.as_ref());
    }
    out.push('\n');
    out
}

pub(crate) fn push_floats(out: &mut Vec<String>, values: impl IntoIterator<Item = f64>) {
    out.extend(values.into_iter().map(float));
}

pub(crate) fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (0..count)
        .map(|i| {
            let mut s = String::with_capacity(prefix.len() + 3);
            let _ = write!(s, "{prefix}{i}");
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(float(1.0), "1.0000000000000000e0");
        assert_eq!(row(["a", "b"]), "a,b\n");
    }
}
