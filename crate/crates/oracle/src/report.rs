//! Comparison rows and their CSV form.

use std::io::Write;

use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub quantity: String,
    pub reference: f64,
    pub implementation: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    /// Whether `tolerance` bounds the relative rather than the absolute error.
    pub relative: bool,
    pub pass: bool,
}

impl OracleReport {
    fn new(
        quantity: impl Into<String>,
        reference: f64,
        implementation: f64,
        tolerance: f64,
        relative: bool,
    ) -> Self {
        let (abs_error, rel_error) = if reference == implementation {
            // Covers matching infinities.
            (0.0, 0.0)
        } else {
            let abs = (reference - implementation).abs();
            (abs, abs / reference.abs().max(f64::MIN_POSITIVE))
        };
        let err = if relative { rel_error } else { abs_error };
        OracleReport {
            quantity: quantity.into(),
            reference,
            implementation,
            abs_error,
            rel_error,
            tolerance,
            relative,
            pass: err.is_finite() && err <= tolerance,
        }
    }

    pub fn absolute(
        quantity: impl Into<String>,
        reference: f64,
        implementation: f64,
        tolerance: f64,
    ) -> Self {
        Self::new(quantity, reference, implementation, tolerance, false)
    }

    pub fn relative(
        quantity: impl Into<String>,
        reference: f64,
        implementation: f64,
        tolerance: f64,
    ) -> Self {
        Self::new(quantity, reference, implementation, tolerance, true)
    }
}

pub fn write_csv<W: Write>(out: W, reports: &[OracleReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "quantity",
        "reference",
        "implementation",
        "abs_error",
        "rel_error",
        "tolerance",
        "relative",
        "pass",
    ])?;
    for r in reports {
        w.write_record([
            r.quantity.clone(),
            r.reference.to_string(),
            r.implementation.to_string(),
            r.abs_error.to_string(),
            r.rel_error.to_string(),
            r.tolerance.to_string(),
            r.relative.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_flag_and_csv() {
        let ok = OracleReport::relative("log, trees", 2.0, 2.0 + 1e-12, 1e-10);
        let bad = OracleReport::absolute("f", 1.0, 1.5, 0.1);
        assert!(ok.pass && !bad.pass);
        assert!(OracleReport::absolute("inf", f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0).pass);
        let mut buf = Vec::new();
        write_csv(&mut buf, &[ok, bad]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\"log, trees\""));
    }
}
