//! Pass/fail records shared by experiments, `verify` and the tests.

use std::fmt;

/// How a measured value is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    /// `measured < tolerance`
    Below,
    /// `measured <= tolerance`
    AtMost,
    /// `measured >= tolerance`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
}

impl Check {
    fn new(id: impl Into<String>, measured: f64, tolerance: f64, comparison: Comparison) -> Self {
        let passed = !measured.is_nan()
            && match comparison {
                Comparison::Below => measured < tolerance,
                Comparison::AtMost => measured <= tolerance,
                Comparison::AtLeast => measured >= tolerance,
            };
        Self {
            id: id.into(),
            passed,
            measured,
            tolerance,
            comparison,
        }
    }

    pub fn below(id: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self::new(id, measured, tolerance, Comparison::Below)
    }

    pub fn at_most(id: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self::new(id, measured, tolerance, Comparison::AtMost)
    }

    pub fn at_least(id: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self::new(id, measured, threshold, Comparison::AtLeast)
    }

    /// Exact check: passes iff `mismatches == 0`.
    pub fn exact(id: impl Into<String>, mismatches: usize) -> Self {
        Self::at_most(id, mismatches as f64, 0.0)
    }

    /// A check whose body failed to run; reported as a failure.
    pub fn errored(id: impl Into<String>, err: &dyn fmt::Display) -> Self {
        log::error!("check errored: {err}");
        Self::new(id, f64::NAN, 0.0, Comparison::AtMost)
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

/// `id,status,measured,tolerance` with fixed-precision numbers.
impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{:.6e},{:.6e}", self.id, self.status(), self.measured, self.tolerance)
    }
}

pub const REPORT_HEADER: &str = "id,status,measured,tolerance";

pub fn format_report(checks: &[Check]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for c in checks {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}
