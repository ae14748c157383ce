//! Structured outcome of a numerical check.

use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub params: Map<String, Value>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub quad_error: f64,
    pub pass: bool,
    /// Report-only rows carry `false`; they never change an exit status.
    pub asserted: bool,
}

/// Builds the parameter map from `key => value` pairs.
#[macro_export]
macro_rules! params {
    ($($k:expr => $v:expr),* $(,)?) => {{
        #[allow(unused_mut)]
        let mut m = serde_json::Map::new();
        $( m.insert($k.to_string(), serde_json::json!($v)); )*
        m
    }};
}

impl LemmaReport {
    /// Inequality lhs <= rhs, passing when the violation is within the
    /// quadrature error.
    pub fn inequality(
        id: &str,
        params: Map<String, Value>,
        lhs: f64,
        rhs: f64,
        quad_error: f64,
    ) -> Self {
        Self {
            lemma_id: id.to_string(),
            params,
            lhs,
            rhs,
            margin: rhs - lhs,
            quad_error,
            pass: lhs <= rhs + quad_error,
            asserted: true,
        }
    }

    /// Identity lhs = rhs within `tol`.
    pub fn identity(
        id: &str,
        params: Map<String, Value>,
        lhs: f64,
        rhs: f64,
        quad_error: f64,
        tol: f64,
    ) -> Self {
        Self {
            lemma_id: id.to_string(),
            params,
            lhs,
            rhs,
            margin: rhs - lhs,
            quad_error,
            pass: (lhs - rhs).abs() <= tol,
            asserted: true,
        }
    }

    /// Marks the row as informational.
    pub fn report_only(mut self) -> Self {
        self.asserted = false;
        self
    }

    /// Whether this row counts as a failure for exit codes.
    pub fn failed(&self) -> bool {
        self.asserted && !self.pass
    }

    /// Parameter cell as compact JSON; report-only rows get `"asserted":false`.
    pub fn params_json(&self) -> String {
        let mut m = self.params.clone();
        if !self.asserted {
            m.insert("asserted".into(), Value::Bool(false));
        }
        Value::Object(m).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inequality_tolerates_quadrature_error() {
        let r = LemmaReport::inequality("x", params! {}, 1.0 + 1e-12, 1.0, 1e-11);
        assert!(r.pass);
        let r = LemmaReport::inequality("x", params! {}, 1.1, 1.0, 1e-11);
        assert!(!r.pass && r.failed());
        assert!(!r.clone().report_only().failed());
    }

    #[test]
    fn params_cell_is_json() {
        let r = LemmaReport::identity(
            "x",
            params! {"a" => 0.5, "w" => [1.0, 2.0]},
            1.0,
            1.0,
            0.0,
            1e-9,
        )
        .report_only();
        assert_eq!(
            r.params_json(),
            r#"{"a":0.5,"asserted":false,"w":[1.0,2.0]}"#
        );
    }
}
