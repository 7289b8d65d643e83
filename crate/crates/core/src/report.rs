//! Machine-readable results.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::expression::WeightAssignment;

/// Violation ratios above `1 + VIOLATION_TOL` count as violations.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub inequality: String,
    /// `null` in JSON when a negative block makes the infimum `-∞`.
    pub lhs_min: f64,
    pub bound: f64,
    pub ratio: f64,
    pub violated: bool,
    pub not_violable: bool,
    pub weights: Option<WeightAssignment>,
    #[serde(rename = "V")]
    pub visibility: f64,
    #[serde(rename = "V_c", serialize_with = "number_or_none")]
    pub critical_visibility: Option<f64>,
}

impl ViolationReport {
    pub fn new(
        inequality: impl Into<String>,
        lhs_min: f64,
        bound: f64,
        weights: Option<WeightAssignment>,
        visibility: f64,
        critical_visibility: Option<f64>,
    ) -> Self {
        let ratio = lhs_min / bound;
        ViolationReport {
            inequality: inequality.into(),
            lhs_min,
            bound,
            ratio,
            violated: is_violation(ratio),
            not_violable: lhs_min == f64::NEG_INFINITY,
            weights,
            visibility,
            critical_visibility,
        }
    }
}

pub fn is_violation(ratio: f64) -> bool {
    ratio > 1.0 + VIOLATION_TOL
}

fn number_or_none<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("none"),
    }
}

/// Decimal rendering with 12 significant digits, switching to exponent form
/// for very large or small magnitudes.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..12).contains(&exp) {
        return format!("{x:.11e}");
    }
    let decimals = (11 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// CSV text with a header row and every number at 12 significant digits.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let parts: Vec<String> = cells.iter().map(Cell::render).collect();
        let _ = writeln!(self.text, "{}", parts.join(","));
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub enum Cell {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => fmt_sig(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(t) => t.clone(),
        }
    }
}

/// Least-squares line `y = a + b x`, with the largest absolute residual.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residual = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    (intercept, slope, residual)
}
