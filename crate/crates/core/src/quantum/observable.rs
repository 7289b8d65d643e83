//! Named single-qubit primitives and `⊗`-products of them.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::QuantumError;

pub type Matrix = DMatrix<Complex64>;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);
const I1: Complex64 = Complex64::new(0.0, 1.0);

pub fn identity(dim: usize) -> Matrix {
    Matrix::identity(dim, dim)
}

/// `|1><0| + |0><1|`.
pub fn sigma_x() -> Matrix {
    Matrix::from_row_slice(2, 2, &[C0, C1, C1, C0])
}

/// `i|1><0| - i|0><1|`.
pub fn sigma_y() -> Matrix {
    Matrix::from_row_slice(2, 2, &[C0, -I1, I1, C0])
}

pub fn sigma_z() -> Matrix {
    Matrix::from_row_slice(2, 2, &[C1, C0, C0, -C1])
}

/// `(σ_x + σ_y)/√2`.
pub fn m_plus() -> Matrix {
    (sigma_x() + sigma_y()).scale(std::f64::consts::FRAC_1_SQRT_2)
}

/// `(σ_x - σ_y)/√2`.
pub fn m_minus() -> Matrix {
    (sigma_x() - sigma_y()).scale(std::f64::consts::FRAC_1_SQRT_2)
}

pub fn primitive(name: &str) -> Option<Matrix> {
    match name {
        "I" => Some(identity(2)),
        "X" => Some(sigma_x()),
        "Y" => Some(sigma_y()),
        "Z" => Some(sigma_z()),
        "M+" => Some(m_plus()),
        "M-" | "M−" => Some(m_minus()),
        _ => None,
    }
}

pub fn kron_all(factors: &[Matrix]) -> Matrix {
    factors.iter().skip(1).fold(factors[0].clone(), |acc, f| acc.kronecker(f))
}

/// Parses an optionally signed `⊗`-product such as `-M+⊗M+` or `X⊗X`
/// (`*` is accepted as a separator). Factor `k` acts on the observer's
/// `k`-th port.
pub fn build_named_observable(expr: &str, ports: usize) -> Result<Matrix, QuantumError> {
    let trimmed = expr.trim();
    let (negate, body) = if let Some(rest) = trimmed.strip_prefix('-').or_else(|| trimmed.strip_prefix('−')) {
        (true, rest)
    } else {
        (false, trimmed.strip_prefix('+').unwrap_or(trimmed))
    };
    let factors = body
        .split(['⊗', '*'])
        .map(|f| {
            let f = f.trim();
            primitive(f).ok_or_else(|| QuantumError::UnknownPrimitive(f.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if factors.len() != ports {
        return Err(QuantumError::ArityMismatch { expr: expr.into(), factors: factors.len(), ports });
    }
    let m = kron_all(&factors);
    Ok(if negate { -m } else { m })
}

pub fn is_hermitian(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (m - m.adjoint()).iter().all(|z| z.norm() <= tol)
}

/// Hermitian with `O² = I`, i.e. eigenvalues in `{-1, +1}`.
pub fn check_dichotomic(m: &Matrix) -> Result<(), String> {
    if !is_hermitian(m, 1e-9) {
        return Err("observable is not Hermitian".into());
    }
    let sq = m * m - identity(m.nrows());
    if sq.iter().any(|z| z.norm() > 1e-9) {
        return Err("observable does not square to the identity".into());
    }
    Ok(())
}
