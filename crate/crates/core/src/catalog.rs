//! Reference scenarios: inequality, network and quantum strategy.

use serde::Serialize;

use crate::expression::Inequality;
use crate::extension::{chsh_on, extend_inequality, mermin3_on, star_base, Extension, ExtensionError};
use crate::quantum::{star_hub_strategy, QuantumError, QuantumStrategy, StateSpec};

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error(transparent)]
    Extension(#[from] ExtensionError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("unknown scenario '{0}'")]
    Unknown(String),
    #[error("example2 needs N >= 1 and L >= 1")]
    BadStarSize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    /// Inequality in the reported normalization.
    pub inequality: Inequality,
    /// Output of the recursive construction before rescaling.
    pub canonical: Inequality,
    pub strategy: QuantumStrategy,
    /// `inequality = canonical.scale(scale)`.
    pub scale: f64,
}

pub const NAMES: [&str; 6] = ["chsh", "mermin3", "example1", "example2", "example3", "example4"];

fn strings(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn m_pm() -> Vec<String> {
    strings(&["M+", "M-"])
}

/// `[X⊗X, Y⊗Y, Y⊗Y, -X⊗X]`, indexed by the subset label.
fn xx_yy() -> Vec<String> {
    strings(&["X⊗X", "Y⊗Y", "Y⊗Y", "-X⊗X"])
}

fn mm_pattern() -> Vec<String> {
    strings(&["M+⊗M+", "M-⊗M-", "M-⊗M-", "-M+⊗M+"])
}

fn ghz_states(ineq: &Inequality) -> Vec<(String, StateSpec)> {
    ineq.network.sources.iter().map(|s| (s.id.clone(), StateSpec::ghz(s.arity, 1.0))).collect()
}

fn finish(
    name: &str,
    canonical: Inequality,
    exprs: &[(&str, Vec<String>)],
    scale: f64,
) -> Result<Scenario, CatalogError> {
    let strategy = QuantumStrategy::from_exprs(&canonical.network, ghz_states(&canonical), exprs)?;
    strategy.check(&canonical.network)?;
    let inequality = canonical.scale(scale).map_err(ExtensionError::from)?;
    Ok(Scenario { name: name.into(), inequality, canonical, strategy, scale })
}

pub fn chsh() -> Result<Scenario, CatalogError> {
    let ineq = chsh_on("A1", "A2");
    finish("chsh", ineq, &[("A1", m_pm()), ("A2", strings(&["X", "-Y"]))], 1.0)
}

pub fn mermin3() -> Result<Scenario, CatalogError> {
    let ineq = mermin3_on(["A1", "A2", "A3"]);
    let xy = strings(&["X", "Y"]);
    finish("mermin3", ineq, &[("A1", xy.clone()), ("A2", xy), ("A3", strings(&["-Y", "X"]))], 1.0)
}

/// CHSH on `A1, A2`, then a three-party source from `A2` to `B1, B2`.
pub fn example1() -> Result<Scenario, CatalogError> {
    let ineq = extend_inequality(&chsh_on("A1", "A2"), &Extension::new("A2", 2).group("q").named("S2", &["B1", "B2"]))?;
    finish("example1", ineq, &[("A1", m_pm()), ("A2", xx_yy()), ("B1", m_pm()), ("B2", m_pm())], 1.0)
}

/// Star network with `n` sources of `l + 1` parties around hub `A1_{l+1}`.
pub fn example2(n: usize, l: usize) -> Result<Scenario, CatalogError> {
    if n == 0 || l == 0 {
        return Err(CatalogError::BadStarSize);
    }
    let mut ineq = star_base(l)?;
    let hub = format!("A1_{}", l + 1);
    for j in 2..=n {
        let ids: Vec<String> = (1..=l).map(|k| format!("A{j}_{k}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let step = Extension::new(hub.clone(), l).group(format!("q{}", j - 1)).named(format!("S{j}"), &refs);
        ineq = extend_inequality(&ineq, &step)?;
    }
    let strategy = star_hub_strategy(n, l, 1.0);
    strategy.check(&ineq.network)?;
    Ok(Scenario {
        name: format!("example2_N{n}_L{l}"),
        inequality: ineq.clone(),
        canonical: ineq,
        strategy,
        scale: 1.0,
    })
}

/// CHSH on `B1, A3`; `A3` gains a source to `A1, A2` (weights `q`), then
/// `B1` gains a source to `C1, C2` (weights `p`).
pub fn example3() -> Result<Scenario, CatalogError> {
    let base = chsh_on("B1", "A3");
    let mid = extend_inequality(&base, &Extension::new("A3", 2).group("q").named("S2", &["A1", "A2"]))?;
    let ineq = extend_inequality(&mid, &Extension::new("B1", 2).group("p").named("S3", &["C1", "C2"]))?;
    let exprs = [
        ("A1", m_pm()),
        ("A2", m_pm()),
        ("A3", xx_yy()),
        ("B1", mm_pattern()),
        ("C1", m_pm()),
        ("C2", strings(&["X", "-Y"])),
    ];
    finish("example3", ineq, &exprs, 2.0)
}

/// Mermin on `A1, A2, A3`; `A3` gains a source to `B1, B2` (weights `q`),
/// then `B2` gains a source to `C1, C2` (weights `p`).
pub fn example4() -> Result<Scenario, CatalogError> {
    let base = mermin3_on(["A1", "A2", "A3"]);
    let mid = extend_inequality(&base, &Extension::new("A3", 2).group("q").named("S2", &["B1", "B2"]))?;
    let ineq = extend_inequality(&mid, &Extension::new("B2", 2).group("p").named("S3", &["C1", "C2"]))?;
    let exprs = [
        ("A1", m_pm()),
        ("A2", m_pm()),
        ("A3", xx_yy()),
        ("B1", m_pm()),
        ("B2", mm_pattern()),
        ("C1", m_pm()),
        ("C2", strings(&["X", "-Y"])),
    ];
    finish("example4", ineq, &exprs, 2.0)
}

/// Looks a scenario up by name; `example2` takes `n` and `l`, and also
/// parses as `example2_N<n>_L<l>`.
pub fn scenario(name: &str, n: usize, l: usize) -> Result<Scenario, CatalogError> {
    match name {
        "chsh" => chsh(),
        "mermin3" => mermin3(),
        "example1" => example1(),
        "example2" => example2(n, l),
        "example3" => example3(),
        "example4" => example4(),
        other => {
            let parsed = other.strip_prefix("example2_N").and_then(|r| {
                let (n, l) = r.split_once("_L")?;
                Some((n.parse().ok()?, l.parse().ok()?))
            });
            match parsed {
                Some((n, l)) => example2(n, l),
                None => Err(CatalogError::Unknown(other.into())),
            }
        }
    }
}

/// Every scenario, with example 2 at `N = 2, L = 2`.
pub fn all() -> Result<Vec<Scenario>, CatalogError> {
    NAMES.iter().map(|n| scenario(n, 2, 2)).collect()
}
