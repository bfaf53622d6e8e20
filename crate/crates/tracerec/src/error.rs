use thiserror::Error;

/// Errors reported by the reconstruction routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("candidate budget exceeded: {count} candidates, cap {cap}")]
    BudgetExceeded { count: u128, cap: u128 },

    #[error("component-count mismatch: found {found}, expected {expected}")]
    ComponentCountMismatch { found: usize, expected: usize },

    #[error("insufficient surviving traces: component {component} kept {kept}, need {need}")]
    InsufficientSurvivors {
        component: usize,
        kept: usize,
        need: usize,
    },

    #[error("insufficient traces: {usable} usable, {needed} needed")]
    InsufficientTraces { usable: usize, needed: usize },

    #[error("ambiguous component: {ones} ones exceed bound {bound}")]
    AmbiguousComponent { ones: usize, bound: usize },

    #[error("string too short: {len} positions cannot hold one group of {g} blocks of width {w}")]
    StringTooShort { len: usize, w: usize, g: usize },

    #[error("unordered pair: groups {0} and {1} never co-occur")]
    UnorderedPair(usize, usize),

    #[error("inconsistent order between groups {0} and {1}")]
    InconsistentOrder(usize, usize),

    #[error("uncovered cells: {}", fmt_cells(.0))]
    UncoveredCell(Vec<Vec<usize>>),

    #[error("alignment failure: {0}")]
    AlignmentFailure(String),

    #[error("reconstruction failure: {0}")]
    Reconstruction(String),
}

fn fmt_cells(cells: &[Vec<usize>]) -> String {
    let shown: Vec<String> = cells.iter().take(8).map(|c| format!("{c:?}")).collect();
    if cells.len() > 8 {
        format!("{} ... ({} total)", shown.join(", "), cells.len())
    } else {
        shown.join(", ")
    }
}

impl Error {
    /// True for errors caused by malformed arguments rather than by an
    /// unlucky draw of traces.
    pub fn is_invalid_input(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::StringTooShort { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
