use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    // panel data
    #[error("missing column `{column}` in {file}")]
    MissingColumn { file: String, column: String },
    #[error("line {line}: cannot parse field `{field}` from {value:?}")]
    Parse {
        line: usize,
        field: String,
        value: String,
    },
    #[error("line {line}: invalid value for `{field}`: {reason}")]
    InvalidValue {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: duplicate key {key} (first seen on line {first_line})")]
    DuplicateKey {
        line: usize,
        first_line: usize,
        key: String,
    },
    #[error("line {line}: product `{product_id}` is not declared")]
    OrphanProduct { line: usize, product_id: String },
    #[error("line {line}: no market definition for region `{region_id}` period {period}")]
    OrphanMarket {
        line: usize,
        region_id: String,
        period: i64,
    },
    #[error("line {line}: product `{product_id}` metadata conflicts with an earlier row: {detail}")]
    InconsistentProduct {
        line: usize,
        product_id: String,
        detail: String,
    },
    #[error("line {line}: {series} for `{entity}` in period {period} conflicts with an earlier row")]
    InconsistentSeries {
        line: usize,
        series: String,
        entity: String,
        period: i64,
    },
    #[error("market ({region_id}, {period}): {detail}")]
    MarketSizeViolation {
        region_id: String,
        period: i64,
        detail: String,
    },
    #[error("market ({region_id}, {period}): group `{group_id}` has zero total share")]
    ZeroGroupShare {
        region_id: String,
        period: i64,
        group_id: String,
    },
    #[error("dataset has no {0}; compute it first")]
    MissingAugmentation(&'static str),

    // kernels
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("negative raw input {value} at period {period}")]
    NegativeInput { period: i64, value: f64 },
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    // share engine
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("share domain error: {0}")]
    DomainError(String),
    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    // estimator
    #[error("invalid demand specification: {0}")]
    InvalidSpec(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("fixed-effect absorption did not converge after {sweeps} sweeps (last change {last_change:e})")]
    NonConvergence { sweeps: usize, last_change: f64 },

    // equilibrium
    #[error("singular ownership block for firm `{firm}`")]
    SingularBlock { firm: String },
    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    // counterfactual
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("no fitted mean utility for observation {0}")]
    MissingResidual(String),
    #[error("bracket failure: {0}")]
    BracketFailure(String),

    // synthetic oracle
    #[error("degenerate market: {0}")]
    DegenerateMarket(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidSpec(_) | InvalidConfig(_) | InvalidKernel(_) | Scenario(_) => ErrorKind::Usage,
            InvalidParameter(_)
            | DomainError(_)
            | NumericOverflow(_)
            | RankDeficient(_)
            | NonConvergence { .. }
            | SingularBlock { .. }
            | NoConvergence { .. }
            | BracketFailure(_)
            | DegenerateMarket(_)
            | GridTooCoarse(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    /// Stable variant name for machine-readable error records.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            Io { .. } => "Io",
            Csv(_) => "Csv",
            Json(_) => "Json",
            MissingColumn { .. } => "MissingColumn",
            Parse { .. } => "Parse",
            InvalidValue { .. } => "InvalidValue",
            DuplicateKey { .. } => "DuplicateKey",
            OrphanProduct { .. } => "OrphanProduct",
            OrphanMarket { .. } => "OrphanMarket",
            InconsistentProduct { .. } => "InconsistentProduct",
            InconsistentSeries { .. } => "InconsistentSeries",
            MarketSizeViolation { .. } => "MarketSizeViolation",
            ZeroGroupShare { .. } => "ZeroGroupShare",
            MissingAugmentation(_) => "MissingAugmentation",
            InvalidKernel(_) => "InvalidKernel",
            NegativeInput { .. } => "NegativeInput",
            InsufficientHistory(_) => "InsufficientHistory",
            InvalidParameter(_) => "InvalidParameter",
            DomainError(_) => "DomainError",
            NumericOverflow(_) => "NumericOverflow",
            InvalidSpec(_) => "InvalidSpec",
            RankDeficient(_) => "RankDeficient",
            NonConvergence { .. } => "NonConvergence",
            SingularBlock { .. } => "SingularBlock",
            NoConvergence { .. } => "NoConvergence",
            Scenario(_) => "Scenario",
            MissingResidual(_) => "MissingResidual",
            BracketFailure(_) => "BracketFailure",
            DegenerateMarket(_) => "DegenerateMarket",
            GridTooCoarse(_) => "GridTooCoarse",
            InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
