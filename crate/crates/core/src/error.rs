use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("dangling edge: node {from} feeds undefined node {to}")]
    DanglingEdge { from: u64, to: u64 },
    #[error("duplicate node id {0}")]
    DuplicateNode(u64),
    #[error("cycle detected through node {0}")]
    Cycle(u64),
    #[error("fan-in violation at node {id}: expected {expected}, found {found}")]
    FanIn { id: u64, expected: usize, found: usize },
    #[error("circuit must have exactly one sink equal to the output, found sinks {0:?}")]
    Sinks(Vec<u64>),
    #[error("missing output declaration")]
    NoOutput,
    #[error("assignment has {found} bits, circuit expects {expected}")]
    AssignmentLength { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible shape: {0}")]
    Infeasible(String),
    #[error("permutation width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("not a permutation: {0:?}")]
    NotAPermutation(Vec<usize>),
    #[error("register index {index} out of range (M = {registers})")]
    RegisterOutOfRange { index: usize, registers: usize },
    #[error("duplicate element {0} in sort input")]
    DuplicateElement(u64),
    #[error("element {value} outside domain 1..={domain}")]
    OutOfDomain { value: u64, domain: u64 },
    #[error("reducer for key {key} emitted a pair with foreign key {emitted} in round {round}")]
    ForeignKey { round: usize, key: u64, emitted: u64 },
    #[error("budget violation in round {round}: {kind} measured {measured} exceeds limit {limit}")]
    Budget {
        round: usize,
        kind: String,
        measured: u64,
        limit: u64,
    },
    #[error("simulation plan infeasible: {0}")]
    Plan(String),
    #[error("pipeline invariant broken: {0}")]
    Pipeline(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}
