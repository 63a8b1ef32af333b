//! Evaluation of deeper circuits in `O(depth / log n)` rounds after a constant number of
//! setup stages: levels, a level sort done by a simulated Sum-CRCW machine, subdivision of
//! level-jumping edges, construction of bounded-depth up- and down-circuits around every
//! band boundary, input distribution, and a phase-by-phase evaluation.
//!
//! Levels count the longest path to the output, so the output has level 0 and band
//! boundaries sit at multiples of `s`. Node `x` lives at block `rank(x) / β`.

mod levels;
mod phases;
mod subcircuits;

use std::collections::BTreeMap;

use crate::circuit::{Assignment, Circuit, NodeKind};
use crate::error::{Error, Result};
use crate::mrc::{pair, words_of, BudgetReport, Engine, Pair, RunOptions, Value};

pub use levels::{encode_circuit, mr_compute_levels, mr_sort_by_level, oracle_levels, sorting_index};
pub use phases::{distribute_circuit_input, evaluate_phases, InputItem};
pub use subcircuits::{augment_edge, augment_jumping_edges, build_updown_circuits, is_jumping};

const SHIFT: u32 = 56;
const NODE_SPACE: u64 = 8;
const BLOCK_SPACE: u64 = 9;

/// Key of node `v` (by circuit index) before ranks exist.
pub fn node_key(v: u64) -> u64 {
    NODE_SPACE << SHIFT | v
}

/// Key of block `b`, which owns the nodes of rank `b·β .. (b+1)·β`.
pub fn block_key(b: u64) -> u64 {
    BLOCK_SPACE << SHIFT | b
}

fn space_of(k: u64) -> u64 {
    k >> SHIFT
}

fn index_of(k: u64) -> u64 {
    k & ((1 << SHIFT) - 1)
}

pub const INPUT: u64 = 0;
pub const AND: u64 = 1;
pub const OR: u64 = 2;
pub const NOT: u64 = 3;
pub const ID: u64 = 4;

pub fn kind_code(kind: NodeKind) -> (u64, u64) {
    match kind {
        NodeKind::Input(var) => (INPUT, var as u64),
        NodeKind::And => (AND, 0),
        NodeKind::Or => (OR, 0),
        NodeKind::Not => (NOT, 0),
        NodeKind::Id => (ID, 0),
    }
}

pub fn code_kind(code: u64, var: u64) -> NodeKind {
    match code {
        INPUT => NodeKind::Input(var as usize),
        AND => NodeKind::And,
        OR => NodeKind::Or,
        NOT => NodeKind::Not,
        _ => NodeKind::Id,
    }
}

/// What an edge endpoint needs to know about a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub rank: u64,
    pub level: u64,
    pub code: u64,
    pub var: u64,
}

impl NodeRef {
    fn encode(&self, out: &mut Vec<u64>) {
        out.extend([self.rank, self.level, self.code, self.var]);
    }

    pub fn is_input(&self) -> bool {
        self.code == INPUT
    }
}

/// Producer `src` feeds operand `slot` of consumer `dst`. Special edges join the two
/// dummies of a long jump and form their own one-edge subcircuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeRec {
    pub src: NodeRef,
    pub dst: NodeRef,
    pub slot: u64,
    pub special: bool,
}

impl EdgeRec {
    fn encode(&self, out: &mut Vec<u64>) {
        self.src.encode(out);
        self.dst.encode(out);
        out.extend([self.slot, self.special as u64]);
    }
}

/// A subcircuit under construction or finished. For down-circuits `bound` is the top of the
/// level window; for up-circuits it is the level of the roots the values travel to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Store {
    pub root: NodeRef,
    pub bound: u64,
    pub edges: Vec<EdgeRec>,
    pub frontier: Vec<u64>,
    pub visited: Vec<u64>,
    pub targets: Vec<u64>,
}

impl Store {
    fn encode(&self, out: &mut Vec<u64>) {
        self.root.encode(out);
        out.push(self.bound);
        encode_edges(&self.edges, out);
        for list in [&self.frontier, &self.visited, &self.targets] {
            out.push(list.len() as u64);
            out.extend_from_slice(list);
        }
    }
}

fn encode_edges(edges: &[EdgeRec], out: &mut Vec<u64>) {
    out.push(edges.len() as u64);
    for e in edges {
        e.encode(out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CMsg {
    Node { v: u64, code: u64, var: u64, fanin: Vec<u64> },
    Consumer,
    Leveling { v: u64, code: u64, var: u64, fanin: Vec<u64>, outdeg: u64, got: u64, maxl: u64, level: Option<u64> },
    Announce { to: u64, level: u64 },
    Leveled { v: u64, code: u64, var: u64, fanin: Vec<u64>, level: u64 },
    Rank { j: u64 },
    Ranked { v: u64, node: NodeRef, fanin: Vec<u64> },
    EdgeReq { to: u64, slot: u64, dst: NodeRef },
    Edge(EdgeRec),
    Vertex(NodeRef),
    Info { node: NodeRef, ins: Vec<EdgeRec>, outs: Vec<EdgeRec> },
    Down(Store),
    Up(Store),
    Req { u: u64, from: u64 },
    Nbr { u: u64, from: u64, ins: Vec<EdgeRec>, outs: Vec<EdgeRec> },
    InputBit { rank: u64, bit: bool },
    Val { target: u64, source: u64, value: bool },
    Known { rank: u64, value: bool },
    Verdict(bool),
    Missing { root: u64, leaf: u64 },
}

impl Value for CMsg {
    fn encode(&self, out: &mut Vec<u64>) {
        match self {
            CMsg::Node { v, code, var, fanin } => {
                out.extend([0, *v, *code, *var, fanin.len() as u64]);
                out.extend_from_slice(fanin);
            }
            CMsg::Consumer => out.push(1),
            CMsg::Leveling {
                v,
                code,
                var,
                fanin,
                outdeg,
                got,
                maxl,
                level,
            } => {
                out.extend([2, *v, *code, *var, *outdeg, *got, *maxl]);
                out.extend([level.is_some() as u64, level.unwrap_or(0), fanin.len() as u64]);
                out.extend_from_slice(fanin);
            }
            CMsg::Announce { to, level } => out.extend([3, *to, *level]),
            CMsg::Leveled { v, code, var, fanin, level } => {
                out.extend([4, *v, *code, *var, *level, fanin.len() as u64]);
                out.extend_from_slice(fanin);
            }
            CMsg::Rank { j } => out.extend([5, *j]),
            CMsg::Ranked { v, node, fanin } => {
                out.extend([6, *v]);
                node.encode(out);
                out.push(fanin.len() as u64);
                out.extend_from_slice(fanin);
            }
            CMsg::EdgeReq { to, slot, dst } => {
                out.extend([7, *to, *slot]);
                dst.encode(out);
            }
            CMsg::Edge(e) => {
                out.push(8);
                e.encode(out);
            }
            CMsg::Vertex(x) => {
                out.push(9);
                x.encode(out);
            }
            CMsg::Info { node, ins, outs } => {
                out.push(10);
                node.encode(out);
                encode_edges(ins, out);
                encode_edges(outs, out);
            }
            CMsg::Down(s) => {
                out.push(11);
                s.encode(out);
            }
            CMsg::Up(s) => {
                out.push(12);
                s.encode(out);
            }
            CMsg::Req { u, from } => out.extend([13, *u, *from]),
            CMsg::Nbr { u, from, ins, outs } => {
                out.extend([14, *u, *from]);
                encode_edges(ins, out);
                encode_edges(outs, out);
            }
            CMsg::InputBit { rank, bit } => out.extend([15, *rank, *bit as u64]),
            CMsg::Val { target, source, value } => out.extend([16, *target, *source, *value as u64]),
            CMsg::Known { rank, value } => out.extend([17, *rank, *value as u64]),
            CMsg::Verdict(b) => out.extend([18, *b as u64]),
            CMsg::Missing { root, leaf } => out.extend([19, *root, *leaf]),
        }
    }
}

fn keep(key: u64, vs: impl IntoIterator<Item = CMsg>) -> Vec<Pair<CMsg>> {
    vs.into_iter().map(|v| pair(key, v)).collect()
}

/// Where levels come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LevelsSource {
    /// Max-relaxation from the output, one round per level.
    #[default]
    Mr,
    /// Sequential levels injected as if precomputed.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NcOptions {
    pub run: RunOptions,
    pub alpha: f64,
    pub levels: LevelsSource,
    /// Overrides the band height `s`.
    pub s: Option<u64>,
}

impl NcOptions {
    pub fn new(run: RunOptions, alpha: f64) -> NcOptions {
        NcOptions {
            run,
            alpha,
            levels: LevelsSource::Mr,
            s: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NcParams {
    pub epsilon: f64,
    pub alpha: f64,
    /// Number of variables.
    pub n: u64,
    /// Original node count; dummies get ranks from here on.
    pub nodes: u64,
    pub n_words: u64,
    /// Degree bound, at least 2.
    pub delta: u64,
    /// Band height.
    pub s: u64,
    /// Nodes per block.
    pub beta: u64,
    pub depth: u64,
    /// Evaluation phases, `⌈depth / s⌉` and at least 1.
    pub phases: u64,
}

impl NcParams {
    pub fn new(c: &Circuit, epsilon: f64, alpha: f64, s: Option<u64>) -> Result<NcParams> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Parameter(format!("epsilon must be < 1/2 for nc pipeline, got {epsilon}")));
        }
        if !(alpha > 0.0 && alpha < 1.0 - 2.0 * epsilon) {
            return Err(Error::Parameter(format!(
                "alpha must lie in (0, 1 - 2·epsilon) = (0, {}), got {alpha}",
                1.0 - 2.0 * epsilon
            )));
        }
        if s == Some(0) {
            return Err(Error::Parameter("band height s must be at least 1".into()));
        }
        let n = c.n() as u64;
        let delta = (c.max_degree() as u64).max(2);
        let s = s.unwrap_or_else(|| {
            let raw = alpha * (n.max(2) as f64).ln() / (delta as f64).ln();
            (raw - 1e-9).ceil().max(1.0) as u64
        });
        let n_words = input_words(c);
        let beta = crate::pbp_mrc::ceil_pow(n_words, 1.0 - epsilon - alpha).max(1);
        let depth = c.depth() as u64;
        Ok(NcParams {
            epsilon,
            alpha,
            n,
            nodes: c.len() as u64,
            n_words,
            delta,
            s,
            beta,
            depth,
            phases: depth.div_ceil(s).max(1),
        })
    }

    pub fn block_of(&self, rank: u64) -> u64 {
        block_key(rank / self.beta)
    }

    pub fn is_boundary(&self, level: u64) -> bool {
        level.is_multiple_of(self.s)
    }

    /// Level of the roots whose down-circuits contain a node at `level`.
    pub fn target_level(&self, level: u64) -> Option<u64> {
        (level > 0).then(|| self.s * (level.div_ceil(self.s) - 1))
    }
}

/// Word size of the encoded circuit plus the encoded assignment.
pub fn input_words(c: &Circuit) -> u64 {
    words_of(&encode_circuit(c)) + 4 * c.n() as u64
}

/// Rounds and peak reducer words of one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSummary {
    pub stage: String,
    pub rounds: usize,
    pub max_words: u64,
}

pub const STAGES: [&str; 6] = ["levels", "sort", "augment", "construct", "distribute", "evaluate"];

pub fn stage_breakdown(report: &BudgetReport) -> Vec<StageSummary> {
    STAGES
        .iter()
        .map(|&stage| {
            let rounds: Vec<_> = report.rounds.iter().filter(|r| r.stage == stage).collect();
            StageSummary {
                stage: stage.to_string(),
                rounds: rounds.len(),
                max_words: rounds
                    .iter()
                    .map(|r| r.max_reducer_in_words.max(r.max_reducer_out_words))
                    .max()
                    .unwrap_or(0),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NcRun {
    pub accept: bool,
    pub params: NcParams,
    pub report: BudgetReport,
    pub stages: Vec<StageSummary>,
}

impl NcRun {
    pub fn stage_rounds(&self, stage: &str) -> usize {
        self.report.stage_rounds(stage)
    }
}

/// The assignment-independent stages, done once per circuit.
#[derive(Clone)]
pub struct NcPrepared {
    pub params: NcParams,
    pub data: Vec<Pair<CMsg>>,
    engine: Engine,
    opts: NcOptions,
}

/// Runs levels, sort, augmentation and subcircuit construction.
pub fn prepare_nc(c: &Circuit, opts: &NcOptions) -> Result<NcPrepared> {
    let params = NcParams::new(c, opts.run.config.epsilon, opts.alpha, opts.s)?;
    let mut engine = opts.run.engine(params.n_words);
    let data = match opts.levels {
        LevelsSource::Mr => mr_compute_levels(&mut engine, encode_circuit(c))?,
        LevelsSource::Oracle => oracle_levels(c),
    };
    let data = mr_sort_by_level(&mut engine, data)?;
    let data = augment_jumping_edges(&mut engine, data, &params)?;
    let data = build_updown_circuits(&mut engine, data, &params)?;
    Ok(NcPrepared {
        params,
        data,
        engine,
        opts: *opts,
    })
}

impl NcPrepared {
    pub fn report(&self) -> &BudgetReport {
        self.engine.report()
    }

    /// Distributes `a` and evaluates, continuing the prepared engine's report.
    pub fn run(&self, a: &Assignment) -> Result<NcRun> {
        if a.len() as u64 != self.params.n {
            return Err(Error::AssignmentLength {
                expected: self.params.n as usize,
                found: a.len(),
            });
        }
        let mut engine = self.engine.clone();
        let data = distribute_circuit_input(&mut engine, self.data.clone(), a, &self.params, self.opts.run.config.epsilon)?;
        let (accept, _) = evaluate_phases(&mut engine, data, &self.params)?;
        let report = engine.into_report();
        Ok(NcRun {
            accept,
            params: self.params,
            stages: stage_breakdown(&report),
            report,
        })
    }
}

pub fn run_nc_pipeline(c: &Circuit, a: &Assignment, opts: &NcOptions) -> Result<NcRun> {
    if a.len() != c.n() {
        return Err(Error::AssignmentLength {
            expected: c.n(),
            found: a.len(),
        });
    }
    prepare_nc(c, opts)?.run(a)
}

/// Levels by circuit index, from `Leveled` or later records.
pub fn levels_of(data: &[Pair<CMsg>]) -> BTreeMap<u64, u64> {
    data.iter()
        .filter_map(|p| match &p.value {
            CMsg::Leveled { v, level, .. } => Some((*v, *level)),
            CMsg::Ranked { v, node, .. } => Some((*v, node.level)),
            _ => None,
        })
        .collect()
}

/// Circuit index to rank.
pub fn ranks_of(data: &[Pair<CMsg>]) -> BTreeMap<u64, u64> {
    data.iter()
        .filter_map(|p| match &p.value {
            CMsg::Ranked { v, node, .. } => Some((*v, node.rank)),
            _ => None,
        })
        .collect()
}

/// Vertices and edges after augmentation.
pub fn augmented_of(data: &[Pair<CMsg>]) -> (Vec<NodeRef>, Vec<EdgeRec>) {
    let mut vs = Vec::new();
    let mut es = Vec::new();
    for p in data {
        match &p.value {
            CMsg::Vertex(x) => vs.push(*x),
            CMsg::Edge(e) => es.push(*e),
            _ => {}
        }
    }
    vs.sort_unstable();
    vs.dedup();
    es.sort_unstable();
    (vs, es)
}

/// Finished down- and up-circuits by root rank.
pub fn stores_of(data: &[Pair<CMsg>]) -> (BTreeMap<u64, Store>, BTreeMap<u64, Store>) {
    let mut down = BTreeMap::new();
    let mut up = BTreeMap::new();
    for p in data {
        match &p.value {
            CMsg::Down(s) => {
                down.insert(s.root.rank, s.clone());
            }
            CMsg::Up(s) => {
                up.insert(s.root.rank, s.clone());
            }
            _ => {}
        }
    }
    (down, up)
}

fn check_missing(data: &[Pair<CMsg>], what: &str) -> Result<()> {
    match data.iter().find_map(|p| match p.value {
        CMsg::Missing { root, leaf } => Some((root, leaf)),
        _ => None,
    }) {
        Some((root, leaf)) => Err(Error::Pipeline(format!("{what}: node {leaf} unavailable for {root}"))),
        None => Ok(()),
    }
}
