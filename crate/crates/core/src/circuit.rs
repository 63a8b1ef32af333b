//! Fan-in-2 Boolean circuits over {AND, OR, NOT} plus identity gates.
//!
//! Edges point from producer to consumer. The output node is the unique sink,
//! so the level of a node is its longest distance to the output.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Input(usize),
    And,
    Or,
    Not,
    Id,
}

impl NodeKind {
    pub fn arity(self) -> usize {
        match self {
            NodeKind::Input(_) => 0,
            NodeKind::Not | NodeKind::Id => 1,
            NodeKind::And | NodeKind::Or => 2,
        }
    }

    /// Applies the gate to its operand values. Inputs are looked up by the caller.
    pub fn apply(self, operands: &[bool]) -> bool {
        match self {
            NodeKind::Input(_) => panic!("input nodes have no operands"),
            NodeKind::And => operands[0] && operands[1],
            NodeKind::Or => operands[0] || operands[1],
            NodeKind::Not => !operands[0],
            NodeKind::Id => operands[0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: u64,
    pub kind: NodeKind,
    /// Producer node indices, in operand order.
    pub fanin: Vec<usize>,
}

/// A validated single-output circuit. Node indices are positions in `nodes`.
#[derive(Clone, Debug)]
pub struct Circuit {
    nodes: Vec<Node>,
    output: usize,
    n: usize,
    topo: Vec<usize>,
    fanout: Vec<Vec<usize>>,
}

impl PartialEq for Circuit {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.output == other.output && self.nodes == other.nodes
    }
}

impl Eq for Circuit {}

impl Circuit {
    /// Builds and validates a circuit from `(id, kind, producer ids)` triples.
    pub fn new(n: usize, spec: Vec<(u64, NodeKind, Vec<u64>)>, output: u64) -> Result<Circuit> {
        let mut index = HashMap::with_capacity(spec.len());
        for (i, (id, _, _)) in spec.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(Error::DuplicateNode(*id));
            }
        }
        let mut nodes = Vec::with_capacity(spec.len());
        for (id, kind, srcs) in spec {
            if srcs.len() != kind.arity() {
                return Err(Error::FanIn {
                    id,
                    expected: kind.arity(),
                    found: srcs.len(),
                });
            }
            if let NodeKind::Input(var) = kind {
                if var >= n {
                    return Err(Error::InvalidArgument(format!(
                        "input node {id} reads variable {var} but n = {n}"
                    )));
                }
            }
            let fanin = srcs
                .iter()
                .map(|s| {
                    index
                        .get(s)
                        .copied()
                        .ok_or(Error::DanglingEdge { from: *s, to: id })
                })
                .collect::<Result<Vec<_>>>()?;
            nodes.push(Node { id, kind, fanin });
        }
        let output = *index.get(&output).ok_or(Error::NoOutput)?;

        let mut fanout = vec![Vec::new(); nodes.len()];
        for (v, node) in nodes.iter().enumerate() {
            for &u in &node.fanin {
                fanout[u].push(v);
            }
        }
        let sinks: Vec<usize> = (0..nodes.len()).filter(|&v| fanout[v].is_empty()).collect();
        if sinks != [output] {
            return Err(Error::Sinks(sinks.iter().map(|&v| nodes[v].id).collect()));
        }

        // Kahn's algorithm over producer -> consumer edges.
        let mut pending: Vec<usize> = nodes.iter().map(|node| node.fanin.len()).collect();
        let mut ready: Vec<usize> = (0..nodes.len()).filter(|&v| pending[v] == 0).collect();
        let mut topo = Vec::with_capacity(nodes.len());
        while let Some(u) = ready.pop() {
            topo.push(u);
            for &v in &fanout[u] {
                pending[v] -= 1;
                if pending[v] == 0 {
                    ready.push(v);
                }
            }
        }
        if topo.len() != nodes.len() {
            let stuck = (0..nodes.len()).find(|&v| pending[v] > 0).unwrap();
            return Err(Error::Cycle(nodes[stuck].id));
        }

        Ok(Circuit {
            nodes,
            output,
            n,
            topo,
            fanout,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &Node {
        &self.nodes[v]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output(&self) -> usize {
        self.output
    }

    /// Number of input variables.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Producer-first order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn fanout(&self, v: usize) -> &[usize] {
        &self.fanout[v]
    }

    /// Directed edges `(producer, consumer)` by node index.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(v, node)| node.fanin.iter().map(move |&u| (u, v)))
            .collect()
    }

    /// Number of edges.
    pub fn size(&self) -> usize {
        self.nodes.iter().map(|node| node.fanin.len()).sum()
    }

    pub fn depth(&self) -> usize {
        levels_direct(self).depth()
    }

    /// Largest in- or out-degree over all nodes.
    pub fn max_degree(&self) -> usize {
        (0..self.nodes.len())
            .map(|v| self.nodes[v].fanin.len().max(self.fanout[v].len()))
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for node in &self.nodes {
            let src = |k: usize| self.nodes[node.fanin[k]].id;
            match node.kind {
                NodeKind::Input(var) => writeln!(f, "input {} {}", node.id, var)?,
                NodeKind::And => writeln!(f, "and {} {} {}", node.id, src(0), src(1))?,
                NodeKind::Or => writeln!(f, "or {} {} {}", node.id, src(0), src(1))?,
                NodeKind::Not => writeln!(f, "not {} {}", node.id, src(0))?,
                NodeKind::Id => writeln!(f, "id {} {}", node.id, src(0))?,
            }
        }
        writeln!(f, "output {}", self.nodes[self.output].id)
    }
}

impl FromStr for Circuit {
    type Err = Error;

    fn from_str(text: &str) -> Result<Circuit> {
        parse_circuit(text)
    }
}

/// Parses the line-oriented circuit format. `#` starts a comment.
pub fn parse_circuit(text: &str) -> Result<Circuit> {
    let mut spec = Vec::new();
    let mut output = None;
    let mut n = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let words: Vec<&str> = content.split_whitespace().collect();
        let num = |k: usize| -> Result<u64> {
            words
                .get(k)
                .ok_or_else(|| Error::Syntax {
                    line,
                    msg: format!("`{}` expects more operands", words[0]),
                })?
                .parse::<u64>()
                .map_err(|e| Error::Syntax {
                    line,
                    msg: format!("bad integer `{}`: {e}", words[k]),
                })
        };
        let (kind, expected) = match words[0] {
            "input" => (None, 3),
            "and" => (Some(NodeKind::And), 4),
            "or" => (Some(NodeKind::Or), 4),
            "not" => (Some(NodeKind::Not), 3),
            "id" => (Some(NodeKind::Id), 3),
            "output" => {
                if words.len() != 2 {
                    return Err(Error::Syntax {
                        line,
                        msg: "`output` takes exactly one id".into(),
                    });
                }
                if output.replace(num(1)?).is_some() {
                    return Err(Error::Syntax {
                        line,
                        msg: "multiple outputs are not supported".into(),
                    });
                }
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    line,
                    msg: format!("unknown directive `{other}`"),
                })
            }
        };
        if words.len() != expected {
            return Err(Error::Syntax {
                line,
                msg: format!("`{}` takes {} operands", words[0], expected - 1),
            });
        }
        let id = num(1)?;
        match kind {
            None => {
                let var = num(2)? as usize;
                n = n.max(var + 1);
                spec.push((id, NodeKind::Input(var), Vec::new()));
            }
            Some(kind) => {
                let srcs = (2..expected).map(num).collect::<Result<Vec<_>>>()?;
                spec.push((id, kind, srcs));
            }
        }
    }
    let output = output.ok_or(Error::NoOutput)?;
    Circuit::new(n, spec, output)
}

/// An assignment of bits to the circuit's input variables; position `i` is `x_i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Assignment(pub Vec<bool>);

impl Assignment {
    /// The assignment whose bit `i` is bit `i` of `mask`.
    pub fn from_index(n: usize, mask: u64) -> Assignment {
        Assignment((0..n).map(|i| mask >> i & 1 == 1).collect())
    }

    /// All `2^n` assignments in counting order.
    pub fn all(n: usize) -> impl Iterator<Item = Assignment> {
        (0..1u64 << n).map(move |mask| Assignment::from_index(n, mask))
    }

    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Assignment {
        Assignment((0..n).map(|_| rng.gen()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(text: &str) -> Result<Assignment> {
        let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        line.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Syntax {
                    line: 1,
                    msg: format!("assignment character `{other}` is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<_>>>()
            .map(Assignment)
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn check_assignment(c: &Circuit, a: &Assignment) -> Result<()> {
    if a.len() != c.n() {
        return Err(Error::AssignmentLength {
            expected: c.n(),
            found: a.len(),
        });
    }
    Ok(())
}

/// Values of every node under `a`, indexed by node.
pub fn eval_all(c: &Circuit, a: &Assignment) -> Result<Vec<bool>> {
    check_assignment(c, a)?;
    let mut val = vec![false; c.len()];
    for &v in c.topo_order() {
        let node = c.node(v);
        val[v] = match node.kind {
            NodeKind::Input(var) => a.get(var),
            kind => {
                let ops: Vec<bool> = node.fanin.iter().map(|&u| val[u]).collect();
                kind.apply(&ops)
            }
        };
    }
    Ok(val)
}

/// Sequential evaluation of the output node.
pub fn eval_direct(c: &Circuit, a: &Assignment) -> Result<bool> {
    Ok(eval_all(c, a)?[c.output()])
}

/// Node levels indexed by node; the sink has level 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelMap(pub Vec<usize>);

impl LevelMap {
    pub fn get(&self, v: usize) -> usize {
        self.0[v]
    }

    pub fn depth(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

pub fn levels_direct(c: &Circuit) -> LevelMap {
    let mut level = vec![0; c.len()];
    for &v in c.topo_order().iter().rev() {
        level[v] = c
            .fanout(v)
            .iter()
            .map(|&w| level[w] + 1)
            .max()
            .unwrap_or(0);
    }
    LevelMap(level)
}

/// XOR of `n` inputs built from `x ^ y = (x | y) & !(x & y)` gadgets.
pub fn gen_parity(n: usize) -> Result<Circuit> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "parity size must be a power of two >= 2, got {n}"
        )));
    }
    let mut spec = Vec::new();
    let mut next_id = 0u64;
    let mut layer: Vec<u64> = (0..n)
        .map(|i| {
            spec.push((next_id, NodeKind::Input(i), vec![]));
            next_id += 1;
            next_id - 1
        })
        .collect();
    let mut push = |kind, srcs| {
        spec.push((next_id, kind, srcs));
        next_id += 1;
        next_id - 1
    };
    while layer.len() > 1 {
        layer = layer
            .chunks(2)
            .map(|pair| {
                let (x, y) = (pair[0], pair[1]);
                let or = push(NodeKind::Or, vec![x, y]);
                let and = push(NodeKind::And, vec![x, y]);
                let nand = push(NodeKind::Not, vec![and]);
                push(NodeKind::And, vec![or, nand])
            })
            .collect();
    }
    Circuit::new(n, spec, layer[0])
}

/// Balanced AND of `n` inputs.
pub fn gen_and_tree(n: usize) -> Result<Circuit> {
    if n == 0 {
        return Err(Error::InvalidArgument("and-tree needs at least one input".into()));
    }
    let mut spec: Vec<(u64, NodeKind, Vec<u64>)> = (0..n)
        .map(|i| (i as u64, NodeKind::Input(i), vec![]))
        .collect();
    let mut layer: Vec<u64> = (0..n as u64).collect();
    while layer.len() > 1 {
        let mut next = Vec::new();
        for pair in layer.chunks(2) {
            if pair.len() == 1 {
                next.push(pair[0]);
            } else {
                let id = spec.len() as u64;
                spec.push((id, NodeKind::And, vec![pair[0], pair[1]]));
                next.push(id);
            }
        }
        layer = next;
    }
    Circuit::new(n, spec, layer[0])
}

#[derive(Clone, Copy)]
struct Slot {
    gate: usize,
    level: usize,
}

#[derive(Clone, Copy)]
enum Fill {
    Binary,
    Unary,
    Share,
    Input,
    Defer,
}

/// Deterministic pseudo-random circuit with exactly `n` used variables and depth `depth`.
///
/// Built from the output downward: every gate slot opened at step `k - 1` is filled at
/// step `k` by a new gate, a gate already created at step `k`, an input node, or is
/// deferred to a later step (which yields level-jumping edges).
pub fn gen_random_dag(n: usize, depth: usize, seed: u64) -> Result<Circuit> {
    if n == 0 || depth == 0 {
        return Err(Error::Infeasible(format!(
            "need n >= 1 and depth >= 1, got n = {n}, depth = {depth}"
        )));
    }
    if depth < 63 && n as u64 > 1u64 << depth {
        return Err(Error::Infeasible(format!(
            "{n} inputs cannot all reach the output within depth {depth}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = |k: usize| -> u64 {
        // Most distinct inputs a slot filled at step k can still absorb.
        let h = depth - k;
        if h >= 40 {
            u64::MAX / 4
        } else {
            1u64 << h
        }
    };

    let mut kinds: Vec<NodeKind> = Vec::new();
    let mut fanin: Vec<Vec<usize>> = Vec::new();
    let mut level: Vec<usize> = Vec::new();
    let mut input_node: Vec<Option<usize>> = vec![None; n];
    let mut unused: Vec<usize> = (0..n).collect();
    unused.shuffle(&mut rng);

    let binary_ok = n >= 2;
    let out_binary = binary_ok && (n as u64 > cap(1) || rng.gen_bool(0.7));
    let out_kind = gate_kind(out_binary, &mut rng);
    kinds.push(out_kind);
    fanin.push(Vec::new());
    level.push(0);
    let mut open: Vec<Slot> = (0..out_kind.arity()).map(|_| Slot { gate: 0, level: 0 }).collect();
    let mut deferred: Vec<Slot> = Vec::new();

    for k in 1..=depth {
        let last = k == depth;
        let mut slots = std::mem::take(&mut open);
        let mut keep = Vec::new();
        for s in deferred.drain(..) {
            if last || rng.gen_bool(0.5) {
                slots.push(s);
            } else {
                keep.push(s);
            }
        }
        deferred = keep;
        // The chain slot keeps the depth exact.
        if !last {
            let pos = slots.iter().position(|s| s.level == k - 1).expect("chain slot");
            slots.swap(0, pos);
        }
        let need = unused.len() as u64;
        // A slot deferred past this step is only guaranteed one input.
        let deferred_cap: u64 = deferred.len() as u64;
        let max_cap = if last { 1 } else if binary_ok { cap(k) } else { cap(k + 1).max(1) };
        let mut acc = deferred_cap;
        let mut created_now: Vec<usize> = Vec::new();
        for (si, slot) in slots.iter().enumerate() {
            let rest = (slots.len() - si - 1) as u64 * max_cap;
            let other: Option<usize> = fanin[slot.gate].first().copied();
            let reusable: Vec<usize> = input_node
                .iter()
                .flatten()
                .copied()
                .filter(|&u| Some(u) != other)
                .collect();
            let sharable: Vec<usize> = created_now
                .iter()
                .copied()
                .filter(|&u| Some(u) != other)
                .collect();
            let mut options: Vec<(Fill, u64, u32)> = Vec::new();
            if last {
                if !unused.is_empty() {
                    options.push((Fill::Input, 1, 1));
                } else {
                    options.push((Fill::Input, 0, 1));
                }
            } else if si == 0 {
                if binary_ok {
                    options.push((Fill::Binary, cap(k), 3));
                }
                options.push((Fill::Unary, cap(k + 1), 2));
            } else {
                if binary_ok {
                    options.push((Fill::Binary, cap(k), 4));
                }
                options.push((Fill::Unary, cap(k + 1), 2));
                if !sharable.is_empty() {
                    options.push((Fill::Share, 0, 2));
                }
                if !unused.is_empty() {
                    options.push((Fill::Input, 1, 1));
                } else if !reusable.is_empty() {
                    options.push((Fill::Input, 0, 1));
                }
                options.push((Fill::Defer, 1, 1));
            }
            options.retain(|&(_, gain, _)| acc + gain + rest >= need);
            let total: u32 = options.iter().map(|o| o.2).sum();
            let mut pick = rng.gen_range(0..total);
            let &(fill, gain, _) = options
                .iter()
                .find(|o| {
                    if pick < o.2 {
                        true
                    } else {
                        pick -= o.2;
                        false
                    }
                })
                .expect("feasible option");
            acc += gain;
            match fill {
                Fill::Binary | Fill::Unary => {
                    let kind = gate_kind(matches!(fill, Fill::Binary), &mut rng);
                    let g = kinds.len();
                    kinds.push(kind);
                    fanin.push(Vec::new());
                    level.push(slot.level + 1);
                    fanin[slot.gate].push(g);
                    created_now.push(g);
                    for _ in 0..kind.arity() {
                        open.push(Slot {
                            gate: g,
                            level: slot.level + 1,
                        });
                    }
                }
                Fill::Share => {
                    let g = *sharable.choose(&mut rng).unwrap();
                    level[g] = level[g].max(slot.level + 1);
                    fanin[slot.gate].push(g);
                    // Slots of g were opened with its creation level; keep them consistent.
                    for s in open.iter_mut().filter(|s| s.gate == g) {
                        s.level = level[g];
                    }
                }
                Fill::Input => {
                    let u = if gain == 1 {
                        let var = unused.pop().expect("unused variable");
                        let u = kinds.len();
                        kinds.push(NodeKind::Input(var));
                        fanin.push(Vec::new());
                        level.push(slot.level + 1);
                        input_node[var] = Some(u);
                        u
                    } else {
                        *reusable.choose(&mut rng).expect("an input distinct from sibling")
                    };
                    fanin[slot.gate].push(u);
                }
                Fill::Defer => deferred.push(*slot),
            }
        }
    }
    debug_assert!(unused.is_empty() && deferred.is_empty() && open.is_empty());

    let spec = kinds
        .iter()
        .enumerate()
        .map(|(v, &kind)| (v as u64, kind, fanin[v].iter().map(|&u| u as u64).collect()))
        .collect();
    let c = Circuit::new(n, spec, 0)?;
    debug_assert_eq!(c.depth(), depth);
    Ok(c)
}

fn gate_kind<R: Rng>(binary: bool, rng: &mut R) -> NodeKind {
    match (binary, rng.gen_bool(0.5)) {
        (true, true) => NodeKind::And,
        (true, false) => NodeKind::Or,
        (false, true) => NodeKind::Not,
        (false, false) => NodeKind::Id,
    }
}
