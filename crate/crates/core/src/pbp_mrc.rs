//! Constant-round evaluation of a branching program under an assignment.
//!
//! Lines are cut into `ℓ` blocks of `d` consecutive lines. Every block needs the bits of the
//! variables it mentions; those bits are routed through `ℓ` variable groups whose boundaries
//! (split values) come from prefix sums of per-variable block counts, so every reducer
//! handles `O(d)` words. Each block then tabulates its action on all `w!` permutations and a
//! single reducer composes the tables.
//!
//! Rounds, all with a fixed schedule:
//!
//! | stage        | rounds | work |
//! |--------------|--------|------|
//! | `count`      | 2      | block markers per distinct variable, counted per variable |
//! | `prefix`     | 3      | local sums, block offsets, combine |
//! | `split`      | 1      | each prefix block finds the split values it contains |
//! | `distribute` | 2      | tag occurrences and bits by group, join at the group reducer |
//! | `evaluate`   | 2      | action tables per block, composition at the root |
//!
//! The first five stages are generic over the item type so the circuit pipeline can reuse
//! them to hand input bits to input nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::circuit::{Assignment, Circuit};
use crate::crcw::{Step, SumCrcwMachine};
use crate::crcw_to_mrc::simulate_crcw;
use crate::error::{Error, Result};
use crate::mrc::{pair, words_of, BudgetReport, Engine, Mode, Pair, Round, RunOptions, Value};
use crate::pbp::{barrington_compile, Pbp, PbpInstruction, Permutation};

pub const MAX_TABLE_WIDTH: usize = 8;

const SPACE_SHIFT: u32 = 56;

/// Key spaces used by the routing rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Raw = 0,
    Block = 1,
    Var = 2,
    PrefixBlock = 3,
    Root = 4,
    Group = 5,
}

pub fn key(space: Space, index: u64) -> u64 {
    (space as u64) << SPACE_SHIFT | index
}

fn space_of(key: u64) -> u64 {
    key >> SPACE_SHIFT
}

fn index_of(key: u64) -> u64 {
    key & ((1 << SPACE_SHIFT) - 1)
}

/// `⌈x^e⌉`, treating values within rounding error of an integer as that integer.
pub fn ceil_pow(x: u64, e: f64) -> u64 {
    let r = (x as f64).powf(e);
    let near = r.round();
    if (r - near).abs() < 1e-9 {
        near as u64
    } else {
        r.ceil() as u64
    }
}

/// Something that occupies one position `p` of the item sequence.
pub trait Item: Clone + Send + Sync + fmt::Debug {
    fn encode_item(&self, out: &mut Vec<u64>);
    /// The variable this item needs the bit of, if any.
    fn var(&self) -> Option<u64>;
}

/// A branching-program line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Line(pub PbpInstruction);

impl Item for Line {
    fn encode_item(&self, out: &mut Vec<u64>) {
        out.extend([self.0.var as u64, self.0.f.to_word(), self.0.g.to_word()]);
    }

    fn var(&self) -> Option<u64> {
        Some(self.0.var as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Msg<I> {
    Item { p: u64, item: I },
    Assign { i: u64, bit: bool },
    Accept { w: u64, perms: Vec<u64> },
    Marker { var: u64 },
    Seed { i: u64 },
    Count { i: u64, count: u64 },
    Psum { i: u64, local: u64 },
    Last { block: u64, total: u64 },
    Offset { block: u64, z: u64 },
    Prefix { i: u64, y: u64 },
    Boundary { y: u64 },
    Split { q: u64, sigma: i64 },
    RoutedOcc { q: u64, p: u64, var: u64 },
    RoutedAssign { q: u64, i: u64, bit: bool },
    Alpha { p: u64, var: u64, bit: bool },
    Missing { p: u64, var: u64 },
    Table { q: u64, images: Vec<u64> },
    Verdict(bool),
}

impl<I: Item> Value for Msg<I> {
    fn encode(&self, out: &mut Vec<u64>) {
        match self {
            Msg::Item { p, item } => {
                out.extend([0, *p]);
                item.encode_item(out);
            }
            Msg::Assign { i, bit } => out.extend([1, *i, *bit as u64]),
            Msg::Accept { w, perms } => {
                out.extend([2, *w]);
                out.extend_from_slice(perms);
            }
            Msg::Marker { var } => out.extend([3, *var]),
            Msg::Seed { i } => out.extend([4, *i]),
            Msg::Count { i, count } => out.extend([5, *i, *count]),
            Msg::Psum { i, local } => out.extend([6, *i, *local]),
            Msg::Last { block, total } => out.extend([7, *block, *total]),
            Msg::Offset { block, z } => out.extend([8, *block, *z]),
            Msg::Prefix { i, y } => out.extend([9, *i, *y]),
            Msg::Boundary { y } => out.extend([10, *y]),
            Msg::Split { q, sigma } => out.extend([11, *q, *sigma as u64]),
            Msg::RoutedOcc { q, p, var } => out.extend([12, *q, *p, *var]),
            Msg::RoutedAssign { q, i, bit } => out.extend([13, *q, *i, *bit as u64]),
            Msg::Alpha { p, var, bit } => out.extend([14, *p, *var, *bit as u64]),
            Msg::Missing { p, var } => out.extend([15, *p, *var]),
            Msg::Table { q, images } => {
                out.extend([16, *q]);
                out.extend_from_slice(images);
            }
            Msg::Verdict(b) => out.extend([17, *b as u64]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockParams {
    pub epsilon: f64,
    /// Item count before padding.
    pub t_orig: u64,
    /// `d·ℓ`, at least `t_orig`.
    pub t: u64,
    pub d: u64,
    pub ell: u64,
    /// Number of variables `n`.
    pub vars: u64,
    /// Words of the encoded program (items and accepting set).
    pub n_o: u64,
    /// Words of the encoded assignment.
    pub n_i: u64,
}

impl BlockParams {
    /// `d = ⌈t^(1-ε)⌉` and `ℓ = ⌈t^ε⌉` for `t` items, both at least 1.
    pub fn new(t_orig: u64, vars: u64, epsilon: f64) -> BlockParams {
        let t1 = t_orig.max(1);
        let d = ceil_pow(t1, 1.0 - epsilon).max(1);
        let ell = ceil_pow(t1, epsilon).max(1);
        BlockParams {
            epsilon,
            t_orig,
            t: d * ell,
            d,
            ell,
            vars,
            n_o: 0,
            n_i: 0,
        }
    }

    pub fn n_words(&self) -> u64 {
        self.n_o + self.n_i
    }

    /// Number of block keys holding items or assignment bits.
    pub fn blocks(&self) -> u64 {
        self.t.div_ceil(self.d).max(self.vars.div_ceil(self.d)).max(1)
    }
}

/// `σ_0 = -1`, the `ℓ - 1` computed split values, and `σ_ℓ = n - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitValues(pub Vec<i64>);

impl SplitValues {
    /// Group `q` holding variable `i`, that is `σ_q < i ≤ σ_{q+1}`.
    pub fn group_of(&self, i: u64) -> u64 {
        (self.0[1..self.0.len() - 1].partition_point(|&s| s < i as i64)) as u64
    }
}

fn passthrough<I: Item>(key: u64, vs: impl IntoIterator<Item = Msg<I>>) -> Vec<Pair<Msg<I>>> {
    vs.into_iter().map(|v| pair(key, v)).collect()
}

fn load_round<I: Item + 'static>(bp: BlockParams) -> Round<'static, Msg<I>> {
    Round::new(
        "load",
        move |p: Pair<Msg<I>>| {
            let k = match &p.value {
                Msg::Item { p, .. } => key(Space::Block, p / bp.d),
                Msg::Assign { i, .. } => key(Space::Block, i / bp.d),
                Msg::Accept { .. } => key(Space::Root, 0),
                _ => p.key,
            };
            vec![pair(k, p.value)]
        },
        |k, vs: Vec<Msg<I>>| {
            let vars: BTreeSet<u64> = vs
                .iter()
                .filter_map(|v| match v {
                    Msg::Item { item, .. } => item.var(),
                    _ => None,
                })
                .collect();
            let mut out = passthrough(k, vs);
            if space_of(k) == Space::Block as u64 {
                out.extend(vars.into_iter().map(|var| pair(k, Msg::Marker { var })));
            }
            out
        },
    )
}

fn count_round<I: Item + 'static>() -> Round<'static, Msg<I>> {
    Round::new(
        "count",
        |p: Pair<Msg<I>>| match p.value {
            Msg::Marker { var } => vec![pair(key(Space::Var, var), p.value)],
            Msg::Assign { i, .. } => vec![pair(key(Space::Var, i), Msg::Seed { i }), p],
            _ => vec![p],
        },
        |k, vs: Vec<Msg<I>>| {
            if space_of(k) != Space::Var as u64 {
                return passthrough(k, vs);
            }
            let count = vs.iter().filter(|v| matches!(v, Msg::Marker { .. })).count() as u64;
            vec![pair(k, Msg::Count { i: index_of(k), count })]
        },
    )
}

/// Per variable, the number of distinct blocks mentioning it (stage `count`, 2 rounds).
pub fn count_occurrences<I: Item + 'static>(
    engine: &mut Engine,
    data: Vec<Pair<Msg<I>>>,
    bp: &BlockParams,
) -> Result<Vec<Pair<Msg<I>>>> {
    engine.set_stage("count");
    engine.run(data, &[load_round(*bp), count_round()])
}

/// Prefix sums `y_i = Σ_{j ≤ i} count_j` over `Count` pairs (stage `prefix`, 3 rounds).
pub fn mr_prefix_sums<I: Item + 'static>(
    engine: &mut Engine,
    data: Vec<Pair<Msg<I>>>,
    bp: &BlockParams,
) -> Result<Vec<Pair<Msg<I>>>> {
    let d = bp.d;
    engine.set_stage("prefix");
    let local = Round::new(
        "prefix local",
        move |p: Pair<Msg<I>>| match p.value {
            Msg::Count { i, .. } => vec![pair(key(Space::PrefixBlock, i / d), p.value)],
            _ => vec![p],
        },
        |k, vs: Vec<Msg<I>>| {
            if space_of(k) != Space::PrefixBlock as u64 {
                return passthrough(k, vs);
            }
            let mut counts: Vec<(u64, u64)> = vs
                .into_iter()
                .filter_map(|v| match v {
                    Msg::Count { i, count } => Some((i, count)),
                    _ => None,
                })
                .collect();
            counts.sort_unstable();
            let mut acc = 0;
            let mut out = Vec::with_capacity(counts.len() + 1);
            for (i, c) in counts {
                acc += c;
                out.push(pair(k, Msg::Psum { i, local: acc }));
            }
            out.push(pair(
                k,
                Msg::Last {
                    block: index_of(k),
                    total: acc,
                },
            ));
            out
        },
    );
    let offsets = Round::new(
        "prefix offsets",
        |p: Pair<Msg<I>>| match p.value {
            Msg::Last { .. } => vec![pair(key(Space::Root, 0), p.value)],
            _ => vec![p],
        },
        |k, vs: Vec<Msg<I>>| {
            let (lasts, rest): (Vec<_>, Vec<_>) = vs.into_iter().partition(|v| matches!(v, Msg::Last { .. }));
            let mut totals: Vec<(u64, u64)> = lasts
                .into_iter()
                .map(|v| match v {
                    Msg::Last { block, total } => (block, total),
                    _ => unreachable!(),
                })
                .collect();
            totals.sort_unstable();
            let mut out = passthrough(k, rest);
            let mut z = 0;
            for (block, total) in totals {
                out.push(pair(k, Msg::Offset { block, z }));
                z += total;
            }
            out
        },
    );
    let combine = Round::new(
        "prefix combine",
        |p: Pair<Msg<I>>| match p.value {
            Msg::Offset { block, .. } => vec![pair(key(Space::PrefixBlock, block), p.value)],
            _ => vec![p],
        },
        |k, vs: Vec<Msg<I>>| {
            if space_of(k) != Space::PrefixBlock as u64 {
                return passthrough(k, vs);
            }
            let z = vs
                .iter()
                .find_map(|v| match v {
                    Msg::Offset { z, .. } => Some(*z),
                    _ => None,
                })
                .unwrap_or(0);
            vs.into_iter()
                .filter_map(|v| match v {
                    Msg::Psum { i, local } => Some(pair(k, Msg::Prefix { i, y: local + z })),
                    Msg::Offset { .. } => None,
                    other => Some(pair(k, other)),
                })
                .collect()
        },
    );
    engine.run(data, &[local, offsets, combine])
}

/// Split values `σ_q = max{j : y_j ≤ q·d}` for `q = 1..ℓ-1`, each found by the prefix
/// block containing it from `y_j ≤ q·d < y_{j+1}` (stage `split`, 1 round).
///
/// The round copies the first prefix sum of every block into its left neighbour so each
/// block sees `y_{j+1}` for its last `j`.
pub fn compute_split_values<I: Item + 'static>(
    engine: &mut Engine,
    data: Vec<Pair<Msg<I>>>,
    bp: &BlockParams,
) -> Result<Vec<Pair<Msg<I>>>> {
    let (d, ell) = (bp.d as i64, bp.ell as i64);
    engine.set_stage("split");
    let round = Round::new(
        "split",
        move |p: Pair<Msg<I>>| match p.value {
            Msg::Prefix { i, y } if i > 0 && i % d as u64 == 0 => vec![
                pair(key(Space::PrefixBlock, i / d as u64 - 1), Msg::Boundary { y }),
                p,
            ],
            _ => vec![p],
        },
        move |k, vs: Vec<Msg<I>>| {
            if space_of(k) != Space::PrefixBlock as u64 {
                return passthrough(k, vs);
            }
            let mut ys: Vec<(i64, i64)> = Vec::new();
            let mut boundary = None;
            for v in &vs {
                match v {
                    Msg::Prefix { i, y } => ys.push((*i as i64, *y as i64)),
                    Msg::Boundary { y } => boundary = Some(*y as i64),
                    _ => {}
                }
            }
            ys.sort_unstable();
            if index_of(k) == 0 {
                ys.insert(0, (-1, 0));
            }
            let mut out: Vec<Pair<Msg<I>>> = vs
                .into_iter()
                .filter(|v| !matches!(v, Msg::Prefix { .. } | Msg::Boundary { .. }))
                .map(|v| pair(k, v))
                .collect();
            for (idx, &(j, yj)) in ys.iter().enumerate() {
                let next = ys.get(idx + 1).map(|e| e.1).or(boundary);
                let lo = ((yj + d - 1) / d).max(1);
                let hi = match next {
                    Some(yn) => ((yn + d - 1) / d - 1).min(ell - 1),
                    None => ell - 1,
                };
                for q in lo..=hi {
                    out.push(pair(k, Msg::Split { q: q as u64, sigma: j }));
                }
            }
            out
        },
    );
    engine.round(data, &round)
}

/// Hands each block the bits of the variables it mentions as `Alpha` triples carrying the
/// block's first line mentioning the variable (stage `distribute`, 2 rounds).
pub fn distribute_assignments<I: Item + 'static>(
    engine: &mut Engine,
    data: Vec<Pair<Msg<I>>>,
    bp: &BlockParams,
) -> Result<Vec<Pair<Msg<I>>>> {
    let blocks = bp.blocks();
    engine.set_stage("distribute");
    let tag = Round::new(
        "distribute tag",
        move |p: Pair<Msg<I>>| match p.value {
            Msg::Split { .. } => (0..blocks).map(|b| pair(key(Space::Block, b), p.value.clone())).collect(),
            _ => vec![p],
        },
        |k, vs: Vec<Msg<I>>| {
            if space_of(k) != Space::Block as u64 {
                return passthrough(k, vs);
            }
            let mut sigma: Vec<(u64, i64)> = Vec::new();
            let mut first: BTreeMap<u64, u64> = BTreeMap::new();
            let mut out = Vec::new();
            let mut assigns = Vec::new();
            for v in vs {
                match v {
                    Msg::Split { q, sigma: s } => sigma.push((q, s)),
                    Msg::Assign { i, bit } => assigns.push((i, bit)),
                    Msg::Item { p, ref item } => {
                        if let Some(var) = item.var() {
                            let e = first.entry(var).or_insert(p);
                            *e = (*e).min(p);
                        }
                        out.push(pair(k, v));
                    }
                    other => out.push(pair(k, other)),
                }
            }
            sigma.sort_unstable();
            let group = |i: u64| sigma.partition_point(|&(_, s)| s < i as i64) as u64;
            out.extend(
                first
                    .into_iter()
                    .map(|(var, p)| pair(k, Msg::RoutedOcc { q: group(var), p, var })),
            );
            out.extend(
                assigns
                    .into_iter()
                    .map(|(i, bit)| pair(k, Msg::RoutedAssign { q: group(i), i, bit })),
            );
            out
        },
    );
    let join = Round::new(
        "distribute join",
        |p: Pair<Msg<I>>| match p.value {
            Msg::RoutedOcc { q, .. } | Msg::RoutedAssign { q, .. } => vec![pair(key(Space::Group, q), p.value)],
            _ => vec![p],
        },
        |k, vs: Vec<Msg<I>>| {
            if space_of(k) != Space::Group as u64 {
                return passthrough(k, vs);
            }
            let bits: HashMap<u64, bool> = vs
                .iter()
                .filter_map(|v| match v {
                    Msg::RoutedAssign { i, bit, .. } => Some((*i, *bit)),
                    _ => None,
                })
                .collect();
            vs.into_iter()
                .filter_map(|v| match v {
                    Msg::RoutedOcc { p, var, .. } => Some(pair(
                        k,
                        match bits.get(&var) {
                            Some(&bit) => Msg::Alpha { p, var, bit },
                            None => Msg::Missing { p, var },
                        },
                    )),
                    Msg::RoutedAssign { .. } => None,
                    other => Some(pair(k, other)),
                })
                .collect()
        },
    );
    engine.run(data, &[tag, join])
}

/// Action table of a block: entry `rank(π)` is `B ∘ π`, computed by running the block's
/// lines starting from `π`.
pub fn action_table(w: usize, lines: &[PbpInstruction], bits: &HashMap<u64, bool>) -> Option<Vec<u64>> {
    let chosen: Vec<Permutation> = lines
        .iter()
        .map(|l| bits.get(&(l.var as u64)).map(|&b| l.select(b)))
        .collect::<Option<_>>()?;
    Some(
        Permutation::all(w)
            .into_iter()
            .map(|start| chosen.iter().fold(start, |acc, g| g.after(&acc)).to_word())
            .collect(),
    )
}

/// Tables per block, then composition and acceptance at the root (stage `evaluate`, 2 rounds).
pub fn evaluate_blocks(
    engine: &mut Engine,
    data: Vec<Pair<Msg<Line>>>,
    bp: &BlockParams,
    w: usize,
) -> Result<Vec<Pair<Msg<Line>>>> {
    let d = bp.d;
    let ell = bp.ell;
    engine.set_stage("evaluate");
    let tables = Round::new(
        "evaluate tables",
        move |p: Pair<Msg<Line>>| match p.value {
            Msg::Alpha { p: line, .. } => vec![pair(key(Space::Block, line / d), p.value)],
            Msg::Missing { .. } => vec![pair(key(Space::Root, 0), p.value)],
            _ => vec![p],
        },
        move |k, vs: Vec<Msg<Line>>| {
            if space_of(k) != Space::Block as u64 {
                return passthrough(k, vs);
            }
            let mut lines: Vec<(u64, PbpInstruction)> = Vec::new();
            let mut bits = HashMap::new();
            let mut out = Vec::new();
            for v in vs {
                match v {
                    Msg::Item { p, item } => lines.push((p, item.0)),
                    Msg::Alpha { var, bit, .. } => {
                        bits.insert(var, bit);
                    }
                    other => out.push(pair(k, other)),
                }
            }
            if lines.is_empty() {
                return out;
            }
            lines.sort_unstable_by_key(|e| e.0);
            let instrs: Vec<PbpInstruction> = lines.iter().map(|e| e.1).collect();
            match action_table(w, &instrs, &bits) {
                Some(images) => out.push(pair(k, Msg::Table { q: index_of(k), images })),
                None => {
                    let (p, l) = lines.iter().find(|(_, l)| !bits.contains_key(&(l.var as u64))).unwrap();
                    out.push(pair(k, Msg::Missing { p: *p, var: l.var as u64 }));
                }
            }
            out
        },
    );
    let compose = Round::new(
        "evaluate compose",
        |p: Pair<Msg<Line>>| match p.value {
            Msg::Table { .. } | Msg::Missing { .. } => vec![pair(key(Space::Root, 0), p.value)],
            _ => vec![p],
        },
        move |k, vs: Vec<Msg<Line>>| {
            if k != key(Space::Root, 0) {
                return passthrough(k, vs);
            }
            let mut tables: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            let mut accept = None;
            let mut out = Vec::new();
            for v in vs {
                match v {
                    Msg::Table { q, images } => {
                        tables.insert(q, images);
                    }
                    Msg::Accept { perms, .. } => accept = Some(perms),
                    other => out.push(pair(k, other)),
                }
            }
            let complete = tables.len() as u64 == ell && tables.keys().copied().eq(0..ell);
            if let (Some(accept), true) = (accept, complete) {
                let pi = tables
                    .values()
                    .fold(Permutation::identity(w), |pi, t| Permutation::from_word(w, t[pi.rank()]));
                out.push(pair(k, Msg::Verdict(accept.contains(&pi.to_word()))));
            }
            out
        },
    );
    engine.run(data, &[tables, compose])
}

/// Initial pairs: `⟨p; line⟩`, `⟨i; (x_i, v_i)⟩` and the accepting set, with lines padded by
/// `(x_0, id, id)` to `t = d·ℓ`.
pub fn encode(pbp: &Pbp, a: &Assignment, epsilon: f64) -> Result<(Vec<Pair<Msg<Line>>>, BlockParams)> {
    if pbp.w > MAX_TABLE_WIDTH {
        return Err(Error::Parameter(format!(
            "width {} exceeds the table limit {MAX_TABLE_WIDTH}",
            pbp.w
        )));
    }
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::Parameter(format!("epsilon must lie in (0, 1/2], got {epsilon}")));
    }
    if a.len() != pbp.n {
        return Err(Error::AssignmentLength {
            expected: pbp.n,
            found: a.len(),
        });
    }
    let mut bp = BlockParams::new(pbp.len() as u64, pbp.n as u64, epsilon);
    let mut program: Vec<Pair<Msg<Line>>> = pbp
        .lines
        .iter()
        .copied()
        .chain(std::iter::repeat(PbpInstruction::identity(pbp.w)))
        .take(bp.t as usize)
        .enumerate()
        .map(|(p, l)| pair(p as u64, Msg::Item { p: p as u64, item: Line(l) }))
        .collect();
    program.push(pair(
        0,
        Msg::Accept {
            w: pbp.w as u64,
            perms: pbp.accept.iter().map(Permutation::to_word).collect(),
        },
    ));
    let assignment: Vec<Pair<Msg<Line>>> = (0..pbp.n)
        .map(|i| pair(i as u64, Msg::Assign { i: i as u64, bit: a.get(i) }))
        .collect();
    bp.n_o = words_of(&program);
    bp.n_i = words_of(&assignment);
    program.extend(assignment);
    Ok((program, bp))
}

pub fn occurrence_counts<I: Item>(data: &[Pair<Msg<I>>], vars: u64) -> Vec<u64> {
    let mut out = vec![0; vars as usize];
    for p in data {
        if let Msg::Count { i, count } = p.value {
            out[i as usize] = count;
        }
    }
    out
}

pub fn prefix_values<I: Item>(data: &[Pair<Msg<I>>], vars: u64) -> Vec<u64> {
    let mut out = vec![0; vars as usize];
    for p in data {
        if let Msg::Prefix { i, y } = p.value {
            out[i as usize] = y;
        }
    }
    out
}

pub fn split_values<I: Item>(data: &[Pair<Msg<I>>], bp: &BlockParams) -> Result<SplitValues> {
    let mut sigma = vec![None; bp.ell as usize + 1];
    sigma[0] = Some(-1);
    sigma[bp.ell as usize] = Some(bp.vars as i64 - 1);
    for p in data {
        if let Msg::Split { q, sigma: s } = p.value {
            if sigma[q as usize].replace(s).is_some_and(|old| old != s) {
                return Err(Error::Pipeline(format!("conflicting split values for group {q}")));
            }
        }
    }
    sigma
        .into_iter()
        .enumerate()
        .map(|(q, s)| s.ok_or_else(|| Error::Pipeline(format!("split value {q} missing"))))
        .collect::<Result<_>>()
        .map(SplitValues)
}

/// `α_q` per block: sorted `(p, var, bit)` triples.
pub fn partial_assignments<I: Item>(data: &[Pair<Msg<I>>], bp: &BlockParams) -> BTreeMap<u64, Vec<(u64, u64, bool)>> {
    let mut out: BTreeMap<u64, Vec<(u64, u64, bool)>> = BTreeMap::new();
    for p in data {
        if let Msg::Alpha { p: line, var, bit } = p.value {
            out.entry(line / bp.d).or_default().push((line, var, bit));
        }
    }
    for v in out.values_mut() {
        v.sort_unstable();
    }
    out
}

/// Fails on the first `Missing` record, which means a block used a variable without a bit.
pub fn check_missing<I: Item>(data: &[Pair<Msg<I>>]) -> Result<()> {
    match data.iter().find_map(|p| match p.value {
        Msg::Missing { p, var } => Some((p, var)),
        _ => None,
    }) {
        Some((p, var)) => Err(Error::Pipeline(format!("no assignment for x_{var} used at line {p}"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Nc1Run {
    pub accept: bool,
    pub params: BlockParams,
    pub width: usize,
    pub report: BudgetReport,
}

impl Nc1Run {
    pub fn rounds(&self) -> usize {
        self.report.round_count()
    }
}

/// Runs the routing and evaluation stages for `pbp` under `a`.
pub fn run_pbp_pipeline(pbp: &Pbp, a: &Assignment, opts: &RunOptions) -> Result<Nc1Run> {
    let (data, bp) = encode(pbp, a, opts.config.epsilon)?;
    let mut engine = opts.engine(bp.n_words());
    let data = count_occurrences(&mut engine, data, &bp)?;
    let data = mr_prefix_sums(&mut engine, data, &bp)?;
    let data = compute_split_values(&mut engine, data, &bp)?;
    let data = distribute_assignments(&mut engine, data, &bp)?;
    check_missing(&data)?;
    let data = evaluate_blocks(&mut engine, data, &bp, pbp.w)?;
    check_missing(&data)?;
    let accept = data
        .iter()
        .find_map(|p| match p.value {
            Msg::Verdict(b) => Some(b),
            _ => None,
        })
        .ok_or_else(|| Error::Pipeline("no verdict produced".into()))?;
    Ok(Nc1Run {
        accept,
        params: bp,
        width: pbp.w,
        report: engine.into_report(),
    })
}

/// Compiles `c` to a width-5 program and evaluates it in a fixed number of rounds.
pub fn run_nc1_pipeline(c: &Circuit, a: &Assignment, opts: &RunOptions) -> Result<Nc1Run> {
    if a.len() != c.n() {
        return Err(Error::AssignmentLength {
            expected: c.n(),
            found: a.len(),
        });
    }
    run_pbp_pipeline(&barrington_compile(c), a, opts)
}

/// Same counts as [`count_occurrences`], computed by a two-step Sum-CRCW machine run
/// through the simulator: mark `(block, var)` cells, then add one per nonzero cell.
pub fn count_occurrences_crcw(occurrences: &[(u64, u64)], bp: &BlockParams, opts: &RunOptions) -> Result<Vec<u64>> {
    let n = bp.vars as usize;
    let blocks = bp.blocks() as usize;
    let cells = blocks * n;
    let occ: Vec<(usize, usize)> = occurrences
        .iter()
        .map(|&(p, var)| ((p / bp.d) as usize * n + var as usize, 0))
        .collect();
    let occ2 = occ.clone();
    let machine = SumCrcwMachine::new(occ.len().max(cells), cells + n)
        .step(Step::new(|_| vec![], move |pid, _| {
            occ2.get(pid).map(|&(c, _)| vec![(c, 1)]).unwrap_or_default()
        }))
        .step(Step::new(
            move |pid| if pid < cells { vec![pid] } else { vec![] },
            move |pid, v| match v {
                [x] if *x > 0 => vec![(cells + pid % n, 1)],
                _ => vec![],
            },
        ));
    let (sim, _) = simulate_crcw(&machine, &[], opts.config, Mode::Advisory, None)?;
    Ok(sim.registers[cells..].iter().map(|&x| x as u64).collect())
}
