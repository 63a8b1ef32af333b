use std::collections::{BTreeMap, HashMap};

use super::{code_kind, keep, space_of, CMsg, NcParams, Store, BLOCK_SPACE};
use crate::circuit::Assignment;
use crate::error::{Error, Result};
use crate::mrc::{pair, Engine, Pair, Resting, Round};
use crate::pbp_mrc::{
    check_missing, compute_split_values, count_occurrences, distribute_assignments, key, mr_prefix_sums, BlockParams,
    Item, Msg, Space,
};

/// An input node as an item of the rank sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputItem {
    pub var: u64,
}

impl Item for InputItem {
    fn encode_item(&self, out: &mut Vec<u64>) {
        out.push(self.var);
    }

    fn var(&self) -> Option<u64> {
        Some(self.var)
    }
}

fn is_block_key(k: u64) -> bool {
    space_of(k) == BLOCK_SPACE
}

/// Routes the assignment to the input nodes with the count / prefix / split / distribute
/// rounds used for branching programs, then hands every input's bit to its block, which
/// sends it along the input's up-circuit (stage `distribute`).
///
/// The prepared subcircuit records are parked while the routing rounds run.
pub fn distribute_circuit_input(
    engine: &mut Engine,
    data: Vec<Pair<CMsg>>,
    a: &Assignment,
    params: &NcParams,
    epsilon: f64,
) -> Result<Vec<Pair<CMsg>>> {
    if a.len() as u64 != params.n {
        return Err(Error::AssignmentLength {
            expected: params.n as usize,
            found: a.len(),
        });
    }
    let mut route: Vec<Pair<Msg<InputItem>>> = data
        .iter()
        .filter_map(|p| match &p.value {
            CMsg::Up(s) if s.root.is_input() => Some(pair(
                key(Space::Raw, s.root.rank),
                Msg::Item {
                    p: s.root.rank,
                    item: InputItem { var: s.root.var },
                },
            )),
            _ => None,
        })
        .collect();
    route.extend((0..params.n).map(|i| pair(key(Space::Raw, i), Msg::Assign { i, bit: a.get(i as usize) })));
    let bp = BlockParams::new(params.nodes, params.n, epsilon);
    let start = engine.rounds_run();
    engine.set_resting(Resting::of(&data));
    let routed = (|| {
        let r = count_occurrences(engine, route, &bp)?;
        let r = mr_prefix_sums(engine, r, &bp)?;
        let r = compute_split_values(engine, r, &bp)?;
        let r = distribute_assignments(engine, r, &bp)?;
        check_missing(&r)?;
        engine.set_stage("distribute");
        let d = bp.d;
        let annotate = Round::new(
            "distribute annotate",
            move |p: Pair<Msg<InputItem>>| match p.value {
                Msg::Alpha { p: at, .. } => vec![pair(key(Space::Block, at / d), p.value)],
                _ => vec![p],
            },
            |k, vs: Vec<Msg<InputItem>>| {
                if k >> 56 != Space::Block as u64 {
                    return vec![];
                }
                let bits: HashMap<u64, bool> = vs
                    .iter()
                    .filter_map(|v| match v {
                        Msg::Alpha { var, bit, .. } => Some((*var, *bit)),
                        _ => None,
                    })
                    .collect();
                vs.iter()
                    .filter_map(|v| match v {
                        Msg::Item { p, item } => Some(pair(
                            k,
                            match bits.get(&item.var) {
                                Some(&bit) => Msg::Alpha { p: *p, var: item.var, bit },
                                None => Msg::Missing { p: *p, var: item.var },
                            },
                        )),
                        _ => None,
                    })
                    .collect()
            },
        );
        let r = engine.round(r, &annotate)?;
        check_missing(&r)?;
        Ok::<_, Error>(r)
    })();
    engine.set_resting(Resting::default());
    engine.relabel_since(start, "distribute");
    let routed = routed?;

    let mut data = data;
    data.extend(routed.into_iter().filter_map(|p| match p.value {
        Msg::Alpha { p: rank, bit, .. } => Some(pair(rank, CMsg::InputBit { rank, bit })),
        _ => None,
    }));
    let prm = *params;
    let deliver = Round::new(
        "distribute deliver",
        move |p: Pair<CMsg>| match p.value {
            CMsg::InputBit { rank, .. } => vec![pair(prm.block_of(rank), p.value)],
            _ => vec![p],
        },
        |k, vs: Vec<CMsg>| {
            if !is_block_key(k) {
                return keep(k, vs);
            }
            let bits: BTreeMap<u64, bool> = vs
                .iter()
                .filter_map(|v| match v {
                    CMsg::InputBit { rank, bit } => Some((*rank, *bit)),
                    _ => None,
                })
                .collect();
            let mut out = Vec::new();
            for v in vs {
                match v {
                    CMsg::Up(s) if s.root.is_input() => {
                        let x = s.root.rank;
                        match bits.get(&x) {
                            Some(&value) => {
                                out.push(pair(k, CMsg::Known { rank: x, value }));
                                out.extend(
                                    s.targets
                                        .iter()
                                        .map(|&t| pair(k, CMsg::Val { target: t, source: x, value })),
                                );
                            }
                            None => out.push(pair(k, CMsg::Missing { root: x, leaf: x })),
                        }
                    }
                    CMsg::InputBit { .. } => {}
                    other => out.push(pair(k, other)),
                }
            }
            out
        },
    );
    let data = engine.round(data, &deliver)?;
    super::check_missing(&data, "distribute")?;
    Ok(data)
}

/// Value of a down-circuit's root from the values of its leaves, or the first leaf
/// whose value has not arrived.
pub fn eval_store(store: &Store, known: &BTreeMap<u64, bool>) -> std::result::Result<bool, u64> {
    let mut ins: BTreeMap<u64, Vec<(u64, u64)>> = BTreeMap::new();
    let mut nodes = BTreeMap::from([(store.root.rank, store.root)]);
    for e in &store.edges {
        ins.entry(e.dst.rank).or_default().push((e.slot, e.src.rank));
        nodes.insert(e.src.rank, e.src);
        nodes.insert(e.dst.rank, e.dst);
    }
    let mut order: Vec<_> = nodes.values().copied().collect();
    order.sort_by_key(|x| (std::cmp::Reverse(x.level), x.rank));
    let mut val: BTreeMap<u64, bool> = BTreeMap::new();
    for x in order {
        let v = match ins.get_mut(&x.rank) {
            Some(ops) => {
                ops.sort_unstable();
                let args: Vec<bool> = ops.iter().map(|(_, u)| val.get(u).copied().ok_or(*u)).collect::<std::result::Result<_, _>>()?;
                let kind = code_kind(x.code, x.var);
                if args.len() != kind.arity() {
                    return Err(x.rank);
                }
                kind.apply(&args)
            }
            None => *known.get(&x.rank).ok_or(x.rank)?,
        };
        val.insert(x.rank, v);
    }
    val.get(&store.root.rank).copied().ok_or(store.root.rank)
}

/// `⌈depth / s⌉` rounds; phase `k` evaluates the down-circuits rooted at level
/// `(phases - k)·s` and sends each root's value along its up-circuit (stage `evaluate`).
pub fn evaluate_phases(engine: &mut Engine, data: Vec<Pair<CMsg>>, params: &NcParams) -> Result<(bool, Vec<Pair<CMsg>>)> {
    let prm = *params;
    engine.set_stage("evaluate");
    let mut data = data;
    for k in 1..=prm.phases {
        let level = (prm.phases - k) * prm.s;
        let round = Round::new(
            format!("evaluate phase {k}"),
            move |p: Pair<CMsg>| match p.value {
                CMsg::Val { target, source, value } => {
                    vec![pair(prm.block_of(target), CMsg::Known { rank: source, value })]
                }
                _ => vec![p],
            },
            move |key, vs: Vec<CMsg>| {
                if !is_block_key(key) {
                    return keep(key, vs);
                }
                let mut known: BTreeMap<u64, bool> = BTreeMap::new();
                let mut downs = Vec::new();
                let mut ups: BTreeMap<u64, Store> = BTreeMap::new();
                let mut out = Vec::new();
                for v in vs {
                    match v {
                        CMsg::Known { rank, value } => {
                            known.insert(rank, value);
                        }
                        CMsg::Down(s) if s.root.level == level => downs.push(s),
                        CMsg::Up(s) if s.root.level == level => {
                            ups.insert(s.root.rank, s);
                        }
                        other => out.push(pair(key, other)),
                    }
                }
                for s in downs {
                    let w = s.root;
                    match eval_store(&s, &known) {
                        Ok(value) => {
                            known.insert(w.rank, value);
                            if let (false, Some(up)) = (w.is_input(), ups.get(&w.rank)) {
                                out.extend(
                                    up.targets
                                        .iter()
                                        .map(|&t| pair(key, CMsg::Val { target: t, source: w.rank, value })),
                                );
                            }
                            if w.level == 0 {
                                out.push(pair(key, CMsg::Verdict(value)));
                            }
                        }
                        Err(leaf) => out.push(pair(key, CMsg::Missing { root: w.rank, leaf })),
                    }
                }
                out.extend(known.into_iter().map(|(rank, value)| pair(key, CMsg::Known { rank, value })));
                out
            },
        );
        data = engine.round(data, &round)?;
        super::check_missing(&data, "evaluate")?;
    }
    let verdicts: Vec<bool> = data
        .iter()
        .filter_map(|p| match p.value {
            CMsg::Verdict(b) => Some(b),
            _ => None,
        })
        .collect();
    match verdicts[..] {
        [b] => Ok((b, data)),
        _ => Err(Error::Pipeline(format!("expected one verdict, found {}", verdicts.len()))),
    }
}
