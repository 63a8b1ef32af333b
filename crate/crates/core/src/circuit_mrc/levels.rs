use std::collections::BTreeSet;

use super::{index_of, keep, kind_code, node_key, space_of, CMsg, EdgeRec, NodeRef, NODE_SPACE};
use crate::circuit::{levels_direct, Circuit};
use crate::crcw::sort_machine;
use crate::crcw_to_mrc::{simulate_on, SimulationPlan};
use crate::error::{Error, Result};
use crate::mrc::{pair, Engine, Pair, Resting, Round};

/// One `⟨v; (kind, fan-in)⟩` pair per node, keyed by circuit index.
pub fn encode_circuit(c: &Circuit) -> Vec<Pair<CMsg>> {
    c.nodes()
        .iter()
        .enumerate()
        .map(|(v, node)| {
            let (code, var) = kind_code(node.kind);
            pair(
                node_key(v as u64),
                CMsg::Node {
                    v: v as u64,
                    code,
                    var,
                    fanin: node.fanin.iter().map(|&u| u as u64).collect(),
                },
            )
        })
        .collect()
}

/// Levels from the sequential oracle, in the shape the level stage produces.
pub fn oracle_levels(c: &Circuit) -> Vec<Pair<CMsg>> {
    let lv = levels_direct(c);
    encode_circuit(c)
        .into_iter()
        .map(|p| match p.value {
            CMsg::Node { v, code, var, fanin } => pair(
                p.key,
                CMsg::Leveled {
                    v,
                    code,
                    var,
                    fanin,
                    level: lv.get(v as usize) as u64,
                },
            ),
            other => pair(p.key, other),
        })
        .collect()
}

fn is_node_key(k: u64) -> bool {
    space_of(k) == NODE_SPACE
}

/// Longest distance to the output by max-relaxation: a node fixes its level once every
/// consumer has reported, then reports to its producers. One degree round plus
/// `depth + 1` relaxation rounds.
pub fn mr_compute_levels(engine: &mut Engine, data: Vec<Pair<CMsg>>) -> Result<Vec<Pair<CMsg>>> {
    engine.set_stage("levels");
    let degree = Round::new(
        "levels degree",
        |p: Pair<CMsg>| match &p.value {
            CMsg::Node { fanin, .. } => {
                let mut out: Vec<Pair<CMsg>> = fanin.iter().map(|&u| pair(node_key(u), CMsg::Consumer)).collect();
                out.push(p);
                out
            }
            _ => vec![p],
        },
        |k, vs: Vec<CMsg>| {
            if !is_node_key(k) {
                return keep(k, vs);
            }
            let outdeg = vs.iter().filter(|v| matches!(v, CMsg::Consumer)).count() as u64;
            vs.into_iter()
                .filter_map(|v| match v {
                    CMsg::Node { v, code, var, fanin } => Some(pair(
                        k,
                        CMsg::Leveling {
                            v,
                            code,
                            var,
                            fanin,
                            outdeg,
                            got: 0,
                            maxl: 0,
                            level: None,
                        },
                    )),
                    CMsg::Consumer => None,
                    other => Some(pair(k, other)),
                })
                .collect()
        },
    );
    let relax = Round::new(
        "levels relax",
        |p: Pair<CMsg>| match p.value {
            CMsg::Announce { to, .. } => vec![pair(node_key(to), p.value)],
            _ => vec![p],
        },
        |k, vs: Vec<CMsg>| {
            if !is_node_key(k) {
                return keep(k, vs);
            }
            let (heard, max_heard) = vs.iter().fold((0, None), |(n, m): (u64, Option<u64>), v| match v {
                CMsg::Announce { level, .. } => (n + 1, Some(m.map_or(*level, |m| m.max(*level)))),
                _ => (n, m),
            });
            let mut out = Vec::new();
            for v in vs {
                match v {
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
                        let got = got + heard;
                        let maxl = max_heard.map_or(maxl, |m| maxl.max(m));
                        let mut level = level;
                        if level.is_none() && got == outdeg {
                            let l = if outdeg == 0 { 0 } else { maxl + 1 };
                            level = Some(l);
                            out.extend(fanin.iter().map(|&u| pair(k, CMsg::Announce { to: u, level: l })));
                        }
                        out.push(pair(
                            k,
                            CMsg::Leveling {
                                v,
                                code,
                                var,
                                fanin,
                                outdeg,
                                got,
                                maxl,
                                level,
                            },
                        ));
                    }
                    CMsg::Announce { .. } => {}
                    other => out.push(pair(k, other)),
                }
            }
            out
        },
    );
    let nodes = data.len();
    let mut data = engine.round(data, &degree)?;
    for _ in 0..=nodes {
        let done = data.iter().all(|p| match &p.value {
            CMsg::Leveling { level, .. } => level.is_some(),
            CMsg::Announce { .. } => false,
            _ => true,
        });
        if done {
            break;
        }
        data = engine.round(data, &relax)?;
    }
    data.into_iter()
        .map(|p| match p.value {
            CMsg::Leveling {
                v,
                code,
                var,
                fanin,
                level: Some(level),
                ..
            } => Ok(pair(p.key, CMsg::Leveled { v, code, var, fanin, level })),
            CMsg::Leveling { v, .. } => Err(Error::Pipeline(format!("node {v} never received a level"))),
            other => Ok(pair(p.key, other)),
        })
        .collect()
}

/// `(level · 2^idbits | v) + 1`, which orders nodes by level, then index, and is never 0.
pub fn sorting_index(level: u64, v: u64, idbits: u32) -> u64 {
    (level << idbits | v) + 1
}

fn id_bits(nodes: u64) -> u32 {
    (u64::BITS - nodes.saturating_sub(1).leading_zeros()).max(1)
}

/// Ranks nodes by sorting index with the Sum-CRCW sort simulated on a height-2 plan, then
/// attaches ranks to nodes and to both ends of every edge (stage `sort`).
///
/// The simulation sees only the sorting indices; the node records are parked meanwhile.
pub fn mr_sort_by_level(engine: &mut Engine, data: Vec<Pair<CMsg>>) -> Result<Vec<Pair<CMsg>>> {
    engine.set_stage("sort");
    let keys: Vec<(u64, u64)> = data
        .iter()
        .filter_map(|p| match p.value {
            CMsg::Leveled { v, level, .. } => Some((v, level)),
            _ => None,
        })
        .collect();
    let n = keys.len() as u64;
    if keys.iter().map(|&(v, _)| v).collect::<BTreeSet<_>>() != (0..n).collect() {
        return Err(Error::Pipeline("node indices are not 0..|V|".into()));
    }
    let idbits = id_bits(n);
    let max_level = keys.iter().map(|&(_, l)| l).max().unwrap_or(0);
    let domain = sorting_index(max_level, (1 << idbits) - 1, idbits);
    let (machine, layout) = sort_machine(n as usize, domain as usize);
    let preload: Vec<(usize, i64)> = keys
        .iter()
        .map(|&(v, l)| (layout.x(v as usize), sorting_index(l, v, idbits) as i64))
        .collect();
    let plan = SimulationPlan::with_height(2, machine.processors, machine.registers)?;
    engine.set_resting(Resting::of(&data));
    let regs = simulate_on(engine, &machine, &preload, &plan);
    engine.set_resting(Resting::default());
    let regs = regs?;

    let mask = (1u64 << idbits) - 1;
    let mut data = data;
    for j in 0..n {
        let s = regs[layout.y(j as usize)];
        if s <= 0 {
            return Err(Error::Pipeline(format!("sort left output slot {j} empty")));
        }
        let v = (s as u64 - 1) & mask;
        data.push(pair(node_key(v), CMsg::Rank { j }));
    }

    let rank = Round::new("sort rank", |p| vec![p], |k, vs: Vec<CMsg>| {
        if !is_node_key(k) {
            return keep(k, vs);
        }
        let j = vs.iter().find_map(|v| match v {
            CMsg::Rank { j } => Some(*j),
            _ => None,
        });
        let mut out = Vec::new();
        for v in vs {
            match v {
                CMsg::Leveled { v, code, var, fanin, level } => {
                    let Some(j) = j else {
                        out.push(pair(k, CMsg::Missing { root: v, leaf: v }));
                        continue;
                    };
                    let node = NodeRef { rank: j, level, code, var };
                    out.extend(
                        fanin
                            .iter()
                            .enumerate()
                            .map(|(slot, &u)| pair(k, CMsg::EdgeReq { to: u, slot: slot as u64, dst: node })),
                    );
                    out.push(pair(k, CMsg::Ranked { v, node, fanin }));
                }
                CMsg::Rank { .. } => {}
                other => out.push(pair(k, other)),
            }
        }
        out
    });
    let edges = Round::new(
        "sort edges",
        |p: Pair<CMsg>| match p.value {
            CMsg::EdgeReq { to, .. } => vec![pair(node_key(to), p.value)],
            _ => vec![p],
        },
        |k, vs: Vec<CMsg>| {
            if !is_node_key(k) {
                return keep(k, vs);
            }
            let src = vs.iter().find_map(|v| match v {
                CMsg::Ranked { node, .. } => Some(*node),
                _ => None,
            });
            vs.into_iter()
                .map(|v| match (v, src) {
                    (CMsg::EdgeReq { slot, dst, .. }, Some(src)) => pair(
                        k,
                        CMsg::Edge(EdgeRec {
                            src,
                            dst,
                            slot,
                            special: false,
                        }),
                    ),
                    (CMsg::EdgeReq { dst, .. }, None) => pair(
                        k,
                        CMsg::Missing {
                            root: dst.rank,
                            leaf: index_of(k),
                        },
                    ),
                    (other, _) => pair(k, other),
                })
                .collect()
        },
    );
    let data = engine.run(data, &[rank, edges])?;
    super::check_missing(&data, "sort")?;
    Ok(data)
}
