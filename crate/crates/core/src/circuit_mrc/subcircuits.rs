use std::collections::{BTreeMap, BTreeSet};

use super::{index_of, keep, space_of, CMsg, EdgeRec, NcParams, NodeRef, Store, BLOCK_SPACE, ID};
use crate::error::{Error, Result};
use crate::mrc::{pair, Engine, Pair, Round};

/// An edge jumps when no band `[i·s, (i+1)·s]` holds both endpoints. Special edges are
/// exempt by construction.
pub fn is_jumping(e: &EdgeRec, s: u64) -> bool {
    !e.special && e.src.level.div_ceil(s).saturating_sub(1) > e.dst.level / s
}

/// Replaces a jumping edge by a path through one dummy on the producer's band floor, or by
/// two dummies joined by a special edge when the jump spans more than two bands. Dummy ranks
/// start at `nodes` and are derived from the consumer rank and slot, so they are unique.
pub fn augment_edge(e: EdgeRec, s: u64, nodes: u64) -> (Vec<EdgeRec>, Vec<NodeRef>) {
    if !is_jumping(&e, s) {
        return (vec![e], vec![]);
    }
    let ia = e.src.level.div_ceil(s) - 1;
    let ib = e.dst.level / s;
    let base = nodes + 4 * e.dst.rank + 2 * e.slot;
    let dum = |rank: u64, band: u64| NodeRef {
        rank,
        level: band * s,
        code: ID,
        var: 0,
    };
    let link = |src: NodeRef, dst: NodeRef, slot: u64, special: bool| EdgeRec { src, dst, slot, special };
    if ia == ib + 1 {
        let d = dum(base, ia);
        (vec![link(e.src, d, 0, false), link(d, e.dst, e.slot, false)], vec![d])
    } else {
        let upper = dum(base, ia);
        let lower = dum(base + 1, ib + 1);
        (
            vec![
                link(e.src, upper, 0, false),
                link(upper, lower, 0, true),
                link(lower, e.dst, e.slot, false),
            ],
            vec![upper, lower],
        )
    }
}

/// One round: every edge is subdivided where needed and every ranked node becomes a
/// `Vertex` record (stage `augment`).
pub fn augment_jumping_edges(engine: &mut Engine, data: Vec<Pair<CMsg>>, params: &NcParams) -> Result<Vec<Pair<CMsg>>> {
    let (s, nodes) = (params.s, params.nodes);
    engine.set_stage("augment");
    let round = Round::new(
        "augment",
        move |p: Pair<CMsg>| match p.value {
            CMsg::Edge(e) => {
                let (edges, dums) = augment_edge(e, s, nodes);
                edges
                    .into_iter()
                    .map(|e| pair(p.key, CMsg::Edge(e)))
                    .chain(dums.into_iter().map(|d| pair(p.key, CMsg::Vertex(d))))
                    .collect()
            }
            CMsg::Ranked { node, .. } => vec![pair(p.key, CMsg::Vertex(node))],
            _ => vec![p],
        },
        keep,
    );
    engine.round(data, &round)
}

fn is_block_key(k: u64) -> bool {
    space_of(k) == BLOCK_SPACE
}

fn down_step(store: &mut Store, visited: &mut BTreeSet<u64>, ins: &[EdgeRec], next: &mut Vec<u64>) {
    for e in ins {
        store.edges.push(*e);
        let p = e.src;
        if visited.insert(p.rank) && !e.special && !p.is_input() && p.level < store.bound {
            next.push(p.rank);
        }
    }
}

fn up_step(store: &mut Store, visited: &mut BTreeSet<u64>, outs: &[EdgeRec], next: &mut Vec<u64>) {
    for e in outs {
        store.edges.push(*e);
        let c = e.dst;
        if !visited.insert(c.rank) {
            continue;
        }
        if e.special || c.level <= store.bound {
            store.targets.push(c.rank);
        } else {
            next.push(c.rank);
        }
    }
}

fn finish(mut store: Store, visited: BTreeSet<u64>, next: Vec<u64>) -> Store {
    store.edges.sort_unstable();
    store.edges.dedup();
    store.targets.sort_unstable();
    store.visited = visited.into_iter().collect();
    store.frontier = next;
    store.frontier.sort_unstable();
    store
}

/// Down-circuits of every boundary node and up-circuits of every boundary or input node,
/// grown one edge layer per iteration: one setup round, then `s` iterations of a request
/// round and a merge round (stage `construct`).
pub fn build_updown_circuits(engine: &mut Engine, data: Vec<Pair<CMsg>>, params: &NcParams) -> Result<Vec<Pair<CMsg>>> {
    let p = *params;
    engine.set_stage("construct");
    let setup = Round::new(
        "construct setup",
        move |x: Pair<CMsg>| match x.value {
            CMsg::Edge(e) => {
                let (a, b) = (p.block_of(e.src.rank), p.block_of(e.dst.rank));
                if a == b {
                    vec![pair(a, x.value)]
                } else {
                    vec![pair(a, x.value.clone()), pair(b, x.value)]
                }
            }
            CMsg::Vertex(v) => vec![pair(p.block_of(v.rank), x.value)],
            _ => vec![x],
        },
        move |k, vs: Vec<CMsg>| {
            if !is_block_key(k) {
                return keep(k, vs);
            }
            let mut info: BTreeMap<u64, (NodeRef, Vec<EdgeRec>, Vec<EdgeRec>)> = BTreeMap::new();
            let mut edges = Vec::new();
            let mut out = Vec::new();
            for v in vs {
                match v {
                    CMsg::Vertex(x) => {
                        info.insert(x.rank, (x, vec![], vec![]));
                    }
                    CMsg::Edge(e) => edges.push(e),
                    other => out.push(pair(k, other)),
                }
            }
            for e in edges {
                if let Some(i) = info.get_mut(&e.dst.rank) {
                    i.1.push(e);
                }
                if let Some(i) = info.get_mut(&e.src.rank) {
                    i.2.push(e);
                }
            }
            let mut requests = BTreeSet::new();
            for (node, ins, outs) in info.values_mut() {
                ins.sort_unstable();
                outs.sort_unstable();
                let node = *node;
                if p.is_boundary(node.level) {
                    let mut store = Store {
                        root: node,
                        bound: node.level + p.s,
                        edges: vec![],
                        frontier: vec![],
                        visited: vec![],
                        targets: vec![],
                    };
                    let mut visited = BTreeSet::from([node.rank]);
                    let mut next = Vec::new();
                    down_step(&mut store, &mut visited, ins, &mut next);
                    requests.extend(next.iter().copied());
                    out.push(pair(k, CMsg::Down(finish(store, visited, next))));
                }
                if p.is_boundary(node.level) || node.is_input() {
                    let mut store = Store {
                        root: node,
                        bound: p.target_level(node.level).unwrap_or(0),
                        edges: vec![],
                        frontier: vec![],
                        visited: vec![],
                        targets: vec![],
                    };
                    let mut visited = BTreeSet::from([node.rank]);
                    let mut next = Vec::new();
                    up_step(&mut store, &mut visited, outs, &mut next);
                    requests.extend(next.iter().copied());
                    out.push(pair(k, CMsg::Up(finish(store, visited, next))));
                }
            }
            let from = index_of(k);
            out.extend(requests.into_iter().map(|u| pair(k, CMsg::Req { u, from })));
            out.extend(info.into_values().map(|(node, ins, outs)| pair(k, CMsg::Info { node, ins, outs })));
            out
        },
    );
    let request = Round::new(
        "construct request",
        move |x: Pair<CMsg>| match x.value {
            CMsg::Req { u, .. } => vec![pair(p.block_of(u), x.value)],
            _ => vec![x],
        },
        |k, vs: Vec<CMsg>| {
            if !is_block_key(k) {
                return keep(k, vs);
            }
            let info: BTreeMap<u64, (Vec<EdgeRec>, Vec<EdgeRec>)> = vs
                .iter()
                .filter_map(|v| match v {
                    CMsg::Info { node, ins, outs } => Some((node.rank, (ins.clone(), outs.clone()))),
                    _ => None,
                })
                .collect();
            vs.into_iter()
                .map(|v| match v {
                    CMsg::Req { u, from } => match info.get(&u) {
                        Some((ins, outs)) => pair(
                            k,
                            CMsg::Nbr {
                                u,
                                from,
                                ins: ins.clone(),
                                outs: outs.clone(),
                            },
                        ),
                        None => pair(k, CMsg::Missing { root: from, leaf: u }),
                    },
                    other => pair(k, other),
                })
                .collect()
        },
    );
    let merge = |last: bool| {
        Round::new(
            "construct merge",
            move |x: Pair<CMsg>| match x.value {
                CMsg::Nbr { from, .. } => vec![pair(super::block_key(from), x.value)],
                _ => vec![x],
            },
            move |k, vs: Vec<CMsg>| {
                if !is_block_key(k) {
                    return keep(k, vs);
                }
                let mut nbrs: BTreeMap<u64, (Vec<EdgeRec>, Vec<EdgeRec>)> = BTreeMap::new();
                let mut rest = Vec::new();
                for v in vs {
                    match v {
                        CMsg::Nbr { u, ins, outs, .. } => {
                            nbrs.insert(u, (ins, outs));
                        }
                        other => rest.push(other),
                    }
                }
                let mut out = Vec::new();
                let mut requests = BTreeSet::new();
                for v in rest {
                    let (store, down) = match v {
                        CMsg::Down(s) => (s, true),
                        CMsg::Up(s) => (s, false),
                        CMsg::Info { .. } if last => continue,
                        other => {
                            out.push(pair(k, other));
                            continue;
                        }
                    };
                    let mut store = store;
                    let mut visited: BTreeSet<u64> = std::mem::take(&mut store.visited).into_iter().collect();
                    let mut next = Vec::new();
                    for u in std::mem::take(&mut store.frontier) {
                        let Some((ins, outs)) = nbrs.get(&u) else {
                            out.push(pair(k, CMsg::Missing { root: store.root.rank, leaf: u }));
                            continue;
                        };
                        if down {
                            down_step(&mut store, &mut visited, ins, &mut next);
                        } else {
                            up_step(&mut store, &mut visited, outs, &mut next);
                        }
                    }
                    if !last {
                        requests.extend(next.iter().copied());
                    }
                    let store = finish(store, visited, next);
                    out.push(pair(k, if down { CMsg::Down(store) } else { CMsg::Up(store) }));
                }
                let from = index_of(k);
                out.extend(requests.into_iter().map(|u| pair(k, CMsg::Req { u, from })));
                out
            },
        )
    };
    let mut data = engine.round(data, &setup)?;
    for i in 0..p.s {
        data = engine.round(data, &request)?;
        data = engine.round(data, &merge(i + 1 == p.s))?;
    }
    super::check_missing(&data, "construct")?;
    if let Some(s) = data.iter().find_map(|x| match &x.value {
        CMsg::Down(s) | CMsg::Up(s) if !s.frontier.is_empty() => Some(s),
        _ => None,
    }) {
        return Err(Error::Pipeline(format!(
            "subcircuit of node {} still growing after {} iterations",
            s.root.rank, p.s
        )));
    }
    Ok(data)
}
