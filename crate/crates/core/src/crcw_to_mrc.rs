//! Simulation of a Sum-CRCW machine by MapReduce rounds.
//!
//! Keys `0..M` hold register cells, `M..M+P` processors, and the rest are nodes of m-ary
//! request-combining trees (reads) and aggregation trees (writes), one pair of trees per cell.
//! With `K` the plan height, every PRAM step costs `2K` rounds:
//!
//! * `K - 1` rounds up the trees, carrying read requests and write addends together,
//! * one cell round that applies the previous step's addends and answers the reads,
//! * `K - 1` rounds back down the read trees,
//! * one processor round evaluating the step function.
//!
//! A final `K` rounds flush the last step's writes. Tree nodes that receive nothing in a
//! round are simply absent, so the schedule is the same for every machine with the same
//! height and step count.

use crate::crcw::SumCrcwMachine;
use crate::error::{Error, Result};
use crate::mrc::{pair, words_of, BudgetConfig, Engine, Mode, Pair, Round, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimulationPlan {
    pub m: u64,
    pub height: u32,
    processors: u64,
    registers: u64,
    /// Key offsets of the tree levels `1..height`, reads first then writes.
    offsets: Vec<u64>,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Smallest `k ≥ 1` with `m^k ≥ x`.
pub fn log_ceil(m: u64, x: u64) -> u32 {
    let mut k = 1;
    let mut reach = m;
    while reach < x {
        reach = reach.saturating_mul(m);
        k += 1;
    }
    k
}

impl SimulationPlan {
    /// Plan with fan-in `m` and the minimal height `max(1, ⌈log_m max(P, M)⌉)`.
    pub fn new(m: u64, processors: usize, registers: usize) -> Result<SimulationPlan> {
        if m < 2 {
            return Err(Error::Plan(format!("fan-in m = {m} must be at least 2")));
        }
        let x = (processors.max(registers) as u64).max(1);
        SimulationPlan::build(m, log_ceil(m, x), processors, registers)
    }

    /// Plan with a fixed height, choosing the smallest fan-in that suffices.
    pub fn with_height(height: u32, processors: usize, registers: usize) -> Result<SimulationPlan> {
        if height == 0 {
            return Err(Error::Plan("height must be at least 1".into()));
        }
        let x = (processors.max(registers) as u64).max(2);
        let mut m = ((x as f64).powf(1.0 / height as f64).floor() as u64).max(2);
        while m.checked_pow(height).is_none_or(|r| r < x) {
            m += 1;
        }
        SimulationPlan::build(m, height, processors, registers)
    }

    fn build(m: u64, height: u32, processors: usize, registers: usize) -> Result<SimulationPlan> {
        let mut plan = SimulationPlan {
            m,
            height,
            processors: processors as u64,
            registers: registers as u64,
            offsets: Vec::new(),
        };
        let mut next = plan.registers + plan.processors;
        for _kind in 0..2 {
            for h in 1..height {
                plan.offsets.push(next);
                next += plan.registers * plan.groups(h);
            }
        }
        Ok(plan)
    }

    pub fn rounds_per_step(&self) -> u64 {
        2 * self.height as u64
    }

    /// Total rounds for a machine with `steps` steps.
    pub fn total_rounds(&self, steps: usize) -> u64 {
        if steps == 0 {
            0
        } else {
            (2 * steps as u64 + 1) * self.height as u64
        }
    }

    fn levels(&self) -> u32 {
        self.height - 1
    }

    fn groups(&self, h: u32) -> u64 {
        ceil_div(self.processors.max(1), self.m.saturating_pow(h))
    }

    pub fn cell_key(&self, c: u64) -> u64 {
        c
    }

    pub fn proc_key(&self, pid: u64) -> u64 {
        self.registers + pid
    }

    fn node_key(&self, kind: NodeKind, h: u32, c: u64, g: u64) -> u64 {
        let idx = kind as usize * self.levels() as usize + (h - 1) as usize;
        self.offsets[idx] + c * self.groups(h) + g
    }

    fn classify(&self, key: u64) -> KeyClass {
        if key < self.registers {
            return KeyClass::Cell(key);
        }
        if key < self.registers + self.processors {
            return KeyClass::Proc(key - self.registers);
        }
        let idx = self.offsets.partition_point(|&o| o <= key) - 1;
        let levels = self.levels() as usize;
        let kind = if idx < levels { NodeKind::Read } else { NodeKind::Write };
        let h = (idx % levels) as u32 + 1;
        let rel = key - self.offsets[idx];
        KeyClass::Node(kind, h, rel / self.groups(h), rel % self.groups(h))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeKind {
    Read = 0,
    Write = 1,
}

enum KeyClass {
    Cell(u64),
    Proc(u64),
    Node(NodeKind, u32, u64, u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimMsg {
    Cell(i64),
    Proc,
    /// A processor's read of `cell` into argument `slot`.
    Req { cell: u64, pid: u64, slot: u64 },
    /// A tree node's combined read request.
    ReadUp { cell: u64, level: u32, group: u64 },
    /// Children waiting at a read node: `(pid, slot)` on level 1, `(group, 0)` above.
    Pending(Vec<(u64, u64)>),
    Write { cell: u64, pid: u64, addend: i64 },
    WriteUp { cell: u64, level: u32, group: u64, sum: i64 },
    /// A value to deliver to `target` as an [`SimMsg::Answer`].
    Forward { target: u64, slot: u64, value: i64 },
    Answer { slot: u64, value: i64 },
}

impl Value for SimMsg {
    fn encode(&self, out: &mut Vec<u64>) {
        match self {
            SimMsg::Cell(v) => out.extend([0, *v as u64]),
            SimMsg::Proc => out.push(1),
            SimMsg::Req { cell, pid, slot } => out.extend([2, *cell, *pid, *slot]),
            SimMsg::ReadUp { cell, level, group } => out.extend([3, *cell, *level as u64, *group]),
            SimMsg::Pending(children) => {
                out.push(4);
                for &(a, b) in children {
                    out.extend([a, b]);
                }
            }
            SimMsg::Write { cell, pid, addend } => out.extend([5, *cell, *pid, *addend as u64]),
            SimMsg::WriteUp { cell, level, group, sum } => {
                out.extend([6, *cell, *level as u64, *group, *sum as u64])
            }
            SimMsg::Forward { target, slot, value } => out.extend([7, *target, *slot, *value as u64]),
            SimMsg::Answer { slot, value } => out.extend([8, *slot, *value as u64]),
        }
    }
}

impl SimulationPlan {
    fn route(&self, p: Pair<SimMsg>, issue: Option<&(dyn Fn(u64) -> Vec<u64> + Sync)>) -> Vec<Pair<SimMsg>> {
        let top = self.levels();
        match p.value {
            SimMsg::Req { cell, pid, .. } => {
                let key = if top == 0 {
                    self.cell_key(cell)
                } else {
                    self.node_key(NodeKind::Read, 1, cell, pid / self.m)
                };
                vec![pair(key, p.value)]
            }
            SimMsg::ReadUp { cell, level, group } => {
                let key = if level == top {
                    self.cell_key(cell)
                } else {
                    self.node_key(NodeKind::Read, level + 1, cell, group / self.m)
                };
                vec![pair(key, p.value)]
            }
            SimMsg::Write { cell, pid, .. } => {
                let key = if top == 0 {
                    self.cell_key(cell)
                } else {
                    self.node_key(NodeKind::Write, 1, cell, pid / self.m)
                };
                vec![pair(key, p.value)]
            }
            SimMsg::WriteUp { cell, level, group, .. } => {
                let key = if level == top {
                    self.cell_key(cell)
                } else {
                    self.node_key(NodeKind::Write, level + 1, cell, group / self.m)
                };
                vec![pair(key, p.value)]
            }
            SimMsg::Forward { target, slot, value } => vec![pair(target, SimMsg::Answer { slot, value })],
            SimMsg::Proc => {
                let pid = p.key - self.registers;
                let mut out = vec![p];
                if let Some(reads) = issue {
                    for (slot, cell) in reads(pid).into_iter().enumerate() {
                        out.extend(self.route(
                            pair(0, SimMsg::Req { cell, pid, slot: slot as u64 }),
                            None,
                        ));
                    }
                }
                out
            }
            _ => vec![p],
        }
    }

    fn reduce(
        &self,
        key: u64,
        values: Vec<SimMsg>,
        compute: Option<&(dyn Fn(u64, &[i64]) -> (Vec<(u64, i64)>, Vec<u64>) + Sync)>,
    ) -> Vec<Pair<SimMsg>> {
        match self.classify(key) {
            KeyClass::Cell(c) => {
                let mut value = 0i64;
                let mut answers = Vec::new();
                for v in values {
                    match v {
                        SimMsg::Cell(x) | SimMsg::Write { addend: x, .. } | SimMsg::WriteUp { sum: x, .. } => {
                            value += x
                        }
                        SimMsg::Req { pid, slot, .. } => answers.push((self.proc_key(pid), slot)),
                        SimMsg::ReadUp { level, group, .. } => {
                            answers.push((self.node_key(NodeKind::Read, level, c, group), 0))
                        }
                        other => unreachable!("cell received {other:?}"),
                    }
                }
                let mut out = vec![pair(key, SimMsg::Cell(value))];
                out.extend(
                    answers
                        .into_iter()
                        .map(|(target, slot)| pair(key, SimMsg::Forward { target, slot, value })),
                );
                out
            }
            KeyClass::Node(NodeKind::Write, h, c, g) => {
                let sum = values
                    .iter()
                    .map(|v| match v {
                        SimMsg::Write { addend, .. } => *addend,
                        SimMsg::WriteUp { sum, .. } => *sum,
                        other => unreachable!("write node received {other:?}"),
                    })
                    .sum();
                vec![pair(key, SimMsg::WriteUp { cell: c, level: h, group: g, sum })]
            }
            KeyClass::Node(NodeKind::Read, h, c, g) => {
                let mut pending = None;
                let mut answer = None;
                let mut children = Vec::new();
                for v in values {
                    match v {
                        SimMsg::Pending(ch) => pending = Some(ch),
                        SimMsg::Answer { value, .. } => answer = Some(value),
                        SimMsg::Req { pid, slot, .. } => children.push((pid, slot)),
                        SimMsg::ReadUp { group, .. } => children.push((group, 0)),
                        other => unreachable!("read node received {other:?}"),
                    }
                }
                match (pending, answer) {
                    (Some(ch), Some(value)) => ch
                        .into_iter()
                        .map(|(a, b)| {
                            let (target, slot) = if h == 1 {
                                (self.proc_key(a), b)
                            } else {
                                (self.node_key(NodeKind::Read, h - 1, c, a), 0)
                            };
                            pair(key, SimMsg::Forward { target, slot, value })
                        })
                        .collect(),
                    (Some(ch), None) => vec![pair(key, SimMsg::Pending(ch))],
                    (None, _) => {
                        children.sort_unstable();
                        vec![
                            pair(key, SimMsg::Pending(children)),
                            pair(key, SimMsg::ReadUp { cell: c, level: h, group: g }),
                        ]
                    }
                }
            }
            KeyClass::Proc(pid) => {
                let mut out = vec![pair(key, SimMsg::Proc)];
                if let Some(compute) = compute {
                    let mut answers: Vec<(u64, i64)> = values
                        .into_iter()
                        .filter_map(|v| match v {
                            SimMsg::Answer { slot, value } => Some((slot, value)),
                            _ => None,
                        })
                        .collect();
                    answers.sort_unstable();
                    let args: Vec<i64> = answers.into_iter().map(|a| a.1).collect();
                    let (writes, next_reads) = compute(pid, &args);
                    out.extend(
                        writes
                            .into_iter()
                            .map(|(cell, addend)| pair(key, SimMsg::Write { cell, pid, addend })),
                    );
                    out.extend(next_reads.into_iter().enumerate().map(|(slot, cell)| {
                        pair(
                            key,
                            SimMsg::Req {
                                cell,
                                pid,
                                slot: slot as u64,
                            },
                        )
                    }));
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub registers: Vec<i64>,
    pub rounds: u64,
    pub plan: SimulationPlan,
    pub warnings: Vec<String>,
}

/// Checks `(M+P)·log_{N^(1-ε)}(M+P) ≤ c_total·N^(2(1-ε))` for the engine's budget.
pub fn hypothesis_warning(engine: &Engine, machine: &SumCrcwMachine) -> Option<String> {
    let b = engine.budget;
    let mp = (machine.processors + machine.registers) as f64;
    let base = (b.n_words as f64).powf(1.0 - b.epsilon).max(2.0);
    let lhs = mp * (mp.ln() / base.ln()).max(1.0);
    let rhs = b.total_limit() as f64;
    (lhs > rhs).then(|| {
        format!("machine size (M+P)·log(M+P) = {lhs:.0} exceeds the total space bound {rhs:.0}; budget violations are likely")
    })
}

/// Runs `machine` on `engine` according to `plan`, returning the final registers.
pub fn simulate_on(
    engine: &mut Engine,
    machine: &SumCrcwMachine,
    preload: &[(usize, i64)],
    plan: &SimulationPlan,
) -> Result<Vec<i64>> {
    let regs = machine.initial_registers(preload)?;
    let mut data: Vec<Pair<SimMsg>> = regs
        .iter()
        .enumerate()
        .map(|(c, &v)| pair(plan.cell_key(c as u64), SimMsg::Cell(v)))
        .chain((0..machine.processors as u64).map(|p| pair(plan.proc_key(p), SimMsg::Proc)))
        .collect();
    let steps = machine.steps.len();
    if steps == 0 {
        return Ok(regs);
    }
    let k = plan.height as usize;
    let registers = machine.registers;
    for pid in 0..machine.processors {
        if let Some(&c) = machine.steps[0].reads(pid).iter().find(|&&c| c >= registers) {
            return Err(Error::RegisterOutOfRange { index: c, registers });
        }
    }
    let check = |cells: Vec<usize>| -> Vec<u64> { cells.into_iter().map(|c| c as u64).collect() };
    for t in 0..steps {
        let issue = move |pid: u64| check(machine.steps[0].reads(pid as usize));
        let compute = move |pid: u64, args: &[i64]| -> (Vec<(u64, i64)>, Vec<u64>) {
            let writes = machine.steps[t].compute(pid as usize, args);
            let next = if t + 1 < steps {
                check(machine.steps[t + 1].reads(pid as usize))
            } else {
                vec![]
            };
            (writes.into_iter().map(|(c, v)| (c as u64, v)).collect(), next)
        };
        for r in 0..2 * k {
            let first = t == 0 && r == 0;
            let last = r == 2 * k - 1;
            let round = Round::new(
                format!("crcw step {t} phase {r}"),
                |p| plan.route(p, if first { Some(&issue) } else { None }),
                |key, vs| plan.reduce(key, vs, if last { Some(&compute) } else { None }),
            );
            data = engine.round(data, &round)?;
        }
        validate_cells(&data, registers)?;
    }
    for r in 0..k {
        let round = Round::new(
            format!("crcw flush {r}"),
            |p| plan.route(p, None),
            |key, vs| plan.reduce(key, vs, None),
        );
        data = engine.round(data, &round)?;
    }
    let mut out = vec![0i64; registers];
    for p in data {
        if let SimMsg::Cell(v) = p.value {
            out[p.key as usize] = v;
        }
    }
    Ok(out)
}

fn validate_cells(data: &[Pair<SimMsg>], registers: usize) -> Result<()> {
    for p in data {
        let cell = match p.value {
            SimMsg::Req { cell, .. } | SimMsg::Write { cell, .. } => cell,
            _ => continue,
        };
        if cell as usize >= registers {
            return Err(Error::RegisterOutOfRange {
                index: cell as usize,
                registers,
            });
        }
    }
    Ok(())
}

/// Simulates `machine` in a fresh engine whose `N` is the word size of the encoded
/// registers and processors. `m` defaults to `⌊N^(1-ε)⌋`.
pub fn simulate_crcw(
    machine: &SumCrcwMachine,
    preload: &[(usize, i64)],
    config: BudgetConfig,
    mode: Mode,
    m: Option<u64>,
) -> Result<(Simulation, crate::mrc::BudgetReport)> {
    let n_words = input_words(machine);
    let mut engine = Engine::new(config.fix(n_words), mode);
    let m = m.unwrap_or_else(|| engine.budget.fan_in());
    let plan = SimulationPlan::new(m, machine.processors, machine.registers)?;
    let warnings = hypothesis_warning(&engine, machine).into_iter().collect();
    let registers = simulate_on(&mut engine, machine, preload, &plan)?;
    let rounds = engine.rounds_run() as u64;
    Ok((
        Simulation {
            registers,
            rounds,
            plan,
            warnings,
        },
        engine.into_report(),
    ))
}

/// Word size of the initial simulation input for `machine`.
pub fn input_words(machine: &SumCrcwMachine) -> u64 {
    let cells: Vec<Pair<SimMsg>> = vec![pair(0, SimMsg::Cell(0))];
    let procs: Vec<Pair<SimMsg>> = vec![pair(0, SimMsg::Proc)];
    words_of(&cells) * machine.registers as u64 + words_of(&procs) * machine.processors as u64
}
