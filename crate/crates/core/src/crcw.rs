//! Sum-CRCW PRAM: concurrent writes to one register are added together.
//!
//! Registers start at zero apart from the preload. Every processor of a step reads from the
//! snapshot taken before the step, and all addends are applied at the step barrier.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};

type ReadFn = Box<dyn Fn(usize) -> Vec<usize> + Send + Sync>;
type ComputeFn = Box<dyn Fn(usize, &[i64]) -> Vec<(usize, i64)> + Send + Sync>;

/// One synchronous step. `reads(pid)` lists the cells processor `pid` reads; `compute`
/// receives their values in the same order and returns `(register, addend)` writes.
pub struct Step {
    reads: ReadFn,
    compute: ComputeFn,
}

impl Step {
    pub fn new(
        reads: impl Fn(usize) -> Vec<usize> + Send + Sync + 'static,
        compute: impl Fn(usize, &[i64]) -> Vec<(usize, i64)> + Send + Sync + 'static,
    ) -> Step {
        Step {
            reads: Box::new(reads),
            compute: Box::new(compute),
        }
    }

    pub fn reads(&self, pid: usize) -> Vec<usize> {
        (self.reads)(pid)
    }

    pub fn compute(&self, pid: usize, values: &[i64]) -> Vec<(usize, i64)> {
        (self.compute)(pid, values)
    }
}

pub struct SumCrcwMachine {
    pub processors: usize,
    pub registers: usize,
    pub steps: Vec<Step>,
}

impl SumCrcwMachine {
    pub fn new(processors: usize, registers: usize) -> SumCrcwMachine {
        SumCrcwMachine {
            processors,
            registers,
            steps: Vec::new(),
        }
    }

    pub fn step(mut self, step: Step) -> SumCrcwMachine {
        self.steps.push(step);
        self
    }

    /// Writes performed by `pid` in step `t` given the register snapshot.
    pub fn processor_writes(&self, t: usize, pid: usize, snapshot: &[i64]) -> Result<Vec<(usize, i64)>> {
        let step = &self.steps[t];
        let values = step
            .reads(pid)
            .into_iter()
            .map(|r| {
                snapshot.get(r).copied().ok_or(Error::RegisterOutOfRange {
                    index: r,
                    registers: self.registers,
                })
            })
            .collect::<Result<Vec<i64>>>()?;
        let writes = step.compute(pid, &values);
        if let Some(&(r, _)) = writes.iter().find(|(r, _)| *r >= self.registers) {
            return Err(Error::RegisterOutOfRange {
                index: r,
                registers: self.registers,
            });
        }
        Ok(writes)
    }

    pub fn initial_registers(&self, preload: &[(usize, i64)]) -> Result<Vec<i64>> {
        let mut regs = vec![0i64; self.registers];
        for &(r, v) in preload {
            *regs.get_mut(r).ok_or(Error::RegisterOutOfRange {
                index: r,
                registers: self.registers,
            })? = v;
        }
        Ok(regs)
    }
}

/// Initial register values as `(register, value)`.
pub type Preload = Vec<(usize, i64)>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrcwRun {
    pub registers: Vec<i64>,
    pub steps: usize,
    pub processors: usize,
    pub register_count: usize,
    /// Per step, the nonzero register deltas in register order. Filled only when tracing.
    pub trace: Vec<Vec<(usize, i64)>>,
}

pub fn run_crcw(m: &SumCrcwMachine, preload: &[(usize, i64)]) -> Result<CrcwRun> {
    execute(m, preload, false)
}

pub fn run_crcw_traced(m: &SumCrcwMachine, preload: &[(usize, i64)]) -> Result<CrcwRun> {
    execute(m, preload, true)
}

fn execute(m: &SumCrcwMachine, preload: &[(usize, i64)], trace: bool) -> Result<CrcwRun> {
    let mut regs = m.initial_registers(preload)?;
    let mut deltas_per_step = Vec::new();
    for t in 0..m.steps.len() {
        let snapshot = &regs;
        let writes: Vec<Vec<(usize, i64)>> = (0..m.processors)
            .into_par_iter()
            .map(|pid| m.processor_writes(t, pid, snapshot))
            .collect::<Result<_>>()?;
        let mut delta: BTreeMap<usize, i64> = BTreeMap::new();
        for (r, v) in writes.into_iter().flatten() {
            *delta.entry(r).or_default() += v;
        }
        for (&r, &v) in &delta {
            regs[r] += v;
        }
        if trace {
            deltas_per_step.push(delta.into_iter().filter(|&(_, v)| v != 0).collect());
        }
    }
    Ok(CrcwRun {
        registers: regs,
        steps: m.steps.len(),
        processors: m.processors,
        register_count: m.registers,
        trace: deltas_per_step,
    })
}

/// Register layout of the two-step prefix-sum kernel on `q = 2^levels` inputs.
///
/// `x` occupies `[base, base + q)`, the dyadic block sums `s_i(j)` follow level by level,
/// then the outputs `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrefixLayout {
    pub base: usize,
    pub q: usize,
    pub levels: usize,
}

impl PrefixLayout {
    pub fn new(base: usize, len: usize) -> PrefixLayout {
        let q = len.max(1).next_power_of_two();
        PrefixLayout {
            base,
            q,
            levels: q.trailing_zeros() as usize,
        }
    }

    pub fn x(&self, p: usize) -> usize {
        self.base + p
    }

    /// Cell of `s_i(j)`, the sum of `x_p` for `j·2^i ≤ p < (j+1)·2^i`.
    pub fn s(&self, i: usize, j: usize) -> usize {
        let before: usize = (0..i).map(|k| self.q >> k).sum();
        self.base + self.q + before + j
    }

    pub fn y(&self, j: usize) -> usize {
        self.base + 3 * self.q - 1 + j
    }

    pub fn end(&self) -> usize {
        self.base + 4 * self.q - 1
    }

    pub fn processors(&self) -> usize {
        self.q * (self.levels + 1)
    }

    /// Step 1: processor `(i, p)` adds `x_p` into `s_i(p >> i)`.
    pub fn block_sum_step(self) -> Step {
        let lv = self.levels + 1;
        Step::new(
            move |pid| {
                if pid < self.q * lv {
                    vec![self.x(pid % self.q)]
                } else {
                    vec![]
                }
            },
            move |pid, vals| match vals {
                [xp] => {
                    let (i, p) = (pid / self.q, pid % self.q);
                    vec![(self.s(i, p >> i), *xp)]
                }
                _ => vec![],
            },
        )
    }

    /// Step 2: processor `(j, i)` adds `s_i((j+1-2^i) >> i)` into `y_j` when bit `i` of `j+1` is set.
    pub fn combine_step(self) -> Step {
        let lv = self.levels + 1;
        let selected = move |pid: usize| -> Option<(usize, usize)> {
            let (j, i) = (pid / lv, pid % lv);
            (j < self.q && (j + 1) >> i & 1 == 1).then_some((j, i))
        };
        Step::new(
            move |pid| match selected(pid) {
                Some((j, i)) => vec![self.s(i, (j + 1 - (1 << i)) >> i)],
                None => vec![],
            },
            move |pid, vals| match (selected(pid), vals) {
                (Some((j, _)), [v]) => vec![(self.y(j), *v)],
                _ => vec![],
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixSums {
    pub y: Vec<i64>,
    pub layout: PrefixLayout,
    pub run: CrcwRun,
}

impl PrefixSums {
    pub fn block_sum(&self, i: usize, j: usize) -> i64 {
        self.run.registers[self.layout.s(i, j)]
    }
}

/// The prefix-sum machine and its preload for `x` (zero-padded to a power of two).
pub fn prefix_sums_machine(x: &[i64]) -> (SumCrcwMachine, Preload, PrefixLayout) {
    let layout = PrefixLayout::new(0, x.len());
    let machine = SumCrcwMachine::new(layout.processors(), layout.end())
        .step(layout.block_sum_step())
        .step(layout.combine_step());
    let preload = x.iter().enumerate().map(|(p, &v)| (layout.x(p), v)).collect();
    (machine, preload, layout)
}

pub fn crcw_prefix_sums(x: &[i64]) -> Result<PrefixSums> {
    let (machine, preload, layout) = prefix_sums_machine(x);
    let run = run_crcw(&machine, &preload)?;
    let y = (0..x.len()).map(|j| run.registers[layout.y(j)]).collect();
    Ok(PrefixSums { y, layout, run })
}

/// Register layout of the sorting kernel for `n` elements of `{1, ..., d}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SortLayout {
    pub n: usize,
    pub d: usize,
    /// Prefix-sum region whose `x` is the marker array `z[0..=d]`.
    pub z: PrefixLayout,
}

impl SortLayout {
    pub fn new(n: usize, d: usize) -> SortLayout {
        SortLayout {
            n,
            d,
            z: PrefixLayout::new(n, d + 1),
        }
    }

    pub fn x(&self, k: usize) -> usize {
        k
    }

    pub fn y(&self, k: usize) -> usize {
        self.z.end() + k
    }

    pub fn registers(&self) -> usize {
        self.z.end() + self.n
    }

    pub fn processors(&self) -> usize {
        self.n.max(self.z.processors()).max(self.d + 1)
    }
}

/// Four steps: mark `z[x_k] += 1`, two prefix-sum steps giving `ẑ`, and for every
/// `k` with `ẑ[k] ≠ ẑ[k-1]` the write `y[ẑ[k] - 1] += k`.
pub fn sort_machine(n: usize, d: usize) -> (SumCrcwMachine, SortLayout) {
    let l = SortLayout::new(n, d);
    let mark = Step::new(
        move |pid| if pid < l.n { vec![l.x(pid)] } else { vec![] },
        move |_, vals| match vals {
            [v] => vec![(l.z.x(*v as usize), 1)],
            _ => vec![],
        },
    );
    let emit = Step::new(
        move |pid| {
            if (1..=l.d).contains(&pid) {
                vec![l.z.y(pid), l.z.y(pid - 1)]
            } else {
                vec![]
            }
        },
        move |pid, vals| match vals {
            [cur, prev] if cur != prev => vec![(l.y(*cur as usize - 1), pid as i64)],
            _ => vec![],
        },
    );
    let m = SumCrcwMachine::new(l.processors(), l.registers())
        .step(mark)
        .step(l.z.block_sum_step())
        .step(l.z.combine_step())
        .step(emit);
    (m, l)
}

fn validate_sort_input(set: &[u64], d: u64) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for &v in set {
        if v == 0 || v > d {
            return Err(Error::OutOfDomain { value: v, domain: d });
        }
        if !seen.insert(v) {
            return Err(Error::DuplicateElement(v));
        }
    }
    Ok(())
}

/// Machine, preload and layout for sorting `set ⊆ {1, ..., d}`.
pub fn sort_program(set: &[u64], d: u64) -> Result<(SumCrcwMachine, Preload, SortLayout)> {
    validate_sort_input(set, d)?;
    let (m, l) = sort_machine(set.len(), d as usize);
    let preload = set.iter().enumerate().map(|(k, &v)| (l.x(k), v as i64)).collect();
    Ok((m, preload, l))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sorted {
    pub values: Vec<u64>,
    pub run: CrcwRun,
}

pub fn crcw_sort(set: &[u64], d: u64) -> Result<Sorted> {
    let (m, preload, l) = sort_program(set, d)?;
    let run = run_crcw(&m, &preload)?;
    let values = (0..set.len()).map(|k| run.registers[l.y(k)] as u64).collect();
    Ok(Sorted { values, run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan(x: &[i64]) -> Vec<i64> {
        x.iter()
            .scan(0i64, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    #[test]
    fn increments_are_summed() {
        for k in 1..=64usize {
            let vals: Vec<i64> = (0..k as i64).map(|i| i * 7 - 20).collect();
            let v2 = vals.clone();
            let m = SumCrcwMachine::new(k, 2).step(Step::new(|_| vec![], move |pid, _| vec![(1, v2[pid])]));
            let run = run_crcw(&m, &[(0, 5)]).unwrap();
            assert_eq!(run.registers, vec![5, vals.iter().sum::<i64>()]);
            assert_eq!(run.steps, 1);
        }
    }

    #[test]
    fn noop_and_range_errors() {
        let m = SumCrcwMachine::new(4, 3).step(Step::new(|_| vec![], |_, _| vec![]));
        assert_eq!(run_crcw(&m, &[(2, 9)]).unwrap().registers, vec![0, 0, 9]);
        assert!(matches!(run_crcw(&m, &[(3, 1)]), Err(Error::RegisterOutOfRange { index: 3, .. })));
        let bad = SumCrcwMachine::new(1, 3).step(Step::new(|_| vec![7], |_, _| vec![]));
        assert!(run_crcw(&bad, &[]).is_err());
    }

    #[test]
    fn reads_see_the_snapshot() {
        // Every processor copies register 0 into register 1 and increments register 0.
        let m = SumCrcwMachine::new(3, 2).step(Step::new(|_| vec![0], |_, v| vec![(0, 1), (1, v[0])]));
        assert_eq!(run_crcw(&m, &[(0, 10)]).unwrap().registers, vec![13, 30]);
    }

    #[test]
    fn pairwise_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<i64> = (0..16).map(|_| rng.gen_range(-100..100)).collect();
        let m = SumCrcwMachine::new(16, 24).step(Step::new(|p| vec![p], |p, v| vec![(16 + p / 2, v[0])]));
        let pre: Vec<(usize, i64)> = x.iter().copied().enumerate().collect();
        let run = run_crcw(&m, &pre).unwrap();
        for i in 0..8 {
            assert_eq!(run.registers[16 + i], x[2 * i] + x[2 * i + 1]);
        }
    }

    #[test]
    fn prefix_sums_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in [1usize, 3, 8, 16, 64, 100] {
            for _ in 0..20 {
                let x: Vec<i64> = (0..q).map(|_| rng.gen_range(-1000..1000)).collect();
                let out = crcw_prefix_sums(&x).unwrap();
                assert_eq!(out.y, scan(&x));
                assert_eq!(out.run.steps, 2);
                let qq = out.layout.q;
                let log = out.layout.levels.max(1);
                assert!(out.run.processors <= 2 * qq * log && out.run.register_count <= 4 * qq);
            }
        }
        assert_eq!(crcw_prefix_sums(&[0; 8]).unwrap().y, vec![0; 8]);
    }

    #[test]
    fn figure_identities_q8() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<i64> = (0..8).map(|_| rng.gen_range(0..1000)).collect();
        let out = crcw_prefix_sums(&x).unwrap();
        let s = |i, j| out.block_sum(i, j);
        assert_eq!(out.y[7], s(3, 0));
        assert_eq!(out.y[6], s(2, 0) + s(1, 2) + s(0, 6));
        assert_eq!(out.y[2], s(1, 0) + s(0, 2));
    }

    #[test]
    fn sort_matches_comparison_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert_eq!(crcw_sort(&[3, 1, 2], 4).unwrap().values, vec![1, 2, 3]);
        assert!(crcw_sort(&[], 4).unwrap().values.is_empty());
        for _ in 0..30 {
            let d = rng.gen_range(1..=512u64);
            let mut all: Vec<u64> = (1..=d).collect();
            all.shuffle(&mut rng);
            let set = &all[..rng.gen_range(0..=d as usize)];
            let out = crcw_sort(set, d).unwrap();
            let mut expected = set.to_vec();
            expected.sort();
            assert_eq!(out.values, expected);
            assert_eq!(out.run.steps, 4);
        }
    }

    #[test]
    fn sort_rejects_bad_input() {
        assert_eq!(crcw_sort(&[1, 1], 4).unwrap_err(), Error::DuplicateElement(1));
        assert_eq!(crcw_sort(&[5], 4).unwrap_err(), Error::OutOfDomain { value: 5, domain: 4 });
        assert!(crcw_sort(&[0], 4).is_err());
    }

    #[test]
    fn trace_records_deltas() {
        let (m, pre, _) = prefix_sums_machine(&[1, 2, 3, 4]);
        let run = run_crcw_traced(&m, &pre).unwrap();
        assert_eq!(run.trace.len(), 2);
        assert_eq!(run.trace[1].iter().map(|d| d.1).collect::<Vec<_>>(), vec![1, 3, 6, 10]);
    }
}
