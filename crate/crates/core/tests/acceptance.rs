// Tolerances are pinned constants, some of them zero.
#![allow(clippy::absurd_extreme_comparisons)]

//! Acceptance gate. Every criterion prints exactly one PASS/FAIL line and fails the test
//! on a mismatch or when it runs over its time limit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dmrc::circuit::{eval_direct, gen_parity, gen_random_dag, Assignment, Circuit, NodeKind};
use dmrc::circuit_mrc::{
    augment_jumping_edges, augmented_of, input_words, is_jumping, mr_sort_by_level, oracle_levels, prepare_nc,
    run_nc_pipeline, CMsg, LevelsSource, NcOptions, NcParams,
};
use dmrc::crcw::{crcw_prefix_sums, crcw_sort, prefix_sums_machine, run_crcw, sort_program};
use dmrc::crcw_to_mrc::{log_ceil, simulate_crcw, simulate_on, SimulationPlan};
use dmrc::mrc::{pair, BudgetConfig, Engine, Mode, Pair, Round, RunOptions};
use dmrc::pbp::{accepts, barrington_compile};
use dmrc::pbp_mrc::{encode, run_nc1_pipeline};
use dmrc::Error;

/// Exact equality is required for every round count below.
const ROUND_TOLERANCE: usize = 0;
/// Simulated rounds may differ from the predicted count by at most this much per step.
const ROUNDS_PER_STEP_SLACK: u64 = 1;
const C_SPACE: f64 = 64.0;
const C_TOTAL: f64 = 8.0;

fn gate(id: u32, name: &str, limit: Duration, body: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let outcome = body();
    let took = start.elapsed();
    let outcome = match outcome {
        Ok(detail) if took > limit => Err(format!("{detail}; took {took:.2?}, limit {limit:?}")),
        other => other,
    };
    let line = match &outcome {
        Ok(detail) => format!("criterion {id:>2} {name}: PASS ({detail}; {took:.2?} of {limit:?})\n"),
        Err(why) => format!("criterion {id:>2} {name}: FAIL ({why})\n"),
    };
    // Straight to the handle so the line shows up without --nocapture.
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    if let Err(why) = outcome {
        panic!("criterion {id} failed: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn assignments(n: usize, samples: usize, rng: &mut ChaCha8Rng) -> Vec<Assignment> {
    if n <= 8 {
        Assignment::all(n).collect()
    } else {
        (0..samples).map(|_| Assignment::random(n, rng)).collect()
    }
}

fn loose(eps: f64) -> RunOptions {
    RunOptions::new(BudgetConfig::new(eps, 1e9, 1e9).unwrap(), Mode::Advisory)
}

#[test]
fn criterion_01_barrington_equivalence() {
    gate(1, "barrington equivalence", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut circuits: Vec<Circuit> = (0..50)
            .map(|i| {
                let n: usize = rng.gen_range(1..=8);
                let min_depth = (usize::BITS - (n - 1).leading_zeros()).max(1) as usize;
                let depth = rng.gen_range(min_depth..=6);
                gen_random_dag(n, depth, 100 + i).unwrap()
            })
            .collect();
        circuits.extend([2, 4, 8, 16].map(|n| gen_parity(n).unwrap()));
        let mut checked = 0;
        for c in &circuits {
            let p = barrington_compile(c);
            ensure(p.w == 5, || format!("width {}", p.w))?;
            let bound = 4usize.pow(c.depth() as u32);
            ensure(p.len() <= bound, || format!("length {} > 4^depth = {bound}", p.len()))?;
            for a in assignments(c.n(), 1000, &mut rng) {
                ensure(accepts(&p, &a).unwrap() == eval_direct(c, &a).unwrap(), || {
                    format!("disagreement on {a:?}")
                })?;
                checked += 1;
            }
        }
        Ok(format!("{} circuits, {checked} assignments", circuits.len()))
    });
}

#[test]
fn criterion_02_nc1_constant_rounds() {
    gate(2, "nc1 constant rounds", Duration::from_secs(60), || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = BTreeSet::new();
        let mut runs = 0;
        for n in [4usize, 8, 16] {
            for i in 0..20u64 {
                let depth = if n == 16 { 5 + i as usize % 2 } else { 3 + i as usize % 4 };
                let c = gen_random_dag(n, depth, 1000 * n as u64 + i).unwrap();
                for _ in 0..3 {
                    let a = Assignment::random(n, &mut rng);
                    let run = run_nc1_pipeline(&c, &a, &loose(0.5)).map_err(|e| e.to_string())?;
                    ensure(run.accept == eval_direct(&c, &a).unwrap(), || format!("wrong verdict n={n} seed {i}"))?;
                    counts.insert(run.rounds());
                    runs += 1;
                }
            }
        }
        let lo = *counts.first().unwrap();
        let hi = *counts.last().unwrap();
        ensure(hi - lo <= ROUND_TOLERANCE, || format!("round counts {counts:?}"))?;
        Ok(format!("R* = {lo} over {runs} runs"))
    });
}

fn nc1_corpus() -> Vec<Circuit> {
    let mut out: Vec<Circuit> = [2, 4, 8, 16].iter().map(|&n| gen_parity(n).unwrap()).collect();
    for n in [4usize, 8, 16] {
        for seed in 0..20 {
            out.push(gen_random_dag(n, 6.max(n.trailing_zeros() as usize + 1), seed).unwrap());
        }
    }
    out
}

#[test]
fn criterion_03_budget_adherence() {
    gate(3, "budget adherence", Duration::from_secs(30), || {
        let corpus = nc1_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut runs = 0;
        for eps in [0.5, 0.3] {
            let opts = RunOptions::new(BudgetConfig::new(eps, C_SPACE, C_TOTAL).unwrap(), Mode::Advisory);
            for c in &corpus {
                let a = Assignment::random(c.n(), &mut rng);
                let run = run_nc1_pipeline(c, &a, &opts).map_err(|e| e.to_string())?;
                ensure(run.report.violations.is_empty(), || {
                    format!("eps {eps}: {}", run.report.violations[0])
                })?;
                runs += 1;
            }
        }
        // The same accountant must notice a round that sends everything to one reducer.
        let c = gen_parity(16).unwrap();
        let a = Assignment(vec![true; 16]);
        let (data, bp) = encode(&barrington_compile(&c), &a, 0.5).unwrap();
        let opts = RunOptions::new(BudgetConfig::new(0.5, C_SPACE, C_TOTAL).unwrap(), Mode::Advisory);
        let mut engine = opts.engine(bp.n_words());
        let funnel = Round::new("funnel", |p| vec![pair(0, p.value)], |k, vs| vs.into_iter().map(|v| pair(k, v)).collect());
        engine.round(data, &funnel).map_err(|e| e.to_string())?;
        let flagged = engine.report().violations.len();
        ensure(flagged > 0, || "fan-in round produced no violation".into())?;
        Ok(format!("{runs} clean runs at c_space = {C_SPACE}, c_total = {C_TOTAL}; fan-in round flagged {flagged}"))
    });
}

#[test]
fn criterion_04_prefix_sums_kernel() {
    gate(4, "prefix-sum kernel", Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for q in [8usize, 16, 64, 256] {
            for _ in 0..100 {
                let x: Vec<i64> = (0..q).map(|_| rng.gen_range(-1000..1000)).collect();
                let out = crcw_prefix_sums(&x).map_err(|e| e.to_string())?;
                let scan: Vec<i64> = x
                    .iter()
                    .scan(0, |acc, &v| {
                        *acc += v;
                        Some(*acc)
                    })
                    .collect();
                ensure(out.y == scan, || format!("q={q}: prefix mismatch"))?;
                ensure(out.run.steps == 2, || format!("q={q}: {} steps", out.run.steps))?;
                if q == 8 {
                    let s = |i, j| out.block_sum(i, j);
                    ensure(out.y[7] == s(3, 0), || "y7 != s3(0)".into())?;
                    ensure(out.y[6] == s(2, 0) + s(1, 2) + s(0, 6), || "y6 != s2(0)+s1(2)+s0(6)".into())?;
                }
            }
        }
        Ok("400 inputs, 2 steps each".into())
    });
}

#[test]
fn criterion_05_sort_kernel() {
    gate(5, "sort kernel", Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut steps = BTreeSet::new();
        for _ in 0..100 {
            let d: u64 = rng.gen_range(1..=512);
            let mut domain: Vec<u64> = (1..=d).collect();
            domain.shuffle(&mut rng);
            let k = rng.gen_range(1..=d as usize);
            let set = &domain[..k];
            let out = crcw_sort(set, d).map_err(|e| e.to_string())?;
            let mut expected = set.to_vec();
            expected.sort_unstable();
            ensure(out.values == expected, || format!("d={d}: wrong order"))?;
            steps.insert(out.run.steps);
        }
        ensure(steps.len() == 1, || format!("step counts {steps:?}"))?;
        Ok(format!("100 subsets, {} steps each", steps.first().unwrap()))
    });
}

#[test]
fn criterion_06_crcw_simulation() {
    gate(6, "crcw simulation", Duration::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut corpus = Vec::new();
        for q in [8usize, 16, 64] {
            let x: Vec<i64> = (0..q).map(|_| rng.gen_range(-50..50)).collect();
            let (m, pre, _) = prefix_sums_machine(&x);
            corpus.push((m, pre));
        }
        for d in [16u64, 64] {
            let mut dom: Vec<u64> = (1..=d).collect();
            dom.shuffle(&mut rng);
            let (m, pre, _) = sort_program(&dom[..d as usize / 2], d).unwrap();
            corpus.push((m, pre));
        }
        let cfg = BudgetConfig::new(0.5, 1e9, 1e9).unwrap();
        let mut checks = 0;
        for (machine, preload) in &corpus {
            let direct = run_crcw(machine, preload).map_err(|e| e.to_string())?;
            let t = machine.steps.len() as u64;
            let x = machine.processors.max(machine.registers) as u64;
            let mut m = x.max(2);
            let mut last_k = 0;
            loop {
                let (sim, _) = simulate_crcw(machine, preload, cfg, Mode::Advisory, Some(m)).map_err(|e| e.to_string())?;
                ensure(sim.registers == direct.registers, || format!("m={m}: registers differ"))?;
                let k = log_ceil(m, x).max(1) as u64;
                let predicted = (2 * t + 1) * k;
                ensure(sim.rounds.abs_diff(predicted) <= ROUNDS_PER_STEP_SLACK * t, || {
                    format!("m={m}: {} rounds, predicted {predicted}", sim.rounds)
                })?;
                if m >= x {
                    ensure(sim.rounds == 2 * t + 1, || format!("flat plan took {} rounds", sim.rounds))?;
                }
                ensure(k >= last_k, || "rounds per step decreased as m shrank".into())?;
                last_k = k;
                checks += 1;
                if m == 2 {
                    break;
                }
                m = (m / 2).max(2);
            }
        }
        Ok(format!("{} machines, {checks} plans", corpus.len()))
    });
}

fn nc_opts(eps: f64, alpha: f64, s: Option<u64>, levels: LevelsSource) -> NcOptions {
    NcOptions {
        run: loose(eps),
        alpha,
        levels,
        s,
    }
}

#[test]
fn criterion_07_nc_schedule() {
    gate(7, "nc round schedule", Duration::from_secs(120), || {
        let mut sort_rounds = BTreeSet::new();
        let mut evaluated = 0;
        for i in 0..20u64 {
            let s = 2 + i % 2;
            let depth = s * [2, 4, 8][(i / 2 % 3) as usize];
            let n = 4 + (i % 5) as usize;
            let c = gen_random_dag(n, depth as usize, 7000 + i).unwrap();
            let prepared = prepare_nc(&c, &nc_opts(0.3, 0.2, Some(s), LevelsSource::Oracle)).map_err(|e| e.to_string())?;
            for a in Assignment::all(n) {
                let run = prepared.run(&a).map_err(|e| e.to_string())?;
                ensure(run.accept == eval_direct(&c, &a).unwrap(), || format!("circuit {i}: wrong verdict"))?;
                let construct = run.stage_rounds("construct");
                let evaluate = run.stage_rounds("evaluate");
                ensure(construct.abs_diff(1 + 2 * s as usize) <= ROUND_TOLERANCE, || {
                    format!("circuit {i}: construct {construct} rounds, s = {s}")
                })?;
                let phases = depth.div_ceil(s) as usize;
                ensure(evaluate.abs_diff(phases) <= ROUND_TOLERANCE, || {
                    format!("circuit {i}: evaluate {evaluate} rounds, expected {phases}")
                })?;
                ensure(run.stage_rounds("levels") == 0, || "oracle levels used rounds".into())?;
                sort_rounds.insert(run.stage_rounds("sort"));
                evaluated += 1;
            }
        }
        ensure(sort_rounds.len() == 1, || format!("sort stage rounds {sort_rounds:?}"))?;
        Ok(format!(
            "20 circuits, {evaluated} assignments, sort stage {} rounds",
            sort_rounds.first().unwrap()
        ))
    });
}

/// Augments an already sorted circuit at band height `s` and rebuilds it as a circuit.
fn rebuild(c: &Circuit, sorted: &[Pair<CMsg>], s: u64) -> Result<(Circuit, usize, usize), String> {
    let p = NcParams::new(c, 0.3, 0.2, Some(s)).map_err(|e| e.to_string())?;
    let mut engine = loose(0.3).engine(input_words(c));
    let data = augment_jumping_edges(&mut engine, sorted.to_vec(), &p).map_err(|e| e.to_string())?;
    let (vs, es) = augmented_of(&data);
    let jumping = es.iter().filter(|e| is_jumping(e, s)).count();
    let mut ops: BTreeMap<u64, Vec<(u64, u64)>> = BTreeMap::new();
    for e in &es {
        ops.entry(e.dst.rank).or_default().push((e.slot, e.src.rank));
    }
    let spec = vs
        .iter()
        .map(|x| {
            let mut f = ops.remove(&x.rank).unwrap_or_default();
            f.sort_unstable();
            let kind = match x.code {
                0 => NodeKind::Input(x.var as usize),
                1 => NodeKind::And,
                2 => NodeKind::Or,
                3 => NodeKind::Not,
                _ => NodeKind::Id,
            };
            (x.rank, kind, f.into_iter().map(|(_, u)| u).collect())
        })
        .collect();
    let out = vs.iter().find(|x| x.level == 0).ok_or("no output")?.rank;
    let aug = Circuit::new(c.n(), spec, out).map_err(|e| e.to_string())?;
    Ok((aug, es.len(), jumping))
}

#[test]
fn criterion_08_augmentation_soundness() {
    gate(8, "augmentation soundness", Duration::from_secs(10), || {
        let mut corpus: Vec<Circuit> = [2, 4, 8].iter().map(|&n| gen_parity(n).unwrap()).collect();
        for seed in 0..12u64 {
            corpus.push(gen_random_dag(3 + seed as usize % 6, 4 + seed as usize, 800 + seed).unwrap());
        }
        let mut cases = 0;
        for c in &corpus {
            let mut engine = loose(0.3).engine(input_words(c));
            let sorted = mr_sort_by_level(&mut engine, oracle_levels(c)).map_err(|e| e.to_string())?;
            for s in [1u64, 2, 3] {
                let (aug, edges, jumping) = rebuild(c, &sorted, s)?;
                ensure(jumping == 0, || format!("{jumping} jumping edges left at s = {s}"))?;
                ensure(edges <= 3 * c.size(), || format!("|E'| = {edges} > 3·{}", c.size()))?;
                for a in Assignment::all(c.n()) {
                    ensure(eval_direct(&aug, &a).unwrap() == eval_direct(c, &a).unwrap(), || {
                        format!("augmented circuit differs at s = {s}")
                    })?;
                }
                cases += 1;
            }
        }
        Ok(format!("{cases} circuit/band-height cases"))
    });
}

#[test]
fn criterion_09_order_insensitivity() {
    gate(9, "order insensitivity", Duration::from_secs(60), || {
        let seeds = [11u64, 22, 33, 44, 55];
        let c1 = gen_random_dag(8, 5, 9).unwrap();
        let c2 = gen_random_dag(6, 9, 10).unwrap();
        let a1 = Assignment::from_index(8, 0b1011_0110);
        let a2 = Assignment::from_index(6, 0b10_1101);
        let with = |eps: f64, seed: Option<u64>| {
            let mut o = loose(eps);
            o.audit_seed = seed;
            o.digests = true;
            o
        };
        let base1 = run_nc1_pipeline(&c1, &a1, &with(0.5, None)).map_err(|e| e.to_string())?;
        let nc = |seed| {
            let mut o = nc_opts(0.3, 0.2, Some(3), LevelsSource::Mr);
            o.run = with(0.3, seed);
            run_nc_pipeline(&c2, &a2, &o).map_err(|e| e.to_string())
        };
        let base2 = nc(None)?;
        let x: Vec<i64> = (0..32).map(|i| (i * 7 % 11) as i64 - 5).collect();
        let (machine, preload, _) = prefix_sums_machine(&x);
        let sim = |seed| -> Result<(Vec<i64>, Vec<Option<u64>>), String> {
            let plan = SimulationPlan::new(4, machine.processors, machine.registers).map_err(|e| e.to_string())?;
            let mut engine = Engine::new(BudgetConfig::new(0.5, 1e9, 1e9).unwrap().fix(1000), Mode::Advisory)
                .with_audit(seed)
                .with_digests(true);
            let regs = simulate_on(&mut engine, &machine, &preload, &plan).map_err(|e| e.to_string())?;
            Ok((regs, engine.into_report().digests()))
        };
        let base3 = sim(None)?;
        for seed in seeds {
            let r1 = run_nc1_pipeline(&c1, &a1, &with(0.5, Some(seed))).map_err(|e| e.to_string())?;
            ensure(r1.accept == base1.accept && r1.report.digests() == base1.report.digests(), || {
                format!("nc1 differs under seed {seed}")
            })?;
            let r2 = nc(Some(seed))?;
            ensure(r2.accept == base2.accept && r2.report.digests() == base2.report.digests(), || {
                format!("nc differs under seed {seed}")
            })?;
            ensure(sim(Some(seed))? == base3, || format!("crcw simulation differs under seed {seed}"))?;
        }
        let rounds = base1.report.round_count() + base2.report.round_count() + base3.1.len();
        Ok(format!("5 seeds, {rounds} round digests compared per seed"))
    });
}

#[test]
fn criterion_10_parameter_gates() {
    gate(10, "parameter gates", Duration::from_secs(10), || {
        let c = gen_parity(4).unwrap();
        let a = Assignment(vec![true, false, true, true]);
        let gated = |r: Result<_, Error>| matches!(r, Err(Error::Parameter(_)));
        ensure(gated(run_nc_pipeline(&c, &a, &nc_opts(0.5, 0.1, None, LevelsSource::Mr))), || {
            "nc accepted epsilon = 0.5".into()
        })?;
        for (eps, alpha) in [(0.3, 0.4), (0.3, 0.41), (0.1, 0.8), (0.25, 0.5)] {
            ensure(gated(run_nc_pipeline(&c, &a, &nc_opts(eps, alpha, None, LevelsSource::Mr))), || {
                format!("nc accepted alpha = {alpha} with epsilon = {eps}")
            })?;
        }
        let ok = run_nc_pipeline(&c, &a, &nc_opts(0.3, 0.39, None, LevelsSource::Mr)).map_err(|e| e.to_string())?;
        ensure(ok.accept == eval_direct(&c, &a).unwrap(), || "nc wrong just inside the alpha range".into())?;
        let nc1 = run_nc1_pipeline(&c, &a, &loose(0.5)).map_err(|e| e.to_string())?;
        ensure(nc1.accept == eval_direct(&c, &a).unwrap(), || "nc1 wrong at epsilon = 0.5".into())?;
        ensure(BudgetConfig::new(0.51, C_SPACE, C_TOTAL).is_err(), || "engine accepted epsilon > 1/2".into())?;
        Ok("nc rejects epsilon = 1/2 and alpha >= 1 - 2·epsilon; nc1 runs at epsilon = 1/2".into())
    });
}
