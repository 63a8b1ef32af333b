use std::collections::BTreeSet;

use proptest::prelude::*;

use dmrc::circuit::{eval_direct, gen_random_dag, parse_circuit, Assignment};
use dmrc::crcw::{crcw_prefix_sums, crcw_sort, prefix_sums_machine};
use dmrc::crcw_to_mrc::simulate_crcw;
use dmrc::mrc::{pair, BudgetConfig, Mode, Round, RunOptions};

fn loose() -> BudgetConfig {
    BudgetConfig::new(0.5, 1e9, 1e9).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prefix_kernel_matches_scan(x in prop::collection::vec(-1000i64..1000, 1..40)) {
        let scan: Vec<i64> = x.iter().scan(0, |acc, v| { *acc += v; Some(*acc) }).collect();
        prop_assert_eq!(crcw_prefix_sums(&x).unwrap().y, scan);
    }

    #[test]
    fn simulated_prefix_kernel_matches_direct_run(x in prop::collection::vec(-50i64..50, 1..24), m in 2u64..6) {
        let (machine, preload, layout) = prefix_sums_machine(&x);
        let (sim, _) = simulate_crcw(&machine, &preload, loose(), Mode::Advisory, Some(m)).unwrap();
        let direct = crcw_prefix_sums(&x).unwrap();
        prop_assert_eq!(&sim.registers, &direct.run.registers);
        for j in 0..x.len() {
            prop_assert_eq!(sim.registers[layout.y(j)], direct.y[j]);
        }
    }

    #[test]
    fn sort_kernel_matches_std_sort(set in prop::collection::btree_set(1u64..=30, 1..12)) {
        let v: Vec<u64> = set.iter().rev().copied().collect();
        let got = crcw_sort(&v, 30).unwrap().values;
        prop_assert_eq!(got, set.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn circuit_text_round_trips(n in 2usize..7, extra in 0usize..4, seed in any::<u64>()) {
        let depth = n + extra;
        let c = gen_random_dag(n, depth, seed).unwrap();
        let back = parse_circuit(&c.to_string()).unwrap();
        prop_assert_eq!(back.to_string(), c.to_string());
        for a in Assignment::all(n).take(16) {
            prop_assert_eq!(eval_direct(&back, &a).unwrap(), eval_direct(&c, &a).unwrap());
        }
    }

    #[test]
    fn round_preserves_multiset_under_identity(vals in prop::collection::vec((0u64..20, 0u64..1000), 0..60)) {
        let input: Vec<_> = vals.iter().map(|&(k, v)| pair(k, v)).collect();
        let mut engine = RunOptions::new(loose(), Mode::Advisory).engine(vals.len().max(1) as u64);
        let round = Round::new("identity", |p| vec![p], |k, vs: Vec<u64>| vs.into_iter().map(|v| pair(k, v)).collect());
        let out = engine.round(input, &round).unwrap();
        let mut a: Vec<(u64, u64)> = out.iter().map(|p| (p.key, p.value)).collect();
        let mut b = vals.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let keys: BTreeSet<u64> = vals.iter().map(|&(k, _)| k).collect();
        prop_assert_eq!(engine.report().rounds[0].keys, keys.len() as u64);
    }
}
