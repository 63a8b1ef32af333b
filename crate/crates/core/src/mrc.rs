//! Deterministic MapReduce rounds with word-level budget accounting.
//!
//! A pair `⟨key; value⟩` occupies one word for the key plus the value's encoded length.
//! Within a shuffle group values are ordered by their encoded word sequence, so replays are
//! deterministic; the audit mode permutes each group with a seeded shuffle instead.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// A value that can be serialized to machine words.
pub trait Value: Clone + Send + Sync + fmt::Debug {
    fn encode(&self, out: &mut Vec<u64>);

    fn words(&self) -> usize {
        let mut buf = Vec::new();
        self.encode(&mut buf);
        buf.len()
    }
}

impl Value for u64 {
    fn encode(&self, out: &mut Vec<u64>) {
        out.push(*self);
    }

    fn words(&self) -> usize {
        1
    }
}

impl Value for Vec<u64> {
    fn encode(&self, out: &mut Vec<u64>) {
        out.extend_from_slice(self);
    }

    fn words(&self) -> usize {
        self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair<V> {
    pub key: u64,
    pub value: V,
}

impl<V: Value> Pair<V> {
    pub fn new(key: u64, value: V) -> Pair<V> {
        Pair { key, value }
    }

    pub fn words(&self) -> u64 {
        1 + self.value.words() as u64
    }
}

pub fn pair<V>(key: u64, value: V) -> Pair<V> {
    Pair { key, value }
}

/// Total word size of a multiset of pairs.
pub fn words_of<V: Value>(pairs: &[Pair<V>]) -> u64 {
    pairs.iter().map(Pair::words).sum()
}

type Mapper<'a, V> = Box<dyn Fn(Pair<V>) -> Vec<Pair<V>> + Send + Sync + 'a>;
type Reducer<'a, V> = Box<dyn Fn(u64, Vec<V>) -> Vec<Pair<V>> + Send + Sync + 'a>;

/// One map, shuffle, reduce round.
pub struct Round<'a, V> {
    pub name: String,
    mapper: Mapper<'a, V>,
    reducer: Reducer<'a, V>,
}

impl<'a, V: Value> Round<'a, V> {
    pub fn new(
        name: impl Into<String>,
        mapper: impl Fn(Pair<V>) -> Vec<Pair<V>> + Send + Sync + 'a,
        reducer: impl Fn(u64, Vec<V>) -> Vec<Pair<V>> + Send + Sync + 'a,
    ) -> Round<'a, V> {
        Round {
            name: name.into(),
            mapper: Box::new(mapper),
            reducer: Box::new(reducer),
        }
    }

    /// A round whose mapper passes every pair through unchanged.
    pub fn reduce_only(
        name: impl Into<String>,
        reducer: impl Fn(u64, Vec<V>) -> Vec<Pair<V>> + Send + Sync + 'a,
    ) -> Round<'a, V> {
        Round::new(name, |p| vec![p], reducer)
    }

    pub fn identity(name: impl Into<String>) -> Round<'a, V> {
        Round::new(
            name,
            |p| vec![p],
            |k, vs| vs.into_iter().map(|v| pair(k, v)).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetConfig {
    pub epsilon: f64,
    pub c_space: f64,
    pub c_total: f64,
}

impl Default for BudgetConfig {
    fn default() -> BudgetConfig {
        BudgetConfig {
            epsilon: 0.5,
            c_space: 64.0,
            c_total: 8.0,
        }
    }
}

impl BudgetConfig {
    pub fn new(epsilon: f64, c_space: f64, c_total: f64) -> Result<BudgetConfig> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(Error::Parameter(format!("epsilon must lie in (0, 1/2], got {epsilon}")));
        }
        if !(c_space > 0.0 && c_total > 0.0) {
            return Err(Error::Parameter("budget constants must be positive".into()));
        }
        Ok(BudgetConfig {
            epsilon,
            c_space,
            c_total,
        })
    }

    /// Fixes `N` to the word size of the pipeline input.
    pub fn fix(self, n_words: u64) -> Budget {
        Budget {
            epsilon: self.epsilon,
            n_words: n_words.max(1),
            c_space: self.c_space,
            c_total: self.c_total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Budget {
    pub epsilon: f64,
    pub n_words: u64,
    pub c_space: f64,
    pub c_total: f64,
}

impl Budget {
    pub fn reducer_limit(&self) -> u64 {
        (self.c_space * (self.n_words as f64).powf(1.0 - self.epsilon)).ceil() as u64
    }

    pub fn total_limit(&self) -> u64 {
        (self.c_total * (self.n_words as f64).powf(2.0 * (1.0 - self.epsilon))).ceil() as u64
    }

    /// `N^(1-ε)`, the natural fan-in for aggregation trees.
    pub fn fan_in(&self) -> u64 {
        ((self.n_words as f64).powf(1.0 - self.epsilon).floor() as u64).max(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Strict,
    Advisory,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct RoundStats {
    pub stage: String,
    pub name: String,
    pub keys: u64,
    pub max_reducer_in_words: u64,
    pub max_reducer_out_words: u64,
    pub max_mapper_out_words: u64,
    pub shuffle_words: u64,
    pub output_words: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_digest: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub round: usize,
    pub kind: String,
    pub measured: u64,
    pub limit: u64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "round {}: {} = {} exceeds limit {}",
            self.round, self.kind, self.measured, self.limit
        )
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct BudgetReport {
    pub rounds: Vec<RoundStats>,
    pub violations: Vec<Violation>,
}

impl BudgetReport {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    /// Number of rounds tagged with `stage`.
    pub fn stage_rounds(&self, stage: &str) -> usize {
        self.rounds.iter().filter(|r| r.stage == stage).count()
    }

    pub fn digests(&self) -> Vec<Option<u64>> {
        self.rounds.iter().map(|r| r.output_digest).collect()
    }

    /// One JSON record per round.
    pub fn write_json_lines(&self, mut out: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            stage: &'a str,
            round: usize,
            name: &'a str,
            keys: u64,
            max_in_words: u64,
            max_out_words: u64,
            shuffle_words: u64,
            violation: Vec<&'a Violation>,
        }
        for (i, r) in self.rounds.iter().enumerate() {
            let rec = Record {
                stage: &r.stage,
                round: i,
                name: &r.name,
                keys: r.keys,
                max_in_words: r.max_reducer_in_words,
                max_out_words: r.max_reducer_out_words,
                shuffle_words: r.shuffle_words,
                violation: self.violations.iter().filter(|v| v.round == i).collect(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

fn round_violations(round: usize, s: &RoundStats, budget: &Budget) -> Vec<Violation> {
    let (rl, tl) = (budget.reducer_limit(), budget.total_limit());
    [
        ("reducer input", s.max_reducer_in_words, rl),
        ("reducer output", s.max_reducer_out_words, rl),
        ("mapper output", s.max_mapper_out_words, rl),
        ("shuffle total", s.shuffle_words, tl),
        ("output total", s.output_words, tl),
    ]
    .into_iter()
    .filter(|&(_, measured, limit)| measured > limit)
    .map(|(kind, measured, limit)| Violation {
        round,
        kind: kind.to_string(),
        measured,
        limit,
    })
    .collect()
}

/// Pure re-evaluation of every round against the limits.
pub fn check_budget(report: &BudgetReport, budget: &Budget) -> Vec<Violation> {
    report
        .rounds
        .iter()
        .enumerate()
        .flat_map(|(i, s)| round_violations(i, s, budget))
        .collect()
}

struct Encoded<V> {
    key: u64,
    words: Vec<u64>,
    value: V,
}

fn encode_all<V: Value>(pairs: Vec<Pair<V>>) -> Vec<Encoded<V>> {
    pairs
        .into_par_iter()
        .map(|p| {
            let mut words = Vec::new();
            p.value.encode(&mut words);
            Encoded {
                key: p.key,
                words,
                value: p.value,
            }
        })
        .collect()
}

fn group<V: Send>(mut enc: Vec<Encoded<V>>) -> Vec<(u64, Vec<Encoded<V>>)> {
    enc.par_sort_unstable_by(|a, b| (a.key, &a.words).cmp(&(b.key, &b.words)));
    let mut groups: Vec<(u64, Vec<Encoded<V>>)> = Vec::new();
    for e in enc {
        match groups.last_mut() {
            Some((k, g)) if *k == e.key => g.push(e),
            _ => groups.push((e.key, vec![e])),
        }
    }
    groups
}

/// Groups pairs by key in ascending key order, values in canonical order.
pub fn shuffle<V: Value>(pairs: Vec<Pair<V>>) -> Vec<(u64, Vec<V>)> {
    group(encode_all(pairs))
        .into_iter()
        .map(|(k, g)| (k, g.into_iter().map(|e| e.value).collect()))
        .collect()
}

/// Order-independent digest of a pair multiset.
pub fn multiset_digest<V: Value>(pairs: &[Pair<V>]) -> u64 {
    let mut enc: Vec<(u64, Vec<u64>)> = pairs
        .par_iter()
        .map(|p| {
            let mut w = Vec::new();
            p.value.encode(&mut w);
            (p.key, w)
        })
        .collect();
    enc.par_sort_unstable();
    let mut h = DefaultHasher::new();
    enc.hash(&mut h);
    h.finish()
}

/// Word totals of pairs parked outside the current stage.
///
/// Parked pairs behave as if each round re-emitted them unchanged through an
/// identity reducer on keys no active pair uses, so they are charged to the
/// shuffle and output totals and to the per-reducer maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Resting {
    pub words: u64,
    pub keys: u64,
    pub max_group_words: u64,
}

impl Resting {
    pub fn of<V: Value>(pairs: &[Pair<V>]) -> Resting {
        let mut per_key: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
        for p in pairs {
            *per_key.entry(p.key).or_default() += p.words();
        }
        Resting {
            words: per_key.values().sum(),
            keys: per_key.len() as u64,
            max_group_words: per_key.values().copied().max().unwrap_or(0),
        }
    }
}

/// Runs rounds one at a time and accumulates a [`BudgetReport`].
#[derive(Clone)]
pub struct Engine {
    pub budget: Budget,
    pub mode: Mode,
    audit_seed: Option<u64>,
    track_digests: bool,
    stage: String,
    resting: Resting,
    report: BudgetReport,
}

impl Engine {
    pub fn new(budget: Budget, mode: Mode) -> Engine {
        Engine {
            budget,
            mode,
            audit_seed: None,
            track_digests: false,
            stage: String::new(),
            resting: Resting::default(),
            report: BudgetReport::default(),
        }
    }

    /// Permute every reducer's value list with a shuffle seeded by `seed`, round and key.
    pub fn with_audit(mut self, seed: Option<u64>) -> Engine {
        self.audit_seed = seed;
        self
    }

    /// Record a multiset digest of each round's output.
    pub fn with_digests(mut self, on: bool) -> Engine {
        self.track_digests = on;
        self
    }

    pub fn set_stage(&mut self, stage: &str) {
        self.stage = stage.to_string();
    }

    /// Park pairs of another stage for the following rounds.
    pub fn set_resting(&mut self, resting: Resting) {
        self.resting = resting;
    }

    /// Tags every round from index `start` on with `stage`.
    pub fn relabel_since(&mut self, start: usize, stage: &str) {
        for r in self.report.rounds.iter_mut().skip(start) {
            r.stage = stage.to_string();
        }
        self.stage = stage.to_string();
    }

    pub fn report(&self) -> &BudgetReport {
        &self.report
    }

    pub fn into_report(self) -> BudgetReport {
        self.report
    }

    pub fn rounds_run(&self) -> usize {
        self.report.rounds.len()
    }

    pub fn round<V: Value>(&mut self, input: Vec<Pair<V>>, round: &Round<'_, V>) -> Result<Vec<Pair<V>>> {
        let index = self.report.rounds.len();
        let mapped: Vec<Vec<Pair<V>>> = input.into_par_iter().map(|p| (round.mapper)(p)).collect();
        let max_mapper_out_words = mapped.par_iter().map(|ps| words_of(ps)).max().unwrap_or(0);
        let shuffled: Vec<Pair<V>> = mapped.into_iter().flatten().collect();
        let shuffle_words = words_of(&shuffled);
        let groups = group(encode_all(shuffled));
        let keys = groups.len() as u64;
        let audit = self.audit_seed;

        let reduced: Vec<(u64, u64, std::result::Result<Vec<Pair<V>>, u64>)> = groups
            .into_par_iter()
            .map(|(key, g)| {
                let in_words: u64 = g.iter().map(|e| 1 + e.words.len() as u64).sum();
                let mut values: Vec<V> = g.into_iter().map(|e| e.value).collect();
                if let Some(seed) = audit {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ key.rotate_left(29),
                    );
                    values.shuffle(&mut rng);
                }
                let out = (round.reducer)(key, values);
                let out_words = words_of(&out);
                match out.iter().find(|p| p.key != key) {
                    Some(p) => (in_words, out_words, Err(p.key)),
                    None => (in_words, out_words, Ok(out)),
                }
            })
            .collect();

        let mut stats = RoundStats {
            stage: self.stage.clone(),
            name: round.name.clone(),
            keys: keys + self.resting.keys,
            max_mapper_out_words,
            shuffle_words: shuffle_words + self.resting.words,
            max_reducer_in_words: self.resting.max_group_words,
            max_reducer_out_words: self.resting.max_group_words,
            output_words: self.resting.words,
            ..RoundStats::default()
        };
        let mut output = Vec::new();
        let mut foreign = None;
        for (in_words, out_words, res) in reduced {
            stats.max_reducer_in_words = stats.max_reducer_in_words.max(in_words);
            stats.max_reducer_out_words = stats.max_reducer_out_words.max(out_words);
            stats.output_words += out_words;
            match res {
                Ok(out) => output.extend(out),
                Err(emitted) => foreign = foreign.or(Some(emitted)),
            }
        }
        if let Some(emitted) = foreign {
            return Err(Error::ForeignKey {
                round: index,
                key: emitted,
                emitted,
            });
        }
        if self.track_digests {
            stats.output_digest = Some(multiset_digest(&output));
        }
        let violations = round_violations(index, &stats, &self.budget);
        self.report.rounds.push(stats);
        if self.mode == Mode::Strict {
            if let Some(v) = violations.first() {
                let err = Error::Budget {
                    round: v.round,
                    kind: v.kind.clone(),
                    measured: v.measured,
                    limit: v.limit,
                };
                self.report.violations.extend(violations);
                return Err(err);
            }
        }
        self.report.violations.extend(violations);
        Ok(output)
    }

    /// Runs several rounds in sequence.
    pub fn run<V: Value>(&mut self, mut data: Vec<Pair<V>>, rounds: &[Round<'_, V>]) -> Result<Vec<Pair<V>>> {
        for r in rounds {
            data = self.round(data, r)?;
        }
        Ok(data)
    }
}

/// Engine settings shared by the pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RunOptions {
    pub config: BudgetConfig,
    pub mode: Mode,
    pub audit_seed: Option<u64>,
    pub digests: bool,
}

impl RunOptions {
    pub fn new(config: BudgetConfig, mode: Mode) -> RunOptions {
        RunOptions {
            config,
            mode,
            audit_seed: None,
            digests: false,
        }
    }

    pub fn engine(&self, n_words: u64) -> Engine {
        Engine::new(self.config.fix(n_words), self.mode)
            .with_audit(self.audit_seed)
            .with_digests(self.digests)
    }
}

/// Executes `program` on `input`, fixing `N` to the input's word size.
pub fn run_program<V: Value>(
    program: &[Round<'_, V>],
    input: Vec<Pair<V>>,
    config: BudgetConfig,
    mode: Mode,
) -> Result<(Vec<Pair<V>>, BudgetReport)> {
    if program.is_empty() {
        return Err(Error::InvalidArgument("program has no rounds".into()));
    }
    let mut engine = Engine::new(config.fix(words_of(&input)), mode);
    let out = engine.run(input, program)?;
    Ok((out, engine.into_report()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::HashMap;

    fn generous() -> BudgetConfig {
        BudgetConfig::new(0.5, 1e9, 1e9).unwrap()
    }

    #[test]
    fn resting_pairs_count_like_identity_reducers() {
        let active: Vec<Pair<u64>> = (0..10).map(|i| pair(i % 3, i)).collect();
        let parked: Vec<Pair<u64>> = (0..7).map(|i| pair(100 + i % 2, i)).collect();
        let id = Round::new("id", |p: Pair<u64>| vec![p], |k, vs: Vec<u64>| vs.into_iter().map(|v| pair(k, v)).collect());

        let mut carried = Engine::new(generous().fix(17), Mode::Advisory);
        let mut all = active.clone();
        all.extend(parked.iter().cloned());
        carried.round(all, &id).unwrap();

        let mut rested = Engine::new(generous().fix(17), Mode::Advisory);
        rested.set_stage("a");
        rested.set_resting(Resting::of(&parked));
        rested.round(active, &id).unwrap();
        rested.round(vec![], &id).unwrap();
        rested.relabel_since(1, "b");

        let (x, y) = (&carried.report().rounds[0], &rested.report().rounds[0]);
        assert_eq!(x.keys, y.keys);
        assert_eq!(x.shuffle_words, y.shuffle_words);
        assert_eq!(x.output_words, y.output_words);
        assert_eq!(x.max_reducer_in_words, y.max_reducer_in_words);
        let stages: Vec<&str> = rested.report().rounds.iter().map(|r| r.stage.as_str()).collect();
        assert_eq!(stages, ["a", "b"]);
    }

    #[test]
    fn shuffle_groups_in_key_order() {
        let out = shuffle(vec![pair(1, 7u64), pair(0, 9u64), pair(1, 3u64)]);
        assert_eq!(out, vec![(0, vec![9]), (1, vec![3, 7])]);
        assert!(shuffle(Vec::<Pair<u64>>::new()).is_empty());
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input: Vec<Pair<u64>> = (0..10_000)
            .map(|_| pair(rng.gen_range(0..50), rng.gen_range(0..20)))
            .collect();
        let mut flat: Vec<(u64, u64)> = shuffle(input.clone())
            .into_iter()
            .flat_map(|(k, vs)| vs.into_iter().map(move |v| (k, v)))
            .collect();
        let mut expected: Vec<(u64, u64)> = input.iter().map(|p| (p.key, p.value)).collect();
        flat.sort();
        expected.sort();
        assert_eq!(flat, expected);
    }

    #[test]
    fn identity_round() {
        let input: Vec<Pair<Vec<u64>>> = (0..30).map(|i| pair(i % 7, vec![i, i * i])).collect();
        let (out, report) = run_program(&[Round::identity("id")], input.clone(), generous(), Mode::Strict).unwrap();
        assert_eq!(report.round_count(), 1);
        assert!(report.violations.is_empty());
        assert_eq!(multiset_digest(&out), multiset_digest(&input));
        assert_eq!(report.rounds[0].shuffle_words, 90);
        assert_eq!(report.rounds[0].keys, 7);
    }

    #[test]
    fn fan_in_violation_in_strict_mode() {
        let n = 64u64;
        let input: Vec<Pair<u64>> = (0..n).map(|i| pair(i, i)).collect();
        let fan = Round::new(
            "fan",
            move |p: Pair<u64>| (0..n).map(|_| pair(0, p.value)).collect(),
            |k, vs: Vec<u64>| vec![pair(k, vs.len() as u64)],
        );
        let cfg = BudgetConfig::new(0.5, 1.0, 1e9).unwrap();
        let err = run_program(&[fan], input.clone(), cfg, Mode::Strict).unwrap_err();
        assert!(matches!(err, Error::Budget { round: 0, ref kind, .. } if kind == "reducer input"));

        let fan = Round::new(
            "fan",
            move |p: Pair<u64>| (0..n).map(|_| pair(0, p.value)).collect(),
            |k, vs: Vec<u64>| vec![pair(k, vs.len() as u64)],
        );
        let (out, report) = run_program(&[fan], input, cfg, Mode::Advisory).unwrap();
        assert_eq!(out, vec![pair(0, n * n)]);
        assert!(!report.violations.is_empty());
    }

    #[test]
    fn foreign_key_is_an_error() {
        let bad = Round::reduce_only("bad", |k, _vs: Vec<u64>| vec![pair(k + 1, 0)]);
        let err = run_program(&[bad], vec![pair(3, 1u64)], generous(), Mode::Advisory).unwrap_err();
        assert!(matches!(err, Error::ForeignKey { round: 0, key: 4, .. }));
    }

    #[test]
    fn word_count_matches_sequential_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let docs: Vec<Vec<u64>> = (0..40)
            .map(|_| (0..rng.gen_range(1..30)).map(|_| rng.gen_range(0..25)).collect())
            .collect();
        let input: Vec<Pair<Vec<u64>>> = docs.iter().enumerate().map(|(i, d)| pair(i as u64, d.clone())).collect();
        let count = Round::new(
            "count",
            |p: Pair<Vec<u64>>| p.value.iter().map(|&w| pair(w, vec![1])).collect(),
            |k, vs: Vec<Vec<u64>>| vec![pair(k, vec![vs.iter().map(|v| v[0]).sum()])],
        );
        let (out, _) = run_program(&[count], input, generous(), Mode::Strict).unwrap();
        let mut oracle: HashMap<u64, u64> = HashMap::new();
        for w in docs.iter().flatten() {
            *oracle.entry(*w).or_default() += 1;
        }
        let got: HashMap<u64, u64> = out.into_iter().map(|p| (p.key, p.value[0])).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn limits_are_inclusive() {
        let budget = BudgetConfig::new(0.5, 2.0, 3.0).unwrap().fix(100);
        assert_eq!((budget.reducer_limit(), budget.total_limit()), (20, 300));
        let mut report = BudgetReport {
            rounds: vec![RoundStats::default()],
            violations: vec![],
        };
        assert!(check_budget(&report, &budget).is_empty());
        report.rounds[0].shuffle_words = 300;
        report.rounds[0].max_reducer_in_words = 20;
        assert!(check_budget(&report, &budget).is_empty());
        report.rounds[0].shuffle_words = 301;
        assert_eq!(check_budget(&report, &budget).len(), 1);
    }

    #[test]
    fn check_budget_matches_independent_checker() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let eps = rng.gen_range(0.05..=0.5);
            let n = rng.gen_range(1..5000u64);
            let budget = BudgetConfig::new(eps, rng.gen_range(0.5..4.0), rng.gen_range(0.5..4.0))
                .unwrap()
                .fix(n);
            let rl = (budget.c_space * (n as f64).powf(1.0 - eps)).ceil() as u64;
            let tl = (budget.c_total * (n as f64).powf(2.0 - 2.0 * eps)).ceil() as u64;
            let rounds: Vec<RoundStats> = (0..5)
                .map(|_| RoundStats {
                    max_reducer_in_words: rng.gen_range(0..2 * rl + 2),
                    max_reducer_out_words: rng.gen_range(0..2 * rl + 2),
                    max_mapper_out_words: rng.gen_range(0..2 * rl + 2),
                    shuffle_words: rng.gen_range(0..2 * tl + 2),
                    output_words: rng.gen_range(0..2 * tl + 2),
                    ..RoundStats::default()
                })
                .collect();
            let expected: usize = rounds
                .iter()
                .map(|r| {
                    [r.max_reducer_in_words, r.max_reducer_out_words, r.max_mapper_out_words]
                        .iter()
                        .filter(|&&m| m > rl)
                        .count()
                        + [r.shuffle_words, r.output_words].iter().filter(|&&m| m > tl).count()
                })
                .sum();
            let report = BudgetReport { rounds, violations: vec![] };
            assert_eq!(check_budget(&report, &budget).len(), expected);
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let input: Vec<Pair<u64>> = (0..2000).map(|i| pair(i, i * 31 % 97)).collect();
                let r1 = Round::new("m", |p: Pair<u64>| vec![pair(p.value % 13, p.key)], |k, vs: Vec<u64>| {
                    vs.iter().enumerate().map(|(i, v)| pair(k, v * 1000 + i as u64)).collect()
                });
                let mut e = Engine::new(generous().fix(2000), Mode::Strict).with_digests(true);
                let out = e.run(input, &[r1]).unwrap();
                (out, e.into_report())
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn audit_permutes_values_but_keeps_sum_reducers_stable() {
        let input: Vec<Pair<u64>> = (0..500).map(|i| pair(i % 10, i)).collect();
        let sum = || Round::reduce_only("sum", |k, vs: Vec<u64>| vec![pair(k, vs.iter().sum())]);
        let first = || Round::reduce_only("first", |k, vs: Vec<u64>| vec![pair(k, vs[0])]);
        let digest = |seed: Option<u64>, r: Round<'_, u64>| {
            let mut e = Engine::new(generous().fix(1000), Mode::Strict).with_audit(seed).with_digests(true);
            e.round(input.clone(), &r).unwrap();
            e.into_report().rounds[0].output_digest.unwrap()
        };
        let base = digest(None, sum());
        assert!((0..5).all(|s| digest(Some(s), sum()) == base));
        let base = digest(None, first());
        assert!((0..5).any(|s| digest(Some(s), first()) != base));
    }
}
