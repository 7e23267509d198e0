//! Elitist evolutionary search over genomes.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Scores;
use crate::space::{sample_uniform_genome, Choice, Genome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub rounds: usize,
    pub n_eval: usize,
    pub n_top: usize,
    pub p_mut: f64,
    /// Resampling attempts before a duplicate child is admitted.
    pub max_retries: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            rounds: 18,
            n_eval: 12,
            n_top: 12,
            p_mut: 0.1,
            max_retries: 50,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_eval == 0 || self.n_top == 0 {
            return Err(Error::Config("search.n_eval and search.n_top must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_mut) {
            return Err(Error::Config(format!("search.p_mut = {} outside [0, 1]", self.p_mut)));
        }
        Ok(())
    }
}

/// Anything that scores a genome; must be a pure function of the genome.
pub trait FitnessFn {
    fn evaluate(&mut self, genome: &Genome) -> Result<Scores>;
}

impl<F: FnMut(&Genome) -> Result<Scores>> FitnessFn for F {
    fn evaluate(&mut self, genome: &Genome) -> Result<Scores> {
        self(genome)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genome: Genome,
    pub scores: Scores,
}

impl Candidate {
    pub fn fitness(&self) -> f64 {
        self.scores.fitness
    }
}

/// One evaluated genome of one round (round 0 is the initial pool).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: usize,
    pub genome: Genome,
    pub war: f64,
    pub uar: f64,
    pub fitness: f64,
}

#[derive(Clone, Debug)]
pub struct SearchState {
    pub round: usize,
    pub p_eval: Vec<Candidate>,
    /// Sorted by fitness, descending; ties by genome string.
    pub p_top: Vec<Candidate>,
    /// Best elite fitness after each round, initial pool first.
    pub history: Vec<f64>,
    /// Best elite genome after each round.
    pub best_genomes: Vec<Genome>,
    pub log: Vec<LogRow>,
    cache: BTreeMap<String, Scores>,
}

impl SearchState {
    pub fn best(&self) -> &Candidate {
        &self.p_top[0]
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }

    fn score(&mut self, genome: &Genome, f: &mut impl FitnessFn) -> Result<Candidate> {
        let key = genome.to_string();
        let scores = match self.cache.get(&key) {
            Some(s) => *s,
            None => {
                let s = f.evaluate(genome)?;
                if !s.fitness.is_finite() {
                    return Err(Error::Numerical(format!("fitness of {genome} is {}", s.fitness)));
                }
                self.cache.insert(key, s);
                s
            }
        };
        self.log.push(LogRow {
            round: self.round,
            genome: genome.clone(),
            war: scores.war,
            uar: scores.uar,
            fitness: scores.fitness,
        });
        Ok(Candidate {
            genome: genome.clone(),
            scores,
        })
    }

    fn evaluate_pool(&mut self, genomes: Vec<Genome>, f: &mut impl FitnessFn) -> Result<()> {
        self.p_eval = genomes.iter().map(|g| self.score(g, f)).collect::<Result<_>>()?;
        Ok(())
    }

    fn select(&mut self, n_top: usize) {
        let mut merged: BTreeMap<String, Candidate> = BTreeMap::new();
        for c in self.p_top.iter().chain(&self.p_eval) {
            merged.entry(c.genome.to_string()).or_insert_with(|| c.clone());
        }
        let mut all: Vec<(String, Candidate)> = merged.into_iter().collect();
        all.sort_by(|a, b| b.1.fitness().total_cmp(&a.1.fitness()).then_with(|| a.0.cmp(&b.0)));
        self.p_top = all.into_iter().take(n_top).map(|(_, c)| c).collect();
        self.history.push(self.best().fitness());
        self.best_genomes.push(self.best().genome.clone());
    }

    fn seen(&self, g: &Genome, pending: &[Genome]) -> bool {
        self.cache.contains_key(&g.to_string()) || pending.contains(g)
    }
}

/// Draws `make()` until it yields a genome not evaluated before and not already
/// in `pending`, giving up after `retries` extra attempts.
fn fresh(state: &SearchState, pending: &[Genome], retries: usize, mut make: impl FnMut() -> Genome) -> Genome {
    let mut g = make();
    for _ in 0..retries {
        if !state.seen(&g, pending) {
            break;
        }
        g = make();
    }
    g
}

/// Random initial pool of `n_eval` genomes; its top `n_top` become the elites.
pub fn init_search(f: &mut impl FitnessFn, blocks: usize, cfg: &SearchConfig, rng: &mut impl Rng) -> Result<SearchState> {
    cfg.validate()?;
    let mut state = SearchState {
        round: 0,
        p_eval: Vec::new(),
        p_top: Vec::new(),
        history: Vec::new(),
        best_genomes: Vec::new(),
        log: Vec::new(),
        cache: BTreeMap::new(),
    };
    let mut pool = Vec::with_capacity(cfg.n_eval);
    for _ in 0..cfg.n_eval {
        let g = fresh(&state, &pool, cfg.max_retries, || sample_uniform_genome(rng, blocks));
        pool.push(g);
    }
    state.evaluate_pool(pool, f)?;
    state.select(cfg.n_top);
    Ok(state)
}

/// Uniform crossover of two parents followed by per-gene mutation to a different choice.
pub fn make_child(a: &Genome, b: &Genome, p_mut: f64, rng: &mut impl Rng) -> Genome {
    Genome(
        a.0.iter()
            .zip(&b.0)
            .map(|(&x, &y)| {
                let gene = if rng.random_bool(0.5) { x } else { y };
                if p_mut > 0.0 && rng.random_bool(p_mut) {
                    let others: Vec<Choice> = Choice::ALL.into_iter().filter(|&c| c != gene).collect();
                    *others.choose(rng).expect("two alternatives")
                } else {
                    gene
                }
            })
            .collect(),
    )
}

fn pick_parents<'a>(elites: &'a [Candidate], rng: &mut impl Rng) -> (&'a Genome, &'a Genome) {
    if elites.len() < 2 {
        return (&elites[0].genome, &elites[0].genome);
    }
    let i = rng.random_range(0..elites.len());
    let mut j = rng.random_range(0..elites.len() - 1);
    if j >= i {
        j += 1;
    }
    (&elites[i].genome, &elites[j].genome)
}

/// One generation: `n_eval` children from the elites, then elitist reselection.
pub fn evolve_round(state: &mut SearchState, f: &mut impl FitnessFn, cfg: &SearchConfig, rng: &mut impl Rng) -> Result<()> {
    state.round += 1;
    let elites = state.p_top.clone();
    let mut pool = Vec::with_capacity(cfg.n_eval);
    for _ in 0..cfg.n_eval {
        let g = fresh(state, &pool, cfg.max_retries, || {
            let (a, b) = pick_parents(&elites, rng);
            make_child(a, b, cfg.p_mut, rng)
        });
        pool.push(g);
    }
    state.evaluate_pool(pool, f)?;
    state.select(cfg.n_top);
    Ok(())
}

pub fn run_search(f: &mut impl FitnessFn, blocks: usize, cfg: &SearchConfig, seed: u64) -> Result<SearchState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_search(f, blocks, cfg, &mut rng)?;
    for _ in 0..cfg.rounds {
        evolve_round(&mut state, f, cfg, &mut rng)?;
    }
    Ok(state)
}

/// Best of `n` distinct uniformly sampled genomes (capped at the size of the space).
pub fn baseline_random_search(f: &mut impl FitnessFn, blocks: usize, n: usize, seed: u64) -> Result<(Candidate, Vec<Candidate>)> {
    if n == 0 {
        return Err(Error::Config("random search needs at least one sample".into()));
    }
    let space = 3usize.checked_pow(blocks as u32).unwrap_or(usize::MAX);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut all = Vec::new();
    while all.len() < n.min(space) {
        let g = sample_uniform_genome(&mut rng, blocks);
        if seen.insert(g.clone()) {
            let scores = f.evaluate(&g)?;
            all.push(Candidate { genome: g, scores });
        }
    }
    let best = all
        .iter()
        .min_by(|a, b| b.fitness().total_cmp(&a.fitness()).then_with(|| a.genome.to_string().cmp(&b.genome.to_string())))
        .expect("non-empty")
        .clone();
    Ok((best, all))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSampling {
    pub runs: Vec<Candidate>,
    pub mean_war: f64,
    pub mean_uar: f64,
}

/// Trains `k` uniformly sampled genomes from scratch with `train_and_eval` and averages their metrics.
pub fn baseline_random_sampling(
    k: usize,
    blocks: usize,
    seed: u64,
    mut train_and_eval: impl FnMut(usize, &Genome) -> Result<Scores>,
) -> Result<RandomSampling> {
    if k == 0 {
        return Err(Error::Config("random sampling needs at least one architecture".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genomes: Vec<Genome> = (0..k).map(|_| sample_uniform_genome(&mut rng, blocks)).collect();
    let runs = genomes
        .into_iter()
        .enumerate()
        .map(|(i, g)| Ok(Candidate { scores: train_and_eval(i, &g)?, genome: g }))
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&Candidate) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    Ok(RandomSampling {
        mean_war: mean(|c| c.scores.war),
        mean_uar: mean(|c| c.scores.uar),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// A rugged deterministic landscape over genomes.
    fn landscape(g: &Genome) -> Result<Scores> {
        let mut h: u64 = 1469598103934665603;
        for b in g.to_string().bytes() {
            h = (h ^ b as u64).wrapping_mul(1099511628211);
        }
        let v = (h % 10_000) as f64 / 10_000.0;
        Ok(Scores { war: v, uar: v, fitness: v })
    }

    fn exhaustive_best(blocks: usize) -> f64 {
        Genome::enumerate(blocks).iter().map(|g| landscape(g).unwrap().fitness).fold(0.0, f64::max)
    }

    #[test]
    fn identical_parents_without_mutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: Genome = "3,5,S,3".parse().unwrap();
        for _ in 0..20 {
            assert_eq!(make_child(&p, &p, 0.0, &mut rng), p);
        }
    }

    #[test]
    fn mutation_always_changes_the_gene() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Genome = "3,5,S,3".parse().unwrap();
        for _ in 0..20 {
            let c = make_child(&p, &p, 1.0, &mut rng);
            assert!(c.0.iter().zip(&p.0).all(|(a, b)| a != b));
        }
    }

    #[test]
    fn zero_rounds_is_best_of_initial_pool() {
        let cfg = SearchConfig { rounds: 0, ..SearchConfig::default() };
        let s = run_search(&mut landscape, 4, &cfg, 3).unwrap();
        let best = s.p_eval.iter().map(Candidate::fitness).fold(0.0, f64::max);
        assert_eq!(s.best().fitness(), best);
        assert_eq!(s.history.len(), 1);
        assert_eq!(s.log.len(), 12);
    }

    #[test]
    fn history_and_log_shapes() {
        let cfg = SearchConfig::default();
        let s = run_search(&mut landscape, 4, &cfg, 4).unwrap();
        assert_eq!(s.history.len(), 19);
        assert_eq!(s.log.len(), 19 * 12);
        assert!(s.history.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.p_top.len(), 12);
        assert!(s.p_top.windows(2).all(|w| w[0].fitness() >= w[1].fitness()));
    }

    #[test]
    fn finds_the_exhaustive_best() {
        let target = exhaustive_best(4);
        let hits = (0..10)
            .filter(|&seed| {
                let s = run_search(&mut landscape, 4, &SearchConfig::default(), seed).unwrap();
                (s.best().fitness() - target).abs() <= 1e-9
            })
            .count();
        assert!(hits >= 8, "{hits}/10");
    }

    #[test]
    fn random_search_over_the_whole_space_is_exhaustive() {
        let (best, all) = baseline_random_search(&mut landscape, 4, 81, 0).unwrap();
        assert_eq!(all.len(), 81);
        assert_eq!(best.fitness(), exhaustive_best(4));
        assert!(all.iter().all(|c| c.fitness() <= best.fitness()));
        let (one, all) = baseline_random_search(&mut landscape, 4, 1, 0).unwrap();
        assert_eq!(all[0], one);
    }

    #[test]
    fn random_sampling_averages() {
        let r = baseline_random_sampling(3, 4, 0, |i, _| {
            let v = i as f64 / 4.0;
            Ok(Scores { war: v, uar: 1.0 - v, fitness: 0.5 })
        })
        .unwrap();
        assert!((r.mean_war - 0.25).abs() < 1e-15);
        assert!((r.mean_uar - 0.75).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let a = run_search(&mut landscape, 5, &SearchConfig::default(), 9).unwrap();
        let b = run_search(&mut landscape, 5, &SearchConfig::default(), 9).unwrap();
        assert_eq!(a.log, b.log);
    }

    proptest! {
        #[test]
        fn elitism_never_loses_the_best(seed in 0u64..1000, rounds in 0usize..6) {
            let cfg = SearchConfig { rounds, n_eval: 4, n_top: 3, ..SearchConfig::default() };
            let s = run_search(&mut landscape, 6, &cfg, seed).unwrap();
            prop_assert!(s.history.windows(2).all(|w| w[0] <= w[1]));
            let best_logged = s.log.iter().map(|r| r.fitness).fold(0.0, f64::max);
            prop_assert_eq!(s.best().fitness(), best_logged);
        }
    }
}
