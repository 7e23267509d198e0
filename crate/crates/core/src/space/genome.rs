//! Architecture encoding: one operation choice per searchable block.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Choice {
    Conv3,
    Conv5,
    Skip,
}

impl Choice {
    pub const ALL: [Choice; 3] = [Choice::Conv3, Choice::Conv5, Choice::Skip];

    pub fn kernel_size(self) -> Option<usize> {
        match self {
            Choice::Conv3 => Some(3),
            Choice::Conv5 => Some(5),
            Choice::Skip => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Choice::Conv3 => "3",
            Choice::Conv5 => "5",
            Choice::Skip => "S",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Genome(pub Vec<Choice>);

impl Genome {
    pub fn uniform(choice: Choice, len: usize) -> Self {
        Genome(vec![choice; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every genome of the given length, in lexicographic order of choices.
    pub fn enumerate(len: usize) -> Vec<Genome> {
        let mut all = vec![Genome(Vec::with_capacity(len))];
        for _ in 0..len {
            all = all
                .into_iter()
                .flat_map(|g| {
                    Choice::ALL.iter().map(move |&c| {
                        let mut next = g.0.clone();
                        next.push(c);
                        Genome(next)
                    })
                })
                .collect();
        }
        all
    }
}

/// Each choice i.i.d. uniform over the three operations.
pub fn sample_uniform_genome(rng: &mut impl Rng, len: usize) -> Genome {
    Genome((0..len).map(|_| Choice::ALL[rng.random_range(0..3)]).collect())
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<&str> = self.0.iter().map(|c| c.token()).collect();
        f.write_str(&tokens.join(","))
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Genome("empty genome string".into()));
        }
        s.split(',')
            .map(|tok| match tok.trim() {
                "3" => Ok(Choice::Conv3),
                "5" => Ok(Choice::Conv5),
                "S" | "s" => Ok(Choice::Skip),
                other => Err(Error::Genome(format!("unknown token {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Genome)
    }
}

impl TryFrom<String> for Genome {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Genome> for String {
    fn from(g: Genome) -> String {
        g.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn parse_and_print() {
        let g: Genome = "3,5,S,3".parse().unwrap();
        assert_eq!(g.0, vec![Choice::Conv3, Choice::Conv5, Choice::Skip, Choice::Conv3]);
        assert_eq!(g.to_string(), "3,5,S,3");
        assert!("3,7".parse::<Genome>().is_err());
        assert!("".parse::<Genome>().is_err());
    }

    #[test]
    fn four_blocks_give_81_genomes() {
        let all = Genome::enumerate(4);
        assert_eq!(all.len(), 81);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 81);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            for c in sample_uniform_genome(&mut rng, 4).0 {
                counts[c as usize] += 1;
            }
        }
        let n = 12000.0;
        for c in counts {
            assert!((c as f64 / n - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - n / 3.0).powi(2) / (n / 3.0)).sum();
        assert!(chi2 < 13.8, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_is_seeded() {
        let a: Vec<_> = (0..20).map(|_| 0).scan(ChaCha8Rng::seed_from_u64(3), |r, _| Some(sample_uniform_genome(r, 4))).collect();
        let b: Vec<_> = (0..20).map(|_| 0).scan(ChaCha8Rng::seed_from_u64(3), |r, _| Some(sample_uniform_genome(r, 4))).collect();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn display_round_trips(idx in proptest::collection::vec(0usize..3, 1..10)) {
            let g = Genome(idx.into_iter().map(|i| Choice::ALL[i]).collect());
            prop_assert_eq!(g.to_string().parse::<Genome>().unwrap(), g);
        }
    }
}
