//! Datasets of fixed-length categorical sequences and synthetic generators.
//!
//! File format: a header line `K=<k> D=<d>` followed by one comma-separated
//! sequence per line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Sequence;
use crate::prob::{child_seed, sample_categorical, ProbVector, Rng};

/// Per-element replacement probability for the two-mode generator.
pub const TWO_MODE_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub k: usize,
    pub d: usize,
    pub sequences: Vec<Sequence>,
    pub split: Split,
}

impl Dataset {
    pub fn new(k: usize, d: usize, sequences: Vec<Sequence>, split: Split) -> Result<Self> {
        let ds = Dataset {
            k,
            d,
            sequences,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.d == 0 {
            return Err(Error::Dataset(format!(
                "need K >= 2 and D >= 1, got K={} D={}",
                self.k, self.d
            )));
        }
        for (i, x) in self.sequences.iter().enumerate() {
            if x.len() != self.d {
                return Err(Error::Dataset(format!(
                    "sequence {i} has length {}, expected {}",
                    x.len(),
                    self.d
                )));
            }
            if let Some(v) = x.iter().find(|&&v| v >= self.k) {
                return Err(Error::Dataset(format!(
                    "sequence {i} has category {v} >= K={}",
                    self.k
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("K={} D={}\n", self.k, self.d);
        for x in &self.sequences {
            let line: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, split: Split) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Dataset("missing header".into()))?;
        let (k, d) = parse_header(header)?;
        let mut sequences = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let x = line
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Dataset(format!("line {}: {e}", n + 2)))?;
            sequences.push(x);
        }
        Dataset::new(k, d, sequences, split)
    }

    pub fn read(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse(&text, split)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = || Error::Dataset(format!("bad header {line:?}, expected `K=<k> D=<d>`"));
    let mut parts = line.split_whitespace();
    let k = parts
        .next()
        .and_then(|p| p.strip_prefix("K="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    let d = parts
        .next()
        .and_then(|p| p.strip_prefix("D="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((k, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Markov1,
    Iid,
    TwoMode,
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov1" => Ok(DataKind::Markov1),
            "iid" => Ok(DataKind::Iid),
            "two-mode" => Ok(DataKind::TwoMode),
            other => Err(Error::Config(format!("unknown data kind {other:?}"))),
        }
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Markov1 => "markov1",
            DataKind::Iid => "iid",
            DataKind::TwoMode => "two-mode",
        })
    }
}

/// A seeded synthetic source with an exactly computable sequence law.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Markov1 {
        init: ProbVector,
        transition: Vec<ProbVector>,
    },
    Iid {
        marginal: ProbVector,
    },
    TwoMode {
        templates: [Sequence; 2],
        noise: f64,
    },
}

fn random_row(k: usize, rng: &mut Rng) -> Result<ProbVector> {
    // Squared exponentials give rows with a few dominant entries.
    ProbVector::from_weights((0..k).map(|_| rng.exponential().powi(2) + 1e-3).collect())
}

impl Generator {
    pub fn from_seed(kind: DataKind, k: usize, d: usize, seed: u64) -> Result<Self> {
        if k < 2 || d == 0 {
            return Err(Error::Config(format!(
                "need K >= 2 and D >= 1, got K={k} D={d}"
            )));
        }
        let mut rng = Rng::new(child_seed(seed, 0));
        Ok(match kind {
            DataKind::Markov1 => Generator::Markov1 {
                init: random_row(k, &mut rng)?,
                transition: (0..k)
                    .map(|_| random_row(k, &mut rng))
                    .collect::<Result<_>>()?,
            },
            DataKind::Iid => Generator::Iid {
                marginal: random_row(k, &mut rng)?,
            },
            DataKind::TwoMode => {
                let a: Sequence = (0..d).map(|_| rng.below(k)).collect();
                let mut b: Sequence = (0..d).map(|_| rng.below(k)).collect();
                while b == a {
                    b = (0..d).map(|_| rng.below(k)).collect();
                }
                Generator::TwoMode {
                    templates: [a, b],
                    noise: TWO_MODE_NOISE,
                }
            }
        })
    }

    pub fn sample(&self, k: usize, d: usize, rng: &mut Rng) -> Result<Sequence> {
        match self {
            Generator::Markov1 { init, transition } => {
                let mut x = Vec::with_capacity(d);
                x.push(sample_categorical(init.as_slice(), rng)?);
                for i in 1..d {
                    x.push(sample_categorical(transition[x[i - 1]].as_slice(), rng)?);
                }
                Ok(x)
            }
            Generator::Iid { marginal } => (0..d)
                .map(|_| sample_categorical(marginal.as_slice(), rng))
                .collect(),
            Generator::TwoMode { templates, noise } => {
                let tpl = &templates[rng.below(2)];
                Ok(tpl
                    .iter()
                    .map(|&v| {
                        if rng.bernoulli(*noise) {
                            rng.below(k)
                        } else {
                            v
                        }
                    })
                    .collect())
            }
        }
    }

    /// Exact probability of a full sequence.
    pub fn probability(&self, x: &[usize], k: usize) -> f64 {
        match self {
            Generator::Markov1 { init, transition } => {
                let mut p = init.at(x[0]);
                for w in x.windows(2) {
                    p *= transition[w[0]].at(w[1]);
                }
                p
            }
            Generator::Iid { marginal } => x.iter().map(|&v| marginal.at(v)).product(),
            Generator::TwoMode { templates, noise } => {
                let one = |tpl: &Sequence| -> f64 {
                    x.iter()
                        .zip(tpl)
                        .map(|(&v, &t)| noise / k as f64 + if v == t { 1.0 - noise } else { 0.0 })
                        .product()
                };
                0.5 * (one(&templates[0]) + one(&templates[1]))
            }
        }
    }
}

/// Draws `count` sequences. Train and test splits share the generator and
/// use disjoint random streams.
pub fn make_data(
    kind: DataKind,
    k: usize,
    d: usize,
    count: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let generator = Generator::from_seed(kind, k, d, seed)?;
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = Rng::new(child_seed(seed, stream));
    let sequences = (0..count)
        .map(|_| generator.sample(k, d, &mut rng))
        .collect::<Result<_>>()?;
    Dataset::new(k, d, sequences, split)
}
