use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub fractions: [f64; 3],
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tab-separated `split<TAB>id` lines preceded by `#` provenance comments.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# seed={}\n# fractions={},{},{}\n",
            self.seed, self.fractions[0], self.fractions[1], self.fractions[2]
        );
        for split in Split::ALL {
            for id in self.ids(split) {
                out.push_str(&format!("{split}\t{id}\n"));
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut m = SplitManifest {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            seed: 0,
            fractions: [0.0; 3],
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("seed=") {
                    m.seed = v.parse().unwrap_or(0);
                } else if let Some(v) = comment.strip_prefix("fractions=") {
                    let parts: Vec<f64> = v.split(',').filter_map(|p| p.parse().ok()).collect();
                    if let [a, b, c] = parts[..] {
                        m.fractions = [a, b, c];
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (split, id) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!(
                    "manifest line {}: expected split<TAB>id",
                    lineno + 1
                ))
            })?;
            let split: Split = split
                .parse()
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", lineno + 1)))?;
            match split {
                Split::Train => m.train.push(id.to_string()),
                Split::Val => m.val.push(id.to_string()),
                Split::Test => m.test.push(id.to_string()),
            }
        }
        Ok(m)
    }
}

/// Seeded shuffle, then contiguous train/val/test partition. Validation and
/// test counts are rounded; train takes the remainder.
pub fn split_dataset(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<SplitManifest> {
    if ids.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 samples to split, got {}",
            ids.len()
        )));
    }
    if fractions.iter().any(|&f| !(f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = ids.len();
    let n_val = (n as f64 * fractions[1]).round() as usize;
    let n_test = (n as f64 * fractions[2]).round() as usize;
    if n_val + n_test >= n {
        return Err(Error::invalid(format!(
            "fractions {fractions:?} leave no training samples out of {n}"
        )));
    }
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n - n_val - n_test;
    let owned = |s: &[&String]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>();
    Ok(SplitManifest {
        train: owned(&order[..n_train]),
        val: owned(&order[n_train..n_train + n_val]),
        test: owned(&order[n_train + n_val..]),
        seed,
        fractions,
    })
}
