//! Seeded 70/20/10 train/validation/test assignment.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Partition::Train),
            "val" => Some(Partition::Val),
            "test" => Some(Partition::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// `(floor(0.7n), floor(0.2n), remainder)`, in integer arithmetic.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let val = n * 2 / 10;
    (train, val, n - train - val)
}

/// Shuffles `0..n` with a ChaCha stream seeded by `seed`, then assigns the
/// first 70% to train, the next 20% to validation and the rest to test.
pub fn split(n: usize, seed: u64) -> SplitAssignment {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = split_sizes(n);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    SplitAssignment {
        train: order,
        val,
        test,
        seed,
    }
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, partition: Partition) -> &[usize] {
        match partition {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    /// Partition of every record index, in index order.
    pub fn partition_of_each(&self) -> Vec<Partition> {
        let mut out = vec![Partition::Train; self.len()];
        for &i in &self.val {
            out[i] = Partition::Val;
        }
        for &i in &self.test {
            out[i] = Partition::Test;
        }
        out
    }

    /// `index,partition` rows in index order, preceded by a comment line
    /// carrying the seed and any extra provenance.
    pub fn to_csv(&self, provenance: Option<&str>) -> String {
        let mut out = format!("# seed={}", self.seed);
        if let Some(p) = provenance {
            out.push(' ');
            out.push_str(p);
        }
        out.push_str("\nindex,partition\n");
        for (i, p) in self.partition_of_each().into_iter().enumerate() {
            out.push_str(&format!("{i},{p}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if let Some(comment) = line.strip_prefix('#') {
                for field in comment.split_whitespace() {
                    if let Some(v) = field.strip_prefix("seed=") {
                        seed = Some(v.parse::<u64>().map_err(|e| Error::Parse {
                            line: line_no,
                            message: format!("bad seed: {e}"),
                        })?);
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line.trim() != "index,partition" {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("expected header `index,partition`, got `{line}`"),
                    });
                }
                saw_header = true;
                continue;
            }
            let (idx, part) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected two fields".into(),
            })?;
            let idx: usize = idx.trim().parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad index: {e}"),
            })?;
            let part = Partition::parse(part.trim()).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("unknown partition `{part}`"),
            })?;
            if idx != rows.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("index {idx} out of order"),
                });
            }
            rows.push(part);
        }
        let seed = seed.ok_or(Error::Parse {
            line: 1,
            message: "missing `# seed=` comment".into(),
        })?;
        // Rebuilding from rows loses the shuffled order inside each
        // partition; regenerate and verify instead.
        let regenerated = split(rows.len(), seed);
        if regenerated.partition_of_each() != rows {
            return Err(Error::Data(format!(
                "split file does not match the seeded split for n={} seed={seed}",
                rows.len()
            )));
        }
        Ok(regenerated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sizes() {
        assert_eq!(split_sizes(28629), (20040, 5725, 2864));
        assert_eq!(split_sizes(10), (7, 2, 1));
        assert_eq!(split_sizes(0), (0, 0, 0));
        let s = split(10, 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 2, 1));
    }

    #[test]
    fn seeded_split_is_reproducible() {
        assert_eq!(split(100, 42), split(100, 42));
        assert_ne!(split(100, 42), split(100, 43));
    }

    #[test]
    fn csv_round_trip() {
        let s = split(37, 9);
        let text = s.to_csv(Some("config_hash=abc"));
        assert!(text.starts_with("# seed=9 config_hash=abc\n"));
        assert_eq!(SplitAssignment::from_csv(&text).unwrap(), s);
    }

    #[test]
    fn tampered_csv_is_rejected() {
        let s = split(12, 1);
        let text = s.to_csv(None).replacen(",train", ",test", 1);
        assert!(SplitAssignment::from_csv(&text).is_err());
        assert!(SplitAssignment::from_csv("index,partition\n0,train\n").is_err());
    }
}
