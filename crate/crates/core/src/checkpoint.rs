//! Single-file model archive: a plain-text header with the model config and
//! training history, followed by the raw weight bytes.
//!
//! ```text
//! LEDNET-CHECKPOINT 1
//! kind=localizer
//! [config]
//! key=value
//! [history]
//! epoch,phase,loss,accuracy,...
//! [weights] <byte count>
//! <bytes>
//! ```

use std::path::Path;

use crate::history::{history_to_csv, parse_history, MetricsRecord};
use crate::{Error, Result};

const MAGIC: &str = "LEDNET-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    /// Ordered key/value pairs; keys must not contain `=` or newlines.
    pub config: Vec<(String, String)>,
    pub history: Vec<MetricsRecord>,
    pub weights: Vec<u8>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\nkind={}\n[config]\n", self.kind);
        for (k, v) in &self.config {
            head.push_str(&format!("{k}={v}\n"));
        }
        head.push_str("[history]\n");
        if !self.history.is_empty() {
            head.push_str(&history_to_csv(&self.history, None));
        }
        head.push_str(&format!("[weights] {}\n", self.weights.len()));
        let mut out = head.into_bytes();
        out.extend_from_slice(&self.weights);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line_no = 0;
        let mut next_line = || -> Result<(usize, &str)> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or(Error::Parse {
                line: line_no + 1,
                message: "unexpected end of checkpoint header".into(),
            })?;
            line_no += 1;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| Error::Parse {
                line: line_no,
                message: "header is not utf-8".into(),
            })?;
            pos += end + 1;
            Ok((line_no, line))
        };
        let bad = |line: usize, message: String| Error::Parse { line, message };

        let (n, magic) = next_line()?;
        if magic != MAGIC {
            return Err(bad(n, format!("not a checkpoint (starts with `{magic}`)")));
        }
        let (n, kind_line) = next_line()?;
        let kind = kind_line
            .strip_prefix("kind=")
            .ok_or_else(|| bad(n, "expected `kind=`".into()))?
            .to_string();
        let (n, section) = next_line()?;
        if section != "[config]" {
            return Err(bad(n, "expected `[config]`".into()));
        }
        let mut config = Vec::new();
        loop {
            let (n, line) = next_line()?;
            if line == "[history]" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(n, format!("expected key=value, got `{line}`")))?;
            config.push((k.to_string(), v.to_string()));
        }
        let mut history_text = String::new();
        let weight_len = loop {
            let (n, line) = next_line()?;
            if let Some(len) = line.strip_prefix("[weights] ") {
                break len
                    .parse::<usize>()
                    .map_err(|e| bad(n, format!("bad weight length: {e}")))?;
            }
            history_text.push_str(line);
            history_text.push('\n');
        };
        let history = if history_text.is_empty() {
            Vec::new()
        } else {
            parse_history(&history_text)?
        };
        let weights = &bytes[pos..];
        if weights.len() != weight_len {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "weights section holds {} bytes, header says {weight_len}",
                    weights.len()
                ),
            });
        }
        Ok(Self {
            kind,
            config,
            history,
            weights: weights.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Parse { line, message } => Error::Format {
                path: path.to_path_buf(),
                message: format!("line {line}: {message}"),
            },
            other => other,
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Config(format!("checkpoint config lacks `{key}`")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|e| Error::Config(format!("checkpoint `{key}={raw}`: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::Phase;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: "localizer".into(),
            config: vec![("depth".into(), "3".into()), ("lr".into(), "0.001".into())],
            history: vec![MetricsRecord::new(1, Phase::Train, 0.5, 0.5)],
            weights: vec![0, 10, 255, b'\n', b'[', 7],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        let empty = Checkpoint {
            history: vec![],
            weights: vec![],
            ..c
        };
        assert_eq!(Checkpoint::from_bytes(&empty.to_bytes()).unwrap(), empty);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage\n").is_err());
    }

    #[test]
    fn typed_lookup() {
        let c = sample();
        assert_eq!(c.get_parsed::<usize>("depth").unwrap(), 3);
        assert!(c.get("nope").is_err());
        assert!(c.expect_kind("classifier").is_err());
    }
}
