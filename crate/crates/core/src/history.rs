//! Per-epoch metrics and their CSV form.

use std::fmt;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Train,
    Val,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Val => "val",
            Phase::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Phase::Train),
            "val" => Some(Phase::Val),
            "test" => Some(Phase::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of a training history. Segmentation runs also carry mean IoU and
/// Dice over the phase's masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub accuracy: f64,
    pub overlap: Option<Overlap>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub iou: f64,
    pub dice: f64,
}

impl MetricsRecord {
    pub fn new(epoch: usize, phase: Phase, loss: f64, accuracy: f64) -> Self {
        Self {
            epoch,
            phase,
            loss,
            accuracy,
            overlap: None,
        }
    }
}

/// Config hash and seed stamped on every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn fields(&self) -> String {
        format!("config_hash={} seed={}", self.config_hash, self.seed)
    }

    pub fn comment_line(&self) -> String {
        format!("# {}\n", self.fields())
    }
}

const BASE_HEADER: &str = "epoch,phase,loss,accuracy";
const SEG_HEADER: &str = "epoch,phase,loss,accuracy,iou,dice";

/// Renders records as CSV. The IoU/Dice columns appear only when every
/// record carries them.
pub fn history_to_csv(records: &[MetricsRecord], provenance: Option<&Provenance>) -> String {
    let with_overlap = !records.is_empty() && records.iter().all(|r| r.overlap.is_some());
    let mut out = provenance.map(Provenance::comment_line).unwrap_or_default();
    out.push_str(if with_overlap { SEG_HEADER } else { BASE_HEADER });
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{:.8},{:.8}", r.epoch, r.phase, r.loss, r.accuracy));
        if let (true, Some(o)) = (with_overlap, r.overlap) {
            out.push_str(&format!(",{:.8},{:.8}", o.iou, o.dice));
        }
        out.push('\n');
    }
    out
}

/// Parses either header variant. `#` lines and blank lines are skipped.
pub fn parse_history(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut columns = None;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let Some(n) = columns else {
            columns = Some(match line {
                BASE_HEADER => 4,
                SEG_HEADER => 6,
                _ => return Err(err(format!("unexpected header `{line}`"))),
            });
            continue;
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n {
            return Err(err(format!("expected {n} fields, found {}", fields.len())));
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|e| err(format!("bad {name} `{}`: {e}", fields[idx])))
        };
        let epoch = fields[0]
            .parse::<usize>()
            .map_err(|e| err(format!("bad epoch `{}`: {e}", fields[0])))?;
        let phase = Phase::parse(fields[1]).ok_or_else(|| err(format!("unknown phase `{}`", fields[1])))?;
        let overlap = if n == 6 {
            Some(Overlap {
                iou: num(4, "iou")?,
                dice: num(5, "dice")?,
            })
        } else {
            None
        };
        records.push(MetricsRecord {
            epoch,
            phase,
            loss: num(2, "loss")?,
            accuracy: num(3, "accuracy")?,
            overlap,
        });
    }
    if columns.is_none() {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            message: "missing header".into(),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_round_trip() {
        let recs = vec![
            MetricsRecord::new(1, Phase::Train, 0.5, 0.75),
            MetricsRecord::new(1, Phase::Val, 0.25, 0.875),
        ];
        let prov = Provenance {
            config_hash: "0123abcd".into(),
            seed: 7,
        };
        let text = history_to_csv(&recs, Some(&prov));
        assert_eq!(
            text,
            "# config_hash=0123abcd seed=7\nepoch,phase,loss,accuracy\n1,train,0.50000000,0.75000000\n1,val,0.25000000,0.87500000\n"
        );
        assert_eq!(parse_history(&text).unwrap(), recs);
    }

    #[test]
    fn segmentation_round_trip() {
        let mut r = MetricsRecord::new(3, Phase::Val, 0.125, 0.5);
        r.overlap = Some(Overlap { iou: 0.5, dice: 0.75 });
        let text = history_to_csv(&[r], None);
        assert!(text.starts_with("epoch,phase,loss,accuracy,iou,dice\n"));
        assert_eq!(parse_history(&text).unwrap(), vec![r]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# c\nepoch,phase,loss,accuracy\n1,train,0.1,0.2\n2,train,oops,0.2\n";
        match parse_history(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_history("1,train,0.1,0.2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_history("epoch,phase,loss,accuracy\n1,dev,0.1,0.2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_history("").is_err());
    }
}
