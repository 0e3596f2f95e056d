//! Joins per-arm history CSVs into a text table and two SVG plots.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use super::classify::{history_path, split_path, test_path, Arm};
use super::{read_text, write_atomic};
use crate::history::{parse_history, MetricsRecord, Phase, Provenance};
use crate::{Error, Result};

pub const TABLE_FILE: &str = "table.txt";
pub const ACCURACY_PLOT: &str = "accuracy.svg";
pub const LOSS_PLOT: &str = "loss.svg";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmReport {
    pub arm: Arm,
    pub provenance: Option<Provenance>,
    pub epochs: Vec<EpochRow>,
    /// Present once the arm has been evaluated.
    pub test: Option<MetricsRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub arms: Vec<ArmReport>,
}

/// Reads `config_hash` and `seed` from the first `#` line, if any.
fn parse_provenance(text: &str) -> Option<Provenance> {
    let comment = text.lines().find_map(|l| l.strip_prefix('#'))?;
    let mut hash = None;
    let mut seed = None;
    for field in comment.split_whitespace() {
        if let Some(v) = field.strip_prefix("config_hash=") {
            hash = Some(v.to_string());
        } else if let Some(v) = field.strip_prefix("seed=") {
            seed = v.parse().ok();
        }
    }
    Some(Provenance {
        config_hash: hash?,
        seed: seed?,
    })
}

fn parse_file(path: &Path) -> Result<(Vec<MetricsRecord>, Option<Provenance>)> {
    let text = read_text(path)?;
    let records = parse_history(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    Ok((records, parse_provenance(&text)))
}

fn epoch_rows(arm: Arm, records: &[MetricsRecord]) -> Result<Vec<EpochRow>> {
    let mut by_epoch: BTreeMap<usize, (Option<&MetricsRecord>, Option<&MetricsRecord>)> = BTreeMap::new();
    for r in records {
        let slot = by_epoch.entry(r.epoch).or_default();
        match r.phase {
            Phase::Train => slot.0 = Some(r),
            Phase::Val => slot.1 = Some(r),
            Phase::Test => {}
        }
    }
    by_epoch
        .into_iter()
        .map(|(epoch, pair)| match pair {
            (Some(t), Some(v)) => Ok(EpochRow {
                epoch,
                train_loss: t.loss,
                train_accuracy: t.accuracy,
                val_loss: v.loss,
                val_accuracy: v.accuracy,
            }),
            _ => Err(Error::Data(format!(
                "{arm} history lacks a train or val row for epoch {epoch}"
            ))),
        })
        .collect()
}

fn load_arm(report_dir: &Path, arm: Arm) -> Result<Option<ArmReport>> {
    let path = history_path(report_dir, arm);
    if !path.exists() {
        return Ok(None);
    }
    let (records, provenance) = parse_file(&path)?;
    let test_file = test_path(report_dir, arm);
    let test = if test_file.exists() {
        parse_file(&test_file)?.0.into_iter().find(|r| r.phase == Phase::Test)
    } else {
        None
    };
    Ok(Some(ArmReport {
        arm,
        provenance,
        epochs: epoch_rows(arm, &records)?,
        test,
    }))
}

fn provenance_lines(report: &ComparisonReport) -> String {
    report
        .arms
        .iter()
        .map(|a| match &a.provenance {
            Some(p) => format!("# {}: {}\n", a.arm, p.fields()),
            None => format!("# {}: no provenance\n", a.arm),
        })
        .collect()
}

pub fn render_table(report: &ComparisonReport) -> String {
    let mut out = provenance_lines(report);
    out.push_str(&format!(
        "{:<9} {:>5} {:>10} {:>10} {:>10} {:>10}\n",
        "arm", "epoch", "train_loss", "train_acc", "val_loss", "val_acc"
    ));
    for a in &report.arms {
        for r in &a.epochs {
            out.push_str(&format!(
                "{:<9} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
                a.arm.as_str(),
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                r.val_loss,
                r.val_accuracy
            ));
        }
    }
    if report.arms.iter().any(|a| a.test.is_some()) {
        out.push_str(&format!("\n{:<9} {:>10} {:>10}\n", "test", "loss", "accuracy"));
        for a in &report.arms {
            if let Some(t) = &a.test {
                out.push_str(&format!(
                    "{:<9} {:>10.4} {:>10.4}\n",
                    a.arm.as_str(),
                    t.loss,
                    t.accuracy
                ));
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Metric {
    Accuracy,
    Loss,
}

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Data(format!("plot rendering failed: {e}"))
}

fn render_plot(report: &ComparisonReport, metric: Metric) -> Result<String> {
    let pick = |r: &EpochRow| match metric {
        Metric::Accuracy => (r.train_accuracy, r.val_accuracy),
        Metric::Loss => (r.train_loss, r.val_loss),
    };
    let last_epoch = report
        .arms
        .iter()
        .flat_map(|a| a.epochs.iter().map(|r| r.epoch))
        .max()
        .unwrap_or(1);
    let y_max = match metric {
        Metric::Accuracy => 1.0,
        Metric::Loss => {
            let m = report
                .arms
                .iter()
                .flat_map(|a| a.epochs.iter().map(|r| pick(r).0.max(pick(r).1)))
                .filter(|v| v.is_finite())
                .fold(0.0f64, f64::max);
            if m > 0.0 {
                m * 1.1
            } else {
                1.0
            }
        }
    };
    let (title, label) = match metric {
        Metric::Accuracy => ("Accuracy per epoch", "accuracy"),
        Metric::Loss => ("Loss per epoch", "loss"),
    };

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(52)
            .build_cartesian_2d(0.5f64..last_epoch as f64 + 0.5, 0.0f64..y_max)
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc("epoch")
            .y_desc(label)
            .x_labels(last_epoch.min(12))
            .x_label_formatter(&|x| format!("{}", x.round() as i64))
            .draw()
            .map_err(plot_error)?;

        for a in &report.arms {
            let colour = match a.arm {
                Arm::Original => BLUE,
                Arm::Overlay => RED,
            };
            for (phase, width) in [(Phase::Train, 1), (Phase::Val, 3)] {
                let points: Vec<(f64, f64)> = a
                    .epochs
                    .iter()
                    .map(|r| {
                        let (t, v) = pick(r);
                        (r.epoch as f64, if phase == Phase::Train { t } else { v })
                    })
                    .collect();
                let style = colour.stroke_width(width);
                chart
                    .draw_series(LineSeries::new(points, style))
                    .map_err(plot_error)?
                    .label(format!("{} {}", a.arm, phase))
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], style));
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    Ok(format!("<!--\n{}-->\n{svg}", provenance_lines(report)))
}

/// Renders `table.txt`, `accuracy.svg` and `loss.svg` from whichever arm
/// histories exist in `report_dir`.
pub fn cmd_report(report_dir: &Path) -> Result<ComparisonReport> {
    let mut arms = Vec::new();
    for arm in Arm::BOTH {
        if let Some(a) = load_arm(report_dir, arm)? {
            arms.push(a);
        }
    }
    if arms.is_empty() {
        return Err(Error::Data(format!("no arm histories in {}", report_dir.display())));
    }
    let report = ComparisonReport { arms };
    write_atomic(&report_dir.join(TABLE_FILE), render_table(&report).as_bytes())?;
    write_atomic(
        &report_dir.join(ACCURACY_PLOT),
        render_plot(&report, Metric::Accuracy)?.as_bytes(),
    )?;
    write_atomic(
        &report_dir.join(LOSS_PLOT),
        render_plot(&report, Metric::Loss)?.as_bytes(),
    )?;
    Ok(report)
}

/// Like [`cmd_report`] but requires both arms, identical split files and
/// matching provenance.
pub fn cmd_compare_report(report_dir: &Path) -> Result<ComparisonReport> {
    for arm in Arm::BOTH {
        let path = history_path(report_dir, arm);
        if !path.exists() {
            return Err(Error::Data(format!(
                "missing history for the {arm} arm ({})",
                path.display()
            )));
        }
    }
    let splits: Vec<String> = Arm::BOTH
        .iter()
        .map(|&arm| {
            let path = split_path(report_dir, arm);
            if !path.exists() {
                return Err(Error::Data(format!(
                    "missing split for the {arm} arm ({})",
                    path.display()
                )));
            }
            read_text(&path)
        })
        .collect::<Result<_>>()?;
    if splits[0] != splits[1] {
        return Err(Error::Data("the two arms were trained on different splits".into()));
    }
    let report = cmd_report(report_dir)?;
    if report.arms[0].provenance != report.arms[1].provenance {
        return Err(Error::Data(
            "the two arms were trained under different configs or seeds".into(),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_comment_parses() {
        let p = parse_provenance("# config_hash=abc seed=4\nepoch").unwrap();
        assert_eq!(
            p,
            Provenance {
                config_hash: "abc".into(),
                seed: 4
            }
        );
        assert_eq!(parse_provenance("epoch,phase"), None);
    }

    #[test]
    fn incomplete_epochs_are_rejected() {
        let r = [MetricsRecord::new(1, Phase::Train, 0.5, 0.5)];
        assert!(matches!(epoch_rows(Arm::Original, &r), Err(Error::Data(_))));
    }
}
