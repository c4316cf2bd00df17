use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{io_err, Result};
use crate::metrics::{DetReport, SegScores};
use crate::training::EpochLog;

/// Column order of epoch-log CSV files.
pub const EPOCH_LOG_HEADER: [&str; 7] = [
    "epoch",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "lr",
    "val_metric",
];

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Floats use Rust's shortest round-trip formatting, so parsing a field
/// back yields the identical value.
fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_epoch_logs_csv(logs: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EPOCH_LOG_HEADER)?;
    for l in logs {
        w.write_record([
            l.epoch.to_string(),
            l.train_loss.to_string(),
            l.train_acc.to_string(),
            l.val_loss.to_string(),
            l.val_acc.to_string(),
            l.lr.to_string(),
            l.val_metric.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_epoch_logs_csv(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// JSON detail at `stem.json` and a one-row CSV summary at `stem.csv` with
/// columns `tp,tn,fp,fn,accuracy,precision,recall,f1` (undefined rates are
/// empty fields).
pub fn write_det_report(report: &DetReport, stem: &Path) -> Result<()> {
    write_json(report, &stem.with_extension("json"))?;
    let path = stem.with_extension("csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["tp", "tn", "fp", "fn", "accuracy", "precision", "recall", "f1"])?;
    let (c, r) = (report.counts, report.rates);
    w.write_record([
        c.tp.to_string(),
        c.tn.to_string(),
        c.fp.to_string(),
        c.fn_.to_string(),
        opt(r.accuracy),
        opt(r.precision),
        opt(r.recall),
        opt(r.f1),
    ])?;
    w.flush().map_err(io_err(&path))
}

/// JSON at `stem.json`, CSV `jaccard,dice` at `stem.csv`.
pub fn write_seg_scores(scores: &SegScores, stem: &Path) -> Result<()> {
    write_json(scores, &stem.with_extension("json"))?;
    let path = stem.with_extension("csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["jaccard", "dice"])?;
    w.write_record([scores.jaccard.to_string(), scores.dice.to_string()])?;
    w.flush().map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ConfusionCounts, ImageDetection};

    #[test]
    fn epoch_logs_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let logs = vec![
            EpochLog { epoch: 1, train_loss: 0.1 + 0.2, train_acc: 1.0 / 3.0, val_loss: 1e-9, val_acc: 0.5, lr: 1e-3, val_metric: 0.123456789012345 },
            EpochLog { epoch: 2, train_loss: 0.25, train_acc: 0.75, val_loss: 0.2, val_acc: 0.8, lr: 5e-4, val_metric: 0.9 },
        ];
        let p = dir.path().join("log.csv");
        write_epoch_logs_csv(&logs, &p).unwrap();
        assert_eq!(read_epoch_logs_csv(&p).unwrap(), logs);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,lr,val_metric\n"));
    }

    #[test]
    fn det_report_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let report = DetReport::from_images(vec![ImageDetection {
            image: "a".into(),
            counts: ConfusionCounts { tp: 3, tn: 4, fp: 1, fn_: 2 },
            rois: vec![],
        }]);
        let stem = dir.path().join("det");
        write_det_report(&report, &stem).unwrap();
        let back: DetReport =
            serde_json::from_str(&fs::read_to_string(stem.with_extension("json")).unwrap()).unwrap();
        assert_eq!(back, report);
        let csv = fs::read_to_string(stem.with_extension("csv")).unwrap();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[7], report.rates.f1.unwrap());
    }
}
