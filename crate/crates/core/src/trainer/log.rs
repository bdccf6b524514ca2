//! Per-step loss log (`train_log.csv`).

use std::io::Write;
use std::path::Path;

use crate::error::{JsccError, Result};

pub const LOG_HEADER: [&str; 8] = ["step", "epoch", "l_mse", "l_ssim", "l_combined", "l_gen", "l_disc", "l_l1"];

/// One logged step. Adversarial columns are empty for methods without a
/// discriminator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub l_mse: f64,
    pub l_ssim: f64,
    pub l_combined: f64,
    pub l_gen: Option<f64>,
    pub l_disc: Option<f64>,
    pub l_l1: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_log(out: &mut impl Write, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(out, "{}", LOG_HEADER.join(","))?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.l_mse,
            r.l_ssim,
            r.l_combined,
            cell(r.l_gen),
            cell(r.l_disc),
            cell(r.l_l1)
        )?;
    }
    Ok(())
}

pub fn save_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_log(&mut buf, rows).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| JsccError::io(path, e))
}

/// Mean of `l_combined` per epoch, in epoch order.
pub fn epoch_means(rows: &[LogRow]) -> Vec<f64> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((e, sum, n)) if *e == r.epoch => {
                *sum += r.l_combined;
                *n += 1;
            }
            _ => out.push((r.epoch, r.l_combined, 1)),
        }
    }
    out.into_iter().map(|(_, s, n)| s / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, epoch: usize, l: f64) -> LogRow {
        LogRow { step, epoch, l_mse: l, l_ssim: 0.5, l_combined: l, l_gen: None, l_disc: Some(1.25), l_l1: None }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_log(&mut buf, &[row(0, 0, 0.1)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,epoch,l_mse,l_ssim,l_combined,l_gen,l_disc,l_l1\n0,0,0.1,0.5,0.1,,1.25,\n"
        );
    }

    #[test]
    fn means_per_epoch() {
        let rows = [row(0, 0, 1.0), row(1, 0, 3.0), row(2, 1, 0.5)];
        assert_eq!(epoch_means(&rows), vec![2.0, 0.5]);
    }
}
