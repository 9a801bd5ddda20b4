//! Artifact writers. Every text artifact starts with the effective config
//! as `#` comment lines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use disco::analysis::{LogBins, MetricReport};
use disco::config::RunConfig;
use disco::datagen::{fmt17, Dataset};
use disco::sampler::Generated;
use serde_json::json;

use crate::Failure;

pub fn provenance(cfg: &RunConfig) -> String {
    let mut s = format!("# config_hash = {}\n", cfg.hash());
    for line in cfg.to_text().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

pub fn write_data(cfg: &RunConfig, data: &Dataset, path: &Path) -> Result<(), Failure> {
    let mut buf = provenance(cfg).into_bytes();
    data.write_csv(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_loss(cfg: &RunConfig, rows: &[(u64, f64)], path: &Path) -> Result<(), Failure> {
    let mut s = provenance(cfg);
    s.push_str("step,loss\n");
    for (step, loss) in rows {
        let _ = writeln!(s, "{step},{}", fmt17(*loss));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Rows of a loss CSV written by [`write_loss`].
pub fn read_loss(path: &Path) -> Result<Vec<(u64, f64)>, Failure> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("step"))
        .map(|l| {
            let (s, v) = l.split_once(',').ok_or_else(|| Failure::Usage(format!("bad loss row `{l}`")))?;
            Ok((
                s.parse().map_err(|_| Failure::Usage(format!("bad step `{s}`")))?,
                v.parse().map_err(|_| Failure::Usage(format!("bad loss `{v}`")))?,
            ))
        })
        .collect()
}

/// `x,y,latent_0..latent_{m-1},seed`; latents are `NA` for the baseline.
pub fn write_samples(cfg: &RunConfig, gen: &Generated, m: usize, path: &Path) -> Result<(), Failure> {
    let mut s = provenance(cfg);
    s.push_str("x,y,");
    for j in 0..m {
        let _ = write!(s, "latent_{j},");
    }
    s.push_str("seed\n");
    for ((p, z), seed) in gen.samples.iter().zip(&gen.latents).zip(&gen.seeds) {
        let _ = write!(s, "{},{},", fmt17(p[0]), fmt17(p[1]));
        for j in 0..m {
            match z {
                Some(z) => {
                    let _ = write!(s, "{},", z[j]);
                }
                None => s.push_str("NA,"),
            }
        }
        let _ = writeln!(s, "{seed}");
    }
    fs::write(path, s)?;
    Ok(())
}

fn bin_rows(s: &mut String, metric: &str, arm: &str, bins: &LogBins, values: &[Option<f64>], counts: &[usize]) {
    for ((c, v), n) in bins.centers().iter().zip(values).zip(counts) {
        match v {
            Some(v) => {
                let _ = writeln!(s, "{metric},{},{arm},{},{n}", fmt17(*c), fmt17(*v));
            }
            None => {
                let _ = writeln!(s, "{metric},{},{arm},NA,0", fmt17(*c));
            }
        }
    }
}

/// One row per `(metric, t_bin, arm, value, n)`; `t_bin` is the bin's
/// geometric centre or `NA` for whole-run scalars.
pub fn metrics_csv(cfg: &RunConfig, report: &MetricReport) -> String {
    let mut s = provenance(cfg);
    s.push_str("metric,t_bin,arm,value,n\n");
    for a in &report.arms {
        let arm = a.arm.as_str();
        let _ = writeln!(s, "w2,NA,{arm},{},{}", fmt17(a.w2), cfg.w2_points);
        let scalar = |s: &mut String, name: &str, v: Option<f64>, n: usize| {
            let v = v.map_or_else(|| "NA".to_string(), fmt17);
            let _ = writeln!(s, "{name},NA,{arm},{v},{n}");
        };
        scalar(&mut s, "mean_curvature", a.mean_curvature, a.curvature.count.iter().sum());
        scalar(&mut s, "mean_jac_D", a.mean_jacobian_d, a.jacobian.count.iter().sum());
        scalar(&mut s, "mean_jac_G", a.mean_jacobian_g, a.jacobian.count.iter().sum());
        bin_rows(&mut s, "curvature", arm, &a.curvature.bins, &a.curvature.mean, &a.curvature.count);
        bin_rows(&mut s, "jac_D", arm, &a.jacobian.bins, &a.jacobian.jac_d, &a.jacobian.count);
        bin_rows(&mut s, "jac_G", arm, &a.jacobian.bins, &a.jacobian.jac_g, &a.jacobian.count);
        bin_rows(&mut s, "loss", arm, &a.loss.bins, &a.loss.mean, &a.loss.count);
    }
    s
}

/// Ratios baseline / disco of the headline scalars, when both arms exist.
pub fn summary(report: &MetricReport) -> Option<serde_json::Value> {
    use disco::disco::Arm;
    let (d, b) = (report.arm(Arm::Disco)?, report.arm(Arm::Baseline)?);
    let ratio = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) if y > 0.0 => Some(x / y),
        _ => None,
    };
    Some(json!({
        "w2_disco": d.w2,
        "w2_baseline": b.w2,
        "w2_ratio_baseline_over_disco": b.w2 / d.w2,
        "curvature_ratio_baseline_over_disco": ratio(b.mean_curvature, d.mean_curvature),
        "jac_d_ratio_baseline_over_disco": ratio(b.mean_jacobian_d, d.mean_jacobian_d),
    }))
}

pub fn report_json(cfg: &RunConfig, report: &MetricReport) -> Result<String, Failure> {
    let value = json!({
        "config": cfg.to_text(),
        "config_hash": cfg.hash(),
        "report": report,
        "comparison": summary(report),
    });
    serde_json::to_string_pretty(&value).map_err(|e| Failure::Usage(e.to_string()))
}
