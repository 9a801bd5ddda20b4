use std::fs;
use std::path::{Path, PathBuf};

use disco::analysis::MetricReport;
use disco::checkpoint::{Checkpoint, PriorCheckpoint};
use disco::config::RunConfig;
use disco::datagen::Dataset;
use disco::disco::{Arm, DiscoModel};
use disco::latentprior::{latent_histogram, total_variation, LatentPrior};
use disco::pipeline::{self, derive_seed, streams, AnalysisInputs};
use disco::sampler::{generate, Generated};
use log::{info, warn};

use crate::output;
use crate::svg;
use crate::Failure;

const PLOT_EXTENT: f64 = 4.5;

fn arm_dir(out: &Path, arm: Arm) -> Result<PathBuf, Failure> {
    let dir = out.join(arm.as_str());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn checkpoint_path(out: &Path, arm: Arm) -> PathBuf {
    out.join(arm.as_str()).join("checkpoint.json")
}

fn prior_path(out: &Path) -> PathBuf {
    out.join(Arm::Disco.as_str()).join("prior.json")
}

/// Artifacts are hashed under the config of the arm that produced them.
fn warn_on_hash(what: &Path, stored: &str, cfg: &RunConfig, arm: Arm) {
    let mut own = cfg.clone();
    own.arm = arm;
    if stored != own.hash() {
        warn!(
            "{} was written under a different config (hash {}); continuing with the current one",
            what.display(),
            &stored[..stored.len().min(12)]
        );
    }
}

fn load_checkpoint(cfg: &RunConfig, out: &Path, arm: Arm) -> Result<Checkpoint, Failure> {
    let path = checkpoint_path(out, arm);
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "no {arm} checkpoint at {}; run `disco train --arm {arm}` first",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.arm != arm {
        return Err(Failure::Usage(format!("{} holds the {} arm", path.display(), ckpt.arm)));
    }
    warn_on_hash(&path, &ckpt.config_hash, cfg, arm);
    Ok(ckpt)
}

fn load_prior(cfg: &RunConfig, out: &Path) -> Result<LatentPrior, Failure> {
    let path = prior_path(out);
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "no latent prior at {}; run `disco train-prior` first",
            path.display()
        )));
    }
    let ckpt = PriorCheckpoint::load(&path)?;
    warn_on_hash(&path, &ckpt.config_hash, cfg, Arm::Disco);
    Ok(ckpt.prior()?)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    Ok(pipeline::dataset(cfg)?)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let data = dataset(cfg)?;
    let path = out.join("data.csv");
    output::write_data(cfg, &data, &path)?;
    info!("wrote {} points to {}", data.len(), path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path, resume: bool, checkpoint_every: u64) -> Result<(), Failure> {
    if checkpoint_every == 0 {
        return Err(Failure::Usage("--checkpoint-every must be positive".into()));
    }
    let arm = cfg.arm;
    let data = dataset(cfg)?;
    let dir = arm_dir(out, arm)?;
    let ckpt_path = checkpoint_path(out, arm);
    let loss_path = dir.join("loss.csv");
    let (mut trainer, mut losses) = if resume {
        let ckpt = load_checkpoint(cfg, out, arm)?;
        let losses: Vec<(u64, f64)> = if loss_path.exists() {
            output::read_loss(&loss_path)?.into_iter().filter(|(s, _)| *s <= ckpt.step).collect()
        } else {
            Vec::new()
        };
        info!("resuming {arm} from step {}", ckpt.step);
        (ckpt.trainer()?, losses)
    } else {
        (pipeline::new_trainer(cfg, arm, &data)?, Vec::new())
    };
    let model_cfg = cfg.model_config();
    let (text, hash) = (cfg.to_text(), cfg.hash());
    let save = |t: &disco::disco::Trainer, losses: &[(u64, f64)]| -> Result<(), Failure> {
        Checkpoint::capture(t, &model_cfg, &text, &hash).save(&ckpt_path)?;
        output::write_loss(cfg, losses, &loss_path)
    };
    let result = pipeline::train(&mut trainer, &data, cfg.iterations, |t, loss| {
        losses.push((t.step, loss));
        if t.step % checkpoint_every == 0 || t.step == cfg.iterations {
            let recent = &losses[losses.len().saturating_sub(checkpoint_every as usize)..];
            let mean = recent.iter().map(|(_, l)| l).sum::<f64>() / recent.len() as f64;
            info!("{arm} step {} mean loss {mean:.4}", t.step);
            save(t, &losses).map_err(|f| match f {
                Failure::Usage(m) | Failure::Numeric(m) => disco::Error::Checkpoint(m),
            })?;
        }
        Ok(())
    });
    match result {
        Ok(()) => {
            save(&trainer, &losses)?;
            info!("wrote {}", ckpt_path.display());
            Ok(())
        }
        Err(e) if e.is_numeric() => Err(Failure::Numeric(format!(
            "{e}; the last good checkpoint ({}) is kept",
            ckpt_path.display()
        ))),
        Err(e) => Err(e.into()),
    }
}

pub fn train_prior(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    if cfg.arm == Arm::Baseline {
        return Err(Failure::Usage("the baseline arm has no latents to model".into()));
    }
    let ckpt = load_checkpoint(cfg, out, Arm::Disco)?;
    let model = ckpt.model()?;
    let data = dataset(cfg)?;
    let run = pipeline::fit_prior(cfg, &model, &data)?;
    let path = prior_path(out);
    PriorCheckpoint::capture(&run.fit.prior, &run.fit.history, &cfg.to_text(), &cfg.hash()).save(&path)?;
    println!("prior TV distance to the empirical latent histogram: {:.6}", run.tv);
    info!("wrote {}", path.display());
    Ok(())
}

fn sample_arm(cfg: &RunConfig, out: &Path, arm: Arm, n: usize) -> Result<(DiscoModel, Generated), Failure> {
    let model = load_checkpoint(cfg, out, arm)?.model()?;
    let prior = match arm {
        Arm::Disco => Some(load_prior(cfg, out)?),
        Arm::Baseline => None,
    };
    let gen = generate(&model, prior.as_ref(), n, derive_seed(cfg.seed, streams::SAMPLE), &cfg.sample_options(true))?;
    Ok((model, gen))
}

fn scatter_svg(cfg: &RunConfig, gen: &Generated, n_paths: usize) -> String {
    let color = |z: &Option<Vec<usize>>| z.as_ref().map(|z| z[0]);
    let colors: Vec<Option<usize>> = gen.latents.iter().map(color).collect();
    let paths: Vec<(Vec<_>, Option<usize>)> = gen
        .trajectories
        .iter()
        .flatten()
        .take(n_paths)
        .map(|tr| (tr.states.clone(), color(&tr.latent)))
        .collect();
    svg::scatter(&gen.samples, &colors, &paths, PLOT_EXTENT, &output::provenance(cfg))
}

pub fn sample(cfg: &RunConfig, out: &Path, n: Option<usize>, n_paths: usize) -> Result<(), Failure> {
    let arm = cfg.arm;
    let (model, gen) = sample_arm(cfg, out, arm, n.unwrap_or(cfg.n_samples))?;
    let dir = arm_dir(out, arm)?;
    output::write_samples(cfg, &gen, model.m(), &dir.join("samples.csv"))?;
    fs::write(dir.join("samples.svg"), scatter_svg(cfg, &gen, n_paths))?;
    info!(
        "wrote {} {arm} samples ({} denoiser calls each) to {}",
        gen.samples.len(),
        gen.nfe,
        dir.display()
    );
    Ok(())
}

fn write_analysis(cfg: &RunConfig, out: &Path, report: &MetricReport) -> Result<(), Failure> {
    fs::write(out.join("report.json"), output::report_json(cfg, report)?)?;
    fs::write(out.join("metrics.csv"), output::metrics_csv(cfg, report))?;
    let names: Vec<&str> = report.arms.iter().map(|a| a.arm.as_str()).collect();
    let comment = output::provenance(cfg);
    if let Some(first) = report.arms.first() {
        let series = |f: &dyn Fn(&disco::analysis::ArmMetrics) -> &[Option<f64>]| -> Vec<(&str, &[Option<f64>])> {
            report.arms.iter().zip(&names).map(|(a, n)| (*n, f(a))).collect()
        };
        let curv = series(&|a| &a.curvature.mean);
        fs::write(out.join("curvature.svg"), svg::profile("trajectory curvature", &first.curvature.bins, &curv, &comment))?;
        let jac = series(&|a| &a.jacobian.jac_d);
        fs::write(out.join("jacobian.svg"), svg::profile("|dD/dx|_F^2", &first.jacobian.bins, &jac, &comment))?;
        let loss = series(&|a| &a.loss.mean);
        fs::write(out.join("loss.svg"), svg::profile("weighted denoising loss", &first.loss.bins, &loss, &comment))?;
    }
    for a in &report.arms {
        println!(
            "{:<8} W2 {:.4}  mean curvature {}  mean |dD/dx|^2 {}",
            a.arm.as_str(),
            a.w2,
            a.mean_curvature.map_or("NA".into(), |v| format!("{v:.4}")),
            a.mean_jacobian_d.map_or("NA".into(), |v| format!("{v:.4}")),
        );
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let arms: Vec<Arm> = [Arm::Disco, Arm::Baseline]
        .into_iter()
        .filter(|&a| checkpoint_path(out, a).exists())
        .collect();
    if arms.is_empty() {
        return Err(Failure::Usage(format!("no checkpoints under {}", out.display())));
    }
    let data = dataset(cfg)?;
    let reference = pipeline::reference_sample(cfg)?;
    let probes = pipeline::loss_probes(cfg, &data)?;
    let mut models = Vec::new();
    for &arm in &arms {
        models.push(load_checkpoint(cfg, out, arm)?.model()?);
    }
    let oracle = match arms.iter().position(|&a| a == Arm::Disco) {
        Some(i) => pipeline::extract(cfg, &models[i], &data.points)?,
        None => Vec::new(),
    };
    let prior = if arms.contains(&Arm::Disco) { Some(load_prior(cfg, out)?) } else { None };
    let inputs = AnalysisInputs {
        data: &data,
        reference: &reference,
        probes: &probes,
        oracle_latents: &oracle,
    };
    let mut report = MetricReport {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        arms: Vec::new(),
    };
    for (&arm, model) in arms.iter().zip(&models) {
        info!("analyzing {arm}");
        let (_, metrics) = pipeline::analyze_arm(cfg, model, arm, prior.as_ref(), &inputs)?;
        report.arms.push(metrics);
    }
    write_analysis(cfg, out, &report)
}

pub fn compare(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    gen_data(cfg, out)?;
    for arm in [Arm::Disco, Arm::Baseline] {
        let mut c = cfg.clone();
        c.arm = arm;
        train(&c, out, false, 1000)?;
    }
    let mut disco_cfg = cfg.clone();
    disco_cfg.arm = Arm::Disco;
    train_prior(&disco_cfg, out)?;
    let data = dataset(cfg)?;
    let codes = pipeline::extract(cfg, &load_checkpoint(cfg, out, Arm::Disco)?.model()?, &data.points)?;
    for arm in [Arm::Disco, Arm::Baseline] {
        let mut c = cfg.clone();
        c.arm = arm;
        sample(&c, out, None, 24)?;
    }
    let labels: Vec<usize> = codes.iter().map(|z| z[0]).collect();
    let purity = disco::disco::codebook_purity(&labels, &data.labels)?;
    let prior = load_prior(cfg, out)?;
    let tv = total_variation(&prior.first_marginal()?, &latent_histogram(&codes, 0, prior.k()));
    println!("codebook purity {purity:.4}, prior TV {tv:.6}");
    analyze(cfg, out)
}
