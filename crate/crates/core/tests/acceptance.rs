//! End-to-end acceptance criteria on the default configuration.
//!
//! Trains both arms on three seeds (20k steps each), then checks every
//! criterion and prints one PASS/FAIL line per criterion. Lines go straight
//! to stderr so they show up even when the test passes, and are copied to
//! `acceptance_summary.txt` in the cargo target tmp dir.

use std::io::Write;
use std::time::Instant;

use disco::analysis::{model_jacobians, ArmMetrics, LogBins};
use disco::config::RunConfig;
use disco::datagen::{exact_denoiser, Dataset, MixtureSpec, Point};
use disco::diffusion::{draw_examples, dsm_loss, dsm_loss_var, DiffusionConfig, Latent};
use disco::disco::{codebook_purity, gumbel, relax, relax_var, Arm, DiscoModel};
use disco::latentprior::{latent_histogram, total_variation};
use disco::pipeline::{self, AnalysisInputs};
use disco::sampler::{edm_time_grid, heun_solve, TimeGrid};
use disco::tensorgrad::{Bound, Mlp, ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

struct SeedRun {
    seed: u64,
    data: Dataset,
    disco: DiscoModel,
    baseline: DiscoModel,
    purity: f64,
    prior_tv: f64,
    sampled_tv: f64,
    disco_metrics: ArmMetrics,
    baseline_metrics: ArmMetrics,
}

fn run_seed(seed: u64) -> SeedRun {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    let data = pipeline::dataset(&cfg).unwrap();
    let mut models = Vec::new();
    for arm in [Arm::Disco, Arm::Baseline] {
        let start = Instant::now();
        let mut trainer = pipeline::new_trainer(&cfg, arm, &data).unwrap();
        let mut recent = 0.0;
        pipeline::train(&mut trainer, &data, cfg.iterations, |t, loss| {
            recent += loss;
            if t.step % 5000 == 0 {
                say(&format!("  seed {seed} {arm}: step {} mean loss {:.4}", t.step, recent / 5000.0));
                recent = 0.0;
            }
            Ok(())
        })
        .unwrap();
        say(&format!("  seed {seed} {arm}: trained in {:.0?}", start.elapsed()));
        models.push(trainer.model);
    }
    let baseline = models.pop().unwrap();
    let disco = models.pop().unwrap();

    let prior = pipeline::fit_prior(&cfg, &disco, &data).unwrap();
    let codes: Vec<usize> = prior.latents.iter().map(|z| z[0]).collect();
    let purity = codebook_purity(&codes, &data.labels).unwrap();
    let reference = pipeline::reference_sample(&cfg).unwrap();
    let probes = pipeline::loss_probes(&cfg, &data).unwrap();
    let inputs = AnalysisInputs {
        data: &data,
        reference: &reference,
        probes: &probes,
        oracle_latents: &prior.latents,
    };
    let (generated, disco_metrics) =
        pipeline::analyze_arm(&cfg, &disco, Arm::Disco, Some(&prior.fit.prior), &inputs).unwrap();
    let sampled: Vec<Vec<usize>> = generated.latents.iter().map(|z| z.clone().unwrap()).collect();
    let histogram = latent_histogram(&prior.latents, 0, disco.k());
    let sampled_tv = total_variation(&latent_histogram(&sampled, 0, disco.k()), &histogram);
    let (_, baseline_metrics) = pipeline::analyze_arm(&cfg, &baseline, Arm::Baseline, None, &inputs).unwrap();
    say(&format!(
        "  seed {seed}: purity {purity:.3}, W2 disco {:.4} baseline {:.4}",
        disco_metrics.w2, baseline_metrics.w2
    ));
    SeedRun {
        seed,
        data,
        disco,
        baseline,
        purity,
        prior_tv: prior.tv,
        sampled_tv,
        disco_metrics,
        baseline_metrics,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Per-bin mean over seeds; `None` when any seed left the bin empty.
fn pooled(runs: &[SeedRun], f: impl Fn(&SeedRun) -> &[Option<f64>]) -> Vec<Option<f64>> {
    let n = f(&runs[0]).len();
    (0..n)
        .map(|b| {
            let vals: Option<Vec<f64>> = runs.iter().map(|r| f(r)[b]).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Fraction of bins (both arms present) where disco is strictly lower.
fn fraction_lower(disco: &[Option<f64>], baseline: &[Option<f64>]) -> (f64, usize) {
    let pairs: Vec<(f64, f64)> = disco.iter().zip(baseline).filter_map(|(d, b)| Some(((*d)?, (*b)?))).collect();
    let lower = pairs.iter().filter(|(d, b)| d < b).count();
    (lower as f64 / pairs.len().max(1) as f64, pairs.len())
}

fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> disco::Result<Var>) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Worst relative errors of the tensorgrad, Gumbel-Softmax, DSM-loss and
/// Jacobian gradchecks.
fn numerics(model: &DiscoModel) -> [(&'static str, f64, f64); 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[3, 4]);
    let m = rand_tensor(&mut rng, &[4, 2]);
    let bias = rand_tensor(&mut rng, &[2]);
    let probe = rand_tensor(&mut rng, &[3, 2]);
    let probe4 = rand_tensor(&mut rng, &[3, 4]);
    let weigh = |t: &mut Tape, v: Var, w: &Tensor| -> disco::Result<Var> {
        let w = t.leaf(w.clone());
        let p = t.mul(v, w)?;
        t.sum(p)
    };
    type Case<'a> = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> disco::Result<Var> + 'a>);
    let cases: Vec<Case> = vec![
        (vec![a.clone(), b.clone()], Box::new(|t, v| { let o = t.add(v[0], v[1])?; weigh(t, o, &probe4) })),
        (vec![a.clone(), b.clone()], Box::new(|t, v| { let o = t.sub(v[0], v[1])?; weigh(t, o, &probe4) })),
        (vec![a.clone(), b.clone()], Box::new(|t, v| { let o = t.mul(v[0], v[1])?; weigh(t, o, &probe4) })),
        (vec![a.clone()], Box::new(|t, v| { let o = t.scale(v[0], -1.7)?; weigh(t, o, &probe4) })),
        (vec![a.clone(), m.clone()], Box::new(|t, v| { let o = t.matmul(v[0], v[1])?; weigh(t, o, &probe) })),
        (vec![a.clone(), m.clone(), bias.clone()], Box::new(|t, v| { let o = t.affine(v[0], v[1], v[2])?; weigh(t, o, &probe) })),
        (vec![a.clone()], Box::new(|t, v| { let o = t.silu(v[0])?; weigh(t, o, &probe4) })),
        (vec![a.clone()], Box::new(|t, v| { let o = t.softmax(v[0])?; weigh(t, o, &probe4) })),
        (vec![a.clone()], Box::new(|t, v| { let o = t.log_softmax(v[0])?; weigh(t, o, &probe4) })),
        (vec![a.clone()], Box::new(|t, v| t.sum(v[0]))),
        (vec![a.clone()], Box::new(|t, v| t.mean(v[0]))),
        (vec![a.clone()], Box::new(|t, v| t.squared_norm(v[0]))),
        (vec![a.clone(), b.clone()], Box::new(|t, v| { let o = t.concat(v[0], v[1])?; let o = t.slice_cols(o, 2, 4)?; weigh(t, o, &probe4) })),
        (vec![a.clone()], Box::new(|t, v| { let o = t.slice_cols(v[0], 1, 2)?; weigh(t, o, &probe) })),
    ];
    let mut tensor_err = cases.iter().map(|(inputs, f)| gradcheck(inputs, f)).fold(0.0, f64::max);
    let mut params = ParamSet::new();
    let mlp = Mlp::new(&mut params, "net", &[3, 5, 4, 2], false, &mut rng);
    let x = rand_tensor(&mut rng, &[6, 3]);
    let inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    tensor_err = tensor_err.max(gradcheck(&inputs, |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        let xv = tape.leaf(x.clone());
        let y = mlp.forward(tape, &bound, xv)?;
        let sq = tape.mul(y, y)?;
        tape.mean(sq)
    }));

    let mut gumbel_err: f64 = 0.0;
    for tau in [1.0, 0.5] {
        let logits = rand_tensor(&mut rng, &[1, 8]);
        let noise: Vec<f64> = (0..8).map(|_| gumbel(&mut rng)).collect();
        let w = rand_tensor(&mut rng, &[1, 8]);
        gumbel_err = gumbel_err.max(gradcheck(&[logits.clone()], |t, v| {
            let p = relax_var(t, v[0], Tensor::matrix(1, 8, noise.clone())?, tau)?;
            weigh(t, p, &w)
        }));
        let plain = relax(logits.data(), &noise, tau).unwrap();
        assert!((plain.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let ys = [[3.0, 0.0], [-2.1, 2.1], [0.0, -3.0], [0.2, 0.1]];
    let batch = draw_examples(&model.diffusion, &ys, &mut rng);
    let latents: Vec<Latent> = vec![Some(vec![0]), Some(vec![5]), None, Some(vec![2])];
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let cond = model.denoiser.hard_cond(&mut tape, &latents).unwrap();
    let loss = dsm_loss_var(&mut tape, &bound, &model.denoiser, &model.diffusion, &batch, &cond).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut params = model.params.clone();
    let h = 1e-5;
    let mut dsm_err: f64 = 0.0;
    for id in model.denoiser.param_ids() {
        let analytic = grads.wrt(bound.var(id));
        // Every 7th entry keeps the check fast on the full-width model.
        for j in (0..params.get(id).len()).step_by(7) {
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + h;
            let lp = dsm_loss(&model.denoiser, &params, &model.diffusion, &batch, &latents).unwrap();
            params.get_mut(id).data_mut()[j] = orig - h;
            let lm = dsm_loss(&model.denoiser, &params, &model.diffusion, &batch, &latents).unwrap();
            params.get_mut(id).data_mut()[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic.data()[j];
            dsm_err = dsm_err.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
        }
    }

    let mut jac_err: f64 = 0.0;
    for _ in 0..50 {
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let t = rng.random_range(0.05f64.ln()..80f64.ln()).exp();
        let z: Latent = Some(vec![rng.random_range(0..8)]);
        let probe = model_jacobians(model, &[x], &[t], &[z.clone()]).unwrap()[0];
        let mut fd = 0.0;
        for k in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let dp = model.denoise(&[xp], t, &[z.clone()]).unwrap()[0];
            let dm = model.denoise(&[xm], t, &[z.clone()]).unwrap()[0];
            fd += ((dp[0] - dm[0]) / (2.0 * h)).powi(2) + ((dp[1] - dm[1]) / (2.0 * h)).powi(2);
        }
        jac_err = jac_err.max((probe.jac_d - fd).abs() / fd.max(1e-6));
    }
    [
        ("tensorgrad", tensor_err, 1e-5),
        ("gumbel-softmax", gumbel_err, 1e-5),
        ("dsm loss", dsm_err, 1e-4),
        ("jacobian", jac_err, 1e-4),
    ]
}

/// Endpoint-error ratio of Heun with 20 vs 40 steps on the exact flow of a
/// single Gaussian over `t` in `[0.1, 80]`.
fn heun_error_ratio() -> f64 {
    let mu = [3.0, -1.0];
    let spec = MixtureSpec::single(mu, 0.2);
    let cfg = DiffusionConfig {
        sigma_min: 0.1,
        ..DiffusionConfig::default()
    };
    let s = |t: f64| (t * t + 0.04f64).sqrt();
    let x0 = [50.0, 20.0];
    let error = |n: usize| {
        let grid = edm_time_grid(&cfg, n).unwrap();
        let mut times = grid.times()[..n].to_vec();
        times.push(0.0);
        let grid = TimeGrid::from_times(times).unwrap();
        let trs = heun_solve(
            |xs, t| Ok(xs.iter().map(|&x| exact_denoiser(&spec, x, t)).collect()),
            &grid,
            &[x0],
            true,
        )
        .unwrap()
        .trajectories
        .unwrap();
        let end = trs[0].states[n - 1];
        let exact = [mu[0] + (x0[0] - mu[0]) * s(0.1) / s(80.0), mu[1] + (x0[1] - mu[1]) * s(0.1) / s(80.0)];
        ((end[0] - exact[0]).powi(2) + (end[1] - exact[1]).powi(2)).sqrt()
    };
    error(20) / error(40)
}

/// Heun with the exact single-Gaussian denoiser: per-axis mean offset,
/// worst relative std error, and denoiser calls per sample.
fn sampler_oracle() -> (f64, f64, usize, usize) {
    let mu = [1.5, -0.5];
    let spec = MixtureSpec::single(mu, 0.2);
    let cfg = DiffusionConfig::default();
    let grid = edm_time_grid(&cfg, 50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t0 = grid.times()[0];
    let x0: Vec<Point> = (0..10_000)
        .map(|_| {
            [
                t0 * rng.sample::<f64, _>(rand_distr::StandardNormal),
                t0 * rng.sample::<f64, _>(rand_distr::StandardNormal),
            ]
        })
        .collect();
    let mut calls = 0;
    let sol = heun_solve(
        |xs, t| {
            calls += 1;
            Ok(xs.iter().map(|&x| exact_denoiser(&spec, x, t)).collect())
        },
        &grid,
        &x0,
        false,
    )
    .unwrap();
    let n = sol.finals.len() as f64;
    let mut mean_err: f64 = 0.0;
    let mut std_err: f64 = 0.0;
    for k in 0..2 {
        let mean = sol.finals.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = sol.finals.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        mean_err = mean_err.max((mean - mu[k]).abs());
        std_err = std_err.max((var.sqrt() / 0.2 - 1.0).abs());
    }
    (mean_err, std_err, sol.nfe, calls)
}

/// Worst deviations from the guidance identities on random probes.
fn cfg_identities(model: &DiscoModel) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let xs: Vec<Point> = (0..64).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let zs: Vec<Latent> = (0..64).map(|_| Some(vec![rng.random_range(0..8)])).collect();
        let t = rng.random_range(0.002f64.ln()..80f64.ln()).exp();
        let dc = model.denoise(&xs, t, &zs).unwrap();
        let du = model.denoise(&xs, t, &vec![None; 64]).unwrap();
        let diff = |a: &[Point], b: &[Point]| {
            a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs())).fold(0.0, f64::max)
        };
        worst = worst.max(diff(&model.cfg_denoise(&xs, t, &zs, 1.0).unwrap(), &dc));
        worst = worst.max(diff(&model.cfg_denoise(&xs, t, &zs, 0.0).unwrap(), &du));
        for w in [-1.0, 0.5, 2.0, 3.0] {
            let got = model.cfg_denoise(&xs, t, &zs, w).unwrap();
            let affine: Vec<Point> =
                du.iter().zip(&dc).map(|(u, c)| [u[0] + w * (c[0] - u[0]), u[1] + w * (c[1] - u[1])]).collect();
            let scale = affine.iter().map(|p| p[0].abs().max(p[1].abs())).fold(1.0, f64::max);
            worst = worst.max(diff(&got, &affine) / scale);
        }
    }
    worst
}

fn bins_where(bins: &LogBins, keep: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    (0..bins.len()).filter(|&b| keep(bins.lo(b), bins.hi(b))).collect()
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    say("acceptance: training both arms on seeds 0, 1, 2 (default config)");
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    let mut lines: Vec<(usize, bool, String)> = Vec::new();

    // 1. W-2.
    let wd = median(runs.iter().map(|r| r.disco_metrics.w2).collect());
    let wb = median(runs.iter().map(|r| r.baseline_metrics.w2).collect());
    lines.push((
        1,
        wd <= 0.18 && wb >= 1.3 * wd,
        format!("W-2 median disco {wd:.4} (<= 0.18), baseline {wb:.4} (>= 1.3 x disco = {:.4})", 1.3 * wd),
    ));

    // 2. Curvature.
    let cd = pooled(&runs, |r| &r.disco_metrics.curvature.mean);
    let cb = pooled(&runs, |r| &r.baseline_metrics.curvature.mean);
    let (frac, n) = fraction_lower(&cd, &cb);
    lines.push((2, frac >= 0.9 && n > 0, format!("curvature lower for disco in {:.0}% of {n} bins (>= 90%)", 100.0 * frac)));

    // 3. Jacobian.
    let jd = pooled(&runs, |r| &r.disco_metrics.jacobian.jac_d);
    let jb = pooled(&runs, |r| &r.baseline_metrics.jacobian.jac_d);
    let (frac, n) = fraction_lower(&jd, &jb);
    lines.push((3, frac >= 0.9 && n > 0, format!("|dD/dx|_F^2 lower for disco in {:.0}% of {n} bins (>= 90%)", 100.0 * frac)));

    // 4. Loss vs t.
    let ld = pooled(&runs, |r| &r.disco_metrics.loss.mean);
    let lb = pooled(&runs, |r| &r.baseline_metrics.loss.mean);
    let bins = &runs[0].disco_metrics.loss.bins;
    let high = bins_where(bins, |_, hi| hi > 1.0);
    let low = bins_where(bins, |lo, _| lo < 0.05);
    let high_ok = high.iter().all(|&b| matches!((ld[b], lb[b]), (Some(d), Some(u)) if d <= u));
    let worst_low = low
        .iter()
        .map(|&b| match (ld[b], lb[b]) {
            (Some(d), Some(u)) => (d - u).abs() / u,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    let detail: Vec<String> = high.iter().map(|&b| format!("{:.3}/{:.3}", ld[b].unwrap_or(f64::NAN), lb[b].unwrap_or(f64::NAN))).collect();
    lines.push((
        4,
        high_ok && worst_low <= 0.1,
        format!(
            "loss disco <= baseline in all {} bins reaching t >= 1 [{}]: {high_ok}; worst gap at t <= 0.05: {:.1}% (<= 10%)",
            high.len(),
            detail.join(" "),
            100.0 * worst_low
        ),
    ));

    // 5. Sampler oracle.
    let (mean_err, std_err, nfe, calls) = sampler_oracle();
    lines.push((
        5,
        mean_err < 0.01 && std_err < 0.02 && nfe == 99 && calls == 99,
        format!("sampler oracle: mean offset {mean_err:.4} (< 0.01), std error {:.2}% (< 2%), NFE {nfe}, calls {calls} (99)", 100.0 * std_err),
    ));

    // 6. Analytic-score recovery.
    let spec = RunConfig::default().mixture().unwrap();
    let rmse: Vec<f64> = runs
        .iter()
        .map(|r| pipeline::denoiser_rel_rmse(&r.baseline, &spec, &r.data, (0.05, 10.0), 10_000, 1000 + r.seed).unwrap())
        .collect();
    let worst = rmse.iter().copied().fold(0.0, f64::max);
    lines.push((6, worst < 0.15, format!("baseline relative RMSE vs exact denoiser per seed {rmse:.4?} (< 0.15)")));

    // 7. Mode capture.
    let purities: Vec<f64> = runs.iter().map(|r| r.purity).collect();
    let pm = median(purities.clone());
    lines.push((7, pm >= 0.9, format!("codebook purity per seed {purities:.3?}, median {pm:.3} (>= 0.9)")));

    // 8. Prior fidelity.
    let prior_tv = runs.iter().map(|r| r.prior_tv).fold(0.0, f64::max);
    let sampled_tv = runs.iter().map(|r| r.sampled_tv).fold(0.0, f64::max);
    lines.push((
        8,
        prior_tv <= 0.02 && sampled_tv <= 0.05,
        format!("prior TV {prior_tv:.2e} (<= 0.02), sampled-latent TV {sampled_tv:.4} (<= 0.05), worst over seeds"),
    ));

    // 9. Numerics.
    let checks = numerics(&runs[0].disco);
    let ratio = heun_error_ratio();
    let numerics_ok = checks.iter().all(|(_, e, tol)| e < tol) && (3.0..=5.0).contains(&ratio);
    let detail: Vec<String> = checks.iter().map(|(n, e, tol)| format!("{n} {e:.1e} (< {tol:.0e})")).collect();
    lines.push((9, numerics_ok, format!("gradchecks: {}; Heun error ratio {ratio:.3} (in [3, 5])", detail.join(", "))));

    // 10. CFG identities.
    let cfg_err = cfg_identities(&runs[0].disco);
    lines.push((10, cfg_err <= 1e-12, format!("guidance identities worst deviation {cfg_err:.1e} (<= 1e-12)")));

    let mut summary = String::new();
    for (i, ok, msg) in &lines {
        summary.push_str(&format!("criterion {i:>2}: {} {msg}\n", if *ok { "PASS" } else { "FAIL" }));
    }
    summary.push_str(&format!("acceptance finished in {:.0?}\n", start.elapsed()));
    say(&summary);
    let _ = std::fs::write(std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_summary.txt"), &summary);
    let failed: Vec<usize> = lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}\n{summary}");
}
