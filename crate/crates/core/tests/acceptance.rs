//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report reads top to bottom; exits nonzero on any failure.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use threer::haar::{haar_forward, haar_inverse};
use threer::image::{random_crop_flip, CorpusSpec, Image, TrainingPair};
use threer::metrics::{
    achieved_reduction, evaluate_ablation, evaluate_pairs, kl_divergence, ls_scale, psnr_y,
    AblationConfig, EvalOptions,
};
use threer::network::{checkpoint_bytes, InverseMode, NetworkConfig, NetworkParams};
use threer::objectives::{loss_forward, loss_power, ssim, LossWeights, PowerModelConfig};
use threer::tensor::{Real, Tensor, Var};
use threer::training::{
    gradient_check, train_stage1, train_stage2, write_history_csv, GradcheckOptions, TrainOutcome,
    TrainingConfig,
};

type Check = Result<String, String>;

fn uniform<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(lo..hi)))
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn haar_round_trip() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_energy) = (0f64, 0f64);
    for _ in 0..100 {
        let x: Tensor<f32> = uniform(&[1, 3, 64, 64], &mut rng, 0.0, 1.0);
        let sb = haar_forward(&x).map_err(|e| e.to_string())?;
        let back = haar_inverse(&sb).map_err(|e| e.to_string())?;
        worst = worst.max(back.max_abs_diff(&x));
        let e_in = x.norm_l2().powi(2);
        let e_out = sb.low.norm_l2().powi(2) + sb.high.norm_l2().powi(2);
        worst_energy = worst_energy.max((e_in - e_out).abs() / e_in);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && worst_energy <= 1e-6 && secs < 5.0,
        format!("max err {worst:.2e}, energy rel err {worst_energy:.2e}, {secs:.2}s"),
    )
}

fn coupling_round_trip() -> Check {
    let t = Instant::now();
    let p32 = NetworkParams::<f32>::random(NetworkConfig::default(), 21);
    let p64: NetworkParams<f64> = p32.cast();
    let (g32, g64) = (p32.graph(false), p64.graph(false));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut e32, mut e64) = (0f64, 0f64);
    for _ in 0..20 {
        let x: Tensor<f64> = uniform(&[1, 3, 16, 16], &mut rng, 0.0, 1.0);
        let sb = haar_forward(&x).map_err(|e| e.to_string())?;
        macro_rules! trip {
            ($g:expr, $low:expr, $high:expr) => {{
                let (l0, h0) = (Var::constant($low), Var::constant($high));
                let (mut a, mut b) = (l0.clone(), h0.clone());
                for i in 0..8 {
                    (a, b) = $g.coupling_forward(i, &a, &b).map_err(|e| e.to_string())?;
                }
                for i in (0..8).rev() {
                    (a, b) = $g.coupling_inverse(i, &a, &b).map_err(|e| e.to_string())?;
                }
                a.value()
                    .max_abs_diff(l0.value())
                    .max(b.value().max_abs_diff(h0.value()))
            }};
        }
        e32 = e32.max(trip!(g32, sb.low.cast::<f32>(), sb.high.cast::<f32>()));
        e64 = e64.max(trip!(g64, sb.low.clone(), sb.high.clone()));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        e32 <= 1e-3 && e64 <= 1e-8 && secs < 10.0,
        format!("f32 {e32:.2e}, f64 {e64:.2e}, {secs:.2}s"),
    )
}

fn named_pairs(spec: &CorpusSpec) -> Result<Vec<(String, TrainingPair)>, String> {
    Ok(spec
        .pairs()
        .map_err(|e| e.to_string())?
        .into_iter()
        .enumerate()
        .map(|(i, (p, _))| (format!("img{i}"), p))
        .collect())
}

/// Trained toy network on both paths; a random-init network on the float
/// path. Random final layers make the inverse amplify 8-bit rounding of the
/// LR image (about 40 dB), so the export path is judged on trained weights.
fn network_invertibility(trained: Option<&NetworkParams<f32>>) -> Check {
    let trained = trained.ok_or("no trained network")?;
    let t = Instant::now();
    let random = NetworkParams::<f32>::random(NetworkConfig::default(), 3);
    let pairs = named_pairs(&CorpusSpec {
        count: 10,
        width: 64,
        height: 64,
        grain_levels: vec![1, 2, 3],
        ar_coefficients: None,
        test_every: 0,
        seed: 30,
    })?;
    let min_psnr = |params: &NetworkParams<f32>, quantize_lr: bool| -> Result<f64, String> {
        let opts = EvalOptions {
            quantize_lr,
            ..EvalOptions::default()
        };
        let report = evaluate_ablation(params, &pairs, AblationConfig::TrueLatent, &opts)
            .map_err(|e| e.to_string())?;
        Ok(report
            .grainy_hr
            .rows
            .iter()
            .map(|row| row.psnr_y)
            .fold(f64::INFINITY, f64::min))
    };
    let pf = min_psnr(trained, false)?;
    let pq = min_psnr(trained, true)?;
    let pr = min_psnr(&random, false)?;
    let secs = t.elapsed().as_secs_f64();
    verdict(
        pf >= 60.0 && pq >= 50.0 && pr >= 60.0 && secs < 60.0,
        format!(
            "min PSNR float {pf:.1} dB, 8-bit LR {pq:.1} dB, random init float {pr:.1} dB, {secs:.1}s"
        ),
    )
}

fn gradients_match() -> Check {
    let t = Instant::now();
    let report = gradient_check(&GradcheckOptions::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    verdict(
        report.passed() && secs < 300.0,
        format!(
            "{} entries, {} failures, max rel err {:.2e}, {secs:.0}s",
            report.checked,
            report.failures.len(),
            report.max_rel_err()
        ),
    )
}

fn identity_is_block_average() -> Check {
    let params = NetworkParams::<f32>::new(NetworkConfig::default(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Tensor<f32> = uniform(&[2, 3, 32, 24], &mut rng, 0.0, 1.0);
    let (lr, _) = params.forward(&x).map_err(|e| e.to_string())?;
    let d = x.data();
    let mut mismatches = 0;
    for (i, v) in lr.data().iter().enumerate() {
        let xx = i % 12;
        let y = (i / 12) % 16;
        let plane = i / (12 * 16);
        let at = |dy: usize, dx: usize| d[(plane * 32 + 2 * y + dy) * 24 + 2 * xx + dx];
        let avg = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
        if v.to_bits() != avg.to_bits() {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{mismatches} of {} samples differ bitwise", lr.numel()),
    )
}

/// Held-out and training corpora shared by the training criteria.
struct Toy {
    train: Vec<TrainingPair>,
    held_out: Vec<TrainingPair>,
    cfg: TrainingConfig,
}

fn toy() -> Result<Toy, String> {
    let spec = CorpusSpec {
        count: 8,
        width: 64,
        height: 64,
        grain_levels: vec![3],
        ar_coefficients: Some(vec![0.0; 4]),
        test_every: 0,
        seed: 1,
    };
    let strip = |s: &CorpusSpec| -> Result<Vec<TrainingPair>, String> {
        Ok(s.pairs()
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(p, _)| p)
            .collect())
    };
    let weights = LossWeights {
        lambda: [100.0, 0.1, 1.0, 1.0, 1e10, 1e4],
        ..LossWeights::default()
    };
    let cfg = TrainingConfig {
        batch_size: 8,
        crop: 32,
        stage1_iters: 200,
        stage2_iters: 200,
        lr: 1e-3,
        lr_milestones: vec![100, 150],
        weights,
        network: NetworkConfig {
            hidden: 8,
            ..NetworkConfig::default()
        },
        ..TrainingConfig::default()
    };
    Ok(Toy {
        train: strip(&spec)?,
        held_out: strip(&CorpusSpec {
            seed: 99,
            ..spec.clone()
        })?,
        cfg,
    })
}

fn held_out_crops(toy: &Toy) -> Result<Vec<TrainingPair>, String> {
    toy.held_out
        .iter()
        .enumerate()
        .map(|(i, p)| random_crop_flip(p, toy.cfg.crop, 100 + i as u64).map_err(|e| e.to_string()))
        .collect()
}

/// Mean per-sample RMS between the LR output and the bicubic target.
fn forward_loss(params: &NetworkParams<f32>, pairs: &[TrainingPair]) -> Result<f64, String> {
    let mut total = 0.0;
    for p in pairs {
        let (lr, _) = params
            .forward(&p.grainy_hr.to_tensor())
            .map_err(|e| e.to_string())?;
        let l = loss_forward(&Var::constant(lr), &Var::constant(p.clean_lr.to_tensor()))
            .map_err(|e| e.to_string())?;
        total += l.item() as f64;
    }
    Ok(total / pairs.len() as f64)
}

fn clean_psnr(params: &NetworkParams<f32>, pairs: &[TrainingPair]) -> Result<f64, String> {
    let named: Vec<(String, TrainingPair)> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("img{i}"), p.clone()))
        .collect();
    let report =
        evaluate_pairs(params, &named, &EvalOptions::default()).map_err(|e| e.to_string())?;
    Ok(report.clean_hr.mean().psnr_y)
}

fn toy_convergence(toy: &Toy, init: &NetworkParams<f32>, trained: &TrainOutcome) -> Check {
    let before = forward_loss(init, &toy.train)?;
    let after = forward_loss(&trained.params, &toy.train)?;
    let ratio = after / before;
    let (p0, p1) = (
        clean_psnr(init, &toy.held_out)?,
        clean_psnr(&trained.params, &toy.held_out)?,
    );
    verdict(
        ratio <= 0.5 && p1 - p0 >= 1.0,
        format!(
            "L_forw {before:.5} -> {after:.5} ({:.1}% of initial), clean PSNR {p0:.2} -> {p1:.2} dB",
            100.0 * ratio
        ),
    )
}

fn held_out_rate(params: &NetworkParams<f32>, crops: &[TrainingPair]) -> Result<f64, String> {
    let cfg = PowerModelConfig::rgbw();
    let mut total = 0.0;
    for c in crops {
        let (lr, _) = params
            .forward(&c.grainy_hr.to_tensor())
            .map_err(|e| e.to_string())?;
        let img = Image::from_tensor(&lr, 0)
            .map_err(|e| e.to_string())?
            .clamped();
        total += achieved_reduction(&img, &c.clean_lr, &cfg).map_err(|e| e.to_string())?;
    }
    Ok(total / crops.len() as f64)
}

/// Stage-2 config for rate `r`, continuing at the learning rate stage 1
/// ended with.
fn stage2_config(toy: &Toy, r: f64) -> TrainingConfig {
    let mut cfg = toy.cfg.clone();
    cfg.lr = toy.cfg.lr_at(toy.cfg.stage1_iters);
    cfg.weights.r = r;
    cfg
}

fn energy_finetune(toy: &Toy, stage1: &NetworkParams<f32>) -> (Check, Option<TrainOutcome>) {
    let run = || -> Result<(String, bool, TrainOutcome), String> {
        let crops = held_out_crops(toy)?;
        let mut rates = Vec::new();
        let mut first = None;
        for r in [0.2, 0.4] {
            let out = train_stage2(stage1.clone(), &toy.train, &stage2_config(toy, r))
                .map_err(|e| e.to_string())?;
            rates.push((r, held_out_rate(&out.params, &crops)?));
            first.get_or_insert(out);
        }
        let ok = rates.iter().all(|(r, a)| (a - r).abs() <= 0.03) && rates[1].1 > rates[0].1;
        let detail = rates
            .iter()
            .map(|(r, a)| format!("R {r}: {:.2}%", 100.0 * a))
            .collect::<Vec<_>>()
            .join(", ");
        Ok((
            format!("{detail} (RGBW, held-out crops)"),
            ok,
            first.expect("two rates"),
        ))
    };
    match run() {
        Ok((detail, ok, out)) => (verdict(ok, detail), Some(out)),
        Err(e) => (Err(e), None),
    }
}

fn latent_statistics(toy: &Toy, params: &NetworkParams<f32>) -> Check {
    let crops = held_out_crops(toy)?;
    let mut values = Vec::new();
    for c in &crops {
        let (_, z) = params
            .forward(&c.grainy_hr.to_tensor())
            .map_err(|e| e.to_string())?;
        values.extend(z.data().iter().map(|&v| v as f64));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    verdict(
        (-0.2..=0.2).contains(&mean) && (0.5..=1.5).contains(&var),
        format!("z mean {mean:.4}, variance {var:.4}"),
    )
}

fn disentanglement() -> Check {
    let p = NetworkParams::<f32>::random(NetworkConfig::default(), 9);
    let g = p.graph(false);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let lr = Var::constant(uniform::<f32>(&[1, 3, 8, 8], &mut rng, 0.0, 1.0));
    let z: Tensor<f32> = uniform(&[1, 9, 8, 8], &mut rng, -2.0, 2.0);
    let grain = p.config.z_grain_dim;
    let plane = 64;
    let err = |e: threer::network::NetworkError| e.to_string();

    let clean = g
        .inverse(&lr, &Var::constant(z.clone()), InverseMode::Clean)
        .map_err(err)?;
    let z_tilde = g
        .latent_decode(&Var::constant(z.clone()), &lr)
        .map_err(err)?;
    let mut zeroed = z_tilde.value().clone();
    for v in &mut zeroed.data_mut()[(9 - grain) * plane..] {
        *v = 0.0;
    }
    let grainy_zeroed = g
        .inverse_with_tilde(&lr, &Var::constant(zeroed), InverseMode::Grainy)
        .map_err(err)?;
    let zero_matches = grainy_zeroed.value() == clean.value();

    let mut perturbed = z.clone();
    for v in &mut perturbed.data_mut()[(9 - grain) * plane..] {
        *v += 0.5;
    }
    let pz = Var::constant(perturbed);
    let clean_moved = g
        .inverse(&lr, &pz, InverseMode::Clean)
        .map_err(err)?
        .value()
        .max_abs_diff(clean.value());
    let grainy = g
        .inverse(&lr, &Var::constant(z), InverseMode::Grainy)
        .map_err(err)?;
    let grainy_moved = g
        .inverse(&lr, &pz, InverseMode::Grainy)
        .map_err(err)?
        .value()
        .max_abs_diff(grainy.value());
    verdict(
        zero_matches && clean_moved == 0.0 && grainy_moved > 0.0,
        format!(
            "zeroed grain == clean: {zero_matches}, perturbation moves grainy by {grainy_moved:.2e}, clean by {clean_moved:.1e}"
        ),
    )
}

fn ls_oracle() -> Check {
    let img = threer::image::synthetic_clean_image(48, 48, 12);
    let cfg = PowerModelConfig::luminance();
    let mut worst_rate = 0f64;
    let mut worst_loss = 0f64;
    for r in [0.1, 0.2, 0.4, 0.7] {
        let scaled = ls_scale(&img, r, cfg.gamma);
        let rate = achieved_reduction(&scaled, &img, &cfg).map_err(|e| e.to_string())?;
        worst_rate = worst_rate.max((rate - r).abs());
        let loss = loss_power::<f64>(
            &Var::constant(scaled.to_tensor()),
            &Var::constant(img.to_tensor()),
            r,
            &cfg,
        )
        .map_err(|e| e.to_string())?;
        worst_loss = worst_loss.max(loss.item().abs());
    }
    verdict(
        worst_rate <= 1e-6 && worst_loss <= 1e-6,
        format!("max |rate - R| {worst_rate:.2e}, max loss_power {worst_loss:.2e}"),
    )
}

fn metric_oracles() -> Check {
    // Values on a 1/1024 grid below 0.02 keep the +0.1 offset exact in f32.
    let a = Image::from_fn(32, 32, |c, y, x| {
        ((x * 3 + y * 5 + c * 7) % 20) as f32 / 1024.0
    });
    let mut b = a.clone();
    for v in b.data_mut() {
        *v += 0.1;
    }
    let psnr = psnr_y(&a, &b).map_err(|e| e.to_string())?;
    let img = threer::image::synthetic_clean_image(32, 32, 4);
    let s = ssim(&img, &img).map_err(|e| e.to_string())?;
    let kld = kl_divergence(&[0.75, 0.25], &[0.25, 0.75]);
    let kld_err = (kld - 0.5 * 3f64.ln()).abs();
    verdict(
        (psnr - 20.0).abs() <= 1e-6 && (s - 1.0).abs() <= 1e-12 && kld_err <= 1e-9,
        format!("PSNR {psnr:.9} dB, SSIM(x, x) {s}, two-bin KLD err {kld_err:.1e}"),
    )
}

fn parameter_count() -> Check {
    let n = NetworkParams::<f32>::new(NetworkConfig::default(), 0).param_count();
    verdict(n < 2_000_000, format!("{n} parameters"))
}

fn history_bytes(out: &TrainOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &out.history).expect("writing to memory");
    buf
}

/// Repeats stage 1 and the R = 0.2 fine-tune and compares the bytes.
fn determinism(
    toy: &Toy,
    init: &NetworkParams<f32>,
    stage1: &TrainOutcome,
    stage2: &TrainOutcome,
) -> Check {
    let again1 = train_stage1(init.clone(), &toy.train, &toy.cfg).map_err(|e| e.to_string())?;
    let again2 = train_stage2(again1.params.clone(), &toy.train, &stage2_config(toy, 0.2))
        .map_err(|e| e.to_string())?;
    let same = |a: &TrainOutcome, b: &TrainOutcome| {
        (
            checkpoint_bytes(&a.params) == checkpoint_bytes(&b.params),
            history_bytes(a) == history_bytes(b),
        )
    };
    let (c1, h1) = same(stage1, &again1);
    let (c2, h2) = same(stage2, &again2);
    verdict(
        c1 && h1 && c2 && h2,
        format!("identical checkpoint/loss CSV: stage 1 {c1}/{h1}, stage 2 {c2}/{h2}"),
    )
}

fn report(n: usize, name: &str, check: Check) -> bool {
    match check {
        Ok(d) => {
            println!("criterion {n:>2}: PASS {name}: {d}");
            true
        }
        Err(d) => {
            println!("criterion {n:>2}: FAIL {name}: {d}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= report(1, "haar round trip", haar_round_trip());
    ok &= report(2, "coupling round trip", coupling_round_trip());

    let toy = toy().expect("toy corpus");
    let init = NetworkParams::<f32>::new(toy.cfg.network.clone(), 0);
    let t = Instant::now();
    let trained = train_stage1(init.clone(), &toy.train, &toy.cfg);
    let train_secs = t.elapsed().as_secs_f64();

    ok &= report(
        3,
        "network invertibility",
        network_invertibility(trained.as_ref().ok().map(|o| &o.params)),
    );
    ok &= report(4, "gradient check", gradients_match());
    ok &= report(5, "identity init", identity_is_block_average());
    let mut finetuned = None;
    match &trained {
        Ok(out) => {
            ok &= report(
                6,
                "toy convergence",
                toy_convergence(&toy, &init, out).map(|d| format!("{d}, {train_secs:.0}s")),
            );
            let (check, stage2) = energy_finetune(&toy, &out.params);
            finetuned = stage2;
            ok &= report(7, "energy fine-tuning", check);
            ok &= report(8, "latent statistics", latent_statistics(&toy, &out.params));
        }
        Err(e) => {
            for (n, name) in [
                (6, "toy convergence"),
                (7, "energy fine-tuning"),
                (8, "latent statistics"),
            ] {
                ok &= report(n, name, Err(format!("training failed: {e}")));
            }
        }
    }
    ok &= report(9, "disentanglement", disentanglement());
    ok &= report(10, "LS oracle", ls_oracle());
    ok &= report(11, "metric oracles", metric_oracles());
    ok &= report(12, "parameter count", parameter_count());
    ok &= report(
        13,
        "determinism",
        match (&trained, &finetuned) {
            (Ok(s1), Some(s2)) => determinism(&toy, &init, s1, s2),
            _ => Err("no training run to compare".into()),
        },
    );
    if !ok {
        std::process::exit(1);
    }
}
