use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use threer::config::KvFile;
use threer::image::{
    bicubic_downscale_x2, generate_corpus, load_png, read_manifest, save_png, CorpusSpec, Image,
    ManifestEntry, Split, TrainingPair,
};
use threer::metrics::{
    achieved_reduction, energy_report_csv, energy_savings_report, evaluate_ablation, num_threads,
    read_chain_measurements, AblationConfig, AblationReport, EnergyCoefficients, EvalOptions,
};
use threer::network::{
    load_checkpoint, read_latent, save_checkpoint, write_latent, InverseMode, NetworkConfig,
    NetworkParams, HIGH_CHANNELS,
};
use threer::objectives::{PowerModel, PowerModelConfig};
use threer::training::{
    gaussian_tensor, gradient_check, save_history_csv, train_stage1, train_stage2,
    GradcheckOptions, TrainingConfig,
};

use crate::error::{CliError, Kind};
use crate::manifest::{manifest_beside, RunManifest};
use crate::{Command, EvalArgs, Mode, RunArgs, SplitArg};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Forward {
            checkpoint,
            input,
            out_lr,
            out_latent,
        } => forward(&checkpoint, &input, &out_lr, out_latent.as_deref()),
        Command::Inverse {
            checkpoint,
            input,
            mode,
            latent,
            out,
            seed,
        } => inverse(&checkpoint, &input, mode, latent.as_deref(), &out, seed),
        Command::Train { run, init } => train(&run, init.as_deref()),
        Command::Finetune {
            run,
            checkpoint,
            rate,
        } => finetune(&run, &checkpoint, rate),
        Command::Evaluate { eval } => evaluate(&eval, AblationConfig::Conditional, "evaluate"),
        Command::Ablate { eval, config_id } => {
            let config = AblationConfig::try_from(config_id)?;
            evaluate(&eval, config, "ablate")
        }
        Command::EnergyReport {
            measurements,
            baseline,
            coefficients,
            out,
        } => energy_report(&measurements, &baseline, coefficients.as_deref(), &out),
        Command::MakeDataset {
            out_dir,
            count,
            width,
            height,
            levels,
            ar,
            test_every,
            seed,
        } => {
            let spec = CorpusSpec {
                count,
                width,
                height,
                grain_levels: levels,
                ar_coefficients: ar,
                test_every,
                seed,
            };
            make_dataset(&spec, &out_dir)
        }
        Command::Gradcheck {
            blocks,
            hidden,
            layers,
            size,
            batch,
            step,
            tolerance,
            seed,
            out,
        } => {
            let opts = GradcheckOptions {
                network: NetworkConfig {
                    blocks,
                    hidden,
                    layers,
                    ..NetworkConfig::default()
                },
                batch,
                size,
                step,
                tolerance,
                seed,
                ..GradcheckOptions::default()
            };
            gradcheck(&opts, out.as_deref())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::new(Kind::Io, format!("{}: {e}", dir.display())))
}

fn forward(
    checkpoint: &Path,
    input: &Path,
    out_lr: &Path,
    out_latent: Option<&Path>,
) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let img = load_png(input)?;
    let (w, h) = img.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(CliError::new(
            Kind::Shape,
            format!("input is {w}x{h}; both sides must be even"),
        ));
    }
    let (lr, z) = params.forward(&img.to_tensor::<f32>())?;
    let lr_img = Image::from_tensor(&lr, 0)?.clamped().quantized_8bit();
    save_png(&lr_img, out_lr)?;
    if let Some(path) = out_latent {
        write_latent(&z, path)?;
    }
    let reference = bicubic_downscale_x2(&img)?;
    let cfg = PowerModelConfig::default();
    for (name, model) in [
        ("luminance", PowerModel::Luminance),
        ("rgbw", PowerModel::Rgbw),
    ] {
        match achieved_reduction(&lr_img, &reference, &cfg.with_model(model)) {
            Ok(rate) => println!("achieved reduction ({name}): {rate:.6}"),
            Err(e) => println!("achieved reduction ({name}): n/a ({e})"),
        }
    }
    println!("target reduction: {}", params.r_target);
    Ok(())
}

fn inverse(
    checkpoint: &Path,
    input: &Path,
    mode: Mode,
    latent: Option<&Path>,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let lr = load_png(input)?.to_tensor::<f32>();
    let (mode, z) = match (mode, latent) {
        (Mode::TrueLatent, Some(path)) => (InverseMode::TrueLatent, read_latent(path)?),
        (Mode::TrueLatent, None) => {
            return Err(CliError::config("true-latent mode needs --latent"))
        }
        (_, Some(_)) => {
            return Err(CliError::config(
                "--latent is only used in true-latent mode",
            ))
        }
        (m, None) => {
            let s = lr.shape();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = gaussian_tensor(&[1, HIGH_CHANNELS, s[2], s[3]], &mut rng);
            let mode = if matches!(m, Mode::Clean) {
                InverseMode::Clean
            } else {
                InverseMode::Grainy
            };
            (mode, z)
        }
    };
    let hr = params.inverse(&lr, &z, mode)?;
    save_png(&Image::from_tensor(&hr, 0)?.clamped(), out)?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<TrainingConfig> {
    Ok(match path {
        Some(p) => TrainingConfig::read(p)?,
        None => TrainingConfig::default(),
    })
}

fn load_split(
    manifest: &Path,
    split: Option<Split>,
) -> Result<(Vec<ManifestEntry>, Vec<TrainingPair>)> {
    let entries: Vec<ManifestEntry> = read_manifest(manifest)?
        .into_iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect();
    if entries.is_empty() {
        let which = split.map_or("any".to_string(), |s| s.to_string());
        return Err(CliError::config(format!(
            "{}: no entries in the {which} split",
            manifest.display()
        )));
    }
    let pairs = entries
        .iter()
        .map(|e| e.load())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((entries, pairs))
}

fn record_inputs(
    m: &mut RunManifest,
    config: Option<&Path>,
    data: &Path,
    entries: &[ManifestEntry],
) {
    if let Some(c) = config {
        m.input(c);
    }
    m.input(data);
    for e in entries {
        m.input(&e.clean).input(&e.grainy);
    }
}

fn write_training_outputs(
    command: &str,
    run: &RunArgs,
    cfg: &TrainingConfig,
    entries: &[ManifestEntry],
    extra_input: Option<&Path>,
    outcome: &threer::training::TrainOutcome,
) -> Result<()> {
    create_dir(&run.out_dir)?;
    let ckpt = run.out_dir.join("checkpoint.3rinn");
    let history = run.out_dir.join("history.csv");
    let snapshot = run.out_dir.join("config.txt");
    save_checkpoint(&outcome.params, &ckpt)?;
    save_history_csv(&history, &outcome.history)?;
    std::fs::write(&snapshot, cfg.to_kv_string())?;
    let mut m = RunManifest::new(command, Some(cfg.seed));
    record_inputs(&mut m, run.config.as_deref(), &run.data, entries);
    if let Some(p) = extra_input {
        m.input(p);
    }
    m.output(&ckpt)
        .output(&history)
        .output(&snapshot)
        .config(cfg.to_kv_string());
    m.write(&run.out_dir.join("run.manifest"))?;
    if let Some(last) = outcome.history.last() {
        println!(
            "final loss {:.6} (forward {:.6})",
            last.total, last.parts.forw
        );
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn train(run: &RunArgs, init: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(run.config.as_deref())?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(iters) = run.iters {
        cfg.stage1_iters = iters;
        cfg.lr_milestones.retain(|&m| m < iters);
    }
    cfg.validate()?;
    let params = match init {
        Some(p) => {
            let params = load_checkpoint(p)?;
            cfg.network = params.config.clone();
            params
        }
        None => NetworkParams::new(cfg.network.clone(), cfg.seed),
    };
    let (entries, pairs) = load_split(&run.data, Some(Split::Train))?;
    let outcome = train_stage1(params, &pairs, &cfg)?;
    write_training_outputs("train", run, &cfg, &entries, init, &outcome)
}

fn finetune(run: &RunArgs, checkpoint: &Path, rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(CliError::config(format!("--R {rate} must lie in [0, 1]")));
    }
    let mut cfg = load_config(run.config.as_deref())?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(iters) = run.iters {
        cfg.stage2_iters = iters;
    }
    cfg.weights.r = rate;
    let params = load_checkpoint(checkpoint)?;
    cfg.network = params.config.clone();
    cfg.validate()?;
    let (entries, pairs) = load_split(&run.data, Some(Split::Train))?;
    let outcome = train_stage2(params, &pairs, &cfg)?;
    write_training_outputs("finetune", run, &cfg, &entries, Some(checkpoint), &outcome)
}

fn image_name(e: &ManifestEntry) -> String {
    e.clean
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| e.clean.display().to_string())
}

fn evaluate(args: &EvalArgs, config: AblationConfig, command: &str) -> Result<()> {
    let power = load_config(args.config.as_deref())?.power;
    let params = load_checkpoint(&args.checkpoint)?;
    let split = match args.split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let (entries, pairs) = load_split(&args.data, split)?;
    let named: Vec<(String, TrainingPair)> = entries.iter().map(image_name).zip(pairs).collect();
    let opts = EvalOptions {
        seed: args.seed,
        quantize_lr: args.quantize_lr,
        power,
        threads: num_threads(),
    };
    let report = evaluate_ablation(&params, &named, config, &opts)?;
    create_dir(&args.out_dir)?;
    let mut m = RunManifest::new(command, Some(args.seed));
    record_inputs(&mut m, args.config.as_deref(), &args.data, &entries);
    m.input(&args.checkpoint);
    for (name, r) in report_parts(&report) {
        let path = args.out_dir.join(format!("{name}.csv"));
        r.save_csv(&path)?;
        m.output(&path);
        let mean = r.mean();
        println!(
            "{name}: psnr_y {:.4} ssim {:.4} kld {:.5} rate_y {:.4} rate_rgbw {:.4}",
            mean.psnr_y, mean.ssim, mean.kld, mean.rate_y, mean.rate_rgbw
        );
    }
    m.config(format!(
        "ablation_config = {}\nquantize_lr = {}\n{}",
        config as u32,
        args.quantize_lr,
        opts.power.to_kv_string()
    ));
    m.write(&args.out_dir.join("run.manifest"))
}

fn report_parts(r: &AblationReport) -> [(&'static str, &threer::metrics::MetricReport); 3] {
    [
        ("clean_lr", &r.clean_lr),
        ("clean_hr", &r.clean_hr),
        ("grainy_hr", &r.grainy_hr),
    ]
}

fn energy_report(
    measurements: &Path,
    baseline: &str,
    coefficients: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let m = read_chain_measurements(measurements)?;
    let coeffs = match coefficients {
        Some(p) => EnergyCoefficients::from_kv(KvFile::read(p)?)?,
        None => EnergyCoefficients::default(),
    };
    let rows = energy_savings_report(&m, baseline, &coeffs)?;
    std::fs::write(out, energy_report_csv(&rows))?;
    let mut man = RunManifest::new("energy-report", None);
    man.input(measurements);
    if let Some(p) = coefficients {
        man.input(p);
    }
    man.output(out).config(format!(
        "baseline = {baseline}\nhead_end = {}\ndelivery = {}\ndevice = {}\ndisplay = {}\n",
        coeffs.head_end, coeffs.delivery, coeffs.device, coeffs.display
    ));
    man.write(&manifest_beside(out))?;
    for r in &rows {
        println!(
            "{} qp {}: total saving {:.2}%",
            r.variant, r.qp, r.total_saving_pct
        );
    }
    Ok(())
}

fn make_dataset(spec: &CorpusSpec, out_dir: &Path) -> Result<()> {
    let entries = generate_corpus(spec, out_dir)?;
    let manifest = out_dir.join("manifest.tsv");
    let mut m = RunManifest::new("make-dataset", Some(spec.seed));
    m.output(&manifest);
    for e in &entries {
        m.output(&e.clean).output(&e.grainy);
    }
    let levels: Vec<String> = spec.grain_levels.iter().map(|l| l.to_string()).collect();
    let mut cfg = format!(
        "count = {}\nwidth = {}\nheight = {}\ngrain_levels = {}\ntest_every = {}\n",
        spec.count,
        spec.width,
        spec.height,
        levels.join(", "),
        spec.test_every
    );
    if let Some(ar) = &spec.ar_coefficients {
        let ar: Vec<String> = ar.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(cfg, "ar_coefficients = {}", ar.join(", "));
    }
    m.config(cfg);
    m.write(&out_dir.join("run.manifest"))?;
    println!("wrote {} pairs to {}", entries.len(), manifest.display());
    Ok(())
}

fn gradcheck(opts: &GradcheckOptions, out: Option<&Path>) -> Result<()> {
    let report = gradient_check(opts)?;
    println!(
        "checked {} parameters, max relative error {:.3e}, {} above {:e}",
        report.checked,
        report.max_rel_err(),
        report.failures.len(),
        opts.tolerance
    );
    if let Some(w) = &report.worst {
        println!(
            "worst: {}[{}] analytic {:e} numeric {:e}",
            w.name, w.index, w.analytic, w.numeric
        );
    }
    if let Some(path) = out {
        let mut csv = String::from("name,index,analytic,numeric,rel_err\n");
        for e in &report.entries {
            let _ = writeln!(
                csv,
                "{},{},{:e},{:e},{:e}",
                e.name, e.index, e.analytic, e.numeric, e.rel_err
            );
        }
        std::fs::write(path, csv)?;
        let mut m = RunManifest::new("gradcheck", Some(opts.seed));
        m.output(path).config(format!(
            "blocks = {}\nhidden = {}\nlayers = {}\nsize = {}\nbatch = {}\nstep = {:e}\ntolerance = {:e}\n",
            opts.network.blocks, opts.network.hidden, opts.network.layers, opts.size, opts.batch, opts.step, opts.tolerance
        ));
        m.write(&manifest_beside(path))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::new(
            Kind::Numeric,
            format!(
                "{} gradient entries exceed the tolerance",
                report.failures.len()
            ),
        ))
    }
}
