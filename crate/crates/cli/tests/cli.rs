use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use threer::image::{load_png, save_png, synthetic_clean_image, Image};
use threer::network::{load_checkpoint, save_checkpoint, NetworkConfig, NetworkParams};

fn threer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threer"))
        .args(args)
        .env("ThreeR_NUM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_network() -> NetworkConfig {
    NetworkConfig {
        blocks: 2,
        hidden: 4,
        layers: 2,
        ..Default::default()
    }
}

fn write_checkpoint(dir: &Path, random: bool) -> PathBuf {
    let path = dir.join(if random {
        "random.3rinn"
    } else {
        "identity.3rinn"
    });
    let params = if random {
        NetworkParams::<f32>::random(small_network(), 7)
    } else {
        NetworkParams::new(small_network(), 7)
    };
    save_checkpoint(&params, &path).unwrap();
    path
}

fn write_image(dir: &Path, name: &str, w: usize, h: usize) -> PathBuf {
    let path = dir.join(name);
    save_png(&synthetic_clean_image(w, h, 5), &path).unwrap();
    path
}

fn psnr(a: &Image, b: &Image) -> f64 {
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    10.0 * (1.0 / mse).log10()
}

#[test]
fn forward_of_identity_network_is_block_average() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), false);
    let input = write_image(dir.path(), "in.png", 256, 256);
    let lr = dir.path().join("lr.png");
    let out = threer(&[
        "forward",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&input),
        "--out-lr",
        s(&lr),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("achieved reduction (rgbw)"));
    let hr = load_png(&input).unwrap();
    let lr_img = load_png(&lr).unwrap();
    assert_eq!(lr_img.dims(), (128, 128));
    for c in 0..3 {
        for y in 0..128 {
            for x in 0..128 {
                let avg = (hr.get(c, 2 * y, 2 * x)
                    + hr.get(c, 2 * y, 2 * x + 1)
                    + hr.get(c, 2 * y + 1, 2 * x)
                    + hr.get(c, 2 * y + 1, 2 * x + 1))
                    / 4.0;
                assert!((lr_img.get(c, y, x) - avg).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
    let files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(files.len(), 3, "no latent file expected: {files:?}");
}

#[test]
fn inverse_modes_and_true_latent_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), true);
    let input = write_image(dir.path(), "in.png", 128, 128);
    let (lr, z) = (dir.path().join("lr.png"), dir.path().join("z.bin"));
    let out = threer(&[
        "forward",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&input),
        "--out-lr",
        s(&lr),
        "--out-latent",
        s(&z),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(load_png(&lr).unwrap().dims(), (64, 64));

    let rec = dir.path().join("rec.png");
    let out = threer(&[
        "inverse",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&lr),
        "--mode",
        "true-latent",
        "--latent",
        s(&z),
        "--out",
        s(&rec),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let p = psnr(&load_png(&rec).unwrap(), &load_png(&input).unwrap());
    assert!(p >= 50.0, "{p}");

    let run = |mode: &str, seed: &str, name: &str| {
        let path = dir.path().join(name);
        let out = threer(&[
            "inverse",
            "--checkpoint",
            s(&ckpt),
            "--input",
            s(&lr),
            "--mode",
            mode,
            "--seed",
            seed,
            "--out",
            s(&path),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::read(&path).unwrap()
    };
    let a = run("grainy", "3", "a.png");
    assert_eq!(a, run("grainy", "3", "b.png"));
    assert_ne!(a, run("grainy", "4", "c.png"));
    assert_eq!(
        load_png(&dir.path().join("a.png")).unwrap().dims(),
        (128, 128)
    );
    run("clean", "3", "d.png");

    let out = threer(&[
        "inverse",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&lr),
        "--mode",
        "true-latent",
        "--out",
        s(&rec),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--latent"), "{}", stderr(&out));
    let out = threer(&[
        "inverse",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&lr),
        "--mode",
        "clean",
        "--latent",
        s(&z),
        "--out",
        s(&rec),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path(), false);
    let lr = dir.path().join("lr.png");
    let odd = write_image(dir.path(), "odd.png", 33, 32);
    let out = threer(&[
        "forward",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&odd),
        "--out-lr",
        s(&lr),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    let missing = dir.path().join("missing.png");
    let out = threer(&[
        "forward",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&missing),
        "--out-lr",
        s(&lr),
    ]);
    assert_eq!(code(&out), 2);

    let junk = dir.path().join("junk.3rinn");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let input = write_image(dir.path(), "in.png", 32, 32);
    let out = threer(&[
        "forward",
        "--checkpoint",
        s(&junk),
        "--input",
        s(&input),
        "--out-lr",
        s(&lr),
    ]);
    assert_eq!(code(&out), 2);

    // LR of a different size than the latent.
    let z = dir.path().join("z.bin");
    threer(&[
        "forward",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&input),
        "--out-lr",
        s(&lr),
        "--out-latent",
        s(&z),
    ]);
    let other = write_image(dir.path(), "other.png", 24, 24);
    let out = threer(&[
        "inverse",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&other),
        "--mode",
        "true-latent",
        "--latent",
        s(&z),
        "--out",
        s(&dir.path().join("x.png")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "batch_size = 2\nlearning_rate = 3\n").unwrap();
    let out = threer(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&missing),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    assert_eq!(code(&threer(&["forward", "--bogus"])), 1);
    assert_eq!(code(&threer(&[])), 1);
    assert_eq!(code(&threer(&["--help"])), 0);
}

const TINY: &str = "batch_size = 2\ncrop = 24\nstage1_iters = 3\nstage2_iters = 2\nlr = 1e-3\n\
blocks = 1\nhidden = 4\nlayers = 2\n";

fn make_dataset(dir: &Path, count: &str, test_every: &str) -> PathBuf {
    let data = dir.join("data");
    let out = threer(&[
        "make-dataset",
        "--out-dir",
        s(&data),
        "--count",
        count,
        "--width",
        "32",
        "--height",
        "32",
        "--test-every",
        test_every,
        "--seed",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(data.join("run.manifest").exists());
    data.join("manifest.tsv")
}

#[test]
fn train_finetune_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(dir.path(), "6", "2");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();

    let train = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = threer(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&manifest),
            "--out-dir",
            s(&out_dir),
            "--seed",
            "9",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        out_dir
    };
    let a = train("a");
    let b = train("b");
    for f in ["checkpoint.3rinn", "history.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest_text = std::fs::read_to_string(a.join("run.manifest")).unwrap();
    assert!(manifest_text.contains("seed = 9"));
    assert!(manifest_text.contains("[config]"));
    assert!(
        manifest_text
            .lines()
            .filter(|l| l.starts_with("input "))
            .count()
            >= 8
    );
    assert_eq!(
        std::fs::read_to_string(a.join("history.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    // The config snapshot reproduces the run.
    let c = dir.path().join("c");
    let out = threer(&[
        "train",
        "--config",
        s(&a.join("config.txt")),
        "--data",
        s(&manifest),
        "--out-dir",
        s(&c),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        std::fs::read(a.join("checkpoint.3rinn")).unwrap(),
        std::fs::read(c.join("checkpoint.3rinn")).unwrap()
    );

    let ft = dir.path().join("ft");
    let out = threer(&[
        "finetune",
        "--config",
        s(&cfg),
        "--data",
        s(&manifest),
        "--checkpoint",
        s(&a.join("checkpoint.3rinn")),
        "--R",
        "0.2",
        "--out-dir",
        s(&ft),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        load_checkpoint(&ft.join("checkpoint.3rinn"))
            .unwrap()
            .r_target,
        0.2
    );

    let ev = dir.path().join("eval");
    let out = threer(&[
        "evaluate",
        "--checkpoint",
        s(&ft.join("checkpoint.3rinn")),
        "--data",
        s(&manifest),
        "--out-dir",
        s(&ev),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["clean_lr", "clean_hr", "grainy_hr"] {
        let text = std::fs::read_to_string(ev.join(format!("{name}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5, "{name}: {text}");
        assert_eq!(lines[0], "image,psnr_y,ssim,kld,rate_y,rate_rgbw");
        assert!(lines[4].starts_with("mean,"));
    }

    let ab = dir.path().join("ablate");
    let ckpt = a.join("checkpoint.3rinn");
    let out = threer(&[
        "ablate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&manifest),
        "--config-id",
        "1",
        "--out-dir",
        s(&ab),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = threer(&[
        "ablate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&manifest),
        "--config-id",
        "4",
        "--out-dir",
        s(&ab),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn energy_report_command() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(
        &m,
        "variant,qp,encode_s,decode_s,bitrate_kbps,display_w\nhr,22,10,2,100,3\nlr,22,5,1,50,2\n",
    )
    .unwrap();
    let coeffs = dir.path().join("c.txt");
    std::fs::write(
        &coeffs,
        "head_end = 1\ndelivery = 0\ndevice = 0\ndisplay = 0\n",
    )
    .unwrap();
    let out_csv = dir.path().join("energy.csv");
    let out = threer(&[
        "energy-report",
        "--measurements",
        s(&m),
        "--baseline",
        "hr",
        "--coefficients",
        s(&coeffs),
        "--out",
        s(&out_csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    assert!(
        text.lines().nth(2).unwrap().ends_with(",50.000000"),
        "{text}"
    );
    assert!(dir.path().join("energy.csv.manifest").exists());

    let out = threer(&[
        "energy-report",
        "--measurements",
        s(&m),
        "--baseline",
        "sd",
        "--out",
        s(&out_csv),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.csv");
    let small = [
        "--blocks", "1", "--hidden", "2", "--layers", "2", "--size", "8",
    ];
    let mut args = vec!["gradcheck"];
    args.extend(small);
    args.extend(["--out", s(&report)]);
    let out = threer(&args);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("checked"));
    assert!(std::fs::read_to_string(&report).unwrap().lines().count() > 100);

    let mut strict = vec!["gradcheck"];
    strict.extend(small);
    strict.extend(["--tolerance", "1e-30"]);
    assert_eq!(code(&threer(&strict)), 4);
}
