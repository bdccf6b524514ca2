use std::path::Path;
use std::process::{Command, Output};

const DATA: &str = "synthetic:8@32x32";

fn jscc(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jscc"))
        .args(args)
        .env("JSCC_RUNS_DIR", runs)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let runs = tempfile::tempdir().unwrap();
    assert_eq!(jscc(runs.path(), &["train", "--methd", "cgan"]).status.code(), Some(2));
    assert_eq!(jscc(runs.path(), &["train", "--dataset", DATA, "--epochs", "0"]).status.code(), Some(2));
    assert_eq!(jscc(runs.path(), &["flops", "--set", "bcr"]).status.code(), Some(2));
    assert_eq!(jscc(runs.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn train_then_sweep() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();
    ok(&jscc(r, &["train", "--dataset", DATA, "--epochs", "1", "--snr-train", "10"]));
    let run = r.join("g_unet").join("synthetic-8-32x32").join("r0.0833_snr10");
    for f in ["manifest.json", "encoder.bin", "decoder.bin", "train_log.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let sweep = |out: &Path| {
        let o = out.to_str().unwrap();
        ok(&jscc(r, &["sweep", "--dataset", DATA, "--snr-train", "10", "--snr-test", "1,4,7,10,13", "--out", o]));
        read(&out.join("metrics.csv"))
    };
    let a = sweep(&r.join("s1"));
    assert_eq!(a.lines().count(), 6);
    assert_eq!(a, sweep(&r.join("s2")));
    assert!(r.join("s1").join("psnr.svg").is_file());

    let o = jscc(
        r,
        &["eval", "--dataset", DATA, "--snr-train", "10", "--snr-test", "inf", "--out", r.join("e").to_str().unwrap()],
    );
    ok(&o);
    assert_eq!(read(&r.join("e").join("metrics.csv")).lines().count(), 2);
}

#[test]
fn missing_checkpoint_exits_with_five() {
    let runs = tempfile::tempdir().unwrap();
    let o = jscc(runs.path(), &["eval", "--method", "baseline", "--dataset", DATA, "--snr-test", "5"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn robustness_lists_missing_cells_or_trains_them() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();
    let base = ["robustness", "--dataset", DATA, "--epochs", "1", "--snr-train-list", "1,10", "--snr-test", "1,5,10"];
    let o = jscc(r, &base);
    assert_eq!(o.status.code(), Some(5));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("r0.0833_snr1") && err.contains("r0.0833_snr10"), "{err}");

    let out = r.join("grid");
    let mut args = base.to_vec();
    args.extend(["--train-missing", "--workers", "2", "--out", out.to_str().unwrap()]);
    ok(&jscc(r, &args));
    assert_eq!(read(&out.join("metrics.csv")).lines().count(), 7);
    assert!(out.join("psnr.svg").is_file() && out.join("ssim.svg").is_file());
}

#[test]
fn flops_table_is_ordered_by_method_and_network() {
    let runs = tempfile::tempdir().unwrap();
    let out = runs.path().join("f");
    ok(&jscc(runs.path(), &["flops", "--out", out.to_str().unwrap()]));
    let text = read(&out.join("flops.csv"));
    let totals: Vec<&str> =
        text.lines().filter(|l| l.contains("/total")).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        totals,
        [
            "g_unet/encoder/total",
            "g_unet/generator/total",
            "g_unet/total",
            "cgan/encoder/total",
            "cgan/generator/total",
            "cgan/discriminator/total",
            "cgan/total",
            "baseline/encoder/total",
            "baseline/baseline_decoder/total",
            "baseline/total"
        ]
    );
}

#[test]
fn plot_renders_one_series_per_method() {
    let runs = tempfile::tempdir().unwrap();
    let r = runs.path();
    let header = "run_id,method,dataset,bcr,snr_train_db,snr_test_db,psnr_db,ssim,lpips,n_images\n";
    let empty = r.join("empty.csv");
    std::fs::write(&empty, header).unwrap();
    assert_eq!(jscc(r, &["plot", "--metrics", empty.to_str().unwrap()]).status.code(), Some(2));

    let mut body = header.to_string();
    for (m, shift) in [("g_unet", 1.0), ("baseline", 0.0)] {
        for snr in [1, 10] {
            body += &format!("{m}/x,{m},synthetic,0.0833,10,{snr},{},0.5,,10\n", 20.0 + shift + snr as f64 / 10.0);
        }
    }
    let csv = r.join("two.csv");
    std::fs::write(&csv, body).unwrap();
    let plot = |out: &str| {
        ok(&jscc(r, &["plot", "--metrics", csv.to_str().unwrap(), "--out", r.join(out).to_str().unwrap()]));
        read(&r.join(out).join("psnr.svg"))
    };
    let svg = plot("p1");
    let series = svg.lines().filter(|l| l.starts_with("<polyline") && l.contains("rgb(")).count();
    assert_eq!(series, 2, "{svg}");
    assert!(svg.contains("g_unet (train 10 dB)") && svg.contains("baseline (train 10 dB)"));
    assert_eq!(svg, plot("p2"));
}
