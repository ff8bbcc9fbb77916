use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fusedprop::tensor::read_tensor;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusedprop"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: [&str; 12] = [
    "--arch-g",
    "2-16-2",
    "--arch-d",
    "2-16-1",
    "--batch",
    "16",
    "--iters",
    "40",
    "--log-every",
    "10",
    "--eval-samples",
    "200",
];

fn strip_wall(csv: &str) -> String {
    csv.lines()
        .map(|l| match l.starts_with('#') {
            true => l.to_string(),
            false => l.rsplit_once(',').map_or(l, |(head, _)| head).to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn gradcheck_ns_fusedprop_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "gradcheck",
            "--loss",
            "ns",
            "--mode",
            "fusedprop",
            "--dtype",
            "f64",
            "--fd-points",
            "3",
            "--trials",
            "2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("PASS fusedprop vs two-pass, ns"), "{out}");
    assert!(out.contains("\"fd_points\": 3"), "resolved settings echoed");
    let sidecar = fs::read_to_string(dir.path().join("gradcheck.txt.config.json")).unwrap();
    assert!(sidecar.contains("\"loss\": \"ns\""));
    let report = fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap();
    assert!(report.starts_with("# fusedprop "));
}

#[test]
fn gradcheck_hinge_needs_invfusedprop() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["gradcheck", "--loss", "hinge", "--mode", "fusedprop"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("UNSUPPORTED_LAMBDA"));

    let o = run(
        dir.path(),
        &[
            "gradcheck",
            "--loss",
            "hinge",
            "--mode",
            "invfusedprop",
            "--fd-points",
            "2",
            "--trials",
            "2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("dead-zone samples"));
}

#[test]
fn gradcheck_dumps_gradient_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "gradcheck",
            "--fd-points",
            "0",
            "--trials",
            "1",
            "--arch-g",
            "2-8-2",
            "--arch-d",
            "2-8-1",
            "--dump-grads",
            "g.fpt",
        ],
    );
    assert_eq!(code(&o), 0);
    let bytes = fs::read(dir.path().join("g.fpt")).unwrap();
    assert_eq!(&bytes[..4], b"FPT1");
    let mut r = &bytes[..];
    let mut tensors = Vec::new();
    while let Some(t) = read_tensor(&mut r).unwrap() {
        tensors.push(t.to_f64());
    }
    // D and G each have two weights and two biases: fused D, fused G, then the reference pair.
    assert_eq!(tensors.len(), 16);
    for (fused, reference) in tensors[..8].iter().zip(&tensors[8..]) {
        assert_eq!(fused.dims(), reference.dims());
        let scale = reference.max_abs().max(1e-300);
        for (a, b) in fused.data().iter().zip(reference.data()) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }
}

#[test]
fn train_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train",
        "--mode",
        "fusedprop",
        "--loss",
        "ns",
        "--seed",
        "3",
        "--out",
        "a.csv",
        "--plot",
        "a.svg",
    ];
    args.extend(SMALL);
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("modes_covered"));
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert!(a.starts_with("# fusedprop "));
    assert!(a.contains("# config {"));
    assert_eq!(a.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
    let svg = fs::read_to_string(dir.path().join("a.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<desc>fusedprop"));

    let o = run(
        dir.path(),
        &["train", "--config", "a.csv.config.json", "--out", "b.csv"],
    );
    assert_eq!(code(&o), 0);
    let b = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(strip_wall(&a), strip_wall(&b));
}

#[test]
fn train_flag_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut conv = vec!["train", "--mode", "conventional", "--n-d", "2"];
    conv.extend(SMALL);
    assert_eq!(code(&run(dir.path(), &conv)), 0);

    let o = run(dir.path(), &["train", "--mode", "fusedprop", "--n-d", "2"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_d"));

    let o = run(dir.path(), &["train", "--adaptive-switch", "--iters", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("NOT_IMPLEMENTED"));

    assert_eq!(code(&run(dir.path(), &["train", "--loss", "bogus"])), 2);
}

#[test]
fn train_echoes_ttur_rates() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--lr-d", "4e-4", "--lr-g", "1e-4"];
    args.extend(SMALL);
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(
        out.contains("\"lr_d\": 0.0004") && out.contains("\"lr_g\": 0.0001"),
        "{out}"
    );
}

#[test]
fn train_divergence_exits_three_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train",
        "--optimizer",
        "sgd",
        "--loss",
        "wasserstein",
        "--lr-d",
        "1e30",
        "--lr-g",
        "1e30",
        "--out",
        "d.csv",
    ];
    args.extend(SMALL);
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let record = fs::read_to_string(dir.path().join("d.csv.failure.json")).unwrap();
    assert!(record.contains("\"iter\""));
    assert!(fs::read_to_string(dir.path().join("d.csv"))
        .unwrap()
        .contains("iter,loss_d_real"));
}

#[test]
fn train_sweeps_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train",
        "--sweep-seeds",
        "2",
        "--seed",
        "5",
        "--out",
        "s.csv",
    ];
    args.extend(SMALL);
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0);
    for seed in [5, 6] {
        assert!(dir.path().join(format!("s-seed{seed}.csv")).exists());
        assert!(dir
            .path()
            .join(format!("s-seed{seed}.csv.config.json"))
            .exists());
    }
    assert!(stdout(&o).contains("median modes_covered"));
}

#[test]
fn bench_reports_ratio_column() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "bench",
        "--modes",
        "conventional,fusedprop",
        "--loss",
        "ns",
        "--batch",
        "64",
        "--arch-g",
        "2-16-2",
        "--arch-d",
        "2-16-1",
        "--warmup",
        "10",
        "--repeats",
        "5",
        "--block-iters",
        "5",
    ];
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.contains(
        "mode,loss,arch,batch,dtype,iters_per_sec,ratio_vs_conventional,model_prediction"
    ));
    assert!(csv
        .lines()
        .any(|l| l.starts_with("fusedprop,ns,2-16-2|2-16-1,64,f32,")));
    assert!(dir.path().join("bench.csv.config.json").exists());
}

#[test]
fn bench_mode_and_loss_compatibility() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["bench", "--modes", "fusedprop", "--loss", "hinge"],
    );
    assert_eq!(code(&o), 2);
    let args = [
        "bench",
        "--modes",
        "conventional,invfusedprop",
        "--loss",
        "hinge",
        "--arch-g",
        "2-8-2",
        "--arch-d",
        "2-8-1",
        "--warmup",
        "10",
        "--repeats",
        "5",
        "--block-iters",
        "2",
    ];
    assert_eq!(code(&run(dir.path(), &args)), 0);
    assert_eq!(code(&run(dir.path(), &["bench", "--warmup", "3"])), 2);
}

#[test]
fn losses_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["losses", "--at", "0"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("hinge") && out.contains("-H(y+1)"));
    let ns_at_zero = out
        .lines()
        .find(|l| l.starts_with("ns") && l.contains("0.693147"))
        .expect("ns row at y = 0");
    assert!(ns_at_zero.contains("-1.000000"));
}
