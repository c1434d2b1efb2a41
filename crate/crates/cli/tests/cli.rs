use std::path::Path;
use std::process::{Command, Output};

fn flagopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flagopt"))
        .args(args)
        .output()
        .expect("spawn flagopt")
}

fn without_elapsed(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            if l.starts_with('#') {
                l
            } else {
                l.rsplit_once(',').map_or(l, |(head, _)| head)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for algo in ["flag", "fista", "adagrad"] {
        let mut traces = Vec::new();
        for i in 0..2 {
            let out = dir.path().join(format!("{algo}{i}.csv"));
            let o = flagopt(&[
                "run",
                "--problem",
                "lasso",
                "--n",
                "30",
                "--d",
                "8",
                "--box=-5,5",
                "--algo",
                algo,
                "--iters",
                "60",
                "--ref-iters",
                "2000",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            traces.push(without_elapsed(&out));
        }
        assert_eq!(traces[0], traces[1], "{algo}");
        assert_eq!(traces[0].lines().count(), 62);
    }
}

#[test]
fn descriptor_file_and_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let desc = dir.path().join("problem.txt");
    std::fs::write(
        &desc,
        "generator = box_qp\nseed = 2\nn = 0\nd = 6\nlambda = 0\n",
    )
    .unwrap();
    let out = dir.path().join("t.jsonl");
    let o = flagopt(&[
        "run",
        "--problem",
        desc.to_str().unwrap(),
        "--iters",
        "30",
        "--ref-iters",
        "300",
        "--format",
        "json-lines",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text
        .lines()
        .next()
        .unwrap()
        .contains("generator=box_qp seed=2"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().nth(1).unwrap().starts_with("flag"));
}

#[test]
fn compare_writes_one_trace_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let o = flagopt(&[
        "compare",
        "--problem",
        "box_qp",
        "--d",
        "5",
        "--iters",
        "40",
        "--ref-iters",
        "400",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["flag", "fista", "ista", "adagrad", "mirror_descent"] {
        assert!(dir.path().join(format!("{name}.csv")).exists(), "{name}");
    }
}

#[test]
fn audit_prints_one_row_per_check() {
    let o = flagopt(&[
        "audit",
        "--problem",
        "box_qp",
        "--d",
        "5",
        "--iters",
        "50",
        "--trials",
        "100",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in [
        "gradient_mapping",
        "prox_lipschitz",
        "binary_search",
        "flag_eta_recurrence",
        "mirror_descent_inequality",
    ] {
        assert!(
            stdout
                .lines()
                .any(|l| l.starts_with(name) && l.ends_with("pass")),
            "{name}\n{stdout}"
        );
    }
}

#[test]
fn failures_exit_nonzero() {
    let short_ref = flagopt(&["run", "--iters", "100", "--ref-iters", "999"]);
    assert!(!short_ref.status.success());
    let unknown = flagopt(&["run", "--problem", "no_such_generator"]);
    assert!(!unknown.status.success());
    let bad_algo = flagopt(&["run", "--algo", "adam"]);
    assert!(!bad_algo.status.success());
    // A reference solve far too short for logistic loss is beaten by FLAG.
    let weak_ref = flagopt(&[
        "run",
        "--problem",
        "logistic_l1",
        "--seed",
        "3",
        "--n",
        "40",
        "--d",
        "12",
        "--lambda",
        "0.05",
        "--box=-5,5",
        "--iters",
        "150",
        "--ref-iters",
        "1500",
    ]);
    assert!(!weak_ref.status.success());
    assert!(String::from_utf8_lossy(&weak_ref.stderr).contains("beaten"));
}
