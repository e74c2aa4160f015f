use std::process::{Command, Output};

fn qep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Value of `column` in the first data row of CSV output.
fn field(csv: &str, column: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == column).unwrap_or_else(|| panic!("no column {column}"));
    row[i].to_string()
}

#[test]
fn scp_of_pairs() {
    let o = qep(&["scp", "--phi1", "0.4"]);
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "scp"), "0.8");
    let o = qep(&["scp", "--phi1", "0.5"]);
    assert_eq!(field(&stdout(&o), "scp"), "1");
}

#[test]
fn scp_between_vectors() {
    let o = qep(&["scp", "--source", "0.4,0.35,0.25", "--target", "0.334,0.333,0.333"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(field(&out, "majorizes"), "false");
    let p: f64 = field(&out, "probability").parse().unwrap();
    assert!((p - 0.25 / 0.333).abs() < 1e-9, "{p}");
}

#[test]
fn invalid_phi1_is_a_usage_error() {
    let o = qep(&["scp", "--phi1", "0.7"]);
    assert!(!o.status.success());
    assert_eq!(o.status.code(), Some(2));
    let o = qep(&["swap", "--phi1", "-0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn swap_table_and_verification() {
    let o = qep(&["swap", "--phi1", "0.4", "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1 + 8 + 1);
    let last = out.lines().last().unwrap();
    assert_eq!(last, "average,1,0.704");
    let note = String::from_utf8(o.stderr).unwrap();
    assert!(note.contains("oracle max deviation"));
}

#[test]
fn swap_balanced_is_uniform() {
    let out = stdout(&qep(&["swap", "--phi1", "0.5"]));
    for line in out.lines().skip(1).take(8) {
        assert_eq!(line.split(',').nth(1), Some("0.125"));
    }
}

#[test]
fn swap_at_the_threshold() {
    let out = stdout(&qep(&["swap", "--phi1", "0.32635"]));
    let p0: f64 = out.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((p0 - 0.5).abs() < 1e-4);
}

#[test]
fn count_qep_leading_term() {
    let o = qep(&["count", "--l", "64", "--strategy", "qep"]);
    assert!(o.status.success());
    let r: f64 = field(&stdout(&o), "three_per_l2").parse().unwrap();
    assert!((r - 2.0).abs() < 0.1, "{r}");
}

#[test]
fn json_mirrors_csv() {
    let csv = stdout(&qep(&["count", "--l", "8", "--strategy", "cep"]));
    let json = stdout(&qep(&["count", "--l", "8", "--strategy", "cep", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let obj = v[0].as_object().unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(obj.keys().count(), header.len());
    for h in header {
        let text = field(&csv, h);
        match &obj[h] {
            serde_json::Value::String(s) => assert_eq!(s, &text),
            serde_json::Value::Number(n) => assert_eq!(n.as_f64().unwrap(), text.parse::<f64>().unwrap()),
            other => assert_eq!(other.to_string(), text),
        }
    }
}

#[test]
fn bad_lattice_name_is_rejected() {
    let o = qep(&["threshold", "--lattice", "kagome"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_threshold_run() {
    let o = qep(&[
        "threshold", "--lattice", "tri-site", "--sizes", "8,16", "--trials", "300", "--bracket", "0.3,0.7",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: f64 = field(&stdout(&o), "p_c").parse().unwrap();
    assert!((p - 0.5).abs() < 0.06, "{p}");
}

#[test]
fn unmet_tolerance_exits_nonzero_with_partial_result() {
    let o = qep(&[
        "threshold", "--lattice", "tri-site", "--sizes", "8,16", "--trials", "200", "--bracket", "0.3,0.7", "--tol",
        "1e-30",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(field(&stdout(&o), "converged"), "false");
}

#[test]
fn percolate_is_reproducible_across_threads() {
    let base = ["percolate", "--phi1", "0.4", "--L", "16", "--trials", "200", "--seed", "17"];
    let one = stdout(&qep(&[&base[..], &["--threads", "1"]].concat()));
    let three = stdout(&qep(&[&base[..], &["--threads", "3"]].concat()));
    assert_eq!(one, three);
    assert_eq!(field(&one, "lattice"), "qep-site");
    assert_eq!(field(&one, "p"), "0.704");
    assert_eq!(field(&one, "seed"), "17");
}

#[test]
fn percolate_raw_lattice() {
    let o = qep(&["percolate", "--lattice", "square-site", "--p", "1", "--L", "8", "--trials", "100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(field(&stdout(&o), "spanning_fraction"), "1");
}

#[test]
fn out_file_gets_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scp.csv");
    let o = qep(&["scp", "--phi1", "0.3", "--out", out.to_str().unwrap(), "--seed", "5"]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("phi0,phi1,scp"));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scp.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"]["subcommand"], "scp");
    assert_eq!(m["master_seed"], 5);
    assert_eq!(m["outputs"][0], out.to_str().unwrap());
    assert!(m["argv"].as_array().unwrap().len() > 3);
}

#[test]
fn verify_passes() {
    let o = qep(&["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().skip(1).all(|l| l.contains(",true,")));
}
