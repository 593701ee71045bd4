use std::process::Command;

fn vet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vet"))
}

#[test]
fn clean_files_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.yaml"), "seed_examples:\n  - question: what is rust?\n    answer: a language.\n").unwrap();
    let out = vet().args(["vet-files", "--input"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn json_report_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "reach me at jane@example.org").unwrap();
    let out = vet()
        .args(["check", "--format", "json", "--input"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["annotations"][0]["category"], "pii.email_address");
    assert_eq!(report["annotations"][0]["field"], "text");
}

#[test]
fn policy_validate_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&good, "policy_id = \"g\"\ndefault_action = \"PASS\"\n").unwrap();
    std::fs::write(
        &bad,
        "policy_id = \"b\"\ndefault_action = \"PASS\"\n\n[[rules]]\nid = \"r\"\nwhen = 'score >> 2'\naction = \"BLOCK\"\n",
    )
    .unwrap();
    let out = vet().args(["policy-validate", "--file"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = vet().args(["policy-validate", "--file"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("MALFORMED_PREDICATE at line 6"), "{text}");
}

#[test]
fn index_writes_into_store() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    std::fs::write(corpus.join("a.txt"), "one two three four five six seven eight").unwrap();
    let store = dir.path().join("store");
    let out = vet()
        .args(["index", "--k", "5", "--id", "books", "--corpus"])
        .arg(&corpus)
        .arg("--store")
        .arg(&store)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = shieldgate::store::open_store(&store).unwrap();
    assert_eq!(s.get_index("books").unwrap().doc_count(), 1);
}

#[test]
fn usage_errors_exit_two() {
    let out = vet().args(["vet-files"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = vet().args(["serve", "--config", "/nonexistent/config.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
