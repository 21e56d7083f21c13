mod common;

use std::path::Path;

use common::cli::{ok, pipeline, run, write_configs};
use d2fel::harness::RunReport;
use d2fel::retrieval::EvalReport;

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (print_a, banks_a) = pipeline(a.path());
    let (print_b, banks_b) = pipeline(b.path());
    assert!(print_a.starts_with("mAP "));
    assert_eq!(print_a, print_b);
    assert_eq!(banks_a, banks_b);
    let read = |d: &Path| -> RunReport { serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap() };
    assert!(read(a.path()).same_numbers(&read(b.path())));
    let eval = |d: &Path| -> EvalReport { serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap() };
    assert!(eval(a.path()).same_numbers(&eval(b.path())));
    assert_eq!(
        std::fs::read(a.path().join("checkpoint.d2ck")).unwrap(),
        std::fs::read(b.path().join("checkpoint.d2ck")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (data_cfg, train_cfg) = write_configs(p);
    let d = p.join("data");
    let ds = d.to_str().unwrap();
    // Unknown key in the config.
    let bad = p.join("bad.toml");
    std::fs::write(&bad, "epochs = 2\nbogus = 1\n").unwrap();
    assert_eq!(run(p, &["train", "--config", bad.to_str().unwrap(), "--data", ds]).status.code(), Some(2));
    // Unparseable flag value.
    assert_eq!(run(p, &["eval", "--query", "q", "--gallery", "g", "--distance", "manhattan"]).status.code(), Some(2));
    // Missing dataset.
    assert_eq!(run(p, &["train", "--config", &train_cfg, "--data", ds]).status.code(), Some(3));
    ok(&d, &["gen-data", "--config", &data_cfg]);
    // Corrupt bank.
    let junk = p.join("junk.d2fb");
    std::fs::write(&junk, b"not a bank").unwrap();
    let j = junk.to_str().unwrap();
    assert_eq!(run(p, &["eval", "--query", j, "--gallery", j]).status.code(), Some(3));
    // Diverging learning rate.
    let (_, mut cfg) = common::tiny(0);
    cfg.schedule.lr_start = 1e30;
    cfg.schedule.lr_base = 1e30;
    let hot = p.join("hot.toml");
    std::fs::write(&hot, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(run(p, &["train", "--config", hot.to_str().unwrap(), "--data", ds]).status.code(), Some(4));
}
