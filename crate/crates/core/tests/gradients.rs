use std::time::Instant;

use cdfuse_core::gradsuite::{parse_groups, run_grad_suite, CheckGroup};

fn run(group: CheckGroup) {
    let start = Instant::now();
    let outcomes = run_grad_suite(&[group], 0, |o| eprintln!("{:<7} {:<18} {}", o.group, o.name, o.report)).unwrap();
    assert!(!outcomes.is_empty());
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.report.passed()).map(|o| o.name).collect();
    assert!(failed.is_empty(), "{group}: {failed:?}");
    eprintln!("{group}: {} checks in {:.1?}", outcomes.len(), start.elapsed());
}

#[test]
fn tensor_ops() {
    run(CheckGroup::Tensor);
}

#[test]
fn scan() {
    run(CheckGroup::Ssm);
}

#[test]
fn losses() {
    run(CheckGroup::Loss);
}

#[test]
fn full_model() {
    run(CheckGroup::Model);
}

#[test]
fn group_parsing() {
    assert_eq!(parse_groups("all").unwrap(), CheckGroup::ALL.to_vec());
    assert_eq!(parse_groups("ssm").unwrap(), vec![CheckGroup::Ssm]);
    assert!(parse_groups("bogus").is_err());
}
