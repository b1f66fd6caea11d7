use std::time::Instant;

use avfuse::gradcheck::{standard_suite, SuiteConfig};
use avfuse::OpKind;

#[test]
fn every_unit_passes_at_default_dims() {
    let t = Instant::now();
    let reports = standard_suite(&SuiteConfig::default()).unwrap();
    for r in &reports {
        println!("{}", r.line());
    }
    println!("suite took {:.2?}", t.elapsed());
    assert!(reports.iter().all(|r| r.passed));
    for unit in ["block/sa", "block/cma", "block/gated_fusion", "module/lisf", "loss/ep_ce_multitask"] {
        assert!(reports.iter().any(|r| r.unit == unit), "{unit} missing");
    }
}

#[test]
fn suite_is_deterministic_per_seed() {
    let cfg = SuiteConfig { seed: 5, ..Default::default() };
    let a: Vec<f64> = standard_suite(&cfg).unwrap().iter().map(|r| r.max_rel_err).collect();
    let b: Vec<f64> = standard_suite(&cfg).unwrap().iter().map(|r| r.max_rel_err).collect();
    assert_eq!(a, b);
}

#[test]
fn injected_faults_are_caught_and_named() {
    for (kind, unit) in [
        (OpKind::Softmax, "op/softmax"),
        (OpKind::MatMul, "op/matmul"),
        (OpKind::LayerNorm, "op/layer_norm"),
        (OpKind::Gather, "op/gather"),
    ] {
        let cfg = SuiteConfig {
            fault: Some(kind),
            ..Default::default()
        };
        let reports = standard_suite(&cfg).unwrap();
        let r = reports.iter().find(|r| r.unit == unit).unwrap();
        assert!(!r.passed, "{unit} passed with a corrupted backward rule");
        assert!(r.line().contains(unit));
    }
}
