//! Every differentiable operation against central finite differences.

mod common;

use sfmk::nets::Arch;

fn run(cases: Vec<(&'static str, common::Case)>) {
    let mut failed = Vec::new();
    for (name, case) in cases {
        let report = case().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(report.checked > 0, "{name}: nothing checked");
        if !report.passed() {
            failed.push(format!("{name}: {:?}", &report.mismatches[..report.mismatches.len().min(3)]));
        }
    }
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}

#[test]
fn primitives() {
    run(common::primitive_cases());
}

#[test]
fn geometry_and_losses() {
    run(common::composite_cases());
}

#[test]
fn total_loss_through_transformer_nets() {
    let r = common::total_loss_case(Arch::Transformer, Arch::Transformer).unwrap();
    assert!(r.passed(), "{:?}", &r.mismatches[..r.mismatches.len().min(5)]);
}

#[test]
fn total_loss_through_conv_nets() {
    let r = common::total_loss_case(Arch::Conv, Arch::Conv).unwrap();
    assert!(r.passed(), "{:?}", &r.mismatches[..r.mismatches.len().min(5)]);
}
