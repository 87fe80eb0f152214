//! Score an untrained depth network and a constant-depth baseline on
//! rendered scenes.
//!
//! Usage: `cargo run --example evaluate -- [scenes]`

use sfmk::eval::{evaluate, evaluate_predictions, EvalConfig, MetricsReport};
use sfmk::nets::{Arch, DepthNet, NetConfig};
use sfmk::pipeline::{synth_dataset, SceneConfig};
use sfmk::Array;

fn main() -> sfmk::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let data = synth_dataset(&SceneConfig::desk().with_seed(40), n)?;
    let cfg = EvalConfig::default();
    let mut rows = Vec::new();
    for arch in [Arch::Transformer, Arch::Conv] {
        let net = DepthNet::new(arch, NetConfig::desk(), 0)?;
        rows.push((format!("{arch:?}"), evaluate(&net, &data, &cfg)?));
    }
    let flat: Vec<Array> = data.iter().map(|t| Array::full(&[t.height(), t.width()], 10.0)).collect();
    rows.push(("constant".into(), MetricsReport::mean(&evaluate_predictions(&flat, &data, &cfg)?)?));
    print!("{}", MetricsReport::table(&rows));
    Ok(())
}
