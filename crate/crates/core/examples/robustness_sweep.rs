//! Corruption sweep of a freshly initialised model, written as CSV.
//!
//! Usage: `cargo run --release --example robustness_sweep -- [out.csv] [severity]`

use sfmk::losses::LossConfig;
use sfmk::nets::checkpoint::ModelBundle;
use sfmk::nets::{Arch, DepthNet, EgoNet, NetConfig};
use sfmk::pipeline::{synth_dataset, KeyValues, SceneConfig};
use sfmk::robust::{robustness_sweep, sweep_csv, SweepSuite};

fn main() -> sfmk::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next();
    let severity: u8 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let net = NetConfig::desk();
    let bundle = ModelBundle {
        depth: DepthNet::new(Arch::Conv, net.clone(), 0)?,
        ego: EgoNet::new(Arch::Conv, net, 1)?,
        learn_intrinsics: false,
        extra: KeyValues::default(),
    };
    let data = synth_dataset(&SceneConfig::desk().with_seed(40), 2)?;
    let rows = robustness_sweep(&bundle, &data, &SweepSuite::corruptions(severity)?, &LossConfig::default())?;
    let csv = sweep_csv(&rows);
    match out {
        Some(path) => std::fs::write(&path, csv).map_err(|e| sfmk::Error::io(&path, e))?,
        None => print!("{csv}"),
    }
    Ok(())
}
