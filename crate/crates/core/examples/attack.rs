//! PGD on the training loss and flip attacks on the depth output of a
//! freshly initialised model.
//!
//! Usage: `cargo run --example attack -- [eps]`

use sfmk::losses::LossConfig;
use sfmk::nets::checkpoint::ModelBundle;
use sfmk::nets::{Arch, DepthNet, DepthRange, EgoNet, NetConfig};
use sfmk::pipeline::{synth_scene, KeyValues, SceneConfig};
use sfmk::robust::{flip_attack, pgd_attack, AttackConfig, FlipDirection};

fn main() -> sfmk::Result<()> {
    let eps: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let net = NetConfig::desk();
    let bundle = ModelBundle {
        depth: DepthNet::new(Arch::Conv, net.clone(), 0)?,
        ego: EgoNet::new(Arch::Conv, net, 1)?,
        learn_intrinsics: false,
        extra: KeyValues::default(),
    };
    let scene = synth_scene(&SceneConfig::desk())?;

    let (adv, out) = pgd_attack(&bundle, &scene, &AttackConfig::pgd(eps)?, &LossConfig::default())?;
    let linf = adv.target.zip_map(&scene.target, |a, b| (a - b).abs())?.max_abs() * 255.0;
    println!("pgd  eps {eps}: loss {:.5} -> {:.5}, |delta| {linf:.2}/255, {} iterations", out.initial_loss, out.best_loss, out.trace.len() - 1);

    for dir in [FlipDirection::Horizontal, FlipDirection::Vertical] {
        let (_, out) = flip_attack(&bundle.depth, &scene.target, &AttackConfig::flip(dir, eps)?, DepthRange::default())?;
        println!("{} eps {eps}: rmse to flipped {:.5} -> {:.5}", dir.code(), out.initial_loss, out.best_loss);
    }
    Ok(())
}
