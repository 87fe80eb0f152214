//! Overfit both networks on one rendered plane scene and report depth error.
//!
//! Usage: `cargo run --release --example train_synthetic -- [steps] [depth_arch] [ego_arch] [given|learned] [rot_y]`

use std::time::Instant;

use sfmk::eval::{evaluate_prediction, EvalConfig};
use sfmk::nets::{Arch, DepthNet, EgoNet, NetConfig};
use sfmk::pipeline::{synth_scene, SceneConfig};
use sfmk::train::{IntrinsicsMode, OptimConfig, TrainConfig, Trainer};

fn main() -> sfmk::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(300);
    let depth_arch: Arch = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Arch::Transformer);
    let ego_arch: Arch = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(depth_arch);
    let intrinsics: IntrinsicsMode = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(IntrinsicsMode::Given);

    let mut scene_cfg = SceneConfig::desk();
    if let Some(r) = args.get(4).and_then(|s| s.parse::<f64>().ok()) {
        scene_cfg.motion.rotation = [0.0, r, 0.0];
    }
    let scene = synth_scene(&scene_cfg)?;
    let net = NetConfig::desk();
    let optim = OptimConfig { kind: sfmk::train::OptimKind::AdamW, lr: 1e-4, batch_size: 1, ..OptimConfig::transformer() };
    let mut trainer = Trainer::new(
        DepthNet::new(depth_arch, net.clone(), 0)?,
        EgoNet::new(ego_arch, net, 1)?,
        TrainConfig { intrinsics, ..TrainConfig::new(optim) },
    )?;
    let start = Instant::now();
    for step in 0..steps {
        let stats = trainer.step(&[&scene], 1e-4)?;
        if step % 25 == 0 || step + 1 == steps {
            let pred = trainer.depth.predict_depth(&scene.target, trainer.cfg.loss.depth_range)?;
            let m = evaluate_prediction(&pred, scene.depth.as_ref().unwrap(), &EvalConfig::default())?;
            println!(
                "step {step:5} loss {:.5} mask {:.2} |t| {:.4} abs_rel {:.4} fx {:.2} ({:.1} ms/step)",
                stats.loss,
                stats.mask_fraction,
                stats.translation,
                m.abs_rel,
                stats.intrinsics[0],
                start.elapsed().as_secs_f64() * 1e3 / (step + 1) as f64
            );
        }
    }
    if intrinsics == IntrinsicsMode::Learned {
        let k = trainer.predict_intrinsics(&scene)?;
        println!("predicted fx {:.2} (true {:.2})", k[0], scene_cfg.intrinsics.fx);
    }
    Ok(())
}
