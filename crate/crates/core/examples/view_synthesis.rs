//! Warp the next frame of a rendered scene into the target view with the
//! true depth, pose and intrinsics, and compare photometric errors.
//!
//! Usage: `cargo run --example view_synthesis -- [out.png]`

use sfmk::geometry::{view_synthesis, Pose};
use sfmk::losses::{photometric_error, LossConfig};
use sfmk::pipeline::image_io::save_rgb;
use sfmk::pipeline::{synth_scene, SceneConfig};
use sfmk::Graph;

fn main() -> sfmk::Result<()> {
    let cfg = SceneConfig::desk();
    let scene = synth_scene(&cfg)?;
    let g = Graph::new();
    let target = g.constant(scene.target.clone());
    let source = g.constant(scene.next.clone().expect("next frame"));
    let depth = g.constant(scene.depth.clone().expect("depth"));
    let k = g.constant(cfg.intrinsics.to_array());

    for (label, pose) in [("true pose", cfg.motion), ("identity", Pose::identity())] {
        let (synth, valid) = view_synthesis(&source, &depth, &k, &g.constant(pose.to_array()))?;
        let err = photometric_error(&target, &synth, &LossConfig::default())?.to_array();
        let n = valid.sum();
        let masked: f64 = err.data().iter().zip(valid.data()).map(|(e, v)| e * v).sum();
        println!("{label:>9}: mean error {:.5} over {:.0}% of pixels", masked / n, 100.0 * n / valid.len() as f64);
        if label == "true pose" {
            if let Some(path) = std::env::args().nth(1) {
                save_rgb(path.as_ref(), &synth.to_array())?;
            }
        }
    }
    Ok(())
}
