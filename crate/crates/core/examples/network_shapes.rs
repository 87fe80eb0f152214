//! Reassemble shapes at full size and parameter counts of every network at
//! the desk preset.
//!
//! Usage: `cargo run --example network_shapes`

use sfmk::nets::{Arch, DepthNet, EgoNet, NetConfig};

fn main() -> sfmk::Result<()> {
    let full = NetConfig::full();
    println!("{}x{} input, {} patches", full.width, full.height, full.num_patches());
    for (stage, shape) in full.reassemble_trace()? {
        println!("  {stage:<10} {shape:?}");
    }
    let desk = NetConfig::desk();
    for arch in [Arch::Transformer, Arch::Conv] {
        let d = DepthNet::new(arch, desk.clone(), 0)?;
        let e = EgoNet::new(arch, desk.clone(), 0)?;
        println!("{arch:?}: depth {} values, ego {} values", d.params.num_values(), e.params.num_values());
    }
    Ok(())
}
