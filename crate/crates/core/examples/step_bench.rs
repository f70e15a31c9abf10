//! Times forward, loss and backward of a small 3D ResU-Net on one 32^3 volume.
use std::time::Instant;

use oarseg_core::model::{Mode, Model, ModelConfig, Variant};
use oarseg_core::optim::{loss_node, make_optimizer, LossConfig};
use oarseg_tensor::{Tensor, Var};

fn main() {
    let width: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let cfg = ModelConfig {
        base_width: width,
        depth: 3,
        ..ModelConfig::for_variant(Variant::Resunet3d, 4)
    };
    let model = Model::new(&cfg, 0).unwrap();
    println!("parameters: {}", model.parameter_count());
    let mut opt = make_optimizer(model.params(), 1e-3);
    let x = Tensor::full(&[1, 1, 32, 32, 32], 0.3);
    let target = vec![1u8; 32 * 32 * 32];
    for _ in 0..3 {
        let start = Instant::now();
        opt.zero_grad();
        let out = model.forward(&Var::constant(x.clone()), Mode { training: true }).unwrap();
        let loss = loss_node(&out.logits, &target, &LossConfig::compound()).unwrap();
        let mid = start.elapsed();
        loss.backward();
        opt.step();
        println!("forward {mid:?}, total {:?}", start.elapsed());
    }
}
