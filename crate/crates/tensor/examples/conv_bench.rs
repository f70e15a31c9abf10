//! Times one 3x3x3 convolution forward and backward on a 32^3 volume.
use std::time::Instant;

use oarseg_tensor::{conv, ConvGeometry, Param, Tensor, Var};

fn main() {
    let channels = 16;
    let x = Var::input(Tensor::full(&[1, channels, 32, 32, 32], 0.5));
    let w = Param::new(Tensor::full(&[channels, channels, 3, 3, 3], 0.01));
    for _ in 0..3 {
        let start = Instant::now();
        let y = conv(&x, &Var::param(&w), None, ConvGeometry::same([3; 3], [1; 3]));
        y.backward();
        println!("forward+backward: {:?}", start.elapsed());
    }
}
