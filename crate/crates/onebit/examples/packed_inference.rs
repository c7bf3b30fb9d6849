//! Single-bit weights end to end: binarize a freshly initialized network,
//! pack the signs, and show that multiplier-free convolution reproduces
//! the float path while storing 32x less.
//!
//! ```text
//! cargo run --release --example packed_inference
//! ```

use onebit::exec::{forward_infer, init_params, pack_model};
use onebit::models::{build_cifar, ArchFamily, ArchitectureSpec, ModelVariant};
use onebit::rng::{stream, Purpose};
use onebit::tensor::Tensor;
use rand::Rng;

fn main() {
    let spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 14,
        width: 1.0,
        num_classes: 10,
        quantized: true,
    };
    let graph = build_cifar(spec, ModelVariant::SreluOnly, 50.0).unwrap();
    let params = init_params(&graph, 42);

    let mut rng = stream(7, Purpose::Data);
    let x = Tensor::from_fn([4, 32, 32, 3], |_, _, _, _| rng.gen_range(-1.0..1.0f32));

    // Reference: binarize each layer's weights and convolve normally.
    let reference = forward_infer(&graph, &params, &x, None).unwrap();

    // Fast path: convolve directly over packed sign bits. One multiply per
    // output element (the per-layer scale), everything else is add/sub.
    let packed = pack_model(&params);
    let fast = forward_infer(&graph, &params, &x, Some(&packed)).unwrap();

    let mut max_rel = 0.0f32;
    for (&a, &b) in reference.data().iter().zip(fast.data()) {
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    println!("logit agreement (float-binarized vs packed): max rel err {max_rel:.2e}");

    let float_bytes: usize = params.conv.iter().map(|w| 4 * w.numel()).sum();
    let packed_bytes: usize = packed.iter().map(|p| p.sign_bits.len()).sum();
    println!("weight storage: {float_bytes} bytes as f32, {packed_bytes} bytes packed");
    println!("per-layer scales: {:?}", &params.sigma0[..3.min(params.sigma0.len())]);
}
