//! What the softmax temperature does, numerically: dividing logits by T
//! never changes the predicted class, but it raises the entropy of the
//! distribution, which softens the cross-entropy gradients. In the
//! batch-norm-free variants that scale is the last layer before pooling.
//!
//! ```text
//! cargo run --example temperature
//! ```

use onebit::layers::scale_layer;
use onebit::models::softmax_probs;
use onebit::rng::{stream, Purpose};
use onebit::tensor::Tensor;
use rand::Rng;

fn entropy(p: &[f32]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -(v as f64) * (v as f64).ln())
        .sum()
}

fn argmax(v: &[f32]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
}

fn main() {
    let mut rng = stream(2, Purpose::Data);
    let logits = Tensor::from_fn([1, 1, 1, 10], |_, _, _, _| rng.gen_range(-4.0..4.0f32));
    println!("logits: {:?}\n", logits.data());

    println!("{:>6} {:>8} {:>10} {:>8}", "T", "argmax", "entropy", "max p");
    let mut last_entropy = -1.0;
    for t in [1.0f32, 10.0, 30.0, 100.0] {
        let scaled = scale_layer(&logits, t);
        let probs = softmax_probs(&scaled);
        let p = probs.data();
        let h = entropy(p);
        println!(
            "{:>6} {:>8} {:>10.4} {:>8.4}",
            t,
            argmax(p),
            h,
            p.iter().cloned().fold(0.0f32, f32::max)
        );
        assert_eq!(argmax(p), argmax(logits.data()), "temperature must not move the argmax");
        assert!(h >= last_entropy, "entropy must not decrease as T grows");
        last_entropy = h;
    }
    println!("\nargmax unchanged, entropy non-decreasing: higher T = softer targets");
}
