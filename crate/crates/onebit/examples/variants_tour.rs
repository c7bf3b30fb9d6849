//! Tour of the six network variants: how normalization placement and
//! activation choice differ, and what each costs in learned parameters.
//!
//! ```text
//! cargo run --example variants_tour
//! ```

use onebit::models::{build, ArchFamily, ArchitectureSpec, ModelVariant, ALL_VARIANTS};

fn main() {
    let spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 20,
        width: 4.0,
        num_classes: 10,
        quantized: false,
    };

    println!(
        "{:<16} {:>8} {:>11} {:>7} {:>12}",
        "variant", "bn", "mean-only", "scale", "parameters"
    );
    for variant in ALL_VARIANTS {
        let t = if variant.uses_temperature() { 50.0 } else { 1.0 };
        let g = build(spec, variant, t).unwrap();
        let mean_only = g.norm_slots.len() - g.bn_count();
        println!(
            "{:<16} {:>8} {:>11} {:>7} {:>12}",
            variant.name(),
            g.bn_count(),
            mean_only,
            g.scale_count(),
            g.count_parameters().total
        );
    }

    // Full layer listing for the batch-norm-free flagship.
    let g = build(spec, ModelVariant::SreluOnly, 50.0).unwrap();
    println!();
    print!("{}", g.to_text(32));

    // The larger-image family at two reference widths.
    println!();
    for width in [1.0, 2.5] {
        let spec = ArchitectureSpec {
            family: ArchFamily::ImageNet,
            depth: 18,
            width,
            num_classes: 1000,
            quantized: false,
        };
        let g = build(spec, ModelVariant::Baseline1, 1.0).unwrap();
        println!(
            "imagenet-18 width {width}: {} learned parameters",
            g.count_parameters().total
        );
    }
}
