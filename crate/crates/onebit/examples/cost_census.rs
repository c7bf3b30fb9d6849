//! Inference cost census: what single-bit weights buy at the multiplier
//! level for a depth-20, width-4 network on 32x32 inputs.
//!
//! ```text
//! cargo run --example cost_census
//! ```

use onebit::cost::census;
use onebit::models::{build_cifar, ArchFamily, ArchitectureSpec, ModelVariant};

fn main() {
    let mut spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 20,
        width: 4.0,
        num_classes: 10,
        quantized: false,
    };
    let float = census(&build_cifar(spec, ModelVariant::SreluOnly, 50.0).unwrap(), 32);
    spec.quantized = true;
    let packed = census(&build_cifar(spec, ModelVariant::SreluOnly, 50.0).unwrap(), 32);

    println!("depth-20 width-4, batch-norm-free variant, one 32x32 input\n");
    println!(
        "{:<44} {:>13} {:>13}",
        "layer", "float mults", "1-bit mults"
    );
    for (f, p) in float.rows.iter().zip(&packed.rows) {
        if f.cost.mults == 0 && p.cost.mults == 0 {
            continue;
        }
        println!("{:<44} {:>13} {:>13}", f.label, f.cost.mults, p.cost.mults);
    }
    println!(
        "{:<44} {:>13} {:>13}",
        "total", float.total.mults, packed.total.mults
    );
    println!();
    println!(
        "multiplies per input: {} -> {} ({}x fewer)",
        float.total.mults,
        packed.total.mults,
        float.total.mults / packed.total.mults.max(1)
    );
    println!(
        "adds per input:       {} -> {}",
        float.total.adds, packed.total.adds
    );
    println!(
        "weight storage bits:  {} -> {} (exactly 32x)",
        float.conv_weight_bits, packed.conv_weight_bits
    );
}
