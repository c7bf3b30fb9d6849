//! Train a small single-bit network on a synthetic task, export it, read
//! it back, and confirm the reloaded model scores identically.
//!
//! ```text
//! cargo run --release --example micro_train
//! ```

use onebit::augment::AugmentCfg;
use onebit::data::synthetic_blobs;
use onebit::models::{build_cifar, ArchFamily, ArchitectureSpec, ModelVariant};
use onebit::serialize::{export_model, import_model};
use onebit::train::{evaluate, train, OptimizerCfg};

fn main() {
    let ds = synthetic_blobs(256, 64, 16, 2, 1);
    let spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 8,
        width: 0.5,
        num_classes: ds.num_classes,
        quantized: true,
    };
    let graph = build_cifar(spec, ModelVariant::MeanOnlyFinal, 50.0).unwrap();
    let opt = OptimizerCfg { epochs: 20, ..OptimizerCfg::default() };

    let outcome = train(&graph, &ds, &opt, &AugmentCfg::none(), 1, |rec| {
        if rec.epoch % 5 == 0 || rec.epoch + 1 == opt.epochs {
            println!(
                "epoch {:>2}  lr {:.4}  loss {:.4}  train err {:.3}",
                rec.epoch, rec.lr, rec.train_loss, rec.train_err
            );
        }
    })
    .expect("training should not diverge at these settings");

    let eval = outcome.final_test.as_ref().unwrap();
    println!("test error {:.3} over {} samples", eval.top1_err, eval.samples);

    let dir = std::env::temp_dir().join("onebit_micro_train");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.bnwm");
    export_model(&path, &graph, &outcome.params).unwrap();
    let size = std::fs::metadata(&path).unwrap().len();
    println!("exported {} ({size} bytes, single-bit conv payloads)", path.display());

    let back = import_model(&path).unwrap();
    let again = evaluate(&back.graph, &back.params, &ds, &ds.test, opt.batch_size).unwrap();
    assert_eq!(again.top1_err, eval.top1_err, "reloaded model must score identically");
    println!("reloaded model reproduces the test error exactly");
}
