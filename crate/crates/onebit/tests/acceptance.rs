//! Release gate: ten criteria covering gradients, architecture fidelity,
//! the single-bit path, normalization semantics, the temperature head,
//! trainability, schedules, serialization, and determinism. Each test
//! prints one PASS line (visible with `--nocapture`); a failed criterion
//! fails its test.

use std::time::Instant;

use onebit::augment::AugmentCfg;
use onebit::binary::{binarize_forward, pack_weights, packed_conv2d, unpack_weights};
use onebit::conv::{conv2d, Padding};
use onebit::data::synthetic_blobs;
use onebit::error::Error;
use onebit::exec::{finalize_norm_statistics, forward_infer, init_params, pack_model};
use onebit::gradcheck::{gradient_suite, TOLERANCE};
use onebit::layers::{batch_norm_train, relu, scale_layer, srelu, BN_EPSILON};
use onebit::models::{
    build_cifar, build_imagenet, ArchFamily, ArchitectureSpec, ModelVariant, ALL_VARIANTS,
};
use onebit::rng::{stream, Purpose};
use onebit::serialize::{decode_model, encode_model};
use onebit::tensor::Tensor;
use onebit::train::{cosine_lr, train, OptimizerCfg};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

#[test]
fn c01_gradient_suite_passes_under_tolerance() {
    let start = Instant::now();
    let entries = gradient_suite(1);
    let worst = entries.iter().map(|e| e.max_rel_err).fold(0.0f64, f64::max);
    for e in &entries {
        assert!(
            e.passed(),
            "criterion 1 FAIL: {} rel err {:.3e} >= {TOLERANCE:.0e}",
            e.name,
            e.max_rel_err
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 1 FAIL: suite took {secs:.1}s");
    println!(
        "PASS criterion 1: {} gradient checks, worst rel err {worst:.2e} < 1e-4, {secs:.1}s",
        entries.len()
    );
}

#[test]
fn c02_parameter_counts_match_reference_totals() {
    let spec = |width| ArchitectureSpec {
        family: ArchFamily::ImageNet,
        depth: 18,
        width,
        num_classes: 1000,
        quantized: false,
    };
    let n1 = build_imagenet(spec(1.0), ModelVariant::Baseline1, 1.0)
        .unwrap()
        .count_parameters()
        .total as f64;
    let n25 = build_imagenet(spec(2.5), ModelVariant::Baseline1, 1.0)
        .unwrap()
        .count_parameters()
        .total as f64;
    let dev1 = (n1 - 11.5e6).abs() / 11.5e6;
    let dev25 = (n25 - 70.0e6).abs() / 70.0e6;
    assert!(dev1 < 0.02, "criterion 2 FAIL: width 1 count {n1} deviates {dev1:.3}");
    assert!(dev25 < 0.02, "criterion 2 FAIL: width 2.5 count {n25} deviates {dev25:.3}");
    println!(
        "PASS criterion 2: depth-18 counts {n1:.0} (target 11.5M, dev {:.2}%) and {n25:.0} \
         (target 70M, dev {:.2}%)",
        dev1 * 100.0,
        dev25 * 100.0
    );
}

#[test]
fn c03_packed_convolution_matches_float_on_100_random_configs() {
    let start = Instant::now();
    let mut rng = stream(33, Purpose::Check);
    let mut worst_rel = 0.0f64;
    for case in 0..100 {
        let r = [1usize, 3, 5, 7][rng.gen_range(0..4)];
        let s = [1usize, 3, 5][rng.gen_range(0..3)];
        let cin = rng.gen_range(1..6);
        let cout = rng.gen_range(1..8);
        let h = rng.gen_range(r..r + 9);
        let w = rng.gen_range(s..s + 9);
        let k = rng.gen_range(1..3);
        let stride = rng.gen_range(1..3);
        let pad = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Explicit(rng.gen_range(0..3)) };
        let sigma0 = (2.0 / (r * s * cin) as f64).sqrt();

        let weights = rand_tensor(&mut rng, [r, s, cin, cout], -1.0, 1.0);
        let input = rand_tensor(&mut rng, [k, h, w, cin], -2.0, 2.0);

        // Exactness half: pack -> unpack reproduces binarized weights.
        let packed = pack_weights(&weights, sigma0);
        let quantized = binarize_forward(&weights, sigma0);
        assert_eq!(
            unpack_weights::<f64>(&packed).data(),
            quantized.data(),
            "criterion 3 FAIL: pack/unpack not exact (case {case})"
        );

        // Numeric half: multiplier-free kernel vs float conv on the
        // binarized weights.
        let fast = packed_conv2d(&input, &packed, stride, pad);
        let reference = conv2d(&input, &quantized, stride, pad);
        for (&a, &b) in reference.data().iter().zip(fast.data()) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-30);
            worst_rel = worst_rel.max(rel);
            assert!(rel < 1e-5, "criterion 3 FAIL: case {case} rel err {rel:.3e}");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 3 FAIL: took {secs:.1}s");
    println!(
        "PASS criterion 3: 100 packed-vs-float configs agree (worst rel {worst_rel:.2e}), \
         pack/unpack exact, {secs:.1}s"
    );
}

#[test]
fn c04_batch_norm_semantics() {
    let mut rng = stream(44, Purpose::Check);

    // (a) Training-mode output is standardized per channel.
    let x = rand_tensor(&mut rng, [8, 6, 5, 7], -3.0, 5.0);
    let (y, stats) = batch_norm_train(&x, None, BN_EPSILON);
    let [k, h, w, c] = y.shape();
    let m = (k * h * w) as f64;
    for cc in 0..c {
        let mut mean = 0.0;
        for row in y.data().chunks_exact(c) {
            mean += row[cc];
        }
        mean /= m;
        assert!(mean.abs() < 1e-5, "criterion 4 FAIL: output channel mean {mean:.2e}");
        let mut var = 0.0;
        for row in y.data().chunks_exact(c) {
            var += (row[cc] - mean) * (row[cc] - mean);
        }
        var /= m;
        let sigma2 = stats.var[cc];
        let expect = sigma2 / (sigma2 + BN_EPSILON);
        assert!(
            (var - expect).abs() < 1e-3,
            "criterion 4 FAIL: output var {var} vs sigma^2/(sigma^2+eps) {expect}"
        );
    }

    // (b) Two-batch finalization equals whole-dataset brute force. Batch 2
    // holds the same per-channel value multiset as batch 1 (sites
    // permuted), so averaged batch statistics must equal the statistics of
    // the union computed directly.
    let b1 = rand_tensor(&mut rng, [4, 3, 3, 5], -2.0, 2.0);
    let mut b2 = Tensor::<f64>::zeros([4, 3, 3, 5]);
    let sites = 4 * 3 * 3;
    let mut order: Vec<usize> = (0..sites).collect();
    for cc in 0..5 {
        order.shuffle(&mut rng);
        for (dst, &src) in order.iter().enumerate() {
            b2.data_mut()[dst * 5 + cc] = b1.data()[src * 5 + cc];
        }
    }
    let (_, s1) = batch_norm_train(&b1, None, BN_EPSILON);
    let (_, s2) = batch_norm_train(&b2, None, BN_EPSILON);
    for cc in 0..5 {
        let avg_mean = 0.5 * (s1.mean[cc] + s2.mean[cc]);
        let avg_var = 0.5 * (s1.var[cc] + s2.var[cc]);
        // Whole-dataset statistics over the 2-batch union.
        let mut mean = 0.0;
        for t in [&b1, &b2] {
            for row in t.data().chunks_exact(5) {
                mean += row[cc];
            }
        }
        mean /= 2.0 * sites as f64;
        let mut var = 0.0;
        for t in [&b1, &b2] {
            for row in t.data().chunks_exact(5) {
                var += (row[cc] - mean) * (row[cc] - mean);
            }
        }
        var /= 2.0 * sites as f64;
        assert!(
            (avg_mean - mean).abs() < 1e-6,
            "criterion 4 FAIL: finalized mean {avg_mean} vs brute force {mean}"
        );
        assert!(
            (avg_var - var).abs() < 1e-6,
            "criterion 4 FAIL: finalized var {avg_var} vs brute force {var}"
        );
    }

    // The same property through the model-level finalization walker, with
    // unequal batches, against an averaged per-batch oracle.
    let spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 8,
        width: 0.5,
        num_classes: 2,
        quantized: false,
    };
    let graph = build_cifar(spec, ModelVariant::Baseline2, 1.0).unwrap();
    let mut params = init_params(&graph, 5);
    let mut frng = stream(7, Purpose::Data);
    let fb1 = Tensor::from_fn([4, 16, 16, 3], |_, _, _, _| frng.gen_range(-1.0..1.0f32));
    let fb2 = Tensor::from_fn([4, 16, 16, 3], |_, _, _, _| frng.gen_range(-1.0..1.0f32));
    finalize_norm_statistics(&graph, &mut params, vec![fb1.clone(), fb2.clone()]);
    // The first norm slot sees the raw input, so its statistics must be
    // the average of the two batches' input statistics.
    let (_, i1) = batch_norm_train(&fb1, None, BN_EPSILON as f32);
    let (_, i2) = batch_norm_train(&fb2, None, BN_EPSILON as f32);
    let got = params.norms[0].finalized_mean.as_ref().unwrap();
    for cc in 0..3 {
        let want = 0.5 * (i1.mean[cc] as f64 + i2.mean[cc] as f64);
        assert!(
            (got[cc] as f64 - want).abs() < 1e-6,
            "criterion 4 FAIL: model-level finalize mean {} vs oracle {want}",
            got[cc]
        );
    }

    // (c) Inference is per-sample independent: a batch of two scores each
    // sample exactly as it scores them alone.
    let joint = forward_infer(&graph, &params, &fb1, None).unwrap();
    for sample in 0..2 {
        let single = Tensor::from_fn([1, 16, 16, 3], |_, hh, ww, cc| fb1.at(sample, hh, ww, cc));
        let alone = forward_infer(&graph, &params, &single, None).unwrap();
        for cls in 0..2 {
            let a = joint.at(sample, 0, 0, cls);
            let b = alone.at(0, 0, 0, cls);
            assert!(
                (a - b).abs() < 1e-5,
                "criterion 4 FAIL: batched logit {a} vs solo {b}"
            );
        }
    }
    println!(
        "PASS criterion 4: train-mode standardization, 2-batch finalize == brute force, \
         per-sample inference"
    );
}

#[test]
fn c05_temperature_preserves_argmax_and_raises_entropy() {
    fn softmax10(v: &[f64]) -> Vec<f64> {
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        exps.iter().map(|e| e / denom).collect()
    }
    fn entropy(p: &[f64]) -> f64 {
        p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
    }
    fn argmax(v: &[f64]) -> usize {
        v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
    }

    let mut rng = stream(55, Purpose::Check);
    for _ in 0..1000 {
        let logits = rand_tensor(&mut rng, [1, 1, 1, 10], -4.0, 4.0);
        let base = argmax(logits.data());
        let mut last_entropy = -1.0f64;
        for t in [1.0, 10.0, 30.0, 100.0] {
            let scaled = scale_layer(&logits, t);
            let probs = softmax10(scaled.data());
            assert_eq!(
                argmax(&probs),
                base,
                "criterion 5 FAIL: argmax moved at T={t}"
            );
            let h = entropy(&probs);
            assert!(
                h >= last_entropy,
                "criterion 5 FAIL: entropy fell {last_entropy} -> {h} at T={t}"
            );
            last_entropy = h;
        }
    }
    println!(
        "PASS criterion 5: argmax invariant and entropy non-decreasing over T in \
         {{1,10,30,100}} on 1000 vectors"
    );
}

#[test]
fn c06_all_variants_and_both_bit_widths_learn_the_micro_task() {
    let start = Instant::now();
    let ds = synthetic_blobs(256, 64, 16, 2, 3);
    let opt = OptimizerCfg { epochs: 30, ..OptimizerCfg::default() };
    let mut report = Vec::new();
    for variant in ALL_VARIANTS {
        for quantized in [false, true] {
            let spec = ArchitectureSpec {
                family: ArchFamily::Cifar,
                depth: 8,
                width: 0.5,
                num_classes: 2,
                quantized,
            };
            let t = if variant.uses_temperature() { 50.0 } else { 1.0 };
            let graph = build_cifar(spec, variant, t).unwrap();
            let out = train(&graph, &ds, &opt, &AugmentCfg::none(), 3, |_| {})
                .unwrap_or_else(|e| {
                    panic!(
                        "criterion 6 FAIL: {} at {} bits diverged: {e}",
                        variant.name(),
                        if quantized { 1 } else { 32 }
                    )
                });
            let best_err = out
                .history
                .iter()
                .map(|r| r.train_err)
                .fold(f64::INFINITY, f64::min);
            assert!(
                best_err <= 0.01,
                "criterion 6 FAIL: {} at {} bits only reached train err {best_err}",
                variant.name(),
                if quantized { 1 } else { 32 }
            );
            report.push(format!(
                "{}/{}b err {:.3}",
                variant.name(),
                if quantized { 1 } else { 32 },
                best_err
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 600.0, "criterion 6 FAIL: matrix took {secs:.0}s");
    println!(
        "PASS criterion 6: 12/12 cells reached >= 99% train accuracy within 30 epochs \
         ({secs:.0}s): {}",
        report.join(", ")
    );
}

#[test]
fn c07_shifted_relu_identity_is_exact() {
    // Dyadic grid: x = i / 1024 makes x + 1 exactly representable, so the
    // identity srelu(x) = relu(x + 1) - 1 must hold bit for bit. The grid
    // crosses both kinks (x = -1 and x = 0).
    for i in -4096..=4096i64 {
        let x = i as f64 / 1024.0;
        let xt = Tensor::from_vec([1, 1, 1, 1], vec![x]);
        let shifted = Tensor::from_vec([1, 1, 1, 1], vec![x + 1.0]);
        let lhs = srelu(&xt).scalar();
        let rhs = relu(&shifted).scalar() - 1.0;
        assert_eq!(lhs, rhs, "criterion 7 FAIL at x = {x}");
    }
    println!("PASS criterion 7: srelu(x) == relu(x+1) - 1 bit-exact on 8193 grid points");
}

#[test]
fn c08_cosine_schedule_endpoints_exact_and_strictly_decreasing() {
    let (s, e, total) = (0.1, 1e-5, 300);
    assert_eq!(cosine_lr(0, total, s, e), 0.1, "criterion 8 FAIL: start endpoint");
    assert_eq!(cosine_lr(total, total, s, e), 1e-5, "criterion 8 FAIL: end endpoint");
    let mut prev = f64::INFINITY;
    for epoch in 0..=total {
        let lr = cosine_lr(epoch, total, s, e);
        assert!(lr < prev, "criterion 8 FAIL: not strictly decreasing at {epoch}");
        prev = lr;
    }
    println!("PASS criterion 8: cosine endpoints exact (0.1, 1e-5), strictly decreasing");
}

#[test]
fn c09_serialization_round_trip_and_size() {
    // Train a small single-bit model so the exported file reflects real
    // learned signs, then check the round trip is bit-identical.
    let ds = synthetic_blobs(64, 16, 16, 2, 9);
    let spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 8,
        width: 0.5,
        num_classes: 2,
        quantized: true,
    };
    let graph = build_cifar(spec, ModelVariant::SreluOnly, 50.0).unwrap();
    let opt = OptimizerCfg { epochs: 4, batch_size: 32, ..OptimizerCfg::default() };
    let out = train(&graph, &ds, &opt, &AugmentCfg::none(), 2, |_| {}).unwrap();

    let bytes = encode_model(&graph, &out.params).unwrap();
    let back = decode_model(&bytes).unwrap();
    let expect = pack_model(&out.params);
    let got = back.packed.as_ref().unwrap();
    for (slot, (a, b)) in expect.iter().zip(got).enumerate() {
        assert_eq!(
            a.sign_bits, b.sign_bits,
            "criterion 9 FAIL: packed payload differs at conv {slot}"
        );
        assert_eq!(a.sigma0, b.sigma0, "criterion 9 FAIL: scale differs at conv {slot}");
    }
    assert_eq!(
        encode_model(&back.graph, &back.params).unwrap(),
        bytes,
        "criterion 9 FAIL: re-encode not bit-identical"
    );

    // Size: a depth-20 width-4 single-bit file must be dominated by one
    // bit per conv weight plus the real-parameter block.
    let big_spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 20,
        width: 4.0,
        num_classes: 10,
        quantized: true,
    };
    let big_graph = build_cifar(big_spec, ModelVariant::SreluOnly, 50.0).unwrap();
    let big_params = init_params(&big_graph, 1);
    let big_bytes = encode_model(&big_graph, &big_params).unwrap();
    let sign_bytes: usize = big_graph
        .conv_shapes
        .iter()
        .map(|s| s.iter().product::<usize>().div_ceil(8))
        .sum();
    let real_param_bytes = 8 * big_params.stds[0].mean.len(); // standardization block
    let expected = (sign_bytes + real_param_bytes) as f64;
    let actual = big_bytes.len() as f64;
    let dev = (actual - expected).abs() / expected;
    assert!(
        dev < 0.05,
        "criterion 9 FAIL: file {actual} bytes vs {expected} expected ({dev:.3} deviation)"
    );

    // Corruption must be rejected via the checksum.
    let mut corrupt = bytes.clone();
    let at = corrupt.len() / 3;
    corrupt[at] ^= 0x10;
    assert!(
        matches!(decode_model(&corrupt), Err(Error::Checksum { .. })),
        "criterion 9 FAIL: corrupted file accepted"
    );
    println!(
        "PASS criterion 9: round trip bit-identical, file within {:.2}% of 1 bit/weight, \
         corruption rejected",
        dev * 100.0
    );
}

#[test]
fn c10_identical_runs_produce_identical_traces() {
    let ds = synthetic_blobs(64, 16, 16, 2, 13);
    let spec = ArchitectureSpec {
        family: ArchFamily::Cifar,
        depth: 8,
        width: 0.5,
        num_classes: 2,
        quantized: true,
    };
    let graph = build_cifar(spec, ModelVariant::MeanOnlyFinal, 50.0).unwrap();
    let opt = OptimizerCfg { epochs: 4, batch_size: 32, ..OptimizerCfg::default() };
    let aug = AugmentCfg::standard(Some(4));

    let run = || {
        let mut trace = String::new();
        let out = train(&graph, &ds, &opt, &aug, 31, |r| {
            trace.push_str(&format!(
                "epoch={} lr={} train_loss={} train_err={}\n",
                r.epoch, r.lr, r.train_loss, r.train_err
            ));
        })
        .unwrap();
        let eval = out.final_test.as_ref().unwrap();
        trace.push_str(&format!("final test_err={}\n", eval.top1_err));
        (trace, encode_model(&graph, &out.params).unwrap())
    };
    let (trace_a, model_a) = run();
    let (trace_b, model_b) = run();
    assert_eq!(trace_a.as_bytes(), trace_b.as_bytes(), "criterion 10 FAIL: traces differ");
    assert_eq!(model_a, model_b, "criterion 10 FAIL: exported models differ");
    println!(
        "PASS criterion 10: repeated runs yield byte-identical metric traces and model files"
    );
}
