use nvmrl_core::netspec::{
    assign_placement, infer_shapes, trainable_fraction, weight_footprint, LayerSpec, Location, NetworkSpec, Shape,
    SramBudget, TrainingPolicy,
};
use proptest::prelude::*;

/// Counts window placements by walking every start offset.
fn brute_positions(len: u64, window: u64, stride: u64, padding: u64) -> u64 {
    let (len, window, stride, padding) = (len as i64, window as i64, stride as i64, padding as i64);
    let mut n = 0;
    let mut start = -padding;
    while start + window <= len + padding {
        n += 1;
        start += stride;
    }
    n
}

fn single_conv(h: u64, w: u64, c: u32, f: (u32, u32), cout: u32, stride: u32, pad: u32) -> NetworkSpec {
    NetworkSpec {
        input_h: h,
        input_w: w,
        input_channels: c as u64,
        layers: vec![LayerSpec::conv("C", f, (c, cout), stride, pad)],
        weight_precision_bits: 16,
        actions: 5,
    }
}

const MB: f64 = 1e6;

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v / target - 1.0).abs() <= tol
}

#[test]
fn published_footprints() {
    let net = NetworkSpec::default_network();
    let fp = weight_footprint(&net);
    let fc2 = fp.layer_bytes("FC2").unwrap() as f64;
    let tail = fp.group_bytes(&["FC3", "FC4", "FC5"]) as f64;
    let nvm = fp.group_bytes(&["CONV1", "CONV2", "CONV3", "CONV4", "CONV5", "FC1", "FC2"]) as f64;
    assert!(within(fc2, 29.38 * MB, 0.02), "FC2 {fc2}");
    assert!(within(tail, 12.6 * MB, 0.02), "FC3..FC5 {tail}");
    assert!(within(nvm, 100.0 * MB, 0.02), "NVM group {nvm}");

    // L3 keeps FC3..FC5 plus their gradients in SRAM next to the scratch buffer
    let p = TrainingPolicy::LastK(3);
    let budget = SramBudget::SizedToPolicy.resolve(&net, p).unwrap();
    let placement = assign_placement(&net, p, budget, 4_200_000).unwrap();
    assert!(within(placement.sram_total_bytes as f64, 29.4 * MB, 0.02), "SRAM {}", placement.sram_total_bytes);
}

#[test]
fn default_chain_matches_hand_shapes() {
    let shapes = infer_shapes(&NetworkSpec::default_network()).unwrap();
    let outs: Vec<Shape> = shapes.iter().map(|s| s.output).collect();
    assert_eq!(outs[0], Shape::Map { h: 27, w: 27, c: 96 });
    assert_eq!(outs[1], Shape::Map { h: 13, w: 13, c: 256 });
    assert_eq!(outs[2], Shape::Map { h: 13, w: 13, c: 384 });
    assert_eq!(outs[4], Shape::Map { h: 6, w: 6, c: 256 });
    assert_eq!(outs[5], Shape::Vector(3424));
}

#[test]
fn zero_budget_last_k_is_capacity_error() {
    let net = NetworkSpec::default_network();
    let err = assign_placement(&net, TrainingPolicy::LastK(2), 0, 0).unwrap_err();
    assert!(matches!(err, nvmrl_core::Error::Capacity(_)));
}

#[test]
fn oversized_k_rejected() {
    let net = NetworkSpec::default_network();
    assert!(TrainingPolicy::LastK(6).trainable_mask(&net).is_err());
    assert!(TrainingPolicy::LastK(0).trainable_mask(&net).is_err());
}

proptest! {
    #[test]
    fn conv_shapes_match_brute_force(
        h in 1u64..=64, w in 1u64..=64, c in 1u32..=4,
        fh in 1u32..=11, fw in 1u32..=11, stride in 1u32..=4, pad in 0u32..=3, cout in 1u32..=8,
    ) {
        let net = single_conv(h, w, c, (fh, fw), cout, stride, pad);
        let bh = brute_positions(h, fh as u64, stride as u64, pad as u64);
        let bw = brute_positions(w, fw as u64, stride as u64, pad as u64);
        match infer_shapes(&net) {
            Ok(shapes) => {
                prop_assert_eq!(shapes[0].conv_output, Shape::Map { h: bh, w: bw, c: cout as u64 });
                prop_assert_eq!(shapes[0].macs, bh * bw * cout as u64 * (fh * fw * c) as u64);
                prop_assert_eq!(infer_shapes(&net).unwrap(), shapes);
            }
            Err(_) => prop_assert!(bh == 0 || bw == 0),
        }
    }

    #[test]
    fn footprint_sums_exactly(bits in 1u32..=32, dims in proptest::collection::vec(1u64..5000, 2..6)) {
        let layers: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| LayerSpec::fc(&format!("FC{i}"), d[0], d[1]))
            .collect();
        let net = NetworkSpec {
            input_h: 1,
            input_w: 1,
            input_channels: dims[0],
            layers,
            weight_precision_bits: bits,
            actions: *dims.last().unwrap(),
        };
        let fp = weight_footprint(&net);
        let sum: u64 = fp.layers.iter().map(|l| l.weight_bytes + l.bias_bytes).sum();
        prop_assert_eq!(sum, fp.total_bytes());
        for (l, spec) in fp.layers.iter().zip(&net.layers) {
            prop_assert_eq!(l.weight_bytes, (spec.weight_count() * bits as u64).div_ceil(8));
        }
    }

    #[test]
    fn placement_conserves_bytes(k in 1usize..=5, budget in 1u64..200_000_000, scratch in 0u64..10_000_000) {
        let net = NetworkSpec::default_network();
        let total = weight_footprint(&net).total_bytes();
        let p = assign_placement(&net, TrainingPolicy::LastK(k), budget, scratch).unwrap();
        prop_assert_eq!(p.nvm_total_bytes + p.sram_weight_bytes, total);
        prop_assert!(p.sram_weight_bytes <= budget);
        let in_sram: u64 = p.layers.iter().filter(|l| l.location == Location::Sram).map(|l| l.bytes).sum();
        prop_assert_eq!(in_sram, p.sram_weight_bytes);
        prop_assert!(p.layers.iter().filter(|l| l.location == Location::Sram).all(|l| l.trainable));
        prop_assert_eq!(p.sram_total_bytes, p.sram_weight_bytes + p.gradient_buffer_bytes + scratch);

        let e2e = assign_placement(&net, TrainingPolicy::E2E, budget, scratch).unwrap();
        prop_assert_eq!(e2e.nvm_total_bytes + e2e.sram_weight_bytes, total);
    }
}

#[test]
fn trainable_fraction_monotone_in_k() {
    let net = NetworkSpec::default_network();
    let mut last = 0.0;
    for k in 1..=net.fc_layer_count() {
        let f = trainable_fraction(&net, TrainingPolicy::LastK(k)).unwrap();
        assert!(f >= last);
        last = f;
    }
    assert_eq!(trainable_fraction(&net, TrainingPolicy::E2E).unwrap(), 1.0);
}
