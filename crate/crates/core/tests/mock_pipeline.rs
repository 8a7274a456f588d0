//! End-to-end behaviour of the planted-direction model: probes, directions and
//! steering recover what was planted, across noise levels.

use rplan_core::directions::{cosine, diff_in_means, extract_all, predict_from_direction};
use rplan_core::mock::{self, as_steerable, build_trace, expected_length, MockPlannerSpec, LEVELS};
use rplan_core::probe::{layerwise_probe, ProbeTrainConfig};
use rplan_core::steering::{steered_generate, unsteered_generate, SteeringConfig};

#[test]
fn readout_direction_recovered_across_noise_levels() {
    for sigma in [0.0, 0.02, 0.1] {
        let spec = MockPlannerSpec::default().with_noise(sigma);
        let ds = build_trace(&spec, 100).unwrap();
        let set = extract_all(&ds).unwrap();
        let readout = set.layer(spec.readout_layer).unwrap();
        for (level, r) in &readout.vectors {
            let c = cosine(&r.components, &spec.planted_direction);
            assert!(c >= 0.95, "sigma {sigma}, level {level}: cosine {c}");
            let mu = spec.scale(*level).unwrap() - spec.scale(1).unwrap();
            assert!((r.l2_norm - mu).abs() < 0.1 * mu, "sigma {sigma}, level {level}: norm {} vs {mu}", r.l2_norm);
        }
    }
}

#[test]
fn noise_free_directions_are_exact() {
    let spec = MockPlannerSpec::default().with_noise(0.0);
    let ds = build_trace(&spec, 3).unwrap();
    let set = extract_all(&ds).unwrap();
    for ld in &set.layers {
        let gain = spec.layer_gains[ld.layer];
        for (level, r) in &ld.vectors {
            let mu = spec.scale(*level).unwrap() - spec.scale(1).unwrap();
            for (j, c) in r.components.iter().enumerate() {
                let want = mu * gain * spec.planted_direction[j];
                // activations are stored as f32
                assert!((c - want).abs() < 1e-5, "layer {} level {level} j {j}: {c} vs {want}", ld.layer);
            }
        }
    }
}

#[test]
fn differences_compose_additively() {
    let spec = MockPlannerSpec::default();
    let ds = build_trace(&spec, 40).unwrap();
    for layer in 0..spec.n_layers {
        for (a, b, c) in [(1, 2, 5), (1, 3, 4), (2, 3, 5)] {
            let ab = diff_in_means(&ds, layer, b, a).unwrap();
            let bc = diff_in_means(&ds, layer, c, b).unwrap();
            let ac = diff_in_means(&ds, layer, c, a).unwrap();
            for j in 0..spec.d_model {
                let sum = ab.components[j] + bc.components[j];
                assert!((sum - ac.components[j]).abs() < 1e-9, "layer {layer} ({a},{b},{c}) j {j}");
            }
        }
    }
}

#[test]
fn probe_reads_planted_projection() {
    let spec = MockPlannerSpec::default();
    let ds = build_trace(&spec, 100).unwrap();
    let probes = layerwise_probe(&ds, &ProbeTrainConfig::default(), 0.1, 0).unwrap();
    let readout = &probes[spec.readout_layer].probe;
    // alpha = 10 keeps only the planted coordinate
    assert_eq!(readout.nonzero_weights(), 1);
    assert!(readout.weights[0] > 0.0 && readout.weights[0] < spec.length_slope);

    let set = extract_all(&ds).unwrap();
    let mut last = f64::NEG_INFINITY;
    for r in set.layer(spec.readout_layer).unwrap().vectors.values() {
        let p = predict_from_direction(readout, r).unwrap().predicted_tokens;
        assert!(p > last, "predictions rise with the target level");
        last = p;
    }
}

#[test]
fn steered_lengths_follow_closed_form() {
    let spec = MockPlannerSpec::default().with_noise(0.0);
    let model = as_steerable(&spec).unwrap();
    let set = extract_all(&build_trace(&MockPlannerSpec::default(), 50).unwrap()).unwrap();
    let template = SteeringConfig::new(0.0, set.mean_directions());
    let r = &set.mean_directions()[spec.readout_layer];
    for level in LEVELS {
        let p = mock::prompt(level, 0).unwrap();
        let plain = unsteered_generate(&model, &p, 1024).unwrap();
        assert_eq!(steered_generate(&model, &p, &template, 1024).unwrap(), plain);
        let mut prev = 0;
        for lambda in [-1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0] {
            let out = steered_generate(&model, &p, &template.with_lambda(lambda), 1024).unwrap();
            let want = spec.emitted_reasoning_tokens(expected_length(&spec, level, lambda, r).unwrap());
            assert_eq!(out.reasoning_token_count, want, "level {level} lambda {lambda}");
            assert_eq!(out.answer_token_count, spec.answer_length);
            assert!(out.reasoning_token_count >= prev);
            prev = out.reasoning_token_count;
        }
    }
}

#[test]
fn masking_the_readout_layer_disables_steering() {
    let spec = MockPlannerSpec::default().with_noise(0.0);
    let model = as_steerable(&spec).unwrap();
    let set = extract_all(&build_trace(&MockPlannerSpec::default(), 50).unwrap()).unwrap();
    let mut cfg = SteeringConfig::new(0.5, set.mean_directions());
    cfg.layer_mask = Some((0..spec.n_layers).filter(|&l| l != spec.readout_layer).collect());
    let p = mock::prompt(3, 1).unwrap();
    let plain = unsteered_generate(&model, &p, 1024).unwrap();
    assert_eq!(steered_generate(&model, &p, &cfg, 1024).unwrap().reasoning_token_count, plain.reasoning_token_count);
    cfg.layer_mask = Some([spec.readout_layer].into());
    assert!(steered_generate(&model, &p, &cfg, 1024).unwrap().reasoning_token_count > plain.reasoning_token_count);
}
