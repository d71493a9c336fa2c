use numcore::gradcheck::{check, contract, probe};
use numcore::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use v2v_core::codec::feature::{feat_encode_raw, init_params, quantize_latent, raw_feature_bits, LEARNED_HEADER_BITS};
use v2v_core::codec::outputs::{outputs_decode, outputs_encode, detection_bytes};
use v2v_core::codec::points::{points_decode, points_encode, raw_points_bits};
use v2v_core::codec::*;
use v2v_core::geom::{OrientedBox, Pose2};
use v2v_core::pnp::{Detection, FeatureMap, Forecast, Net};
use v2v_core::rng::Rng;
use v2v_core::worldsim::{generate_scenario, raycast_sweep, Point, Sweep, WorldConfig};

fn cfg() -> FeatureCodecConfig {
    FeatureCodecConfig::default()
}

fn feature_map(h: usize, w: usize, seed: u64) -> FeatureMap {
    FeatureMap {
        data: probe(&[h, w, 32], seed).map(|v| v.max(0.0) * 2.0),
        origin: Pose2::new(-37.25, 12.5, 0.123456789),
        resolution: 2.0,
        frame: 17,
        timestamp: 3.1415926,
    }
}

proptest! {
    #[test]
    fn symbol_model_is_normalized(seed in 0u64..1000, spread in 0.1f64..40.0) {
        let logits = probe(&[4, 41], seed).map(|v| v * spread);
        let m = SymbolModel::from_logits(&logits, 1e-6).unwrap();
        for row in &m.probs {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p >= 1e-6));
        }
    }
}

#[test]
fn table_nll_at_integers_is_discrete_cost() {
    let logits = probe(&[3, 9], 4).map(|v| 3.0 * v);
    let model = SymbolModel::from_logits(&logits, 1e-6).unwrap();
    let tape = Tape::new();
    let y = Tensor::from_fn(vec![2, 2, 3], |i| (i % 9) as f64 - 4.0);
    let bits = tape.value(table_nll(&tape, tape.constant(y.clone()), tape.constant(logits), 1e-6).unwrap());
    for (i, &b) in bits.data().iter().enumerate() {
        let s = (y.data()[i] + 4.0) as usize;
        let want = -model.probs[i % 3][s].log2();
        assert!((b - want).abs() < 1e-12);
    }
}

#[test]
fn table_nll_gradients() {
    // Keep away from bin edges where the interpolation has kinks.
    let y = Tensor::from_fn(vec![2, 3, 3], |i| (i % 7) as f64 - 3.0 + 0.1 + 0.07 * (i % 5) as f64);
    let logits = probe(&[3, 9], 2);
    let g = check(&[y, logits], 1e-6, |t, v| {
        contract(t, table_nll(t, v[0], v[1], 1e-6).unwrap(), 3)
    });
    assert!(g.max_rel_error < 1e-5, "{}", g.max_rel_error);
}

#[test]
fn rd_loss_gradients() {
    let c = FeatureCodecConfig {
        hidden: 4,
        latent_channels: 3,
        max_index: 6,
        prob_floor: 1e-6,
        downsample: 1,
    };
    let store = init_params(2, &c, 9);
    let names = ["codec.analysis1.w", "codec.analysis2.b", "codec.synthesis1.w", "codec.synthesis2.w", "codec.prior.logits"];
    let mut inputs = vec![probe(&[8, 8, 2], 1).map(f64::abs)];
    inputs.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
    let g = check(&inputs, 1e-6, |t, v| {
        let net = Net::frozen(t, &store);
        for (n, var) in names.iter().zip(&v[1..]) {
            net.bind(n, *var);
        }
        let mut rng = Rng::seed_from_u64(5);
        rd_loss(&net, &c, v[0], 0.7, &mut rng).unwrap().0
    });
    assert!(g.max_rel_error < 1e-5, "{}", g.max_rel_error);
}

#[test]
fn rd_loss_is_deterministic_per_seed() {
    let store = init_params(32, &cfg(), 1);
    let run = |seed| {
        let tape = Tape::new();
        let net = Net::frozen(&tape, &store);
        let z = tape.constant(feature_map(8, 8, 3).data);
        let mut rng = Rng::seed_from_u64(seed);
        let (l, parts) = rd_loss(&net, &cfg(), z, 1.0, &mut rng).unwrap();
        (tape.value(l).item(), parts)
    };
    assert_eq!(run(4), run(4));
}

#[test]
fn feature_round_trip_is_deterministic_with_metadata() {
    let store = init_params(32, &cfg(), 2);
    let fm = feature_map(20, 40, 7);
    let bits = feat_encode(&store, &cfg(), &fm).unwrap();
    let a = feat_decode(&store, &cfg(), &bits).unwrap();
    let b = feat_decode(&store, &cfg(), &feat_encode(&store, &cfg(), &fm).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.data.shape(), fm.data.shape());
    assert_eq!((a.origin, a.resolution, a.frame, a.timestamp), (fm.origin, fm.resolution, fm.frame, fm.timestamp));
    assert_eq!(a.origin.theta.to_bits(), fm.origin.theta.to_bits());
}

#[test]
fn raw_mode_keeps_float32_values() {
    let store = init_params(32, &cfg(), 2);
    let fm = feature_map(20, 40, 8);
    let bits = feat_encode_raw(&fm).unwrap();
    let back = feat_decode(&store, &cfg(), &bits).unwrap();
    for (a, b) in fm.data.data().iter().zip(back.data.data()) {
        assert_eq!(*b, *a as f32 as f64);
    }
    assert_eq!(back.origin, fm.origin);
}

#[test]
fn zero_map_is_cheap() {
    let store = init_params(32, &cfg(), 2);
    let mut fm = feature_map(20, 40, 1);
    fm.data = Tensor::zeros(vec![20, 40, 32]);
    let bits = feat_encode(&store, &cfg(), &fm).unwrap();
    let c = cfg();
    let symbols = (20 >> c.downsample) * (40 >> c.downsample) * c.latent_channels;
    assert!(bits.bit_len < 2 * symbols as u64, "{} bits for {symbols} symbols", bits.bit_len);
    assert!(bits.bit_len * 50 < raw_feature_bits(20, 40, 32), "{}", bits.bit_len);
}

#[test]
fn emitted_length_tracks_model_rate() {
    let store = init_params(32, &cfg(), 3);
    let model = SymbolModel::from_store(&store, &cfg()).unwrap();
    let fm = feature_map(80, 160, 9);
    let (_, symbols) = quantize_latent(&store, &cfg(), &fm.data).unwrap();
    let estimate = model.cost_bits(&symbols);
    let bits = feat_encode(&store, &cfg(), &fm).unwrap();
    let coded = (bits.bit_len - LEARNED_HEADER_BITS) as f64;
    assert!(estimate > 10_000.0);
    assert!((coded - estimate).abs() <= 1e-3 * estimate, "{coded} vs {estimate}");
}

#[test]
fn corrupted_feature_frame_fails_checksum() {
    let store = init_params(32, &cfg(), 2);
    let bits = feat_encode(&store, &cfg(), &feature_map(20, 40, 7)).unwrap();
    let bytes = Frame::new(PayloadType::Features, bits).to_bytes();
    for pos in [12usize, bytes.len() / 2, bytes.len() - 6] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(matches!(Frame::parse(&bad), Err(CodecError::Checksum { .. })));
    }
}

fn random_sweep(rng: &mut Rng, n: usize, sdv: u32) -> Sweep {
    Sweep {
        sdv,
        sensor_pose: Pose2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-10.0..10.0), rng.gen_range(-3.0..3.0)),
        start_time: rng.gen_range(0.0..20.0),
        points: (0..n)
            .map(|_| Point {
                x: rng.gen_range(-60.0..60.0),
                y: rng.gen_range(-60.0..60.0),
                dt: rng.gen_range(0.0..0.1),
            })
            .collect(),
        actor_ids: Vec::new(),
    }
}

#[test]
fn empty_point_payloads() {
    let r = Pose2::new(1.0, 2.0, 0.3);
    let none = points_encode(&[], &r, 5.0).unwrap();
    assert!(points_decode(&none, &r, 5.0).unwrap().is_empty());
    let mut rng = Rng::seed_from_u64(1);
    let empty = random_sweep(&mut rng, 0, 4);
    let bits = points_encode(std::slice::from_ref(&empty), &r, 5.0).unwrap();
    assert!(bits.bit_len <= 8 + 32 + 256 + 16 + 32);
    let back = points_decode(&bits, &r, 5.0).unwrap();
    assert_eq!(back.len(), 1);
    assert!(back[0].points.is_empty());
}

#[test]
fn point_round_trip_error_is_within_half_a_centimeter() {
    let mut rng = Rng::seed_from_u64(2);
    let reference = Pose2::new(10.0, -3.0, 0.4);
    for _ in 0..20 {
        let sweeps: Vec<Sweep> = (0..3).map(|k| random_sweep(&mut rng, 300, k)).collect();
        let bits = points_encode(&sweeps, &reference, 7.5).unwrap();
        let back = points_decode(&bits, &reference, 7.5).unwrap();
        for (a, b) in sweeps.iter().zip(&back) {
            assert_eq!(a.sdv, b.sdv);
            assert!((a.start_time - b.start_time).abs() < 1e-12);
            assert!(a.sensor_pose.distance(&b.sensor_pose) < 1e-9);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p.x - q.x).abs() <= 0.005 + 1e-12 && (p.y - q.y).abs() <= 0.005 + 1e-12);
                assert!((p.dt - q.dt).abs() <= 5e-5 + 1e-12);
            }
        }
    }
}

#[test]
fn simulated_sweeps_compress_five_fold() {
    let world = WorldConfig::default();
    let mut total = (0u64, 0u64);
    for seed in 0..4 {
        let sc = generate_scenario(&world, seed).unwrap();
        for &sdv in &sc.sdvs {
            let t = 2.0;
            let sweeps: Vec<Sweep> = (0..3).map(|k| raycast_sweep(&sc, sdv, t - 0.1 * k as f64, &world.sensor).unwrap()).collect();
            let reference = sweeps[0].sensor_pose;
            let bits = points_encode(&sweeps, &reference, t).unwrap();
            total.0 += raw_points_bits(&sweeps);
            total.1 += bits.bit_len;
        }
    }
    let ratio = total.0 as f64 / total.1 as f64;
    assert!(ratio >= 5.0, "ratio {ratio:.2}");
}

fn random_outputs(rng: &mut Rng, n: usize) -> Vec<(Detection, Forecast)> {
    (0..n)
        .map(|_| {
            let bbox = OrientedBox::new(
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(3.0..12.0),
                rng.gen_range(1.5..2.6),
                rng.gen_range(-3.14..3.14),
            );
            let v = (rng.gen_range(-15.0..15.0), rng.gen_range(-3.0..3.0));
            let waypoints = (1..=6).map(|k| (bbox.cx + v.0 * 0.5 * k as f64, bbox.cy + v.1 * 0.5 * k as f64)).collect();
            (Detection { bbox, score: rng.gen() }, Forecast { waypoints })
        })
        .collect()
}

#[test]
fn output_sizes() {
    let mut rng = Rng::seed_from_u64(3);
    let one = outputs_encode(&random_outputs(&mut rng, 1)).unwrap();
    assert!(one.bytes.len() - 3 <= 24);
    assert_eq!(detection_bytes(6), 23);
    let empty = outputs_encode(&Vec::new()).unwrap();
    assert_eq!(empty.bytes.len(), 3);
    assert!(outputs_decode(&empty).unwrap().is_empty());
}

#[test]
fn output_round_trip_within_half_steps() {
    let mut rng = Rng::seed_from_u64(4);
    let outs = random_outputs(&mut rng, 100);
    let back = outputs_decode(&outputs_encode(&outs).unwrap()).unwrap();
    assert_eq!(back.len(), 100);
    let tol = 1e-9;
    for ((d, f), (e, g)) in outs.iter().zip(&back) {
        assert!((d.bbox.cx - e.bbox.cx).abs() <= 0.005 + tol);
        assert!((d.bbox.cy - e.bbox.cy).abs() <= 0.005 + tol);
        assert!((d.bbox.length - e.bbox.length).abs() <= 0.005 + tol);
        assert!((d.bbox.width - e.bbox.width).abs() <= 0.005 + tol);
        let dh = v2v_core::geom::wrap_angle(d.bbox.heading - e.bbox.heading);
        assert!(dh.abs() <= 0.005 + tol);
        assert!((d.score - e.score).abs() <= 0.5 / 255.0 + tol);
        for (a, b) in f.waypoints.iter().zip(&g.waypoints) {
            assert!((a.0 - b.0).abs() <= 0.05 + tol && (a.1 - b.1).abs() <= 0.05 + tol);
        }
    }
}

#[test]
fn outputs_reject_truncation() {
    let mut rng = Rng::seed_from_u64(5);
    let bits = outputs_encode(&random_outputs(&mut rng, 2)).unwrap();
    let cut = Bitstream::from_bytes(bits.bytes[..bits.bytes.len() - 1].to_vec());
    assert!(matches!(outputs_decode(&cut), Err(CodecError::Truncated { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn point_codec_fuzz(seed in 0u64..10_000, n in 0usize..50, sweeps in 0usize..4) {
        let mut rng = Rng::seed_from_u64(seed);
        let s: Vec<Sweep> = (0..sweeps).map(|k| random_sweep(&mut rng, n, k as u32)).collect();
        let r = Pose2::identity();
        let a = points_decode(&points_encode(&s, &r, 0.0).unwrap(), &r, 0.0).unwrap();
        // Re-encoding decoded points is lossless.
        let b = points_decode(&points_encode(&a, &r, 0.0).unwrap(), &r, 0.0).unwrap();
        prop_assert_eq!(a.len(), s.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.points, &y.points);
        }
    }
}
