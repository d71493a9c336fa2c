use statrs::distribution::{ChiSquared, ContinuousCDF};
use v2v_core::aggregate::AggregationConfig;
use v2v_core::channel::V2VMessage;
use v2v_core::codec::{FeatureCodecConfig, PayloadType};
use v2v_core::evalkit::iou_unchecked;
use v2v_core::fusion::*;
use v2v_core::geom::{relative_transform, OrientedBox, Pose2};
use v2v_core::pnp::{Detection, Forecast, GridSpec, ModelConfig, Outputs};
use v2v_core::rng::stream;
use v2v_core::worldsim::{generate_scenario, Scenario, Sweep, WorldConfig};

fn models() -> Models {
    Models::init(GridSpec::default(), ModelConfig::default(), AggregationConfig::default(), FeatureCodecConfig::default(), 3, 7)
}

// Untrained weights score near the prior, so keep everything above zero.
fn cfg() -> FusionConfig {
    FusionConfig {
        score_threshold: 1e-4,
        ..FusionConfig::default()
    }
}

fn scene() -> (WorldConfig, Scenario) {
    let w = WorldConfig::default();
    let sc = generate_scenario(&w, 11).unwrap();
    (w, sc)
}

fn views(sc: &Scenario, w: &WorldConfig, t: f64) -> (VehicleView, Vec<VehicleView>) {
    let own = VehicleView::capture(sc, sc.ego, t, w).unwrap();
    let others = sc.sdvs.iter().filter(|&&s| s != sc.ego).map(|&s| VehicleView::capture(sc, s, t, w).unwrap()).collect();
    (own, others)
}

fn received(kind: PayloadType, senders: &[VehicleView], m: &Models, c: &FusionConfig) -> Vec<Received> {
    senders
        .iter()
        .map(|v| {
            let msg = make_message(kind, v, m, c).unwrap();
            let wire = V2VMessage::parse(&msg.serialize()).unwrap();
            decode_message(&wire, m).unwrap()
        })
        .collect()
}

fn det(x: f64, y: f64, score: f64, wps: Vec<(f64, f64)>) -> (Detection, Forecast) {
    (
        Detection {
            bbox: OrientedBox::new(x, y, 4.5, 2.0, 0.0),
            score,
        },
        Forecast { waypoints: wps },
    )
}

#[test]
fn zero_messages_degenerate_to_no_fusion() {
    let (w, sc) = scene();
    let (own, _) = views(&sc, &w, 1.0);
    let m = models();
    let c = cfg();
    let base = no_fusion(&own, &m, &c).unwrap();
    assert!(!base.is_empty());
    for s in [Strategy::None, Strategy::Raw, Strategy::Output, Strategy::Mixed] {
        assert_eq!(fuse(s, &own, &[], &m, &c).unwrap(), base, "{s:?}");
    }
    let a = fuse(Strategy::Feature, &own, &[], &m, &c).unwrap();
    let b = fuse(Strategy::Feature, &own, &[], &m, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(no_fusion(&own, &m, &c).unwrap(), base);
}

#[test]
fn message_order_does_not_matter() {
    let (w, sc) = scene();
    let (own, others) = views(&sc, &w, 1.0);
    assert!(others.len() >= 2);
    let m = models();
    let c = cfg();
    let mut rng = stream(3, "perm", 0);
    let mut msgs: Vec<Received> = others
        .iter()
        .map(|v| {
            let kind = Strategy::Mixed.payload_for(&mut rng).unwrap();
            decode_message(&make_message(kind, v, &m, &c).unwrap(), &m).unwrap()
        })
        .collect();
    for kind in [PayloadType::Points, PayloadType::Features, PayloadType::Outputs] {
        msgs.extend(received(kind, &others[..1], &m, &c));
    }
    for s in Strategy::ALL {
        let fwd = fuse(s, &own, &msgs, &m, &c).unwrap();
        let mut rev = msgs.clone();
        rev.reverse();
        assert_eq!(fuse(s, &own, &rev, &m, &c).unwrap(), fwd, "{s:?}");
        rev.rotate_left(2);
        assert_eq!(fuse(s, &own, &rev, &m, &c).unwrap(), fwd, "{s:?}");
    }
}

#[test]
fn mixed_with_one_type_matches_pure_strategy() {
    let (w, sc) = scene();
    let (own, others) = views(&sc, &w, 1.0);
    let m = models();
    let c = cfg();
    for (kind, s) in [
        (PayloadType::Points, Strategy::Raw),
        (PayloadType::Features, Strategy::Feature),
        (PayloadType::Outputs, Strategy::Output),
    ] {
        let msgs = received(kind, &others, &m, &c);
        assert_eq!(fuse(Strategy::Mixed, &own, &msgs, &m, &c).unwrap(), fuse(s, &own, &msgs, &m, &c).unwrap(), "{s:?}");
    }
}

#[test]
fn strategies_ignore_foreign_payloads() {
    let (w, sc) = scene();
    let (own, others) = views(&sc, &w, 1.0);
    let m = models();
    let c = cfg();
    let pts = received(PayloadType::Points, &others, &m, &c);
    let base = no_fusion(&own, &m, &c).unwrap();
    assert_eq!(fuse(Strategy::Output, &own, &pts, &m, &c).unwrap(), base);
    assert_eq!(fuse(Strategy::None, &own, &pts, &m, &c).unwrap(), base);
    assert_ne!(fuse(Strategy::Raw, &own, &pts, &m, &c).unwrap(), base);
}

#[test]
fn feature_fusion_keeps_six_nearest() {
    let (w, sc) = scene();
    let (own, others) = views(&sc, &w, 1.0);
    let m = models();
    let c = cfg();
    let mut msgs = received(PayloadType::Features, &others[..1], &m, &c);
    // Clone the sender at growing distances; the far ones must be dropped.
    let base = msgs[0].clone();
    msgs.clear();
    for k in 0..9u32 {
        let mut r = base.clone();
        r.sender = 100 + k;
        r.pose = Pose2::new(own.pose.x + 5.0 * k as f64, own.pose.y, own.pose.theta);
        msgs.push(r);
    }
    let all = fuse(Strategy::Feature, &own, &msgs, &m, &c).unwrap();
    let near = fuse(Strategy::Feature, &own, &msgs[..6], &m, &c).unwrap();
    assert_eq!(all, near);
    let five = fuse(Strategy::Feature, &own, &msgs[..5], &m, &c).unwrap();
    assert_ne!(all, five);
}

#[test]
fn output_compensation_constant_velocity() {
    // 10 m/s along x: waypoints every 0.5 s are 5 m apart.
    let wps: Vec<(f64, f64)> = (1..=6).map(|k| (10.0 + 5.0 * k as f64, 0.0)).collect();
    let out = vec![det(10.0, 0.0, 0.9, wps)];
    let id = Pose2::identity();
    let moved = compensate_outputs(&out, &id, &id, 0.1, 0.5);
    assert!((moved[0].0.bbox.cx - 11.0).abs() < 1e-12);
    assert!(moved[0].0.bbox.cy.abs() < 1e-12);
    assert!((moved[0].1.waypoints[0].0 - 16.0).abs() < 1e-12);
    assert!((moved[0].1.waypoints[5].0 - 41.0).abs() < 1e-12);
    assert_eq!(moved[0].0.score, 0.9);

    // Same motion seen by a sender 20 m ahead, turned to face the receiver.
    let sender = Pose2::new(20.0, 0.0, std::f64::consts::PI);
    let local = vec![det(10.0, 0.0, 0.9, (1..=6).map(|k| (10.0 - 5.0 * k as f64, 0.0)).collect())];
    let moved = compensate_outputs(&local, &sender, &id, 0.1, 0.5);
    assert!((moved[0].0.bbox.cx - 11.0).abs() < 1e-9);
    assert!(moved[0].0.bbox.cy.abs() < 1e-9);
}

#[test]
fn forecast_interpolation_between_waypoints() {
    let wps = vec![(1.0, 0.0), (1.0, 1.0)];
    assert_eq!(along_forecast((0.0, 0.0), &wps, 0.5, 0.0), (0.0, 0.0));
    assert_eq!(along_forecast((0.0, 0.0), &wps, 0.5, 0.25), (0.5, 0.0));
    assert_eq!(along_forecast((0.0, 0.0), &wps, 0.5, 0.75), (1.0, 0.5));
    // Past the horizon the last segment is extrapolated.
    assert_eq!(along_forecast((0.0, 0.0), &wps, 0.5, 1.5), (1.0, 2.0));
    assert_eq!(along_forecast((3.0, 4.0), &[], 0.5, 1.0), (3.0, 4.0));
}

fn outputs_received(sender: u32, out: Outputs, pose: Pose2, t: f64) -> Received {
    Received {
        sender,
        pose,
        timestamp: t,
        payload: Payload::Outputs(out),
        bits: 0,
    }
}

fn empty_own() -> VehicleView {
    VehicleView {
        id: 0,
        pose: Pose2::identity(),
        timestamp: 1.0,
        sweeps: (0..3)
            .map(|k| Sweep {
                sdv: 0,
                sensor_pose: Pose2::identity(),
                start_time: 1.0 - 0.1 * k as f64,
                points: vec![],
                actor_ids: vec![],
            })
            .collect(),
    }
}

#[test]
fn duplicate_detection_survives_once() {
    let m = models();
    let c = cfg();
    let own = empty_own();
    let a = det(5.0, 3.0, 0.8, vec![(5.0, 3.0); 6]);
    let b = det(5.0, 3.0, 0.7, vec![(5.0, 3.0); 6]);
    let msgs = vec![
        outputs_received(1, vec![a.clone()], Pose2::identity(), 1.0),
        outputs_received(2, vec![b], Pose2::identity(), 1.0),
    ];
    let refs: Vec<&Received> = msgs.iter().collect();
    // Untrained own detections all score below this.
    let strict = FusionConfig {
        score_threshold: 0.5,
        ..c
    };
    let merged = output_fusion(&own, &refs, &m, &strict).unwrap();
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0], a);
}

/// A detection survives iff no kept higher-scoring box overlaps it.
fn oracle_merge(mut all: Outputs, thr: f64) -> Outputs {
    all.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
    let mut kept: Outputs = Vec::new();
    for d in all {
        if kept.iter().all(|k| iou_unchecked(&k.0.bbox, &d.0.bbox) <= thr) {
            kept.push(d);
        }
    }
    kept
}

#[test]
fn zero_delay_merge_matches_oracle() {
    let m = models();
    let strict = FusionConfig {
        score_threshold: 0.5,
        ..cfg()
    };
    let own = empty_own();
    let mut rng = stream(5, "merge", 0);
    use rand::Rng as _;
    for _ in 0..50 {
        let mut msgs = Vec::new();
        let mut union = Vec::new();
        for s in 0..3u32 {
            let out: Outputs = (0..rng.gen_range(0..6))
                .map(|_| {
                    let (x, y) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
                    let mut d = det(x, y, rng.gen_range(0.0..1.0), vec![(x, y); 6]);
                    d.0.bbox.heading = rng.gen_range(-3.0..3.0);
                    d
                })
                .collect();
            union.extend(out.clone());
            msgs.push(outputs_received(s + 1, out, Pose2::identity(), 1.0));
        }
        let refs: Vec<&Received> = msgs.iter().collect();
        let got = output_fusion(&own, &refs, &m, &strict).unwrap();
        let want = oracle_merge(union, m.model.nms_iou);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0.bbox.cx - w.0.bbox.cx).abs() < 1e-9 && (g.0.bbox.cy - w.0.bbox.cy).abs() < 1e-9);
            assert_eq!(g.0.score, w.0.score);
        }
    }
}

#[test]
fn raw_fusion_places_sender_points_at_truth() {
    let (w, sc) = scene();
    let (own, others) = views(&sc, &w, 1.0);
    let m = models();
    let c = cfg();
    let sender = &others[0];
    let msgs = received(PayloadType::Points, std::slice::from_ref(sender), &m, &c);
    let refs: Vec<&Received> = msgs.iter().collect();
    let merged = merged_points(&own, &refs);
    let own_only = merged_points(&own, &[]);
    for ch in 0..own.sweeps.len() {
        let extra = &merged.channels[ch][own_only.channels[ch].len()..];
        let s = &sender.sweeps[ch];
        assert_eq!(extra.len(), s.points.len());
        let tr = relative_transform(&s.sensor_pose, &own.pose);
        for (p, q) in s.points.iter().zip(extra) {
            let truth = tr.apply((p.x, p.y));
            assert!(((truth.0 - q.0).powi(2) + (truth.1 - q.1).powi(2)).sqrt() < 0.01);
        }
    }
}

#[test]
fn warp_round_trip() {
    let mut rng = stream(9, "warp", 0);
    use rand::Rng as _;
    for _ in 0..1000 {
        let a = Pose2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-3.2..3.2));
        let b = Pose2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-3.2..3.2));
        let p = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let q = relative_transform(&b, &a).apply(relative_transform(&a, &b).apply(p));
        assert!((p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9);
    }
}

#[test]
fn mixed_fleet_types_are_uniform() {
    let mut rng = stream(1, "mixed", 0);
    let mut counts = [0usize; 3];
    let n = 10_000;
    for _ in 0..n {
        let k = match Strategy::Mixed.payload_for(&mut rng).unwrap() {
            PayloadType::Points => 0,
            PayloadType::Features => 1,
            PayloadType::Outputs => 2,
        };
        counts[k] += 1;
    }
    let e = n as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "{counts:?} p = {p}");
    assert_eq!(Strategy::None.payload_for(&mut rng), None);
}

#[test]
fn detections_stay_inside_roi() {
    let m = models();
    let strict = FusionConfig {
        score_threshold: 0.5,
        ..cfg()
    };
    let own = empty_own();
    let msgs = vec![outputs_received(1, vec![det(60.0, 0.0, 0.9, vec![(60.0, 0.0); 6]), det(39.0, 19.0, 0.9, vec![(39.0, 19.0); 6])], Pose2::identity(), 1.0)];
    let refs: Vec<&Received> = msgs.iter().collect();
    let out = output_fusion(&own, &refs, &m, &strict).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].0.bbox.cx, 39.0);
}

#[test]
fn strategy_names_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(Strategy::parse(s.name()), Some(s));
    }
    assert_eq!(Strategy::parse("lidar"), None);
}
