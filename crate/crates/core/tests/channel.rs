use rand::{Rng as _, RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Uniform};
use v2v_core::channel::*;
use v2v_core::codec::{Bitstream, Frame, PayloadType};
use v2v_core::geom::Pose2;
use v2v_core::rng::Rng;

fn message(rng: &mut Rng) -> V2VMessage {
    let mut payload = vec![0u8; rng.gen_range(0..200)];
    rng.fill_bytes(&mut payload);
    V2VMessage {
        sender: rng.gen(),
        pose: Pose2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-3.0..3.0)),
        timestamp: rng.gen_range(0.0..100.0),
        payload: Frame::new(PayloadType::Features, Bitstream::from_bytes(payload)),
    }
}

#[test]
fn serialization_round_trips() {
    let mut rng = Rng::seed_from_u64(1);
    for _ in 0..200 {
        let m = message(&mut rng);
        let b = m.serialize();
        assert_eq!(b.len(), 41 + m.payload.encoded_len());
        assert_eq!(V2VMessage::parse(&b).unwrap(), m);
    }
}

#[test]
fn every_payload_bit_flip_is_caught() {
    let mut rng = Rng::seed_from_u64(2);
    let mut m = message(&mut rng);
    m.payload = Frame::new(PayloadType::Points, Bitstream::from_bytes(vec![0xa5; 12]));
    let b = m.serialize();
    let frame_start = HEADER_BYTES;
    for byte in frame_start + 5..frame_start + 5 + 12 {
        for bit in 0..8 {
            let mut bad = b.clone();
            bad[byte] ^= 1 << bit;
            assert!(matches!(V2VMessage::parse(&bad), Err(ChannelError::Checksum { .. })));
        }
    }
}

#[test]
fn malformed_messages_get_distinct_errors() {
    let mut rng = Rng::seed_from_u64(3);
    let b = message(&mut rng).serialize();
    assert!(matches!(V2VMessage::parse(&b[..30]), Err(ChannelError::Truncated { .. })));
    assert!(matches!(V2VMessage::parse(&b[..b.len() - 1]), Err(ChannelError::Truncated { .. })));
    let mut bad = b.clone();
    bad[0] = b'X';
    assert!(matches!(V2VMessage::parse(&bad), Err(ChannelError::BadMagic(_))));
    let mut bad = b.clone();
    bad[4] = 9;
    assert!(matches!(V2VMessage::parse(&bad), Err(ChannelError::UnknownVersion(9))));
    let mut long = b.clone();
    long.push(0);
    assert!(matches!(V2VMessage::parse(&long), Err(ChannelError::Trailing(1))));
}

#[test]
fn transmission_delays() {
    assert_eq!(transmission_delay(0, 25e6), 0.0);
    assert_eq!(transmission_delay(225_000, 25e6), 0.009);
    assert_eq!(transmission_delay(8_000_000, 1e7), 0.8);
}

#[test]
fn broadcast_gates_by_range() {
    let mut rng = Rng::seed_from_u64(4);
    let mut m = message(&mut rng);
    m.pose = Pose2::new(0.0, 0.0, 0.0);
    let receivers = [(1, Pose2::new(71.0, 0.0, 0.0)), (2, Pose2::new(70.0, 0.0, 0.0)), (m.sender, m.pose)];
    let got = broadcast(&m, &receivers, &ChannelConfig::default(), &mut rng);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].receiver, 2);
}

#[test]
fn unimpaired_channel_is_identity() {
    let mut rng = Rng::seed_from_u64(5);
    let m = message(&mut rng);
    let receivers = [(m.sender.wrapping_add(1), m.pose)];
    let d = broadcast(&m, &receivers, &ChannelConfig::default(), &mut rng);
    assert_eq!(d[0].message, m);
    assert_eq!(d[0].delay, 0.0);
    assert_eq!(d[0].message.serialize(), m.serialize());
}

#[test]
fn delays_are_uniform() {
    let cfg = ChannelConfig {
        max_delay: 0.1,
        ..Default::default()
    };
    let mut rng = Rng::seed_from_u64(6);
    let m = message(&mut rng);
    let receivers = [(m.sender.wrapping_add(1), m.pose)];
    let mut delays: Vec<f64> = (0..10_000).map(|_| broadcast(&m, &receivers, &cfg, &mut rng)[0].delay).collect();
    delays.sort_by(f64::total_cmp);
    let u = Uniform::new(0.0, 0.1).unwrap();
    let n = delays.len() as f64;
    let d = delays
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = u.cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic Kolmogorov distribution with its usual small-sample correction.
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = 2.0 * (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lam).powi(2)).exp()).sum::<f64>();
    assert!(p > 0.01, "KS p = {p}, D = {d}");
    assert!(delays[0] >= 0.0 && delays[delays.len() - 1] < 0.1);
}

#[test]
fn drop_probability_is_respected() {
    let cfg = ChannelConfig {
        drop_probability: 0.3,
        ..Default::default()
    };
    let mut rng = Rng::seed_from_u64(7);
    let m = message(&mut rng);
    let receivers = [(m.sender.wrapping_add(1), m.pose)];
    let kept = (0..10_000).filter(|_| !broadcast(&m, &receivers, &cfg, &mut rng).is_empty()).count();
    assert!((kept as f64 / 10_000.0 - 0.7).abs() < 0.02);
}

#[test]
fn queue_keeps_links_fifo() {
    let mut rng = Rng::seed_from_u64(8);
    let base = message(&mut rng);
    let mut ch = Channel::new();
    let mut stamps = Vec::new();
    for k in 0..50 {
        let m = V2VMessage {
            timestamp: k as f64 * 0.1,
            ..base.clone()
        };
        stamps.push(m.timestamp);
        ch.push(Delivery {
            receiver: 1,
            arrival: m.timestamp + rng.gen_range(0.0..0.5),
            delay: 0.0,
            message: m,
        });
    }
    let out = ch.drain_until(100.0);
    let got: Vec<f64> = out.iter().map(|d| d.message.timestamp).collect();
    assert_eq!(got, stamps);
    assert!(ch.is_empty());
}

#[test]
fn dumps_round_trip() {
    let mut rng = Rng::seed_from_u64(9);
    let msgs: Vec<V2VMessage> = (0..7).map(|_| message(&mut rng)).collect();
    let mut buf = Vec::new();
    write_dump(&mut buf, &msgs).unwrap();
    assert_eq!(read_dump(&mut &buf[..]).unwrap(), msgs);
    assert!(matches!(read_dump(&mut &buf[..buf.len() - 3]), Err(ChannelError::Truncated { .. })));
}

#[test]
fn heading_kappa_matches_sigma() {
    let cfg = ChannelConfig {
        heading_sigma_deg: 4.0,
        ..Default::default()
    };
    assert!((1.0 / cfg.heading_kappa() - 4.873e-3).abs() < 1e-6);
    assert!(ChannelConfig::default().heading_kappa().is_infinite());
}
