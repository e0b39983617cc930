use std::collections::BTreeMap;

use minicity::city::{Approach, CityLayout};
use minicity::geometry::{Pose2D, Vec2};
use minicity::rng::stream;
use minicity::scenario::IntersectionSpec;
use minicity::sensing::Track;
use minicity::v2i::{
    infra_decide, presence_trigger, Channel, ChannelParams, CommReport, InfraParams, InfraState, Payload, V2IMessage,
};
use minicity::vehicle::{VehicleParams, VehicleState};
use proptest::prelude::*;

fn state_msg(sender: u16, t: f64) -> V2IMessage {
    V2IMessage {
        sender,
        timestamp: t,
        payload: Payload::VehicleState {
            pose: Pose2D::new(t, 0.0, 0.0),
            speed: 1.0,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn channel_is_fifo_per_pair(
        seed in 0u64..1000,
        latency in 0.0..0.5f64,
        jitter in 0.0..0.3f64,
        drop in 0.0..0.5f64,
        sends in prop::collection::vec((1u16..4, 0u16..3), 1..120),
    ) {
        let mut ch = Channel::new(ChannelParams { base_latency: latency, jitter_sigma: jitter, drop_prob: drop }, stream(seed, 2));
        let mut last: BTreeMap<(u16, u16), f64> = BTreeMap::new();
        let mut sent = 0usize;
        let mut got = 0usize;
        for (k, (from, to)) in sends.iter().enumerate() {
            let now = k as f64 * 0.05;
            if ch.send(state_msg(*from, now), *to, now) != minicity::v2i::Delivery::Dropped {
                sent += 1;
            }
            for dest in 0..3u16 {
                for m in ch.receive(dest, now) {
                    let prev = last.insert((m.sender, dest), m.timestamp);
                    prop_assert!(prev.is_none_or(|p| p < m.timestamp));
                    prop_assert!(m.timestamp <= now + 1e-9);
                    got += 1;
                }
            }
        }
        for dest in 0..3u16 {
            got += ch.receive(dest, 1e9).len();
        }
        prop_assert_eq!(sent, got);
    }

    #[test]
    fn infra_decide_is_pure(
        tracks in prop::collection::vec((1.5..4.5f64, 1.5..4.5f64, -1.0..1.0f64, -1.0..1.0f64), 0..5),
        reports in prop::collection::vec((1.5..4.5f64, 1.5..4.5f64, 0.0..1.0f64), 0..3),
        now in 0.0..5.0f64,
    ) {
        let model = IntersectionSpec::default().build(&CityLayout::default_layout()).unwrap();
        let mut state = InfraState::default();
        state.tracks = tracks
            .iter()
            .enumerate()
            .map(|(k, &(x, y, vx, vy))| Track { id: k as u32, position: Vec2::new(x, y), velocity: Vec2::new(vx, vy), age: 1.0, misses: 0 })
            .collect();
        for (k, &(x, y, s)) in reports.iter().enumerate() {
            state.comm.insert(k as u16 + 1, CommReport { pose: Pose2D::new(x, y, 0.0), speed: s, timestamp: now });
        }
        let mut a = state.clone();
        let mut b = state.clone();
        let ma = infra_decide(&mut a, &model, &InfraParams::default(), now);
        let mb = infra_decide(&mut b, &model, &InfraParams::default(), now);
        prop_assert_eq!(ma, mb);
        prop_assert_eq!(a, b);
    }
}

/// Path position (meters travelled from the spawn) at which the trigger first fires.
fn first_trigger(scale: f64, approach: Approach, lateral: f64) -> Option<f64> {
    let model = IntersectionSpec::default()
        .build(&CityLayout::default_layout())
        .unwrap()
        .with_scale(scale);
    let params = VehicleParams::default();
    let c = model.polygon.centroid();
    let start = c + approach.outward() * 3.0 + approach.right() * lateral;
    (0..600).map(|k| k as f64 * 0.01).find(|&s| {
        let p = start + approach.travel() * s;
        let st = VehicleState::at_rest(Pose2D::new(p.x, p.y, approach.heading()));
        presence_trigger(&st.footprint(&params), &model)
    })
}

#[test]
fn presence_trigger_monotone_in_scale() {
    let scales = [0.5, 0.75, 1.0, 1.1, 1.25, 1.5, 2.0];
    for a in Approach::ALL {
        for lateral in [0.0, 0.1, 0.225, 0.3] {
            let pos: Vec<f64> = scales
                .iter()
                .map(|&s| first_trigger(s, a, lateral).unwrap_or(f64::INFINITY))
                .collect();
            for w in pos.windows(2) {
                assert!(w[1] <= w[0], "{a:?} lateral {lateral}: {pos:?}");
            }
        }
    }
}
