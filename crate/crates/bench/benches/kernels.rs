use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rampmerge::grid::{dbm_to_mw, GridConfig, SensingHistory};
use rampmerge::mac::{esbsps_select, sbsps_select, MacConfig, SciObservation};
use rampmerge::phy::{adjudicate_into, ChannelConfig, RadioTx, SubframeReport};
use rampmerge::rl::policy::BetaTransform;
use rampmerge::rl::{Policy, STATE_DIM};
use rampmerge::road::{detect_collision, Footprint, Vec2};

fn sat(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Footprint, Footprint)> = (0..1024)
        .map(|_| {
            let mut f = || Footprint {
                center: Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)),
                heading: rng.random_range(-3.2..3.2),
                length: 4.5,
                width: 2.0,
            };
            (f(), f())
        })
        .collect();
    c.bench_function("sat_1024_pairs", |b| {
        b.iter(|| pairs.iter().filter(|(a, b)| detect_collision(black_box(a), black_box(b))).count())
    });
}

fn selection(c: &mut Criterion) {
    let grid = GridConfig::default();
    let now = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut h = SensingHistory::new(grid.sensing_len, grid.sc);
    for t in now - 1000..now {
        let row: Vec<f64> = (0..grid.sc).map(|_| dbm_to_mw(rng.random_range(-110.0..-70.0))).collect();
        h.record_listen(t, &row);
    }
    let obs: Vec<SciObservation> = (0..60)
        .map(|_| SciObservation {
            time: now - rng.random_range(1..1000),
            subchannel: rng.random_range(0..grid.sc),
            rsvp: 20,
            rc: Some(rng.random_range(1..75)),
            rsrp_dbm: rng.random_range(-115.0..-60.0),
        })
        .collect();
    let mac = MacConfig::default();
    c.bench_function("sbsps_select_60_obs", |b| {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        b.iter(|| sbsps_select(&h, &obs, now, &grid, &mac, &mut r).chosen)
    });
    c.bench_function("esbsps_select_60_obs", |b| {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        b.iter(|| esbsps_select(&h, &obs, now, &grid, &mac, &mut r).chosen)
    });
}

fn adjudication(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nodes: Vec<Vec2> = (0..100)
        .map(|_| Vec2::new(rng.random_range(-1000.0..500.0), rng.random_range(-5.0..2.0)))
        .collect();
    let txs: Vec<RadioTx> = (0..5)
        .map(|k| RadioTx {
            sender: k * 17,
            subchannel: (k % 3) as u8,
            tx_power_dbm: 23.0,
        })
        .collect();
    let cfg = ChannelConfig::default();
    let mut out = SubframeReport::default();
    c.bench_function("adjudicate_100_nodes_5_tx", |b| {
        b.iter(|| {
            adjudicate_into(black_box(&txs), &nodes, 3, &cfg, &mut out);
            out.outcomes.len()
        })
    });
}

fn policy_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = Policy::new(&[64, 64], BetaTransform::ShiftedInput, &mut rng);
    let obs: [f64; STATE_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    c.bench_function("policy_heads_64x64", |b| b.iter(|| policy.heads(black_box(&obs))));
    c.bench_function("critic_value_64x64", |b| b.iter(|| policy.value(black_box(&obs))));
}

criterion_group!(kernels, sat, selection, adjudication, policy_forward);
criterion_main!(kernels);
