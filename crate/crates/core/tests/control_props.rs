use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rampmerge::control::{cacc_accel, estimate_neighbor, select_leader, BeaconPacket, CaccGains, LeaderView, NeighborEstimate};
use rampmerge::harness::{aor, peor, ControlEvent, FreshnessMetrics, NeighborRecord};
use rampmerge::rl::policy::{unit_to_action, BetaTransform};
use rampmerge::rl::ppo::{discounted_return, surrogate_and_grad};
use rampmerge::rl::{Policy, Transition, STATE_DIM};
use rampmerge::road::{bicycle_step, detect_collision, Footprint, Road, RoadGeometry, VehicleParams, VehicleState, Vec2};

fn state() -> impl Strategy<Value = VehicleState> {
    (-400.0f64..100.0, -5.0f64..1.5, 0.0f64..25.0).prop_map(|(x, y, v)| VehicleState {
        x,
        y,
        v,
        phi: 0.0,
        road: Road::Main,
    })
}

fn footprint() -> impl Strategy<Value = Footprint> {
    (-5.0f64..5.0, -3.0f64..3.0, -3.2f64..3.2).prop_map(|(x, y, h)| Footprint {
        center: Vec2::new(x, y),
        heading: h,
        length: 4.5,
        width: 2.0,
    })
}

fn inside(p: Vec2, f: &Footprint) -> bool {
    let (s, c) = f.heading.sin_cos();
    let (dx, dy) = (p.x - f.center.x, p.y - f.center.y);
    (dx * c + dy * s).abs() <= 0.5 * f.length && (-dx * s + dy * c).abs() <= 0.5 * f.width
}

proptest! {
    #[test]
    fn straight_steering_keeps_lane_and_heading(s in state(), accels in prop::collection::vec(-3.0f64..3.0, 1..60)) {
        let p = VehicleParams::default();
        let mut cur = s;
        for a in accels {
            cur = bicycle_step(&cur, a, 0.0, 0.1, &p).state;
            prop_assert_eq!(cur.y, s.y);
            prop_assert_eq!(cur.phi, s.phi);
            prop_assert!((p.v_min..=p.v_max).contains(&cur.v));
        }
    }

    #[test]
    fn coasting_keeps_speed(s in state(), delta in -0.26f64..0.26, steps in 1usize..50) {
        let p = VehicleParams::default();
        let mut cur = s;
        for _ in 0..steps {
            cur = bicycle_step(&cur, 0.0, delta, 0.1, &p).state;
        }
        prop_assert_eq!(cur.v, s.v);
        prop_assert!(cur.phi.is_finite());
    }

    #[test]
    fn collision_is_symmetric(a in footprint(), b in footprint()) {
        prop_assert_eq!(detect_collision(&a, &b), detect_collision(&b, &a));
    }

    /// A corner of one rectangle inside the other is a certain overlap.
    #[test]
    fn contained_corner_means_collision(a in footprint(), b in footprint()) {
        if a.corners().iter().any(|&c| inside(c, &b)) {
            prop_assert!(detect_collision(&a, &b));
        }
    }

    #[test]
    fn far_apart_never_collide(a in footprint(), dx in 6.0f64..100.0) {
        let b = Footprint { center: Vec2::new(a.center.x + dx, a.center.y), ..a };
        prop_assert!(!detect_collision(&a, &b));
    }

    #[test]
    fn cacc_command_stays_in_bounds(v in 0.0f64..25.0, a_prev in -3.0f64..3.0, gap in -5.0f64..200.0, lv in 0.0f64..25.0, has_leader in any::<bool>()) {
        let p = VehicleParams::default();
        let leader = has_leader.then_some(LeaderView { gap, v: lv });
        let (a, _) = cacc_accel(v, a_prev, leader, &CaccGains::default(), 0.1, &p);
        prop_assert!((p.a_min..=p.a_max).contains(&a));
        let next = bicycle_step(&VehicleState { x: 0.0, y: 0.0, v, phi: 0.0, road: Road::Main }, a, 0.0, 0.1, &p).state;
        prop_assert!((p.v_min..=p.v_max).contains(&next.v));
    }

    #[test]
    fn leader_is_ahead(positions in prop::collection::vec(-300.0f64..300.0, 0..12), ego in -300.0f64..300.0) {
        let ns: Vec<NeighborEstimate> = positions
            .iter()
            .enumerate()
            .map(|(i, &pos)| NeighborEstimate { id: i as u32, pos, v: 20.0, phi: 0.0, y: 0.0, road: Road::Main, aoi_ms: 0 })
            .collect();
        match select_leader(&ns, ego) {
            Some(l) => prop_assert!(l.pos > ego && ns.iter().all(|n| n.pos <= ego || n.pos >= l.pos)),
            None => prop_assert!(ns.iter().all(|n| n.pos <= ego)),
        }
    }

    #[test]
    fn extrapolation_is_exact_at_constant_speed(x0 in -400.0f64..0.0, v in 0.0f64..25.0, ts in 0u64..100_000, age in 0u64..2000) {
        let geo = RoadGeometry::default();
        let p = BeaconPacket { id: 1, x: x0, y: 0.0, v, theta: 0.0, road: Road::Main, ts };
        let est = estimate_neighbor(&p, ts + age, &geo);
        let truth = x0 + v * age as f64 / 1000.0;
        prop_assert!((est.pos - truth).abs() <= 1e-9 * (1.0 + truth.abs()));
    }

    #[test]
    fn returns_satisfy_bellman(rewards in prop::collection::vec(-100.0f64..100.0, 1..200), gamma in 0.0f64..1.0) {
        let r = discounted_return(&rewards, gamma);
        let n = rewards.len();
        prop_assert_eq!(r[n - 1], rewards[n - 1]);
        for t in 0..n - 1 {
            prop_assert_eq!(r[t], rewards[t] + gamma * r[t + 1]);
        }
    }

    #[test]
    fn sampled_actions_stay_in_bounds(seed in any::<u64>(), obs in prop::array::uniform9(-3.0f64..3.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = Policy::new(&[16, 16], BetaTransform::ShiftedInput, &mut rng);
        policy.actor.params.iter_mut().for_each(|w| *w *= 5.0);
        let p = VehicleParams::default();
        for _ in 0..20 {
            let (unit, logp) = policy.sample(&obs, &mut rng);
            let (a, d) = unit_to_action(unit, &p);
            prop_assert!(logp.is_finite());
            prop_assert!((p.a_min..=p.a_max).contains(&a) && (p.delta_min..=p.delta_max).contains(&d));
        }
    }

    /// Before any update the behaviour policy is the current one, so every
    /// ratio is one and the surrogate is the mean advantage.
    #[test]
    fn unchanged_policy_surrogate_is_mean_advantage(seed in any::<u64>(), adv in prop::collection::vec(-10.0f64..10.0, 1..32)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = Policy::new(&[16, 16], BetaTransform::ShiftedInput, &mut rng);
        let data: Vec<Transition> = adv
            .iter()
            .map(|_| {
                let obs = [0.3; STATE_DIM];
                let (unit, logp_old) = policy.sample(&obs, &mut rng);
                Transition { obs, unit, reward: 0.0, next_obs: obs, done: true, logp_old, ret: 0.0 }
            })
            .collect();
        let batch: Vec<&Transition> = data.iter().collect();
        let (j, _) = surrogate_and_grad(&policy, &batch, &adv, 0.2);
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        prop_assert!((j - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
    }
}

fn events() -> impl Strategy<Value = Vec<ControlEvent>> {
    let rec = (0u32..20, 4.0f64..400.0, 0.0f64..300.0, 0.0f64..8.0, 0u8..10).prop_map(|(n, aoi, d, e, missing)| NeighborRecord {
        neighbor: n,
        aoi_ms: if missing == 0 { f64::INFINITY } else { aoi.round() },
        distance_m: d,
        position_error_m: if missing == 0 { f64::INFINITY } else { e },
    });
    prop::collection::vec((0u64..400, 0u32..20, prop::collection::vec(rec, 0..8)), 0..30).prop_map(|v| {
        v.into_iter()
            .map(|(t, o, records)| ControlEvent { time_ms: t * 100, observer: o, records })
            .collect()
    })
}

const AOI_TH: [f64; 6] = [25.0, 50.0, 100.0, 150.0, 200.0, 300.0];
const ERR_TH: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0];
const DIST: [f64; 4] = [50.0, 100.0, 200.0, f64::INFINITY];

/// Direct recount over the raw log.
fn recount(events: &[ControlEvent], value: impl Fn(&NeighborRecord) -> f64, th: f64, d: f64) -> Option<f64> {
    let within: Vec<&NeighborRecord> = events.iter().flat_map(|e| e.records.iter()).filter(|r| r.distance_m <= d).collect();
    if within.is_empty() {
        return None;
    }
    Some(within.iter().filter(|r| value(r) > th).count() as f64 / within.len() as f64)
}

proptest! {
    #[test]
    fn rates_fall_with_threshold(ev in events()) {
        for &d in &DIST {
            for w in AOI_TH.windows(2) {
                if let (Some(a), Some(b)) = (aor(&ev, w[0], d), aor(&ev, w[1], d)) {
                    prop_assert!(b <= a);
                }
            }
            for w in ERR_TH.windows(2) {
                if let (Some(a), Some(b)) = (peor(&ev, w[0], d), peor(&ev, w[1], d)) {
                    prop_assert!(b <= a);
                }
            }
        }
    }

    #[test]
    fn streaming_matches_recount(ev in events(), split in 0usize..30) {
        let mut first = FreshnessMetrics::new(&AOI_TH, &ERR_TH, &DIST);
        let mut second = FreshnessMetrics::new(&AOI_TH, &ERR_TH, &DIST);
        let k = split.min(ev.len());
        ev[..k].iter().for_each(|e| first.push(e));
        ev[k..].iter().for_each(|e| second.push(e));
        first.aor.merge(&second.aor);
        first.peor.merge(&second.peor);
        let (ar, pr) = (first.aor.rates(), first.peor.rates());
        for (j, &d) in DIST.iter().enumerate() {
            for (t, &th) in AOI_TH.iter().enumerate() {
                prop_assert_eq!(ar[t][j], recount(&ev, |r| r.aoi_ms, th, d));
                prop_assert_eq!(aor(&ev, th, d), recount(&ev, |r| r.aoi_ms, th, d));
            }
            for (t, &th) in ERR_TH.iter().enumerate() {
                prop_assert_eq!(pr[t][j], recount(&ev, |r| r.position_error_m, th, d));
                prop_assert_eq!(peor(&ev, th, d), recount(&ev, |r| r.position_error_m, th, d));
            }
        }
    }
}
