//! Environment episodes and the PPO training loop.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{action_to_unit, unit_to_action, BetaTransform, Policy, BETA_FLOOR};
use super::ppo::{discounted_return, surrogate_and_grad, value_loss_and_grad, Adam, Transition};
use super::reward::{reward_running, reward_terminal_fail, reward_terminal_success, RewardConfig};
use super::state::{build_state, RlState, STATE_DIM};
use crate::control::ControlMode;
use crate::error::{Error, Result};
use crate::world::{Event, MergeOutcome, World, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub world: WorldConfig,
    pub reward: RewardConfig,
    /// Offset reported for a missing neighbour, m.
    pub sentinel_gap: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            reward: RewardConfig::default(),
            sentinel_gap: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    /// Transitions collected per epoch.
    pub buffer_size: usize,
    pub minibatch: usize,
    /// Minibatch updates per epoch.
    pub updates_per_epoch: usize,
    pub hidden: Vec<usize>,
    pub beta_transform: BetaTransform,
    /// Standardise advantages within each minibatch.
    pub normalize_advantages: bool,
    /// The critic predicts returns divided by this.
    pub value_scale: f64,
    /// Environment episodes simulated concurrently while collecting.
    pub envs_per_round: usize,
    /// Initial value of every beta parameter; 0 keeps the transform's
    /// zero-input value.
    pub init_concentration: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon: 0.2,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            buffer_size: 4096,
            minibatch: 256,
            updates_per_epoch: 10,
            hidden: vec![64, 64],
            beta_transform: BetaTransform::ShiftedInput,
            normalize_advantages: true,
            value_scale: 100.0,
            envs_per_round: 8,
            init_concentration: 100.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("clip range must be positive");
        }
        if self.buffer_size == 0 || self.minibatch == 0 || self.minibatch > self.buffer_size {
            return bad("minibatch must be in [1, buffer_size]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.value_scale > 0.0) || self.envs_per_round == 0 {
            return bad("value scale and envs per round must be positive");
        }
        let floor = match self.beta_transform {
            BetaTransform::ShiftedInput => BETA_FLOOR,
            BetaTransform::ShiftedOutput => 1.0,
        };
        if self.init_concentration != 0.0 && !(self.init_concentration > floor) {
            return bad("initial concentration must exceed the transform's lower bound");
        }
        Ok(())
    }
}

/// Who drives vehicles inside the merging area.
#[derive(Clone, Copy, Debug)]
pub enum Driver<'a> {
    /// Samples from the policy (training).
    Sample(&'a Policy),
    /// Uses the mean of each beta head (evaluation).
    Mean(&'a Policy),
    /// CACC with two-point steering.
    TwoPoint,
}

/// One ramp vehicle's pass through the merging area.
#[derive(Clone, Debug)]
pub struct AgentEpisode {
    pub vehicle: u32,
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
    pub outcome: MergeOutcome,
    pub collided_after_success: bool,
    /// Applied (acceleration, heading) per step in the merging area.
    pub segment: Vec<(f64, f64)>,
}

impl AgentEpisode {
    /// Merged, and never collided afterwards.
    pub fn clean_success(&self) -> bool {
        self.outcome == MergeOutcome::Success && !self.collided_after_success
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub seed: u64,
    pub density: f64,
    pub vehicles: usize,
    pub crashed_vehicles: usize,
    pub agents: Vec<AgentEpisode>,
    /// (step after which it happened, vehicle, event)
    pub events: Vec<(u64, u32, Event)>,
}

struct Pending {
    obs: [f64; STATE_DIM],
    unit: [f64; 2],
    logp: f64,
}

fn observe(world: &World, i: usize, env: &EnvConfig) -> RlState {
    let n = world.perfect_neighbors(i);
    build_state(&world.vehicles[i].state, &n, &world.cfg.geo, &world.cfg.vehicle, env.sentinel_gap)
}

/// Runs one environment episode with perfect neighbour information.
pub fn run_episode(env: &EnvConfig, driver: Driver<'_>, seed: u64, gamma: f64) -> EpisodeResult {
    let mut world_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut act_rng = ChaCha8Rng::seed_from_u64(seed);
    act_rng.set_stream(1);
    let mut world = World::new(env.world.clone(), &mut world_rng);
    let geo = world.cfg.geo.clone();
    let params = world.cfg.vehicle.clone();
    let mut open: BTreeMap<u32, (Vec<Transition>, Vec<f64>)> = BTreeMap::new();
    let mut agents = Vec::new();
    let mut events = Vec::new();

    while !world.done() {
        let mut actions = vec![(0.0, 0.0); world.vehicles.len()];
        let mut pending: Vec<(usize, Pending)> = Vec::new();
        let active: Vec<usize> = world.active().map(|(i, _)| i).collect();
        for i in active {
            let v = &world.vehicles[i];
            if v.mode == ControlMode::Rl {
                let s = observe(&world, i, env);
                let obs = s.observation(&geo, &params, env.sentinel_gap);
                let (unit, logp) = match driver {
                    Driver::Sample(p) => p.sample(&obs, &mut act_rng),
                    Driver::Mean(p) => {
                        let u = p.mean_unit(&obs);
                        (u, p.log_prob(&obs, u))
                    }
                    Driver::TwoPoint => {
                        let n = world.perfect_neighbors(i);
                        let (a, d, _) = world.cacc_command(i, &n);
                        (action_to_unit(a, d, &params), 0.0)
                    }
                };
                actions[i] = unit_to_action(unit, &params);
                pending.push((i, Pending { obs, unit, logp }));
            } else {
                let n = world.perfect_neighbors(i);
                let (a, d, _) = world.cacc_command(i, &n);
                actions[i] = (a, d);
            }
        }
        let step = world.step;
        events.extend(world.apply(&actions).into_iter().map(|(id, e)| (step, id, e)));

        for (i, p) in pending {
            let v = &world.vehicles[i];
            let m = v.merge.as_ref().expect("merging-area vehicles come from the ramp");
            let s = observe(&world, i, env);
            let (a, delta) = actions[i];
            let (a, delta) = (a.clamp(params.a_min, params.a_max), delta.clamp(params.delta_min, params.delta_max));
            let reward = match m.outcome {
                Some(MergeOutcome::Success) => {
                    reward_terminal_success(s.y_r, s.phi, m.sum_abs_a, m.sum_abs_delta, &env.reward)
                }
                Some(_) => reward_terminal_fail(s.x, s.y_r, s.y_f, &env.reward),
                None => reward_running(&s, v.phi_prev(), a, delta, &geo, &params, world.cfg.cacc.t_h, &env.reward).total(),
            };
            let done = m.outcome.is_some();
            let entry = open.entry(v.id).or_default();
            entry.0.push(Transition {
                obs: p.obs,
                unit: p.unit,
                reward,
                next_obs: s.observation(&geo, &params, env.sentinel_gap),
                done,
                logp_old: p.logp,
                ret: 0.0,
            });
            entry.1.push(reward);
        }

        // Close agents whose outcome is now known.
        let closed: Vec<u32> = open
            .keys()
            .copied()
            .filter(|id| {
                let v = &world.vehicles[world.index_of(*id).unwrap()];
                v.merge.as_ref().is_some_and(|m| m.outcome.is_some())
            })
            .collect();
        for id in closed {
            let (mut tr, rewards) = open.remove(&id).unwrap();
            let rets = discounted_return(&rewards, gamma);
            tr.iter_mut().zip(&rets).for_each(|(t, r)| t.ret = *r);
            let v = &world.vehicles[world.index_of(id).unwrap()];
            agents.push(AgentEpisode {
                vehicle: id,
                total_reward: rewards.iter().sum(),
                outcome: v.merge.as_ref().unwrap().outcome.unwrap(),
                collided_after_success: false,
                segment: Vec::new(),
                transitions: tr,
            });
        }
    }

    // Post-merge collisions and trajectories are only final at episode end.
    for ag in agents.iter_mut() {
        let v = &world.vehicles[world.index_of(ag.vehicle).unwrap()];
        ag.collided_after_success = v.merge.as_ref().unwrap().collided_after_success;
        ag.segment = v.rl_segment();
    }
    agents.sort_by_key(|a| a.vehicle);
    EpisodeResult {
        seed,
        density: world.density,
        vehicles: world.vehicles.len(),
        crashed_vehicles: world.vehicles.iter().filter(|v| v.status == crate::world::Status::Crashed).count(),
        agents,
        events,
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `k`-th training episode for a run seeded with `seed`.
pub fn episode_seed(seed: u64, k: u64) -> u64 {
    splitmix(seed ^ splitmix(k))
}

/// Seeds reserved for evaluation; disjoint in practice from training seeds.
pub fn eval_seed(k: u64) -> u64 {
    splitmix(0xE7A1_0000_0000_0000 ^ k)
}

/// One row of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: u64,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub collision_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: u128,
}

impl RngState {
    fn capture(r: &ChaCha8Rng) -> Self {
        Self {
            seed: r.get_seed(),
            stream: r.get_stream(),
            word_pos: r.get_word_pos(),
        }
    }

    fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

pub const CHECKPOINT_FORMAT: &str = "rampmerge-ppo";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing training state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub seed: u64,
    pub epoch: u64,
    pub episodes: u64,
    pub policy: Policy,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    rng: RngState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }
}

pub struct Trainer {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub seed: u64,
    pub policy: Policy,
    pub epoch: u64,
    pub episodes: u64,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(env: EnvConfig, ppo: PpoConfig, seed: u64) -> Result<Self> {
        env.world.validate()?;
        ppo.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let policy = initial_policy(&ppo, &mut rng);
        Ok(Self {
            actor_opt: Adam::new(policy.actor.params.len(), ppo.lr_policy),
            critic_opt: Adam::new(policy.critic.params.len(), ppo.lr_value),
            env,
            ppo,
            seed,
            policy,
            epoch: 0,
            episodes: 0,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            env: self.env.clone(),
            ppo: self.ppo.clone(),
            seed: self.seed,
            epoch: self.epoch,
            episodes: self.episodes,
            policy: self.policy.clone(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Self {
        Self {
            rng: c.rng.restore(),
            env: c.env,
            ppo: c.ppo,
            seed: c.seed,
            policy: c.policy,
            epoch: c.epoch,
            episodes: c.episodes,
            actor_opt: c.actor_opt,
            critic_opt: c.critic_opt,
        }
    }

    /// Collects at least `buffer_size` transitions with the current policy.
    pub fn collect(&mut self) -> (Vec<Transition>, Vec<AgentEpisode>) {
        let mut buffer = Vec::with_capacity(self.ppo.buffer_size + 512);
        let mut agents = Vec::new();
        while buffer.len() < self.ppo.buffer_size {
            let seeds: Vec<u64> = (0..self.ppo.envs_per_round as u64)
                .map(|k| episode_seed(self.seed, self.episodes + k))
                .collect();
            self.episodes += seeds.len() as u64;
            let policy = &self.policy;
            let env = &self.env;
            let gamma = self.ppo.gamma;
            let results: Vec<EpisodeResult> = seeds
                .par_iter()
                .map(|&s| run_episode(env, Driver::Sample(policy), s, gamma))
                .collect();
            for r in results {
                for mut a in r.agents {
                    buffer.append(&mut a.transitions);
                    agents.push(a);
                }
            }
        }
        (buffer, agents)
    }

    /// One epoch: collect, then `updates_per_epoch` minibatch steps on both networks.
    pub fn run_epoch(&mut self) -> Result<TraceRow> {
        let (buffer, agents) = self.collect();
        let scale = self.ppo.value_scale;
        let values: Vec<f64> = buffer.iter().map(|t| self.policy.value(&t.obs) * scale).collect();
        for u in 0..self.ppo.updates_per_epoch {
            let idx = sample(&mut self.rng, buffer.len(), self.ppo.minibatch.min(buffer.len())).into_vec();
            let batch: Vec<&Transition> = idx.iter().map(|&k| &buffer[k]).collect();
            let mut adv: Vec<f64> = idx.iter().map(|&k| buffer[k].ret - values[k]).collect();
            if self.ppo.normalize_advantages && adv.len() > 1 {
                let n = adv.len() as f64;
                let mean = adv.iter().sum::<f64>() / n;
                let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
            }
            let targets: Vec<f64> = batch.iter().map(|t| t.ret / scale).collect();
            let (j, g_actor) = surrogate_and_grad(&self.policy, &batch, &adv, self.ppo.epsilon);
            let (l, g_critic) = value_loss_and_grad(&self.policy, &batch, &targets);
            if !j.is_finite() || !l.is_finite() || g_actor.iter().chain(&g_critic).any(|g| !g.is_finite()) {
                let dump = serde_json::to_string(&batch).unwrap_or_default();
                return Err(Error::NonFinite {
                    context: format!("epoch {} update {u}: surrogate {j}, value loss {l}; batch {dump}", self.epoch),
                });
            }
            let ascent: Vec<f64> = g_actor.iter().map(|g| -g).collect();
            self.actor_opt.step(&mut self.policy.actor.params, &ascent);
            self.critic_opt.step(&mut self.policy.critic.params, &g_critic);
        }
        if self.policy.actor.params.iter().chain(&self.policy.critic.params).any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameters after epoch {}", self.epoch),
            });
        }
        let n = agents.len().max(1) as f64;
        let row = TraceRow {
            epoch: self.epoch,
            mean_reward: agents.iter().map(|a| a.total_reward).sum::<f64>() / n,
            success_rate: agents.iter().filter(|a| a.outcome == MergeOutcome::Success).count() as f64 / n,
            collision_rate: agents
                .iter()
                .filter(|a| matches!(a.outcome, MergeOutcome::Collision | MergeOutcome::RoadViolation))
                .count() as f64
                / n,
        };
        self.epoch += 1;
        Ok(row)
    }
}

/// Trains for `epochs` epochs from a fresh policy.
pub fn train(env: &EnvConfig, ppo: &PpoConfig, seed: u64, epochs: u64) -> Result<(Policy, Vec<TraceRow>)> {
    let mut t = Trainer::new(env.clone(), ppo.clone(), seed)?;
    let mut trace = Vec::with_capacity(epochs as usize);
    for _ in 0..epochs {
        trace.push(t.run_epoch()?);
    }
    Ok((t.policy, trace))
}

/// Runs `episodes` held-out episodes in parallel, in seed order.
pub fn evaluate(env: &EnvConfig, driver: Driver<'_>, episodes: u64, gamma: f64) -> Vec<EpisodeResult> {
    (0..episodes)
        .into_par_iter()
        .map(|k| run_episode(env, driver, eval_seed(k), gamma))
        .collect()
}

/// Success statistics over every agent of `results`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub agents: usize,
    pub successes: usize,
    pub clean_successes: usize,
    pub collisions: usize,
    pub road_violations: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
}

pub fn summarize(results: &[EpisodeResult]) -> EvalSummary {
    let agents: Vec<&AgentEpisode> = results.iter().flat_map(|r| &r.agents).collect();
    let count = |o: MergeOutcome| agents.iter().filter(|a| a.outcome == o).count();
    let n = agents.len();
    EvalSummary {
        episodes: results.len(),
        agents: n,
        successes: count(MergeOutcome::Success),
        clean_successes: agents.iter().filter(|a| a.clean_success()).count(),
        collisions: count(MergeOutcome::Collision),
        road_violations: count(MergeOutcome::RoadViolation),
        timeouts: count(MergeOutcome::Timeout),
        success_rate: if n == 0 { 0.0 } else { agents.iter().filter(|a| a.clean_success()).count() as f64 / n as f64 },
        mean_reward: if n == 0 { 0.0 } else { agents.iter().map(|a| a.total_reward).sum::<f64>() / n as f64 },
    }
}

fn initial_policy(ppo: &PpoConfig, rng: &mut ChaCha8Rng) -> Policy {
    let mut p = Policy::new(&ppo.hidden, ppo.beta_transform, rng);
    if ppo.init_concentration != 0.0 {
        p.set_initial_concentration(ppo.init_concentration);
    }
    p
}

/// The untrained policy a [`Trainer`] seeded with `seed` starts from.
pub fn fresh_policy(ppo: &PpoConfig, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    initial_policy(ppo, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PpoConfig {
        PpoConfig {
            buffer_size: 256,
            minibatch: 64,
            updates_per_epoch: 2,
            hidden: vec![16, 16],
            envs_per_round: 2,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn training_trace_is_reproducible() {
        let env = EnvConfig::default();
        let (p1, t1) = train(&env, &tiny(), 9, 1).unwrap();
        let (p2, t2) = train(&env, &tiny(), 9, 1).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let env = EnvConfig::default();
        let mut a = Trainer::new(env.clone(), tiny(), 4).unwrap();
        a.run_epoch().unwrap();
        let json = a.checkpoint().to_json().unwrap();
        let r_a = a.run_epoch().unwrap();
        let mut b = Trainer::from_checkpoint(Checkpoint::from_json(&json).unwrap());
        let r_b = b.run_epoch().unwrap();
        assert_eq!(r_a, r_b);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn episode_rewards_are_finite() {
        let env = EnvConfig::default();
        let pol = fresh_policy(&tiny(), 1);
        let r = run_episode(&env, Driver::Sample(&pol), 17, 0.99);
        assert!(!r.agents.is_empty());
        for a in &r.agents {
            assert!(a.total_reward.is_finite());
            assert!(a.transitions.last().unwrap().done);
            for w in a.transitions.windows(2) {
                assert!((w[0].ret - (w[0].reward + 0.99 * w[1].ret)).abs() < 1e-9);
            }
        }
    }
}
