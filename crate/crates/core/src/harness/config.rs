//! Flat key-value scenario configuration.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected. Thresholds and distances accept `inf`
//! (bare TOML float) or the string `"inf"`.

use serde::{Deserialize, Serialize};

use crate::control::{CaccGains, TwoPointConfig};
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::mac::{MacConfig, Overlap, Scheme};
use crate::phy::ChannelConfig;
use crate::rl::{BetaTransform, EnvConfig, PpoConfig, RewardConfig};
use crate::road::{RoadGeometry, VehicleParams};
use crate::world::WorldConfig;

/// (De)serialises `f64` values that may be infinite as numbers or `"inf"`.
pub mod inf_f64 {
    use serde::de::{self, Deserializer};
    use serde::{Deserialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn parse(r: Repr) -> Result<f64, String> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                other => other.parse().map_err(|_| format!("expected a number or \"inf\", got `{s}`")),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        parse(Repr::deserialize(d)?).map_err(de::Error::custom)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                if x.is_infinite() && *x > 0.0 {
                    seq.serialize_element("inf")?;
                } else {
                    seq.serialize_element(x)?;
                }
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(|r| parse(r).map_err(de::Error::custom))
                .collect()
        }
    }
}

/// Which controller drives ramp vehicles inside the merging area.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// CACC with two-point steering.
    CaccTp,
    /// A trained policy (supplied separately).
    Rl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    // Run
    pub seed: u64,
    pub scheme: Scheme,
    pub controller: ControllerKind,
    /// Coupled run length after warm-up, s.
    pub duration_s: f64,
    /// Communication-only lead-in with stationary vehicles, ms.
    pub warmup_ms: u64,
    /// Communicating vehicles outside the controlled lanes.
    pub interference_vehicles: usize,
    /// Lateral position of the interference vehicles, m.
    pub interference_y: f64,
    pub interference_speed: f64,
    /// Ramp vehicles per run.
    pub ramp_vehicles: usize,
    pub density_min: f64,
    pub density_max: f64,
    pub init_speed_min: f64,
    pub init_speed_max: f64,
    pub exit_x: f64,
    /// Step cap of a training or evaluation episode.
    pub max_steps: u64,

    // Road and vehicle
    pub adjusting_length: f64,
    pub merging_length: f64,
    pub lane_width: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub wheelbase: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub delta_min_deg: f64,
    pub delta_max_deg: f64,
    pub control_period_ms: u64,

    // CACC and two-point steering
    pub cacc_k1: f64,
    pub cacc_gap_closing_kp: f64,
    pub cacc_gap_closing_kv: f64,
    pub cacc_gap_kp: f64,
    pub cacc_gap_kv: f64,
    pub cacc_collision_kp: f64,
    pub cacc_collision_kv: f64,
    pub time_headway: f64,
    pub desired_speed: f64,
    pub cacc_mode_band: f64,
    pub cacc_max_gap: f64,
    pub tp_k_near: f64,
    pub tp_k_far: f64,
    pub tp_d_near: f64,
    pub tp_d_far: f64,

    // Sidelink
    pub subchannels: u8,
    pub rsvp_ms: u32,
    pub t1: u32,
    pub t2: u32,
    pub sensing_ms: u32,
    pub p_th_init_dbm: f64,
    pub p_th_step_db: f64,
    pub keep_probability: f64,
    pub esb_overlap: Overlap,
    pub mcs: u8,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub path_loss_ref_db: f64,
    pub path_loss_exponent: f64,
    pub path_loss_ref_m: f64,
    pub sinr_threshold_db: f64,
    pub sensitivity_dbm: f64,
    pub shadowing_sigma_db: f64,
    pub lossless: bool,

    // Reward
    pub reward_fail_const: f64,
    pub reward_success_const: f64,
    pub reward_fail_x: f64,
    pub reward_fail_y: f64,
    pub reward_success_y: f64,
    pub reward_success_heading: f64,
    pub reward_success_accel: f64,
    pub reward_success_steer: f64,
    pub reward_ego_x: f64,
    pub reward_ego_y: f64,
    pub reward_ego_heading: f64,
    pub reward_ego_action: f64,
    pub reward_heading_sq: f64,
    pub reward_heading_rate: f64,
    pub reward_neighbor_pos: f64,
    pub reward_neighbor_vel: f64,
    pub reward_neighbor_gap: f64,
    pub sentinel_gap: f64,

    // PPO
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub buffer_size: usize,
    pub minibatch: usize,
    pub updates_per_epoch: usize,
    pub hidden: Vec<usize>,
    pub beta_transform: BetaTransform,
    pub normalize_advantages: bool,
    pub value_scale: f64,
    pub envs_per_round: usize,
    pub init_concentration: f64,
    pub epochs: u64,
    pub eval_episodes: u64,

    // Metrics
    #[serde(with = "inf_f64::vec")]
    pub aoi_thresholds_ms: Vec<f64>,
    #[serde(with = "inf_f64::vec")]
    pub error_thresholds_m: Vec<f64>,
    #[serde(with = "inf_f64::vec")]
    pub distances_m: Vec<f64>,
    /// Compare the speed-extrapolated packet position instead of the raw one.
    pub peor_corrected: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let w = WorldConfig::default();
        let v = VehicleParams::default();
        let g = CaccGains::default();
        let tp = TwoPointConfig::default();
        let grid = GridConfig::default();
        let mac = MacConfig::default();
        let ch = ChannelConfig::default();
        let r = RewardConfig::default();
        let ppo = PpoConfig::default();
        let env = EnvConfig::default();
        Self {
            seed: 1,
            scheme: mac.scheme,
            controller: ControllerKind::CaccTp,
            duration_s: 40.0,
            warmup_ms: 1500,
            interference_vehicles: 0,
            interference_y: 0.0,
            interference_speed: g.v_d,
            ramp_vehicles: w.ramp_vehicles.unwrap_or(6),
            density_min: w.density_min,
            density_max: w.density_max,
            init_speed_min: w.init_speed_min,
            init_speed_max: w.init_speed_max,
            exit_x: w.exit_x,
            max_steps: w.max_steps,

            adjusting_length: w.geo.adjusting_length,
            merging_length: w.geo.merging_length,
            lane_width: w.geo.lane_width,
            vehicle_length: v.length,
            vehicle_width: v.width,
            wheelbase: v.wheelbase,
            v_min: v.v_min,
            v_max: v.v_max,
            a_min: v.a_min,
            a_max: v.a_max,
            delta_min_deg: v.delta_min.to_degrees(),
            delta_max_deg: v.delta_max.to_degrees(),
            control_period_ms: (w.dt * 1000.0).round() as u64,

            cacc_k1: g.k1,
            cacc_gap_closing_kp: g.gap_closing.0,
            cacc_gap_closing_kv: g.gap_closing.1,
            cacc_gap_kp: g.gap.0,
            cacc_gap_kv: g.gap.1,
            cacc_collision_kp: g.collision_avoidance.0,
            cacc_collision_kv: g.collision_avoidance.1,
            time_headway: g.t_h,
            desired_speed: g.v_d,
            cacc_mode_band: g.mode_band,
            cacc_max_gap: g.max_gap,
            tp_k_near: tp.k_near,
            tp_k_far: tp.k_far,
            tp_d_near: tp.d_near,
            tp_d_far: tp.d_far,

            subchannels: grid.sc,
            rsvp_ms: grid.rsvp,
            t1: grid.t1,
            t2: grid.t2,
            sensing_ms: grid.sensing_len,
            p_th_init_dbm: mac.p_th_init_dbm,
            p_th_step_db: mac.p_th_step_db,
            keep_probability: mac.beta,
            esb_overlap: mac.esb_overlap,
            mcs: mac.mcs,
            tx_power_dbm: ch.tx_power_dbm,
            noise_dbm: ch.noise_dbm,
            path_loss_ref_db: ch.pl0_db,
            path_loss_exponent: ch.exponent,
            path_loss_ref_m: ch.d0,
            sinr_threshold_db: ch.sinr_threshold_db,
            sensitivity_dbm: ch.sensitivity_dbm,
            shadowing_sigma_db: ch.shadowing_sigma_db,
            lossless: ch.lossless,

            reward_fail_const: r.c_fail,
            reward_success_const: r.c_success,
            reward_fail_x: r.k_fail_x,
            reward_fail_y: r.k_fail_y,
            reward_success_y: r.k_success_y,
            reward_success_heading: r.k_success_theta,
            reward_success_accel: r.k_success_a,
            reward_success_steer: r.k_success_delta,
            reward_ego_x: r.k_ego_x,
            reward_ego_y: r.k_ego_y,
            reward_ego_heading: r.k_ego_theta,
            reward_ego_action: r.k_ego_act,
            reward_heading_sq: r.k_theta_sq,
            reward_heading_rate: r.k_theta_rate,
            reward_neighbor_pos: r.k_other_pos,
            reward_neighbor_vel: r.k_other_vel,
            reward_neighbor_gap: r.k_other_gap,
            sentinel_gap: env.sentinel_gap,

            gamma: ppo.gamma,
            clip_epsilon: ppo.epsilon,
            lr_policy: ppo.lr_policy,
            lr_value: ppo.lr_value,
            buffer_size: ppo.buffer_size,
            minibatch: ppo.minibatch,
            updates_per_epoch: ppo.updates_per_epoch,
            hidden: ppo.hidden.clone(),
            beta_transform: ppo.beta_transform,
            normalize_advantages: ppo.normalize_advantages,
            value_scale: ppo.value_scale,
            envs_per_round: ppo.envs_per_round,
            init_concentration: ppo.init_concentration,
            epochs: 2000,
            eval_episodes: 50,

            aoi_thresholds_ms: vec![25.0, 50.0, 100.0, 150.0, 200.0, 300.0],
            error_thresholds_m: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            distances_m: vec![50.0, 100.0, 200.0, f64::INFINITY],
            peor_corrected: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SimConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be finite and non-negative".into());
        }
        if self.control_period_ms == 0 || self.control_period_ms % u64::from(self.rsvp_ms.max(1)) != 0 {
            return bad(format!(
                "control_period_ms ({}) must be a positive multiple of rsvp_ms ({})",
                self.control_period_ms, self.rsvp_ms
            ));
        }
        if !(self.delta_min_deg < 0.0 && self.delta_max_deg > 0.0 && self.a_min < 0.0 && self.a_max > 0.0) {
            return bad("action bounds must straddle zero".into());
        }
        if !(self.v_min >= 0.0 && self.v_min < self.v_max) {
            return bad("speed bounds must satisfy 0 <= v_min < v_max".into());
        }
        if !(self.vehicle_length > 0.0 && self.vehicle_width > 0.0 && self.wheelbase > 0.0) {
            return bad("vehicle dimensions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.keep_probability) {
            return bad("keep_probability must lie in [0, 1]".into());
        }
        for (name, list) in [
            ("aoi_thresholds_ms", &self.aoi_thresholds_ms),
            ("error_thresholds_m", &self.error_thresholds_m),
            ("distances_m", &self.distances_m),
        ] {
            if list.is_empty() || list.iter().any(|v| v.is_nan() || *v < 0.0) {
                return bad(format!("{name} must be a non-empty list of non-negative values"));
            }
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        self.grid().validate()?;
        self.world().validate()?;
        self.ppo().validate()?;
        Ok(())
    }

    pub fn geometry(&self) -> RoadGeometry {
        RoadGeometry {
            adjusting_length: self.adjusting_length,
            merging_length: self.merging_length,
            lane_width: self.lane_width,
        }
    }

    pub fn vehicle(&self) -> VehicleParams {
        VehicleParams {
            length: self.vehicle_length,
            width: self.vehicle_width,
            wheelbase: self.wheelbase,
            v_min: self.v_min,
            v_max: self.v_max,
            a_min: self.a_min,
            a_max: self.a_max,
            delta_min: self.delta_min_deg.to_radians(),
            delta_max: self.delta_max_deg.to_radians(),
        }
    }

    pub fn cacc(&self) -> CaccGains {
        CaccGains {
            k1: self.cacc_k1,
            gap_closing: (self.cacc_gap_closing_kp, self.cacc_gap_closing_kv),
            gap: (self.cacc_gap_kp, self.cacc_gap_kv),
            collision_avoidance: (self.cacc_collision_kp, self.cacc_collision_kv),
            t_h: self.time_headway,
            v_d: self.desired_speed,
            mode_band: self.cacc_mode_band,
            max_gap: self.cacc_max_gap,
        }
    }

    pub fn two_point(&self) -> TwoPointConfig {
        TwoPointConfig {
            k_near: self.tp_k_near,
            k_far: self.tp_k_far,
            d_near: self.tp_d_near,
            d_far: self.tp_d_far,
        }
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            geo: self.geometry(),
            vehicle: self.vehicle(),
            cacc: self.cacc(),
            two_point: self.two_point(),
            dt: self.control_period_ms as f64 / 1000.0,
            density_min: self.density_min,
            density_max: self.density_max,
            init_speed_min: self.init_speed_min,
            init_speed_max: self.init_speed_max,
            ramp_vehicles: Some(self.ramp_vehicles),
            exit_x: self.exit_x,
            max_steps: self.max_steps,
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            sc: self.subchannels,
            rsvp: self.rsvp_ms,
            t1: self.t1,
            t2: self.t2,
            sensing_len: self.sensing_ms,
        }
    }

    pub fn mac(&self) -> MacConfig {
        MacConfig {
            scheme: self.scheme,
            p_th_init_dbm: self.p_th_init_dbm,
            p_th_step_db: self.p_th_step_db,
            beta: self.keep_probability,
            esb_overlap: self.esb_overlap,
            mcs: self.mcs,
        }
    }

    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig {
            pl0_db: self.path_loss_ref_db,
            exponent: self.path_loss_exponent,
            d0: self.path_loss_ref_m,
            noise_dbm: self.noise_dbm,
            sinr_threshold_db: self.sinr_threshold_db,
            sensitivity_dbm: self.sensitivity_dbm,
            tx_power_dbm: self.tx_power_dbm,
            shadowing_sigma_db: self.shadowing_sigma_db,
            shadowing_seed: self.seed,
            lossless: self.lossless,
        }
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            c_fail: self.reward_fail_const,
            c_success: self.reward_success_const,
            k_fail_x: self.reward_fail_x,
            k_fail_y: self.reward_fail_y,
            k_success_y: self.reward_success_y,
            k_success_theta: self.reward_success_heading,
            k_success_a: self.reward_success_accel,
            k_success_delta: self.reward_success_steer,
            k_ego_x: self.reward_ego_x,
            k_ego_y: self.reward_ego_y,
            k_ego_theta: self.reward_ego_heading,
            k_ego_act: self.reward_ego_action,
            k_theta_sq: self.reward_heading_sq,
            k_theta_rate: self.reward_heading_rate,
            k_other_pos: self.reward_neighbor_pos,
            k_other_vel: self.reward_neighbor_vel,
            k_other_gap: self.reward_neighbor_gap,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            world: self.world(),
            reward: self.reward(),
            sentinel_gap: self.sentinel_gap,
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            epsilon: self.clip_epsilon,
            lr_policy: self.lr_policy,
            lr_value: self.lr_value,
            buffer_size: self.buffer_size,
            minibatch: self.minibatch,
            updates_per_epoch: self.updates_per_epoch,
            hidden: self.hidden.clone(),
            beta_transform: self.beta_transform,
            normalize_advantages: self.normalize_advantages,
            value_scale: self.value_scale,
            envs_per_round: self.envs_per_round,
            init_concentration: self.init_concentration,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(SimConfig::from_toml("").unwrap(), SimConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = SimConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(SimConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn accepts_inf_in_either_spelling() {
        let c = SimConfig::from_toml("distances_m = [50, inf]\naoi_thresholds_ms = [25.0, \"inf\"]").unwrap();
        assert_eq!(c.distances_m, vec![50.0, f64::INFINITY]);
        assert_eq!(c.aoi_thresholds_ms, vec![25.0, f64::INFINITY]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(SimConfig::from_toml("no_such_key = 1"), Err(Error::Toml(_))));
        assert!(matches!(SimConfig::from_toml("t2 = 500"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::from_toml("control_period_ms = 30"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::from_toml("scheme = \"fancy\""), Err(Error::Toml(_))));
    }

    #[test]
    fn defaults_match_component_defaults() {
        let c = SimConfig::default();
        assert_eq!(c.world(), WorldConfig::default());
        assert_eq!(c.grid(), GridConfig::default());
        assert_eq!(c.mac(), MacConfig::default());
        assert_eq!(c.reward(), RewardConfig::default());
        assert_eq!(c.ppo(), PpoConfig::default());
        let mut ch = ChannelConfig::default();
        ch.shadowing_seed = c.seed;
        assert_eq!(c.channel(), ch);
    }
}
