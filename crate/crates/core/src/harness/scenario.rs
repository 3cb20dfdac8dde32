use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::netsim::{build_link_trace, LinkParams, LinkTrace};
use crate::orbital::{apply_maneuvers, serving_schedule, synthesize_walker, GroundTerminal, ManeuverSpec, ServingSchedule};
use crate::rtc::SEGMENT_SECONDS;

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstellationParams {
    pub planes: usize,
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub min_elevation_deg: f64,
    pub hysteresis_ms: f64,
}

impl Default for ConstellationParams {
    fn default() -> Self {
        Self {
            planes: 10,
            sats_per_plane: 8,
            altitude_km: 1800.0,
            inclination_deg: 53.0,
            min_elevation_deg: 10.0,
            hysteresis_ms: 2.0,
        }
    }
}

/// Per-call random maneuvers: each satellite is picked with probability
/// `fraction` and gets an altitude drop, a plane change and a phase shift
/// drawn uniformly, applied at the start of the call or at a random second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomManeuvers {
    pub fraction: f64,
    pub max_altitude_drop_km: f64,
    pub max_raan_deg: f64,
    pub max_phase_deg: f64,
}

impl Default for RandomManeuvers {
    fn default() -> Self {
        Self {
            fraction: 1.0,
            max_altitude_drop_km: 400.0,
            max_raan_deg: 30.0,
            max_phase_deg: 40.0,
        }
    }
}

impl RandomManeuvers {
    fn draw(&self, sats: usize, duration: usize, rng: &mut ChaCha8Rng) -> Vec<ManeuverSpec> {
        let mut out = Vec::new();
        for id in 0..sats {
            if rng.gen::<f64>() >= self.fraction {
                continue;
            }
            let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.gen_range(-m..m) } else { 0.0 };
            let delta_altitude = if self.max_altitude_drop_km > 0.0 {
                -rng.gen_range(0.0..self.max_altitude_drop_km)
            } else {
                0.0
            };
            let delta_raan = sym(rng, self.max_raan_deg);
            let delta_mean_anomaly = sym(rng, self.max_phase_deg);
            let apply_time = if rng.gen::<bool>() {
                0.0
            } else {
                rng.gen_range(0.0..duration as f64)
            };
            out.push(ManeuverSpec {
                target_sat_ids: vec![id],
                delta_altitude,
                delta_raan,
                delta_mean_anomaly,
                apply_time,
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
}

const CITIES: [(&str, f64, f64); 20] = [
    ("New York", 40.71, -74.01),
    ("London", 51.51, -0.13),
    ("Tokyo", 35.68, 139.69),
    ("Sydney", -33.87, 151.21),
    ("Paris", 48.86, 2.35),
    ("Mexico City", 19.43, -99.13),
    ("Sao Paulo", -23.55, -46.63),
    ("Delhi", 28.61, 77.21),
    ("Shanghai", 31.23, 121.47),
    ("Moscow", 55.76, 37.62),
    ("Cairo", 30.04, 31.24),
    ("Lagos", 6.52, 3.38),
    ("Nairobi", -1.29, 36.82),
    ("Singapore", 1.35, 103.82),
    ("Seoul", 37.57, 126.98),
    ("Los Angeles", 34.05, -118.24),
    ("Chicago", 41.88, -87.63),
    ("Toronto", 43.65, -79.38),
    ("Buenos Aires", -34.60, -58.38),
    ("Dubai", 25.20, 55.27),
];

pub fn default_cities() -> Vec<City> {
    CITIES
        .iter()
        .map(|&(name, latitude, longitude)| City {
            name: name.to_string(),
            latitude,
            longitude,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub call_duration_s: usize,
    pub calls: usize,
    pub seed: u64,
    pub constellation: ConstellationParams,
    /// Fixed maneuvers applied to every call.
    pub maneuvers: Vec<ManeuverSpec>,
    /// Fresh random maneuvers drawn for each call.
    pub random_maneuvers: Option<RandomManeuvers>,
    pub city_pool: Vec<City>,
    pub link: LinkParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::ideal()
    }
}

impl ScenarioConfig {
    /// 80 satellites, no maneuvers.
    pub fn ideal() -> Self {
        Self {
            name: "ideal".into(),
            call_duration_s: 480,
            calls: 100,
            seed: 1,
            constellation: ConstellationParams::default(),
            maneuvers: Vec::new(),
            random_maneuvers: None,
            city_pool: default_cities(),
            link: LinkParams::default(),
        }
    }

    /// 100 satellites with altitude, plane and phasing maneuvers.
    pub fn dynamic() -> Self {
        Self {
            name: "dynamic".into(),
            constellation: ConstellationParams {
                sats_per_plane: 10,
                ..ConstellationParams::default()
            },
            random_maneuvers: Some(RandomManeuvers::default()),
            seed: 2,
            ..Self::ideal()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ideal" => Some(Self::ideal()),
            "dynamic" => Some(Self::dynamic()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serialises")
    }

    pub fn segments_per_call(&self) -> usize {
        self.call_duration_s / SEGMENT_SECONDS
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.call_duration_s < SEGMENT_SECONDS || self.call_duration_s % SEGMENT_SECONDS != 0 {
            return bad(format!(
                "call_duration_s {} must be a positive multiple of {SEGMENT_SECONDS}",
                self.call_duration_s
            ));
        }
        if self.city_pool.len() < 2 {
            return bad("city_pool needs at least two cities".into());
        }
        for c in &self.city_pool {
            GroundTerminal::new(c.latitude, c.longitude, self.constellation.min_elevation_deg)?;
        }
        if self.constellation.hysteresis_ms < 0.0 {
            return bad("hysteresis_ms must be non-negative".into());
        }
        if let Some(m) = &self.random_maneuvers {
            if !(0.0..=1.0).contains(&m.fraction) {
                return bad(format!("random_maneuvers.fraction {} not in [0, 1]", m.fraction));
            }
        }
        self.link.validate()?;
        Ok(())
    }
}

/// SplitMix64 finaliser; spreads call ids into independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything that defines one call's network conditions. Arms of an A/B
/// share the same `CallEnv`.
#[derive(Debug, Clone)]
pub struct CallEnv {
    pub call_id: usize,
    pub scenario: String,
    pub src: GroundTerminal,
    pub dst: GroundTerminal,
    pub schedule: ServingSchedule,
    pub trace: LinkTrace,
    /// Seed for the sender simulation.
    pub rtc_seed: u64,
}

/// Builds the call environment for `call_id`: a city pair, a time of day,
/// the constellation (with this call's maneuvers) and the link trace.
pub fn build_call_env(cfg: &ScenarioConfig, call_id: usize) -> Result<CallEnv, HarnessError> {
    let seed = mix_seed(cfg.seed, call_id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = &cfg.city_pool;
    let a = rng.gen_range(0..pool.len());
    let b = (a + rng.gen_range(1..pool.len())) % pool.len();
    let terminal = |c: &City| -> Result<GroundTerminal, HarnessError> {
        Ok(GroundTerminal::new(c.latitude, c.longitude, cfg.constellation.min_elevation_deg)?.named(c.name.clone()))
    };
    let (src, dst) = (terminal(&pool[a])?, terminal(&pool[b])?);

    let p = &cfg.constellation;
    let mut constellation = synthesize_walker(p.planes, p.sats_per_plane, p.altitude_km, p.inclination_deg, rng.gen())?;
    // start the call at a random time of day so the Earth's rotation varies
    let time_of_day = rng.gen_range(0.0..SECONDS_PER_DAY);
    for sat in &mut constellation.satellites {
        sat.elements.epoch = -time_of_day;
    }
    let mut maneuvers = cfg.maneuvers.clone();
    if let Some(m) = &cfg.random_maneuvers {
        maneuvers.extend(m.draw(constellation.len(), cfg.call_duration_s, &mut rng));
    }
    if !maneuvers.is_empty() {
        constellation = apply_maneuvers(&constellation, &maneuvers)?;
    }
    let schedule = serving_schedule(&constellation, &src, &dst, cfg.call_duration_s, p.hysteresis_ms);
    let trace = build_link_trace(&schedule, &cfg.link, rng.gen())?;
    Ok(CallEnv {
        call_id,
        scenario: cfg.name.clone(),
        src,
        dst,
        schedule,
        trace,
        rtc_seed: rng.gen(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_paper_sizes() {
        let i = ScenarioConfig::ideal();
        assert_eq!(i.constellation.planes * i.constellation.sats_per_plane, 80);
        assert!(i.random_maneuvers.is_none() && i.maneuvers.is_empty());
        let d = ScenarioConfig::dynamic();
        assert_eq!(d.constellation.planes * d.constellation.sats_per_plane, 100);
        assert!(d.random_maneuvers.is_some());
        assert_eq!(i.city_pool.len(), 20);
        assert_eq!(i.segments_per_call(), 4);
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let d = ScenarioConfig::dynamic();
        assert_eq!(ScenarioConfig::from_toml_str(&d.to_toml_string()).unwrap(), d);
        let partial = ScenarioConfig::from_toml_str("name = \"x\"\ncalls = 3\n[constellation]\nplanes = 12\n").unwrap();
        assert_eq!(partial.calls, 3);
        assert_eq!(partial.constellation.planes, 12);
        assert_eq!(partial.constellation.sats_per_plane, 8);
    }

    #[test]
    fn bad_duration_rejected() {
        assert!(ScenarioConfig::from_toml_str("call_duration_s = 300").is_err());
        assert!(ScenarioConfig::from_toml_str("call_duration_s = 60").is_err());
    }

    #[test]
    fn call_env_is_deterministic_and_pairs_distinct_cities() {
        let cfg = ScenarioConfig::dynamic();
        for id in 0..3 {
            let a = build_call_env(&cfg, id).unwrap();
            let b = build_call_env(&cfg, id).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.rtc_seed, b.rtc_seed);
            assert_ne!(a.src.name, a.dst.name);
            assert_eq!(a.trace.duration, 480);
        }
    }
}
