//! Satellite geometry: element sets, two-body propagation, terminal visibility,
//! propagation delay and the delay-based serving-satellite schedule.
//!
//! Propagation is a circular two-body model. It keeps the handover timing
//! structure of a sparse constellation (minutes between serving changes)
//! without perturbation terms; TLE input is accepted for its mean elements.

mod constellation;
mod schedule;
mod tle;

pub use constellation::{apply_maneuvers, synthesize_walker, Constellation, ManeuverSpec, Satellite, Topology};
pub use schedule::{handover_seconds, serving_schedule, ServingSchedule, ISL_HOP_DELAY_MS};
pub use tle::{parse_tle, TleParse, TleRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Standard gravitational parameter of Earth, km^3/s^2.
pub const MU_EARTH: f64 = 398_600.4418;
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;
/// Sidereal rotation rate used for terminal positions.
pub const EARTH_ROTATION_DEG_PER_S: f64 = 360.0 / 86_164.0;

pub const MIN_ALTITUDE_KM: f64 = 300.0;
pub const MAX_ALTITUDE_KM: f64 = 2000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitalError {
    #[error("no valid two-line element records in input")]
    EmptyInput,
    #[error("invalid constellation geometry: {0}")]
    InvalidGeometry(String),
    #[error("altitude {0:.1} km outside [300, 2000] km")]
    AltitudeOutOfRange(f64),
    #[error("unknown satellite id {0}")]
    UnknownSatellite(usize),
    #[error("invalid ground terminal: {0}")]
    InvalidTerminal(String),
}

/// Earth-centred Cartesian vector in km.
pub type Vec3 = [f64; 3];

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Circular-orbit mean elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitalElements {
    /// km
    pub semi_major_axis: f64,
    /// degrees
    pub inclination: f64,
    /// Right ascension of the ascending node, degrees.
    pub raan: f64,
    /// degrees
    pub mean_anomaly_at_epoch: f64,
    /// Simulation time origin of the mean anomaly, seconds.
    pub epoch: f64,
}

impl OrbitalElements {
    pub fn new(
        semi_major_axis: f64,
        inclination: f64,
        raan: f64,
        mean_anomaly_at_epoch: f64,
        epoch: f64,
    ) -> Result<Self, OrbitalError> {
        let altitude = semi_major_axis - EARTH_RADIUS_KM;
        if !(MIN_ALTITUDE_KM..=MAX_ALTITUDE_KM).contains(&altitude) || !altitude.is_finite() {
            return Err(OrbitalError::AltitudeOutOfRange(altitude));
        }
        Ok(Self {
            semi_major_axis,
            inclination: wrap_degrees(inclination),
            raan: wrap_degrees(raan),
            mean_anomaly_at_epoch: wrap_degrees(mean_anomaly_at_epoch),
            epoch,
        })
    }

    pub fn from_altitude(altitude_km: f64, inclination: f64, raan: f64, mean_anomaly: f64) -> Result<Self, OrbitalError> {
        Self::new(EARTH_RADIUS_KM + altitude_km, inclination, raan, mean_anomaly, 0.0)
    }

    pub fn altitude(&self) -> f64 {
        self.semi_major_axis - EARTH_RADIUS_KM
    }

    /// Mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        (MU_EARTH / self.semi_major_axis.powi(3)).sqrt()
    }

    /// Orbital period in seconds.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion()
    }
}

/// Position of a satellite on its circular orbit at simulation time `t` seconds.
pub fn propagate(elements: &OrbitalElements, t: f64) -> Vec3 {
    let dt = t - elements.epoch;
    // argument of latitude; reduce the advance modulo one revolution first so
    // that whole periods cancel exactly in floating point
    let advance = (elements.mean_motion() * dt).rem_euclid(std::f64::consts::TAU);
    let u = elements.mean_anomaly_at_epoch.to_radians() + advance;
    let a = elements.semi_major_axis;
    let (su, cu) = u.sin_cos();
    let (si, ci) = elements.inclination.to_radians().sin_cos();
    let (so, co) = elements.raan.to_radians().sin_cos();

    // in-plane -> inclined (rotate about x) -> RAAN (rotate about z)
    let x = a * cu;
    let y = a * su * ci;
    let z = a * su * si;
    [x * co - y * so, x * so + y * co, z]
}

/// A user terminal on the Earth's surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTerminal {
    #[serde(default)]
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default = "default_min_elevation")]
    pub min_elevation: f64,
}

fn default_min_elevation() -> f64 {
    GroundTerminal::DEFAULT_MIN_ELEVATION
}

impl GroundTerminal {
    pub const DEFAULT_MIN_ELEVATION: f64 = 25.0;

    pub fn new(latitude: f64, longitude: f64, min_elevation: f64) -> Result<Self, OrbitalError> {
        let t = Self {
            name: String::new(),
            latitude,
            longitude,
            min_elevation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self) -> Result<(), OrbitalError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(OrbitalError::InvalidTerminal(format!("latitude {}", self.latitude)));
        }
        if !(-180.0..180.0).contains(&self.longitude) {
            return Err(OrbitalError::InvalidTerminal(format!("longitude {}", self.longitude)));
        }
        if !(self.min_elevation > 0.0 && self.min_elevation < 90.0) {
            return Err(OrbitalError::InvalidTerminal(format!(
                "min_elevation {}",
                self.min_elevation
            )));
        }
        Ok(())
    }

    /// Inertial position at time `t`, including Earth rotation.
    pub fn position(&self, t: f64) -> Vec3 {
        let lat = self.latitude.to_radians();
        let lon = (self.longitude + EARTH_ROTATION_DEG_PER_S * t).to_radians();
        let r = EARTH_RADIUS_KM;
        [r * lat.cos() * lon.cos(), r * lat.cos() * lon.sin(), r * lat.sin()]
    }
}

/// Elevation (degrees) of a satellite above the terminal's local horizon and
/// the slant range (km) between them.
pub fn elevation_and_range(sat_position: Vec3, terminal: &GroundTerminal, t: f64) -> (f64, f64) {
    let ground = terminal.position(t);
    let d = [
        sat_position[0] - ground[0],
        sat_position[1] - ground[1],
        sat_position[2] - ground[2],
    ];
    let range = norm(d);
    if range == 0.0 {
        return (90.0, 0.0);
    }
    let up = norm(ground);
    let sin_el = (dot(d, ground) / (range * up)).clamp(-1.0, 1.0);
    (sin_el.asin().to_degrees(), range)
}

/// One-way propagation delay in milliseconds over a slant range in km.
pub fn propagation_delay(slant_range_km: f64) -> f64 {
    slant_range_km / SPEED_OF_LIGHT_KM_S * 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn epoch_identity() {
        let e = OrbitalElements::new(6921.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let p = propagate(&e, 0.0);
        assert_relative_eq!(p[0], 6921.0, epsilon = 1e-9);
        assert_relative_eq!(p[1], 0.0, epsilon = 1e-9);
        assert_relative_eq!(p[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn period_at_550_km() {
        // T = 2*pi*sqrt(a^3/mu), evaluated independently: 5730.13 s for a = 6921 km
        let e = OrbitalElements::from_altitude(550.0, 53.0, 0.0, 0.0).unwrap();
        let t = 2.0 * std::f64::consts::PI * (6921.0f64.powi(3) / 398_600.4418).sqrt();
        assert_relative_eq!(e.period(), t, max_relative = 1e-12);
        assert!((e.period() - 5730.127).abs() < 1e-3);
    }

    #[test]
    fn full_period_closes() {
        let e = OrbitalElements::new(6921.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let p0 = propagate(&e, 0.0);
        let p1 = propagate(&e, e.period());
        let d = norm([p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]]);
        assert!(d < 1e-6, "drift {d} km");
    }

    #[test]
    fn polar_orbit_quarter_turn_hits_pole() {
        let e = OrbitalElements::new(6921.0, 90.0, 0.0, 90.0, 0.0).unwrap();
        let p = propagate(&e, 0.0);
        assert!(p[0].abs() / 6921.0 < 1e-9);
        assert!(p[1].abs() / 6921.0 < 1e-9);
        assert_relative_eq!(p[2], 6921.0, max_relative = 1e-9);
    }

    #[test]
    fn angles_normalized() {
        let e = OrbitalElements::new(6921.0, -10.0, 370.0, 720.0, 0.0).unwrap();
        assert_eq!(e.inclination, 350.0);
        assert_eq!(e.raan, 10.0);
        assert_eq!(e.mean_anomaly_at_epoch, 0.0);
        assert!(OrbitalElements::from_altitude(100.0, 0.0, 0.0, 0.0).is_err());
        assert!(OrbitalElements::from_altitude(2500.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn zenith_and_horizon() {
        let term = GroundTerminal::new(0.0, 0.0, 25.0).unwrap();
        let (el, range) = elevation_and_range([6921.0, 0.0, 0.0], &term, 0.0);
        assert_eq!(el, 90.0);
        assert_relative_eq!(range, 550.0, epsilon = 1e-9);

        // any point on the tangent plane x = R is at zero elevation
        let (el, _) = elevation_and_range([6371.0, 1500.0, 0.0], &term, 0.0);
        assert_eq!(el, 0.0);
    }

    #[test]
    fn slant_range_at_25_degrees() {
        // law of cosines: rho = -R sin(el) + sqrt((R sin(el))^2 + h^2 + 2 R h)
        let r = EARTH_RADIUS_KM;
        let h = 550.0;
        let el = 25f64.to_radians();
        let rho = -r * el.sin() + ((r * el.sin()).powi(2) + h * h + 2.0 * r * h).sqrt();
        assert!((rho - 1123.0).abs() < 1.0, "{rho}");

        // place a satellite at that geometry: nadir angle from the terminal
        let central = (std::f64::consts::FRAC_PI_2 - el) - (r * el.cos() / (r + h)).asin();
        let sat = [(r + h) * central.cos(), (r + h) * central.sin(), 0.0];
        let term = GroundTerminal::new(0.0, 0.0, 25.0).unwrap();
        let (got_el, got_range) = elevation_and_range(sat, &term, 0.0);
        assert_relative_eq!(got_el, 25.0, epsilon = 1e-9);
        assert_relative_eq!(got_range, rho, epsilon = 1e-6);
    }

    #[test]
    fn earth_rotation_moves_terminal() {
        let term = GroundTerminal::new(0.0, 0.0, 25.0).unwrap();
        let p = term.position(86_164.0 / 4.0);
        assert!(p[0].abs() < 1e-6);
        assert_relative_eq!(p[1], EARTH_RADIUS_KM, epsilon = 1e-6);
    }

    #[test]
    fn delays() {
        assert_eq!(propagation_delay(0.0), 0.0);
        assert!((propagation_delay(550.0) - 1.834).abs() < 1e-3);
        assert!((propagation_delay(1123.0) - 3.746).abs() < 1e-3);
    }

    #[test]
    fn terminal_validation() {
        assert!(GroundTerminal::new(91.0, 0.0, 25.0).is_err());
        assert!(GroundTerminal::new(0.0, 180.0, 25.0).is_err());
        assert!(GroundTerminal::new(0.0, 0.0, 0.0).is_err());
        assert!(GroundTerminal::new(0.0, -180.0, 89.0).is_ok());
    }
}
