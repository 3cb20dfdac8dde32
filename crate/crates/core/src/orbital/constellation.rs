use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{propagate, wrap_degrees, OrbitalElements, OrbitalError, Vec3, EARTH_RADIUS_KM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Topology {
    /// Each satellite links to its in-plane neighbours and to the same slot
    /// in the adjacent planes.
    #[default]
    GridPlus,
}

/// A satellite with its nominal elements and any element changes that take
/// effect at later simulation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Satellite {
    pub id: usize,
    pub plane: usize,
    pub slot: usize,
    pub elements: OrbitalElements,
    /// `(apply_time, elements)` sorted by time.
    #[serde(default)]
    pub phases: Vec<(f64, OrbitalElements)>,
}

impl Satellite {
    /// Elements in effect at time `t`.
    pub fn elements_at(&self, t: f64) -> &OrbitalElements {
        self.phases
            .iter()
            .rev()
            .find(|(at, _)| *at <= t)
            .map(|(_, e)| e)
            .unwrap_or(&self.elements)
    }

    pub fn position(&self, t: f64) -> Vec3 {
        propagate(self.elements_at(t), t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    pub planes: usize,
    pub sats_per_plane: usize,
    pub satellites: Vec<Satellite>,
    #[serde(default)]
    pub topology: Topology,
}

impl Constellation {
    /// Builds a constellation from explicit satellites. Ids must be dense
    /// `0..N` in order and `planes * sats_per_plane == N`.
    pub fn new(planes: usize, sats_per_plane: usize, satellites: Vec<Satellite>) -> Result<Self, OrbitalError> {
        if planes * sats_per_plane != satellites.len() {
            return Err(OrbitalError::InvalidGeometry(format!(
                "{planes} planes x {sats_per_plane} satellites != {}",
                satellites.len()
            )));
        }
        for (i, s) in satellites.iter().enumerate() {
            if s.id != i {
                return Err(OrbitalError::InvalidGeometry(format!("satellite ids not dense at index {i}")));
            }
            if s.plane >= planes || s.slot >= sats_per_plane {
                return Err(OrbitalError::InvalidGeometry(format!("satellite {i} outside grid")));
            }
        }
        Ok(Self {
            planes,
            sats_per_plane,
            satellites,
            topology: Topology::GridPlus,
        })
    }

    /// Groups TLE-derived elements into a grid: sorted by RAAN into `planes`
    /// equal groups, then by mean anomaly within each group.
    pub fn from_elements(elements: &[OrbitalElements], planes: usize) -> Result<Self, OrbitalError> {
        if planes == 0 || elements.is_empty() || elements.len() % planes != 0 {
            return Err(OrbitalError::InvalidGeometry(format!(
                "{} satellites do not split into {planes} planes",
                elements.len()
            )));
        }
        let spp = elements.len() / planes;
        let mut sorted: Vec<OrbitalElements> = elements.to_vec();
        sorted.sort_by(|a, b| a.raan.total_cmp(&b.raan));
        let mut satellites = Vec::with_capacity(sorted.len());
        for (p, chunk) in sorted.chunks_mut(spp).enumerate() {
            chunk.sort_by(|a, b| a.mean_anomaly_at_epoch.total_cmp(&b.mean_anomaly_at_epoch));
            for (s, e) in chunk.iter().enumerate() {
                satellites.push(Satellite {
                    id: satellites.len(),
                    plane: p,
                    slot: s,
                    elements: *e,
                    phases: Vec::new(),
                });
            }
        }
        Self::new(planes, spp, satellites)
    }

    pub fn len(&self) -> usize {
        self.satellites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.satellites.is_empty()
    }

    /// Shortest grid+ path length in ISL hops; planes and slots wrap around.
    pub fn hop_count(&self, a: usize, b: usize) -> u32 {
        let (sa, sb) = (&self.satellites[a], &self.satellites[b]);
        let ring = |x: usize, y: usize, n: usize| {
            let d = x.abs_diff(y);
            d.min(n - d) as u32
        };
        ring(sa.plane, sb.plane, self.planes) + ring(sa.slot, sb.slot, self.sats_per_plane)
    }
}

/// Walker-style constellation: RAANs spaced `360/planes`, mean anomalies
/// spaced `360/sats_per_plane` within a plane with an inter-plane phase step of
/// `360/(planes * sats_per_plane)`. The seed picks a common along-track offset
/// below one phase step, which leaves the plane layout intact.
pub fn synthesize_walker(
    planes: usize,
    sats_per_plane: usize,
    altitude_km: f64,
    inclination: f64,
    seed: u64,
) -> Result<Constellation, OrbitalError> {
    if planes < 2 || sats_per_plane < 2 {
        return Err(OrbitalError::InvalidGeometry(format!(
            "need at least 2 planes and 2 satellites per plane, got {planes} x {sats_per_plane}"
        )));
    }
    let total = planes * sats_per_plane;
    let phase_step = 360.0 / total as f64;
    let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..phase_step);
    let mut satellites = Vec::with_capacity(total);
    for p in 0..planes {
        let raan = 360.0 * p as f64 / planes as f64;
        for s in 0..sats_per_plane {
            let ma = offset + 360.0 * s as f64 / sats_per_plane as f64 + phase_step * p as f64;
            let elements = OrbitalElements::new(EARTH_RADIUS_KM + altitude_km, inclination, raan, ma, 0.0)?;
            satellites.push(Satellite {
                id: satellites.len(),
                plane: p,
                slot: s,
                elements,
                phases: Vec::new(),
            });
        }
    }
    Constellation::new(planes, sats_per_plane, satellites)
}

/// Altitude, plane (RAAN) and phasing (mean anomaly) change applied to a set of
/// satellites from `apply_time` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSpec {
    pub target_sat_ids: Vec<usize>,
    #[serde(default)]
    pub delta_altitude: f64,
    #[serde(default)]
    pub delta_raan: f64,
    #[serde(default)]
    pub delta_mean_anomaly: f64,
    #[serde(default)]
    pub apply_time: f64,
}

/// Returns a copy of the constellation with the maneuvers scheduled. Each
/// maneuver perturbs whatever elements are in effect at its apply time.
pub fn apply_maneuvers(constellation: &Constellation, specs: &[ManeuverSpec]) -> Result<Constellation, OrbitalError> {
    let mut out = constellation.clone();
    for spec in specs {
        for &id in &spec.target_sat_ids {
            let sat = out.satellites.get_mut(id).ok_or(OrbitalError::UnknownSatellite(id))?;
            let base = *sat.elements_at(spec.apply_time);
            let moved = OrbitalElements::new(
                base.semi_major_axis + spec.delta_altitude,
                base.inclination,
                wrap_degrees(base.raan + spec.delta_raan),
                wrap_degrees(base.mean_anomaly_at_epoch + spec.delta_mean_anomaly),
                base.epoch,
            )?;
            let at = sat.phases.partition_point(|(t, _)| *t <= spec.apply_time);
            sat.phases.insert(at, (spec.apply_time, moved));
        }
    }
    Ok(out)
}
