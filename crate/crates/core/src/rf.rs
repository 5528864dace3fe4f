//! RF resource pool: LTE channel arithmetic and carrier assignment.
//!
//! Carriers are granted on a per-band raster. Two carriers at the same site
//! may not overlap (nominal channel widths, edge to edge, no guard band);
//! carriers at different sites may reuse the same frequencies.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Hertz = u64;

/// Subcarrier spacing of the LTE downlink grid.
pub const SUBCARRIER_SPACING_HZ: Hertz = 15_000;
/// Subcarriers per resource block.
pub const SUBCARRIERS_PER_RB: u32 = 12;
/// Default channel raster.
pub const DEFAULT_RASTER_HZ: Hertz = 100_000;

/// An LTE channel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bandwidth {
    Mhz1_4,
    Mhz3,
    Mhz5,
    Mhz10,
    Mhz15,
    Mhz20,
}

impl Bandwidth {
    pub const ALL: [Bandwidth; 6] = [
        Bandwidth::Mhz1_4,
        Bandwidth::Mhz3,
        Bandwidth::Mhz5,
        Bandwidth::Mhz10,
        Bandwidth::Mhz15,
        Bandwidth::Mhz20,
    ];

    pub fn from_mhz(mhz: f64) -> Result<Self, RfError> {
        Self::ALL
            .into_iter()
            .find(|b| (b.mhz() - mhz).abs() < 1e-9)
            .ok_or(RfError::UnknownBandwidth(mhz))
    }

    pub fn from_hz(hz: Hertz) -> Result<Self, RfError> {
        Self::ALL
            .into_iter()
            .find(|b| b.hz() == hz)
            .ok_or(RfError::UnknownBandwidth(hz as f64 / 1e6))
    }

    pub fn mhz(self) -> f64 {
        match self {
            Bandwidth::Mhz1_4 => 1.4,
            Bandwidth::Mhz3 => 3.0,
            Bandwidth::Mhz5 => 5.0,
            Bandwidth::Mhz10 => 10.0,
            Bandwidth::Mhz15 => 15.0,
            Bandwidth::Mhz20 => 20.0,
        }
    }

    pub fn hz(self) -> Hertz {
        match self {
            Bandwidth::Mhz1_4 => 1_400_000,
            Bandwidth::Mhz3 => 3_000_000,
            Bandwidth::Mhz5 => 5_000_000,
            Bandwidth::Mhz10 => 10_000_000,
            Bandwidth::Mhz15 => 15_000_000,
            Bandwidth::Mhz20 => 20_000_000,
        }
    }

    /// Transmission bandwidth configuration in resource blocks.
    pub fn resource_blocks(self) -> u32 {
        match self {
            Bandwidth::Mhz1_4 => 6,
            Bandwidth::Mhz3 => 15,
            Bandwidth::Mhz5 => 25,
            Bandwidth::Mhz10 => 50,
            Bandwidth::Mhz15 => 75,
            Bandwidth::Mhz20 => 100,
        }
    }

    pub fn rb_config(self) -> RbConfig {
        let n_rb = self.resource_blocks();
        RbConfig {
            bandwidth: self,
            n_rb,
            subcarriers: rbs_to_subcarriers(n_rb),
            subcarrier_spacing_hz: SUBCARRIER_SPACING_HZ,
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} MHz", self.mhz())
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.mhz())
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mhz = f64::deserialize(d)?;
        Bandwidth::from_mhz(mhz).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbConfig {
    pub bandwidth: Bandwidth,
    pub n_rb: u32,
    pub subcarriers: u32,
    pub subcarrier_spacing_hz: Hertz,
}

pub fn bandwidth_to_rbs(bandwidth_mhz: f64) -> Result<u32, RfError> {
    Bandwidth::from_mhz(bandwidth_mhz).map(Bandwidth::resource_blocks)
}

pub fn rbs_to_subcarriers(n_rb: u32) -> u32 {
    SUBCARRIERS_PER_RB * n_rb
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RfError {
    #[error("bandwidth {0} MHz is not an LTE channel bandwidth")]
    UnknownBandwidth(f64),
    #[error("no spectrum available for a {bw_hz} Hz carrier")]
    NoSpectrum { bw_hz: Hertz },
    #[error("frontend {0} already carries an active carrier")]
    FrontendBusy(String),
    #[error("no RF frontend available")]
    NoFrontend,
    #[error("unknown frontend {0}")]
    UnknownFrontend(String),
    #[error("unknown band {0}")]
    UnknownBand(String),
    #[error("carrier of {bw_hz} Hz exceeds frontend {frontend} max bandwidth")]
    TooWide { frontend: String, bw_hz: Hertz },
    #[error("assignment {0} not found")]
    NotFound(u64),
    #[error("invalid band {0}")]
    InvalidBand(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumBand {
    pub band_id: String,
    pub low_hz: Hertz,
    pub high_hz: Hertz,
    #[serde(default = "default_raster")]
    pub raster_hz: Hertz,
}

fn default_raster() -> Hertz {
    DEFAULT_RASTER_HZ
}

impl SpectrumBand {
    pub fn validate(&self) -> Result<(), RfError> {
        let ok = self.low_hz < self.high_hz
            && self.raster_hz > 0
            && self.high_hz - self.low_hz >= Bandwidth::Mhz1_4.hz();
        if ok {
            Ok(())
        } else {
            Err(RfError::InvalidBand(self.band_id.clone()))
        }
    }

    pub fn width_hz(&self) -> Hertz {
        self.high_hz - self.low_hz
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfFrontend {
    pub frontend_id: String,
    pub site_id: String,
    pub freq_min_hz: Hertz,
    pub freq_max_hz: Hertz,
    pub max_bw_hz: Hertz,
}

impl RfFrontend {
    pub fn is_valid(&self) -> bool {
        self.freq_min_hz < self.freq_max_hz && self.max_bw_hz <= self.freq_max_hz - self.freq_min_hz
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarrierAssignment {
    pub assignment_id: u64,
    pub band_id: String,
    pub frontend_id: String,
    pub site_id: String,
    pub center_hz: Hertz,
    pub bw_hz: Hertz,
    pub owner_ns_id: String,
}

impl CarrierAssignment {
    pub fn low_hz(&self) -> Hertz {
        self.center_hz - self.bw_hz / 2
    }

    pub fn high_hz(&self) -> Hertz {
        self.center_hz + self.bw_hz / 2
    }
}

/// Sum of half-widths is the minimum center distance between two carriers.
pub fn overlaps(a_center: Hertz, a_bw: Hertz, b_center: Hertz, b_bw: Hertz) -> bool {
    // Compare doubled distances so odd half-widths stay exact.
    2 * a_center.abs_diff(b_center) < a_bw + b_bw
}

/// Bookkeeping for every band, frontend and live carrier.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPool {
    bands: Vec<SpectrumBand>,
    frontends: Vec<RfFrontend>,
    assignments: BTreeMap<u64, CarrierAssignment>,
    next_id: u64,
    #[serde(default = "one_per_frontend")]
    one_carrier_per_frontend: bool,
}

fn one_per_frontend() -> bool {
    true
}

impl SpectrumPool {
    pub fn new(bands: Vec<SpectrumBand>, frontends: Vec<RfFrontend>) -> Result<Self, RfError> {
        for b in &bands {
            b.validate()?;
        }
        Ok(Self {
            bands,
            frontends,
            assignments: BTreeMap::new(),
            next_id: 1,
            one_carrier_per_frontend: true,
        })
    }

    pub fn set_one_carrier_per_frontend(&mut self, on: bool) {
        self.one_carrier_per_frontend = on;
    }

    pub fn bands(&self) -> &[SpectrumBand] {
        &self.bands
    }

    pub fn frontends(&self) -> &[RfFrontend] {
        &self.frontends
    }

    pub fn assignments(&self) -> impl Iterator<Item = &CarrierAssignment> {
        self.assignments.values()
    }

    pub fn get(&self, assignment_id: u64) -> Option<&CarrierAssignment> {
        self.assignments.get(&assignment_id)
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    fn band(&self, band_id: &str) -> Result<&SpectrumBand, RfError> {
        self.bands
            .iter()
            .find(|b| b.band_id == band_id)
            .ok_or_else(|| RfError::UnknownBand(band_id.to_string()))
    }

    fn frontend(&self, frontend_id: &str) -> Result<&RfFrontend, RfError> {
        self.frontends
            .iter()
            .find(|f| f.frontend_id == frontend_id)
            .ok_or_else(|| RfError::UnknownFrontend(frontend_id.to_string()))
    }

    fn frontend_busy(&self, frontend_id: &str) -> bool {
        self.assignments
            .values()
            .any(|a| a.frontend_id == frontend_id)
    }

    /// Lowest feasible raster-aligned center, or `None`.
    pub fn find_center(
        &self,
        band: &SpectrumBand,
        frontend: &RfFrontend,
        bw_hz: Hertz,
    ) -> Option<Hertz> {
        let half = bw_hz / 2;
        let lo = band.low_hz.max(frontend.freq_min_hz);
        let hi = band.high_hz.min(frontend.freq_max_hz);
        if hi < lo || hi - lo < bw_hz {
            return None;
        }
        let on_raster = |f: Hertz| -> Hertz {
            let off = f.saturating_sub(band.low_hz);
            band.low_hz + off.div_ceil(band.raster_hz) * band.raster_hz
        };
        let neighbours: Vec<&CarrierAssignment> = self
            .assignments
            .values()
            .filter(|a| a.site_id == frontend.site_id)
            .collect();

        let mut center = on_raster(lo + half);
        loop {
            if center + half > hi {
                return None;
            }
            // Jump past the first conflicting carrier; centers only move upward.
            let blocker = neighbours
                .iter()
                .filter(|a| overlaps(center, bw_hz, a.center_hz, a.bw_hz))
                .map(|a| a.center_hz + (a.bw_hz + bw_hz).div_ceil(2))
                .max();
            match blocker {
                None => return Some(center),
                Some(next) => center = on_raster(next),
            }
        }
    }

    /// Assign a carrier in `band_id` on `frontend_id`.
    pub fn assign_carrier(
        &mut self,
        band_id: &str,
        frontend_id: &str,
        bw_hz: Hertz,
        owner_ns: &str,
    ) -> Result<CarrierAssignment, RfError> {
        Bandwidth::from_hz(bw_hz)?;
        let band = self.band(band_id)?.clone();
        let frontend = self.frontend(frontend_id)?.clone();
        if bw_hz > frontend.max_bw_hz {
            return Err(RfError::TooWide {
                frontend: frontend_id.to_string(),
                bw_hz,
            });
        }
        if self.one_carrier_per_frontend && self.frontend_busy(frontend_id) {
            return Err(RfError::FrontendBusy(frontend_id.to_string()));
        }
        let center = self
            .find_center(&band, &frontend, bw_hz)
            .ok_or(RfError::NoSpectrum { bw_hz })?;
        let assignment = CarrierAssignment {
            assignment_id: self.next_id,
            band_id: band.band_id.clone(),
            frontend_id: frontend.frontend_id.clone(),
            site_id: frontend.site_id.clone(),
            center_hz: center,
            bw_hz,
            owner_ns_id: owner_ns.to_string(),
        };
        self.next_id += 1;
        self.assignments
            .insert(assignment.assignment_id, assignment.clone());
        Ok(assignment)
    }

    /// First (frontend, band) pair in inventory order that can host the carrier.
    pub fn plan_any(&self, bw_hz: Hertz) -> Result<(String, String), RfError> {
        Bandwidth::from_hz(bw_hz)?;
        if self.frontends.is_empty() {
            return Err(RfError::NoFrontend);
        }
        let mut saw_free = false;
        for f in &self.frontends {
            if bw_hz > f.max_bw_hz {
                continue;
            }
            if self.one_carrier_per_frontend && self.frontend_busy(&f.frontend_id) {
                continue;
            }
            saw_free = true;
            for b in &self.bands {
                if self.find_center(b, f, bw_hz).is_some() {
                    return Ok((b.band_id.clone(), f.frontend_id.clone()));
                }
            }
        }
        if saw_free {
            Err(RfError::NoSpectrum { bw_hz })
        } else {
            Err(RfError::NoFrontend)
        }
    }

    pub fn assign_any(
        &mut self,
        bw_hz: Hertz,
        owner_ns: &str,
    ) -> Result<CarrierAssignment, RfError> {
        let (band, frontend) = self.plan_any(bw_hz)?;
        self.assign_carrier(&band, &frontend, bw_hz, owner_ns)
    }

    pub fn release_carrier(&mut self, assignment_id: u64) -> Result<CarrierAssignment, RfError> {
        self.assignments
            .remove(&assignment_id)
            .ok_or(RfError::NotFound(assignment_id))
    }

    /// Fraction of `band_id` occupied at `site_id`.
    pub fn occupancy(&self, band_id: &str, site_id: &str) -> f64 {
        let Ok(band) = self.band(band_id) else {
            return 0.0;
        };
        let used: Hertz = self
            .assignments
            .values()
            .filter(|a| a.band_id == band_id && a.site_id == site_id)
            .map(|a| a.bw_hz)
            .sum();
        used as f64 / band.width_hz() as f64
    }

    pub fn sites(&self) -> Vec<String> {
        let mut sites: Vec<String> = self.frontends.iter().map(|f| f.site_id.clone()).collect();
        sites.sort();
        sites.dedup();
        sites
    }

    /// Assignments grouped by band, as served on the spectrum endpoint.
    pub fn view(&self) -> Vec<BandView> {
        self.bands
            .iter()
            .map(|b| BandView {
                band_id: b.band_id.clone(),
                low_hz: b.low_hz,
                high_hz: b.high_hz,
                raster_hz: b.raster_hz,
                assignments: self
                    .assignments
                    .values()
                    .filter(|a| a.band_id == b.band_id)
                    .cloned()
                    .collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandView {
    pub band_id: String,
    pub low_hz: Hertz,
    pub high_hz: Hertz,
    pub raster_hz: Hertz,
    pub assignments: Vec<CarrierAssignment>,
}
