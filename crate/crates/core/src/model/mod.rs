//! Domain types shared by every stage, and the synthetic street-view world
//! the pipelines are exercised against.

mod generate;
mod io;
mod render;

pub use generate::{generate_corpus, CorpusParams, LexiconParams, NoiseParams};
pub use io::{read_corpus, write_corpus, CORPUS_FORMAT, CORPUS_VERSION};
pub use render::{
    render_signboard, Perturbation, SignStyle, SignboardImage, MAX_RENDERED_GLYPHS, SIGN_HEIGHT,
    SIGN_WIDTH, TEXT_X0, TEXT_Y0,
};

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Maximum number of glyphs in a POI name.
pub const MAX_NAME_GLYPHS: usize = 32;

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting coordinates outside the open ranges
    /// lon ∈ (−180, 180), lat ∈ (−90, 90).
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(lon > -180.0 && lon < 180.0) || !(lat > -90.0 && lat < 90.0) {
            return param(format!("coordinate out of range: lon={lon}, lat={lat}"));
        }
        Ok(Self { lon, lat })
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.lon, self.lat).is_ok()
    }
}

/// Great-circle distance between two points, in kilometres.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Point reached by travelling `dist_km` from `origin` along initial bearing
/// `bearing_rad` (clockwise from north).
pub fn destination(origin: GeoPoint, dist_km: f64, bearing_rad: f64) -> GeoPoint {
    let delta = dist_km / EARTH_RADIUS_KM;
    let lat1 = origin.lat.to_radians();
    let lon1 = origin.lon.to_radians();
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing_rad.cos()).asin();
    let lon2 = lon1
        + (bearing_rad.sin() * delta.sin() * lat1.cos())
            .atan2(delta.cos() - lat1.sin() * lat2.sin());
    let mut lon = lon2.to_degrees();
    if lon >= 180.0 {
        lon -= 360.0;
    } else if lon <= -180.0 {
        lon += 360.0;
    }
    GeoPoint {
        lon,
        lat: lat2.to_degrees(),
    }
}

/// Axis-aligned lon/lat rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        let lo = GeoPoint::new(self.min_lon, self.min_lat);
        let hi = GeoPoint::new(self.max_lon, self.max_lat);
        if lo.is_err()
            || hi.is_err()
            || self.min_lon >= self.max_lon
            || self.min_lat >= self.max_lat
        {
            return param(format!("invalid region {self:?}"));
        }
        Ok(())
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lon..=self.max_lon).contains(&p.lon)
            && (self.min_lat..=self.max_lat).contains(&p.lat)
    }
}

impl Default for Region {
    /// About 10 km × 11 km of a dense city centre.
    fn default() -> Self {
        Self {
            min_lon: 116.30,
            min_lat: 39.88,
            max_lon: 116.42,
            max_lat: 39.98,
        }
    }
}

/// An archived point of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub id: u64,
    pub name: String,
    pub location: GeoPoint,
    pub signboard: SignboardImage,
}

/// Dataset partition a submission belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// A crowd-sourced observation: a signboard photo plus where it was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct StreetViewSubmission {
    /// The POI actually depicted. Only evaluation code may look at this.
    pub truth_id: u64,
    pub shot_location: GeoPoint,
    pub signboard: SignboardImage,
    pub split: Split,
}

/// Archived POIs together with the submissions that observe them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub pois: Vec<PoiRecord>,
    pub submissions: Vec<StreetViewSubmission>,
}

impl Corpus {
    /// Checks id uniqueness, name validity, referential integrity and that no
    /// POI is observed from both the test split and the train/valid splits.
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        use std::collections::HashMap;

        let mut groups: HashMap<u64, Option<bool>> = HashMap::with_capacity(self.pois.len());
        for p in &self.pois {
            if groups.insert(p.id, None).is_some() {
                return Err(Error::Integrity(format!("duplicate POI id {}", p.id)));
            }
            if p.name.is_empty()
                || p.name.chars().count() > MAX_NAME_GLYPHS
                || !crate::glyph::is_valid_name(&p.name)
            {
                return Err(Error::Integrity(format!("invalid name for POI {}", p.id)));
            }
            if !p.location.is_valid() {
                return Err(Error::Integrity(format!(
                    "invalid location for POI {}",
                    p.id
                )));
            }
        }
        for s in &self.submissions {
            let is_test = s.split == Split::Test;
            match groups.get_mut(&s.truth_id) {
                None => {
                    return Err(Error::Integrity(format!(
                        "submission refers to unknown POI {}",
                        s.truth_id
                    )))
                }
                Some(slot @ None) => *slot = Some(is_test),
                Some(Some(prev)) if *prev != is_test => {
                    return Err(Error::Integrity(format!(
                        "POI {} appears in both test and train/valid splits",
                        s.truth_id
                    )))
                }
                Some(Some(_)) => {}
            }
        }
        Ok(())
    }

    pub fn submissions_in(&self, split: Split) -> impl Iterator<Item = &StreetViewSubmission> {
        self.submissions.iter().filter(move |s| s.split == split)
    }

    /// Ids of POIs observed by at least one submission of `split`, ascending.
    pub fn poi_ids_in(&self, split: Split) -> Vec<u64> {
        let mut ids: Vec<u64> = self.submissions_in(split).map(|s| s.truth_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Fraction of POIs whose name is shared with at least one other POI.
    pub fn duplicate_name_rate(&self) -> f64 {
        use std::collections::HashMap;
        if self.pois.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for p in &self.pois {
            *counts.entry(p.name.as_str()).or_default() += 1;
        }
        let dup = self
            .pois
            .iter()
            .filter(|p| counts[p.name.as_str()] > 1)
            .count();
        dup as f64 / self.pois.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    #[test]
    fn haversine_identity() {
        let p = pt(116.3, 39.9);
        assert_eq!(haversine_km(p, p), 0.0);
    }

    #[test]
    fn haversine_quarter_arc() {
        // Analytic: R·π/2.
        let expected = EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2;
        let d = haversine_km(pt(0.0, 0.0), pt(90.0, 0.0));
        assert!((d - expected).abs() < 1e-9);
        assert!((d - 10007.557).abs() < 0.01);
    }

    #[test]
    fn haversine_small_arc() {
        let expected = EARTH_RADIUS_KM * 0.001_f64.to_radians();
        let d = haversine_km(pt(0.0, 0.0), pt(0.001, 0.0));
        assert!((d - expected).abs() < 1e-12);
        assert!((d - 0.1112).abs() < 1e-4);
    }

    #[test]
    fn geopoint_rejects_out_of_range() {
        assert!(GeoPoint::new(180.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -90.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(179.9, 89.9).is_ok());
    }

    #[test]
    fn destination_distance_matches() {
        let o = pt(116.35, 39.93);
        for i in 0..16 {
            let b = i as f64 * std::f64::consts::TAU / 16.0;
            let d = destination(o, 0.25, b);
            assert!((haversine_km(o, d) - 0.25).abs() < 1e-9);
        }
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-179.9f64..179.9, -89.9f64..89.9).prop_map(|(lon, lat)| GeoPoint { lon, lat })
    }

    proptest! {
        #[test]
        fn haversine_metric_properties(a in arb_point(), b in arb_point(), c in arb_point()) {
            let ab = haversine_km(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine_km(b, a)).abs() < 1e-9);
            prop_assert!(ab <= haversine_km(a, c) + haversine_km(c, b) + 1e-9);
        }
    }
}
