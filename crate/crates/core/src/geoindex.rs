//! Geohash codes and a geohash-bucketed spatial index with exact radius
//! queries.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use crate::error::{param, Error, Result};
use crate::model::{haversine_km, GeoPoint, PoiRecord, EARTH_RADIUS_KM};

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

pub const MAX_PRECISION: usize = 12;

/// Queries whose center lies beyond this latitude are rejected.
pub const MAX_QUERY_LAT: f64 = 85.0;

/// A geohash string over the standard base-32 alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GeoHashCode(String);

impl GeoHashCode {
    pub fn parse(code: &str) -> Result<Self> {
        if code.is_empty() || code.len() > MAX_PRECISION {
            return Err(Error::Format(format!(
                "geohash length must be 1..=12: {code:?}"
            )));
        }
        if let Some(bad) = code.bytes().find(|&b| base32_value(b).is_none()) {
            return Err(Error::Format(format!(
                "invalid geohash character {:?} in {code:?}",
                bad as char
            )));
        }
        Ok(Self(code.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn precision(&self) -> usize {
        self.0.len()
    }

    /// Base-32 digit values (0..32) of each character.
    pub fn digits(&self) -> impl Iterator<Item = u8> + '_ {
        self.0
            .bytes()
            .map(|b| base32_value(b).expect("validated on construction"))
    }
}

impl fmt::Display for GeoHashCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn base32_value(b: u8) -> Option<u8> {
    BASE32.iter().position(|&c| c == b).map(|v| v as u8)
}

/// Lat/lon rectangle of a geohash cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl CellBox {
    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat)
            && (self.min_lon..=self.max_lon).contains(&p.lon)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lon: 0.5 * (self.min_lon + self.max_lon),
            lat: 0.5 * (self.min_lat + self.max_lat),
        }
    }
}

/// Bit budget of a precision: (longitude bits, latitude bits).
fn bit_split(precision: usize) -> (u32, u32) {
    let total = 5 * precision as u32;
    (total.div_ceil(2), total / 2)
}

fn quantize(v: f64, min: f64, span: f64, bits: u32) -> u64 {
    let cells = 1u64 << bits;
    let q = ((v - min) / span * cells as f64).floor();
    (q.max(0.0) as u64).min(cells - 1)
}

/// Grid coordinates of the cell containing `p`.
fn cell_index(p: GeoPoint, precision: usize) -> (u64, u64) {
    let (lon_bits, lat_bits) = bit_split(precision);
    (
        quantize(p.lon, -180.0, 360.0, lon_bits),
        quantize(p.lat, -90.0, 180.0, lat_bits),
    )
}

/// Interleaves grid coordinates into the geohash bit string (lon first).
fn interleave(ilon: u64, ilat: u64, precision: usize) -> u64 {
    let (lon_bits, lat_bits) = bit_split(precision);
    let total = lon_bits + lat_bits;
    let mut out = 0u64;
    let (mut lo, mut la) = (lon_bits, lat_bits);
    for pos in 0..total {
        let bit = if pos % 2 == 0 {
            lo -= 1;
            (ilon >> lo) & 1
        } else {
            la -= 1;
            (ilat >> la) & 1
        };
        out = (out << 1) | bit;
    }
    out
}

fn deinterleave(bits: u64, precision: usize) -> (u64, u64) {
    let (lon_bits, lat_bits) = bit_split(precision);
    let total = lon_bits + lat_bits;
    let (mut ilon, mut ilat) = (0u64, 0u64);
    for pos in 0..total {
        let bit = (bits >> (total - 1 - pos)) & 1;
        if pos % 2 == 0 {
            ilon = (ilon << 1) | bit;
        } else {
            ilat = (ilat << 1) | bit;
        }
    }
    (ilon, ilat)
}

fn bits_to_code(bits: u64, precision: usize) -> GeoHashCode {
    let s = (0..precision)
        .map(|i| {
            let shift = 5 * (precision - 1 - i);
            BASE32[((bits >> shift) & 0x1f) as usize] as char
        })
        .collect();
    GeoHashCode(s)
}

/// Standard geohash of `p` with `precision` characters (1..=12).
pub fn geohash_encode(p: GeoPoint, precision: usize) -> Result<GeoHashCode> {
    check_precision(precision)?;
    let (ilon, ilat) = cell_index(p, precision);
    Ok(bits_to_code(interleave(ilon, ilat, precision), precision))
}

fn check_precision(precision: usize) -> Result<()> {
    if (1..=MAX_PRECISION).contains(&precision) {
        Ok(())
    } else {
        param(format!("geohash precision must be 1..=12, got {precision}"))
    }
}

fn cell_box(ilon: u64, ilat: u64, precision: usize) -> CellBox {
    let (lon_bits, lat_bits) = bit_split(precision);
    let lon_step = 360.0 / (1u64 << lon_bits) as f64;
    let lat_step = 180.0 / (1u64 << lat_bits) as f64;
    CellBox {
        min_lon: -180.0 + ilon as f64 * lon_step,
        max_lon: -180.0 + (ilon + 1) as f64 * lon_step,
        min_lat: -90.0 + ilat as f64 * lat_step,
        max_lat: -90.0 + (ilat + 1) as f64 * lat_step,
    }
}

/// The exact rectangle covered by a geohash cell.
pub fn geohash_decode_cell(code: &GeoHashCode) -> CellBox {
    let precision = code.precision();
    let bits = code.digits().fold(0u64, |acc, d| (acc << 5) | d as u64);
    let (ilon, ilat) = deinterleave(bits, precision);
    cell_box(ilon, ilat, precision)
}

/// Parses `code` and decodes its cell.
pub fn geohash_decode_str(code: &str) -> Result<CellBox> {
    Ok(geohash_decode_cell(&GeoHashCode::parse(code)?))
}

/// A POI found by a radius query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance_km: f64,
}

/// POIs bucketed by the geohash cell of their location.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    precision: usize,
    ids: Vec<u64>,
    locations: Vec<GeoPoint>,
    buckets: HashMap<u64, Vec<u32>>,
}

impl SpatialIndex {
    /// Indexes `pois` into cells of the given geohash precision.
    pub fn build(pois: &[PoiRecord], precision: usize) -> Result<Self> {
        Self::from_locations(pois.iter().map(|p| (p.id, p.location)), precision)
    }

    pub fn from_locations(
        entries: impl IntoIterator<Item = (u64, GeoPoint)>,
        precision: usize,
    ) -> Result<Self> {
        check_precision(precision)?;
        let mut index = Self {
            precision,
            ids: Vec::new(),
            locations: Vec::new(),
            buckets: HashMap::new(),
        };
        let mut seen = std::collections::HashSet::new();
        for (id, loc) in entries {
            if !seen.insert(id) {
                return Err(Error::Integrity(format!("duplicate POI id {id}")));
            }
            if !loc.is_valid() {
                return Err(Error::Integrity(format!(
                    "POI {id} has an invalid location"
                )));
            }
            let (ilon, ilat) = cell_index(loc, precision);
            let slot = index.ids.len() as u32;
            index.ids.push(id);
            index.locations.push(loc);
            index
                .buckets
                .entry(interleave(ilon, ilat, precision))
                .or_default()
                .push(slot);
        }
        if index.ids.is_empty() {
            return param("cannot build a spatial index over zero POIs");
        }
        Ok(index)
    }

    pub fn precision(&self) -> usize {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn location(&self, id: u64) -> Option<GeoPoint> {
        self.ids
            .iter()
            .position(|&x| x == id)
            .map(|i| self.locations[i])
    }

    /// Bucket contents keyed by geohash code, ids in insertion order.
    pub fn buckets(&self) -> Vec<(GeoHashCode, Vec<u64>)> {
        let mut out: Vec<_> = self
            .buckets
            .iter()
            .map(|(&bits, slots)| {
                (
                    bits_to_code(bits, self.precision),
                    slots.iter().map(|&s| self.ids[s as usize]).collect(),
                )
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// All POIs within `r_km` (inclusive) of `center`, nearest first, ties
    /// by ascending id.
    ///
    /// Cells are visited in square rings around the center cell; a ring in
    /// which no cell touches the circle's lat/lon bounding box ends the scan,
    /// since every outer ring is then disjoint from it as well. Every POI in a
    /// visited cell is checked with the exact haversine distance.
    pub fn radius_query(&self, center: GeoPoint, r_km: f64) -> Result<Vec<Neighbor>> {
        if r_km <= 0.0 || !r_km.is_finite() {
            return param(format!("radius must be positive, got {r_km}"));
        }
        if !center.is_valid() {
            return param(format!("invalid query center {center:?}"));
        }
        if center.lat.abs() > MAX_QUERY_LAT {
            return param(format!(
                "polar queries (|lat| > {MAX_QUERY_LAT}) are not supported"
            ));
        }
        let bbox = circle_bbox(center, r_km)?;

        let (lon_bits, lat_bits) = bit_split(self.precision);
        let (max_x, max_y) = ((1i64 << lon_bits) - 1, (1i64 << lat_bits) - 1);
        let (cx, cy) = cell_index(center, self.precision);
        let (cx, cy) = (cx as i64, cy as i64);

        let mut hits = Vec::new();
        let mut visit = |x: i64, y: i64| -> bool {
            if x < 0 || y < 0 || x > max_x || y > max_y {
                return false;
            }
            let cell = cell_box(x as u64, y as u64, self.precision);
            if cell.max_lat < bbox.min_lat
                || cell.min_lat > bbox.max_lat
                || cell.max_lon < bbox.min_lon
                || cell.min_lon > bbox.max_lon
            {
                return false;
            }
            if let Some(slots) = self
                .buckets
                .get(&interleave(x as u64, y as u64, self.precision))
            {
                for &s in slots {
                    let d = haversine_km(center, self.locations[s as usize]);
                    if d <= r_km {
                        hits.push(Neighbor {
                            id: self.ids[s as usize],
                            distance_km: d,
                        });
                    }
                }
            }
            true
        };

        let mut ring = 0i64;
        loop {
            let mut touched = false;
            if ring == 0 {
                touched |= visit(cx, cy);
            } else {
                for dx in -ring..=ring {
                    touched |= visit(cx + dx, cy - ring);
                    touched |= visit(cx + dx, cy + ring);
                }
                for dy in -ring + 1..ring {
                    touched |= visit(cx - ring, cy + dy);
                    touched |= visit(cx + ring, cy + dy);
                }
            }
            if !touched {
                break;
            }
            ring += 1;
        }
        hits.sort_by(|a, b| {
            a.distance_km
                .total_cmp(&b.distance_km)
                .then(a.id.cmp(&b.id))
        });
        Ok(hits)
    }

    const MAGIC: &'static [u8; 8] = b"POIGEOIX";
    const VERSION: u32 = 1;

    /// Little-endian binary: magic, version (u32), precision (u32), count
    /// (u64), then `count` records of (id u64, lon f64, lat f64).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.precision as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (id, loc) in self.ids.iter().zip(&self.locations) {
            w.write_all(&id.to_le_bytes())?;
            w.write_all(&loc.lon.to_le_bytes())?;
            w.write_all(&loc.lat.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a spatial index file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != Self::VERSION {
            return Err(Error::Version {
                what: "spatial index",
                found: version,
                expected: Self::VERSION,
            });
        }
        let precision = read_u32(&mut r)? as usize;
        let n = read_u64(&mut r)?;
        let mut entries = Vec::with_capacity(n.min(1 << 24) as usize);
        for _ in 0..n {
            let id = read_u64(&mut r)?;
            let lon = f64::from_le_bytes(read_array(&mut r)?);
            let lat = f64::from_le_bytes(read_array(&mut r)?);
            entries.push((id, GeoPoint { lon, lat }));
        }
        Self::from_locations(entries, precision)
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Lat/lon box enclosing the spherical cap of radius `r_km` around `center`.
fn circle_bbox(center: GeoPoint, r_km: f64) -> Result<CellBox> {
    // A hair of slack; the haversine post-filter decides membership.
    const SLACK_DEG: f64 = 1e-9;
    let delta = r_km / EARTH_RADIUS_KM;
    let dlat = delta.to_degrees();
    let s = delta.sin() / center.lat.to_radians().cos();
    if s >= 1.0 || center.lat.abs() + dlat >= 90.0 {
        return param("query circle reaches a pole");
    }
    let dlon = s.asin().to_degrees();
    let bbox = CellBox {
        min_lat: center.lat - dlat - SLACK_DEG,
        max_lat: center.lat + dlat + SLACK_DEG,
        min_lon: center.lon - dlon - SLACK_DEG,
        max_lon: center.lon + dlon + SLACK_DEG,
    };
    if bbox.min_lon <= -180.0 || bbox.max_lon >= 180.0 {
        return param("query circle crosses the antimeridian");
    }
    Ok(bbox)
}
