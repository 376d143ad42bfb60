//! Arclength-parameterized road maps described only by their curvature
//! profile `κ(s)`, plus curvature histograms for comparing maps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum turn radius of 10 m.
pub const MAX_CURVATURE: f64 = 0.1;
/// Largest allowed curvature change per meter between adjacent samples.
pub const MAX_CURVATURE_RATE: f64 = 0.01;

pub const MAP_CSV_HEADER: &str = "station_m,curvature_inv_m";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Straight { length: f64 },
    Arc { length: f64, curvature: f64 },
    /// Curvature ramps linearly from `start` to `end`.
    Clothoid { length: f64, start: f64, end: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length }
            | Segment::Arc { length, .. }
            | Segment::Clothoid { length, .. } => length,
        }
    }

    /// Curvature at `u` meters into the segment.
    fn curvature_at(&self, u: f64) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { curvature, .. } => curvature,
            Segment::Clothoid { length, start, end } => start + (end - start) * (u / length),
        }
    }

    fn curvatures(&self) -> [f64; 2] {
        match *self {
            Segment::Straight { .. } => [0.0, 0.0],
            Segment::Arc { curvature, .. } => [curvature, curvature],
            Segment::Clothoid { start, end, .. } => [start, end],
        }
    }
}

/// Curvature sampled along the centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadMap {
    pub name: String,
    stations: Vec<f64>,
    curvature: Vec<f64>,
}

impl RoadMap {
    pub fn new(name: impl Into<String>, stations: Vec<f64>, curvature: Vec<f64>) -> Result<Self> {
        if stations.len() != curvature.len() {
            return Err(Error::LengthMismatch {
                left: stations.len(),
                right: curvature.len(),
            });
        }
        if stations.len() < 2 {
            return Err(Error::InvalidMap("need at least two stations".into()));
        }
        if stations[0] != 0.0 {
            return Err(Error::InvalidMap("first station must be 0".into()));
        }
        for w in stations.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidMap(format!(
                    "stations not strictly increasing at {} m",
                    w[0]
                )));
            }
        }
        for &k in &curvature {
            if !k.is_finite() || k.abs() > MAX_CURVATURE {
                return Err(Error::CurvatureBoundExceeded {
                    curvature: k,
                    bound: MAX_CURVATURE,
                });
            }
        }
        for (s, k) in stations.windows(2).zip(curvature.windows(2)) {
            let gap = s[1] - s[0];
            if (k[1] - k[0]).abs() >= MAX_CURVATURE_RATE * gap {
                return Err(Error::InvalidMap(format!(
                    "curvature jumps from {} to {} between {} m and {} m",
                    k[0], k[1], s[0], s[1]
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            stations,
            curvature,
        })
    }

    pub fn stations(&self) -> &[f64] {
        &self.stations
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.stations.last().expect("map has stations")
    }

    pub fn max_abs_curvature(&self) -> f64 {
        self.curvature.iter().fold(0.0, |m, k| m.max(k.abs()))
    }

    pub fn curvature_range(&self) -> (f64, f64) {
        self.curvature
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| (lo.min(k), hi.max(k)))
    }

    /// Linear interpolation between bracketing stations.
    pub fn curvature_at(&self, s: f64) -> Result<f64> {
        let length = self.total_length();
        if !(s >= 0.0 && s <= length) {
            return Err(Error::OutOfRange { s, length });
        }
        let i = self.stations.partition_point(|&st| st <= s);
        if i == self.stations.len() {
            return Ok(*self.curvature.last().unwrap());
        }
        let (s0, s1) = (self.stations[i - 1], self.stations[i]);
        let (k0, k1) = (self.curvature[i - 1], self.curvature[i]);
        if s == s0 {
            return Ok(k0);
        }
        let t = (s - s0) / (s1 - s0);
        Ok(k0 + t * (k1 - k0))
    }

    /// Curvature at `s`, with `s` clamped into the map.
    pub fn curvature_clamped(&self, s: f64) -> f64 {
        self.curvature_at(s.clamp(0.0, self.total_length()))
            .expect("clamped station is in range")
    }

    /// Centerline points obtained by integrating heading. Used for plots only.
    pub fn centerline(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.len());
        let (mut x, mut y, mut heading) = (0.0, 0.0, 0.0);
        pts.push((x, y));
        for (s, k) in self.stations.windows(2).zip(self.curvature.windows(2)) {
            let ds = s[1] - s[0];
            let mid_heading = heading + 0.25 * (k[0] + k[1]) * ds;
            x += ds * mid_heading.cos();
            y += ds * mid_heading.sin();
            heading += 0.5 * (k[0] + k[1]) * ds;
            pts.push((x, y));
        }
        pts
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.len());
        out.push_str(MAP_CSV_HEADER);
        out.push('\n');
        for (s, k) in self.stations.iter().zip(&self.curvature) {
            let _ = writeln!(out, "{s},{k}");
        }
        out
    }

    pub fn from_csv(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == MAP_CSV_HEADER => {}
            other => {
                return Err(Error::parse(
                    "road map csv",
                    format!("expected header `{MAP_CSV_HEADER}`, got {other:?}"),
                ))
            }
        }
        let mut stations = Vec::new();
        let mut curvature = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = |what: &str| -> Result<f64> {
                cols.next()
                    .ok_or_else(|| Error::parse("road map csv", format!("row {}: missing {what}", i + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse("road map csv", format!("row {}: {e}", i + 2)))
            };
            stations.push(next("station")?);
            curvature.push(next("curvature")?);
        }
        Self::new(name, stations, curvature)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "map".into());
        Self::from_csv(name, &text)
    }
}

/// Samples the concatenated segment profile every `spacing` meters; the last
/// station sits exactly at the end of the road.
pub fn generate_map(name: impl Into<String>, segments: &[Segment], spacing: f64) -> Result<RoadMap> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid("spacing", "must be finite and > 0"));
    }
    if segments.is_empty() {
        return Err(Error::InvalidMap("no segments".into()));
    }
    let mut starts = Vec::with_capacity(segments.len());
    let mut total = 0.0;
    for seg in segments {
        let len = seg.length();
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::invalid("segment length", format!("must be > 0, got {len}")));
        }
        for k in seg.curvatures() {
            if !k.is_finite() || k.abs() > MAX_CURVATURE {
                return Err(Error::CurvatureBoundExceeded {
                    curvature: k,
                    bound: MAX_CURVATURE,
                });
            }
        }
        starts.push(total);
        total += len;
    }

    let n = (total / spacing + 1e-9).floor() as usize;
    let mut stations: Vec<f64> = (0..=n).map(|i| i as f64 * spacing).collect();
    if total - stations[n] > 1e-9 * total.max(1.0) {
        stations.push(total);
    } else {
        stations[n] = total;
    }

    let mut seg_idx = 0;
    let curvature = stations
        .iter()
        .map(|&s| {
            while seg_idx + 1 < segments.len() && s >= starts[seg_idx + 1] {
                seg_idx += 1;
            }
            let seg = &segments[seg_idx];
            let u = (s - starts[seg_idx]).min(seg.length());
            seg.curvature_at(u)
        })
        .collect();
    RoadMap::new(name, stations, curvature)
}

/// Clothoid in, constant arc, clothoid out.
fn turn(curvature: f64, arc: f64, ramp: f64) -> [Segment; 3] {
    [
        Segment::Clothoid {
            length: ramp,
            start: 0.0,
            end: curvature,
        },
        Segment::Arc {
            length: arc,
            curvature,
        },
        Segment::Clothoid {
            length: ramp,
            start: curvature,
            end: 0.0,
        },
    ]
}

fn straight(length: f64) -> Segment {
    Segment::Straight { length }
}

fn assemble(parts: &[&[Segment]]) -> Vec<Segment> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Training map: wide, varied curvature with sharp and gentle turns.
pub fn map1_segments() -> Vec<Segment> {
    assemble(&[
        &[straight(60.0)],
        &turn(0.02, 80.0, 30.0),
        &[straight(40.0)],
        &turn(-0.03, 60.0, 40.0),
        &[straight(50.0)],
        &turn(0.01, 120.0, 25.0),
        &turn(-0.015, 70.0, 35.0),
        &[straight(30.0)],
        &turn(0.025, 50.0, 40.0),
        &[straight(40.0)],
        &turn(-0.008, 150.0, 20.0),
        &turn(0.03, 40.0, 30.0),
        &[straight(60.0)],
        &turn(-0.02, 60.0, 30.0),
        &[straight(100.0)],
    ])
}

/// Validation map: narrow curvature band, alternating turns.
pub fn map2_segments() -> Vec<Segment> {
    assemble(&[
        &[straight(40.0)],
        &turn(0.014, 90.0, 12.0),
        &turn(-0.013, 80.0, 12.0),
        &[straight(30.0)],
        &turn(0.012, 110.0, 10.0),
        &turn(-0.015, 70.0, 12.0),
        &turn(0.013, 90.0, 10.0),
        &[straight(40.0)],
        &turn(-0.012, 100.0, 12.0),
        &turn(0.015, 80.0, 10.0),
        &turn(-0.014, 90.0, 12.0),
        &[straight(40.0)],
        &turn(0.013, 80.0, 10.0),
        &[straight(60.0)],
        &turn(-0.013, 90.0, 12.0),
        &turn(0.014, 80.0, 10.0),
        &[straight(60.0)],
    ])
}

/// Close relative of map 2 with slightly different turns and ordering.
pub fn map3_segments() -> Vec<Segment> {
    assemble(&[
        &[straight(50.0)],
        &turn(0.013, 100.0, 12.0),
        &turn(-0.014, 90.0, 10.0),
        &[straight(40.0)],
        &turn(0.015, 80.0, 12.0),
        &turn(-0.012, 100.0, 10.0),
        &turn(0.014, 70.0, 12.0),
        &[straight(30.0)],
        &turn(-0.015, 90.0, 10.0),
        &turn(0.012, 90.0, 12.0),
        &turn(-0.013, 80.0, 10.0),
        &[straight(50.0)],
        &turn(0.014, 90.0, 12.0),
        &turn(-0.012, 80.0, 10.0),
        &turn(0.015, 70.0, 12.0),
        &[straight(60.0)],
    ])
}

pub const BUILTIN_SPACING: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct BuiltinMaps {
    pub map1: RoadMap,
    pub map2: RoadMap,
    pub map3: RoadMap,
}

impl BuiltinMaps {
    pub fn get(&self, name: &str) -> Option<&RoadMap> {
        match name {
            "map1" => Some(&self.map1),
            "map2" => Some(&self.map2),
            "map3" => Some(&self.map3),
            _ => None,
        }
    }
}

pub fn builtin_maps() -> BuiltinMaps {
    let build = |name: &str, segs: Vec<Segment>| {
        generate_map(name, &segs, BUILTIN_SPACING).expect("builtin map segments are valid")
    };
    BuiltinMaps {
        map1: build("map1", map1_segments()),
        map2: build("map2", map2_segments()),
        map3: build("map3", map3_segments()),
    }
}

pub fn builtin_map(name: &str) -> Option<RoadMap> {
    builtin_maps().get(name).cloned()
}

/// Station counts per uniform curvature bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub bin_width: f64,
}

impl CurvatureHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Normalized bin masses.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo_inv_m,bin_hi_inv_m,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c);
        }
        out
    }
}

/// Histogram over `[min κ, max κ]` of the map. A constant-curvature map gets a
/// small symmetric window around its single value.
pub fn curvature_histogram(map: &RoadMap, bins: usize) -> Result<CurvatureHistogram> {
    let (lo, hi) = map.curvature_range();
    histogram_in_range(map, bins, lo, hi)
}

/// Histogram over a caller-chosen range, so two maps can share bins.
pub fn histogram_in_range(map: &RoadMap, bins: usize, lo: f64, hi: f64) -> Result<CurvatureHistogram> {
    if bins < 2 {
        return Err(Error::invalid("bins", "need at least 2"));
    }
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let half = 1e-3;
        (lo - half, lo + half)
    };
    let width = (hi - lo) / bins as f64;
    let bin_edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &k in map.curvature() {
        let idx = ((k - lo) / width).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    Ok(CurvatureHistogram {
        bin_edges,
        counts,
        bin_width: width,
    })
}

/// Jensen–Shannon divergence (natural log) between two maps' curvature
/// distributions on a shared binning of the union range.
pub fn curvature_jsd(a: &RoadMap, b: &RoadMap, bins: usize) -> Result<f64> {
    let (alo, ahi) = a.curvature_range();
    let (blo, bhi) = b.curvature_range();
    let (lo, hi) = (alo.min(blo), ahi.max(bhi));
    let p = histogram_in_range(a, bins, lo, hi)?.probabilities();
    let q = histogram_in_range(b, bins, lo, hi)?.probabilities();
    Ok(jensen_shannon(&p, &q))
}

pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(&ai, _)| ai > 0.0)
            .map(|(&ai, &mi)| ai * (ai / mi).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn straight_road_samples() {
        let m = generate_map("s", &[straight(100.0)], 1.0).unwrap();
        assert_eq!(m.len(), 101);
        assert!(m.curvature().iter().all(|&k| k == 0.0));
        assert_eq!(m.curvature_at(37.3).unwrap(), 0.0);
    }

    #[test]
    fn constant_arc() {
        let m = generate_map(
            "a",
            &[Segment::Arc {
                length: 50.0,
                curvature: 0.02,
            }],
            1.0,
        )
        .unwrap();
        assert!(m.curvature()[1..m.len() - 1].iter().all(|&k| k == 0.02));
    }

    #[test]
    fn clothoid_midpoint() {
        let m = generate_map(
            "c",
            &[Segment::Clothoid {
                length: 10.0,
                start: 0.0,
                end: 0.01,
            }],
            1.0,
        )
        .unwrap();
        assert!((m.curvature()[5] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn interpolation() {
        let m = RoadMap::new("i", vec![0.0, 1.0, 2.0], vec![0.01, 0.01, 0.013]).unwrap();
        assert_eq!(m.curvature_at(1.0).unwrap(), 0.01);
        assert!((m.curvature_at(1.5).unwrap() - 0.0115).abs() < 1e-15);
        let m = RoadMap::new("i", vec![0.0, 2.0], vec![0.01, 0.03]).unwrap();
        assert!((m.curvature_at(1.0).unwrap() - 0.02).abs() < 1e-15);
        assert!(matches!(m.curvature_at(2.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(m.curvature_at(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn rejects_sharp_curvature() {
        let err = generate_map(
            "x",
            &[Segment::Arc {
                length: 10.0,
                curvature: 0.2,
            }],
            1.0,
        );
        assert!(matches!(err, Err(Error::CurvatureBoundExceeded { .. })));
    }

    #[test]
    fn rejects_curvature_jump() {
        let err = generate_map(
            "x",
            &[
                straight(10.0),
                Segment::Arc {
                    length: 10.0,
                    curvature: 0.05,
                },
            ],
            1.0,
        );
        assert!(matches!(err, Err(Error::InvalidMap(_))));
    }

    #[test]
    fn histogram_of_straight_road() {
        let m = generate_map("s", &[straight(100.0)], 1.0).unwrap();
        let h = curvature_histogram(&m, 10).unwrap();
        assert_eq!(h.total(), 101);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let bin = h.counts.iter().position(|&c| c > 0).unwrap();
        assert!(h.bin_edges[bin] <= 0.0 && 0.0 < h.bin_edges[bin + 1]);
    }

    #[test]
    fn histogram_symmetry() {
        let n = 3;
        let stations: Vec<f64> = (0..4 * n).map(|i| i as f64).collect();
        // equal numbers of ±j/1024 samples, dyadic so the bin arithmetic is
        // exact; four bins keep every interior edge between samples
        let mut curvature = Vec::new();
        for j in 1..=n {
            curvature.push(-(j as f64) / 1024.0);
            curvature.push(-(j as f64) / 1024.0);
        }
        for j in (1..=n).rev() {
            curvature.push(j as f64 / 1024.0);
            curvature.push(j as f64 / 1024.0);
        }
        let m = RoadMap::new("sym", stations[..curvature.len()].to_vec(), curvature).unwrap();
        let h = curvature_histogram(&m, 4).unwrap();
        let rev: Vec<usize> = h.counts.iter().rev().copied().collect();
        assert_eq!(h.counts, rev);
    }

    #[test]
    fn builtin_maps_are_long_enough_for_a_100s_drive() {
        let maps = builtin_maps();
        let needed = crate::vehicle::VehicleParams::default().vx * 100.0;
        for m in [&maps.map1, &maps.map2, &maps.map3] {
            assert!(m.total_length() >= needed + 20.0, "{} too short", m.name);
            let h = curvature_histogram(m, 40).unwrap();
            assert_eq!(h.total(), m.len());
        }
    }

    #[test]
    fn builtin_map_relationships() {
        let maps = builtin_maps();
        let (lo1, hi1) = maps.map1.curvature_range();
        let (lo2, hi2) = maps.map2.curvature_range();
        assert!(lo1 < lo2 && hi1 > hi2);
        let j32 = curvature_jsd(&maps.map3, &maps.map2, 40).unwrap();
        let j12 = curvature_jsd(&maps.map1, &maps.map2, 40).unwrap();
        assert!(j32 < j12, "jsd(3,2)={j32} jsd(1,2)={j12}");
    }

    #[test]
    fn csv_round_trip() {
        let m = builtin_maps().map2;
        let back = RoadMap::from_csv("map2", &m.to_csv()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_csv().starts_with("station_m,curvature_inv_m\n"));
        assert!(!m.to_csv().contains('\r'));
    }

    #[test]
    fn centerline_of_full_circle_closes() {
        let r = 20.0;
        let len = 2.0 * std::f64::consts::PI * r;
        let m = generate_map(
            "circle",
            &[Segment::Arc {
                length: len,
                curvature: 1.0 / r,
            }],
            0.1,
        )
        .unwrap();
        let pts = m.centerline();
        let (x, y) = *pts.last().unwrap();
        assert!(x.hypot(y) < 1e-3);
    }

    fn segment_strategy() -> impl Strategy<Value = Segment> {
        prop_oneof![
            (1.0f64..50.0).prop_map(|length| Segment::Straight { length }),
            (1.0f64..50.0, -0.05f64..0.05).prop_map(|(length, k)| Segment::Clothoid {
                length: length.max(k.abs() * 200.0),
                start: 0.0,
                end: k,
            }),
        ]
    }

    proptest! {
        #[test]
        fn histogram_conserves_mass(segs in prop::collection::vec(segment_strategy(), 1..6), bins in 2usize..50) {
            // Clothoids all start from zero, so only emit sequences that stay continuous.
            let mut continuous = Vec::new();
            for s in segs {
                continuous.push(s);
                if let Segment::Clothoid { length, end, .. } = s {
                    continuous.push(Segment::Clothoid { length, start: end, end: 0.0 });
                }
            }
            let m = generate_map("p", &continuous, 0.5).unwrap();
            let again = generate_map("p", &continuous, 0.5).unwrap();
            prop_assert_eq!(&m, &again);
            let h = curvature_histogram(&m, bins).unwrap();
            prop_assert_eq!(h.total(), m.len());
        }
    }
}
