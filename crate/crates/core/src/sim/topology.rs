//! AP/UE placement on a hexagonal layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Grid;
use crate::rng::{stream_rng, Stream};
use crate::sim::config::SystemConfig;

/// Point in metres; `z` is antenna height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }

    pub fn horizontal_distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub ap_positions: Vec<Position>,
    pub ue_positions: Vec<Position>,
    /// AP-UE 3-D distances, `M x K`.
    pub distances: Grid<f64>,
}

/// Axial coordinates of the first `count` cells of a hexagonal spiral:
/// the centre, then ring 1, ring 2, ... walked so that consecutive cells
/// within a ring are neighbours.
fn hex_spiral(count: usize) -> Vec<(i64, i64)> {
    const DIRS: [(i64, i64); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];
    let mut cells = vec![(0, 0)];
    let mut ring = 1i64;
    while cells.len() < count {
        let (mut q, mut r) = (DIRS[4].0 * ring, DIRS[4].1 * ring);
        for dir in DIRS {
            for _ in 0..ring {
                cells.push((q, r));
                q += dir.0;
                r += dir.1;
            }
        }
        ring += 1;
    }
    cells.truncate(count);
    cells
}

/// AP sites on a hexagonal grid with neighbour spacing `isd`.
pub fn ap_layout(m: usize, isd: f64, height: f64) -> Vec<Position> {
    hex_spiral(m)
        .into_iter()
        .map(|(q, r)| Position {
            x: isd * (q as f64 + r as f64 / 2.0),
            y: isd * (r as f64 * 3f64.sqrt() / 2.0),
            z: height,
        })
        .collect()
}

/// True when `(x, y)` lies inside a regular hexagon (flat sides top and
/// bottom) with circumradius `radius` centred at the origin.
fn in_hexagon(x: f64, y: f64, radius: f64) -> bool {
    let (x, y) = (x.abs(), y.abs());
    let apothem = radius * 3f64.sqrt() / 2.0;
    y <= apothem && 3f64.sqrt() * x + y <= 3f64.sqrt() * radius
}

const MAX_DRAWS: usize = 1_000_000;

/// Places APs on the hexagonal grid and drops UEs uniformly over the union
/// of the AP cells, redrawing any UE closer than the scenario minimum
/// distance to some AP. Deterministic for a given seed.
pub fn generate_topology(config: &SystemConfig, seed: u64) -> Result<Topology> {
    config.validate()?;
    let p = config.params();
    let radius = p.isd_m / 3f64.sqrt();
    if p.min_distance_m >= radius {
        return Err(Error::Config(format!(
            "minimum AP-UE distance {} m does not fit a cell of radius {radius:.1} m",
            p.min_distance_m
        )));
    }
    let aps = ap_layout(config.m, p.isd_m, p.ap_height_m);
    let mut rng = stream_rng(seed, Stream::Topology, 0);
    let mut ues = Vec::with_capacity(config.k);
    for _ in 0..config.k {
        let mut placed = None;
        for _ in 0..MAX_DRAWS {
            let cell = &aps[rng.random_range(0..aps.len())];
            let dx = rng.random_range(-radius..radius);
            let dy = rng.random_range(-radius..radius);
            if !in_hexagon(dx, dy, radius) {
                continue;
            }
            let ue = Position { x: cell.x + dx, y: cell.y + dy, z: p.ue_height_m };
            if aps.iter().all(|ap| ap.distance(&ue) >= p.min_distance_m) {
                placed = Some(ue);
                break;
            }
        }
        ues.push(placed.ok_or_else(|| Error::Config("could not place UE".into()))?);
    }
    let distances = Grid::from_fn(config.m, config.k, |m, k| aps[m].distance(&ues[k]));
    Ok(Topology { ap_positions: aps, ue_positions: ues, distances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::Scenario;

    #[test]
    fn single_ap_sits_at_origin() {
        let cfg = SystemConfig { m: 1, k: 20, ..SystemConfig::desk() };
        let t = generate_topology(&cfg, 3).unwrap();
        assert_eq!(t.ap_positions[0].x, 0.0);
        assert_eq!(t.ap_positions[0].y, 0.0);
        assert!(t.distances.as_slice().iter().all(|&d| d >= 10.0));
    }

    #[test]
    fn same_seed_same_positions() {
        let cfg = SystemConfig::desk();
        assert_eq!(generate_topology(&cfg, 11).unwrap(), generate_topology(&cfg, 11).unwrap());
        assert_ne!(generate_topology(&cfg, 11).unwrap(), generate_topology(&cfg, 12).unwrap());
    }

    #[test]
    fn seven_sites_form_centre_plus_ring() {
        let aps = ap_layout(7, 200.0, 10.0);
        for ap in &aps[1..] {
            assert!((ap.horizontal_distance(&aps[0]) - 200.0).abs() < 1e-9);
        }
        // each ring site has exactly two ring neighbours at ISD
        for i in 1..7 {
            let close = (1..7)
                .filter(|&j| j != i && (aps[i].horizontal_distance(&aps[j]) - 200.0).abs() < 1e-9)
                .count();
            assert_eq!(close, 2);
        }
        let mut min = f64::INFINITY;
        for i in 0..7 {
            for j in i + 1..7 {
                min = min.min(aps[i].horizontal_distance(&aps[j]));
            }
        }
        assert!((min - 200.0).abs() < 1e-9);
    }

    #[test]
    fn three_sites_are_equilateral() {
        let aps = ap_layout(3, 200.0, 10.0);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((aps[i].horizontal_distance(&aps[j]) - 200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn impossible_geometry_is_rejected() {
        let cfg = SystemConfig { isd_m: Some(15.0), ..SystemConfig::desk() };
        assert!(matches!(generate_topology(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn uma_respects_min_distance() {
        let cfg = SystemConfig { scenario: Scenario::UMa, k: 40, ..SystemConfig::desk() };
        let t = generate_topology(&cfg, 5).unwrap();
        assert!(t.distances.as_slice().iter().all(|&d| d >= 35.0));
    }
}
