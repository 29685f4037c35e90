//! Great-circle distance, square grid blocks and spatial thinning.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng as _;

use crate::data::{Dataset, RecordId};
use crate::error::{Error, Result};
use crate::rng;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometres per degree of latitude on the reference sphere.
pub const KM_PER_DEGREE: f64 = std::f64::consts::PI * EARTH_RADIUS_KM / 180.0;

/// Haversine distance between two `(lon, lat)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Local equirectangular projection: longitude scaled by the cosine of a
/// reference latitude, both axes in km relative to an origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    pub origin: (f64, f64),
    pub lon_scale: f64,
}

impl LocalProjection {
    pub fn new(origin: (f64, f64), reference_lat: f64) -> Self {
        LocalProjection {
            origin,
            lon_scale: reference_lat.to_radians().cos(),
        }
    }

    /// Projection for a dataset: origin at the bounding-box lower-left
    /// corner, scaled at the mean record latitude.
    pub fn for_dataset(d: &Dataset) -> Option<Self> {
        let (min_lon, min_lat, _, _) = d.bbox()?;
        let mean_lat = d.records().iter().map(|r| r.lat).sum::<f64>() / d.len() as f64;
        Some(LocalProjection::new((min_lon, min_lat), mean_lat))
    }

    pub fn forward(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            (lon - self.origin.0) * self.lon_scale * KM_PER_DEGREE,
            (lat - self.origin.1) * KM_PER_DEGREE,
        )
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.origin.0 + x / (self.lon_scale * KM_PER_DEGREE),
            self.origin.1 + y / KM_PER_DEGREE,
        )
    }
}

/// Grid cell per record plus the cell coordinates of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAssignment {
    /// Record ids in dataset order.
    pub ids: Vec<RecordId>,
    /// Block of each record, parallel to `ids`; contiguous from 0.
    pub block_ids: Vec<usize>,
    pub block_size_km: f64,
    /// Grid anchor `(lon, lat)`: the bounding-box lower-left corner shifted
    /// back by the jitter.
    pub origin: (f64, f64),
    /// `(column, row)` grid cell of each block id.
    pub cells: Vec<(i64, i64)>,
}

impl BlockAssignment {
    pub fn n_blocks(&self) -> usize {
        self.cells.len()
    }

    /// Record count per block.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_blocks()];
        for &b in &self.block_ids {
            sizes[b] += 1;
        }
        sizes
    }

    /// True when the two blocks share an edge or a corner (or are the same).
    pub fn touching(&self, a: usize, b: usize) -> bool {
        let (ca, cb) = (self.cells[a], self.cells[b]);
        (ca.0 - cb.0).abs() <= 1 && (ca.1 - cb.1).abs() <= 1
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,block_id\n");
        for (id, b) in self.ids.iter().zip(&self.block_ids) {
            out.push_str(&format!("{id},{b}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Square blocks of `block_size_km`, anchored at the bounding-box corner and
/// jittered by a seed-dependent offset in `[0, block_size_km)` on each axis.
pub fn assign_grid_blocks(d: &Dataset, block_size_km: f64, seed: u64) -> Result<BlockAssignment> {
    if !(block_size_km > 0.0 && block_size_km.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "block size must be positive, got {block_size_km}"
        )));
    }
    let mut r = rng::rng(seed);
    let offset = (r.random::<f64>() * block_size_km, r.random::<f64>() * block_size_km);
    assign_grid_blocks_with_offset(d, block_size_km, offset)
}

/// [`assign_grid_blocks`] with an explicit jitter `(dx, dy)` in km.
pub fn assign_grid_blocks_with_offset(
    d: &Dataset,
    block_size_km: f64,
    offset_km: (f64, f64),
) -> Result<BlockAssignment> {
    if !(block_size_km > 0.0 && block_size_km.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "block size must be positive, got {block_size_km}"
        )));
    }
    let proj = LocalProjection::for_dataset(d)
        .ok_or_else(|| Error::InvalidArgument("cannot block an empty dataset".into()))?;
    let raw: Vec<(i64, i64)> = d
        .records()
        .iter()
        .map(|r| {
            let (x, y) = proj.forward(r.lon, r.lat);
            (
                ((x + offset_km.0) / block_size_km).floor() as i64,
                ((y + offset_km.1) / block_size_km).floor() as i64,
            )
        })
        .collect();
    // Block ids follow row-major cell order so numbering does not depend on record order.
    let occupied: BTreeSet<(i64, i64)> = raw.iter().map(|&(c, r)| (r, c)).collect();
    let numbering: BTreeMap<(i64, i64), usize> = occupied.iter().enumerate().map(|(i, &(r, c))| ((c, r), i)).collect();
    let mut cells = vec![(0, 0); numbering.len()];
    for (&cell, &b) in &numbering {
        cells[b] = cell;
    }
    let origin = proj.inverse(-offset_km.0, -offset_km.1);
    Ok(BlockAssignment {
        ids: d.ids(),
        block_ids: raw.iter().map(|c| numbering[c]).collect(),
        block_size_km,
        origin,
        cells,
    })
}

/// Conflict graph: for every record, the records closer than `min_km`.
fn conflict_graph(d: &Dataset, min_km: f64) -> Vec<Vec<usize>> {
    let n = d.len();
    let recs = d.records();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| recs[a].lat.total_cmp(&recs[b].lat).then(a.cmp(&b)));
    // A great-circle distance below min_km implies a latitude gap below it too.
    let lat_window = min_km / KM_PER_DEGREE;
    let mut adj = vec![Vec::new(); n];
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[oi + 1..] {
            if recs[j].lat - recs[i].lat > lat_window {
                break;
            }
            if haversine_km((recs[i].lon, recs[i].lat), (recs[j].lon, recs[j].lat)) < min_km {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    adj
}

/// Randomised greedy thinning: repeatedly remove one of the records with
/// the most neighbours closer than `min_dist_m` (chosen uniformly by seed)
/// until no conflicts remain, then re-admit removed records that no longer
/// conflict with anything retained. Returns retained ids in dataset order.
pub fn thin(d: &Dataset, min_dist_m: f64, seed: u64) -> Result<Vec<RecordId>> {
    if !(min_dist_m > 0.0 && min_dist_m.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "minimum distance must be positive, got {min_dist_m}"
        )));
    }
    let n = d.len();
    let adj = conflict_graph(d, min_dist_m / 1000.0);
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut alive = vec![true; n];
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (degree[i], i)).collect();
    let mut removed = Vec::new();
    let mut r = rng::rng(seed);
    while let Some(&(worst, _)) = queue.last() {
        if worst == 0 {
            break;
        }
        let tied: Vec<usize> = queue.range((worst, 0)..=(worst, usize::MAX)).map(|&(_, i)| i).collect();
        let victim = tied[r.random_range(0..tied.len())];
        queue.remove(&(worst, victim));
        alive[victim] = false;
        removed.push(victim);
        for &j in &adj[victim] {
            if alive[j] {
                queue.remove(&(degree[j], j));
                degree[j] -= 1;
                queue.insert((degree[j], j));
            }
        }
    }
    for &i in &removed {
        if adj[i].iter().all(|&j| !alive[j]) {
            alive[i] = true;
        }
    }
    Ok(d.records()
        .iter()
        .zip(&alive)
        .filter(|(_, &keep)| keep)
        .map(|(rec, _)| rec.id)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::record;
    use proptest::prelude::*;

    fn points(coords: &[(f64, f64)]) -> Dataset {
        let records = coords
            .iter()
            .enumerate()
            .map(|(i, &(lon, lat))| record(i as RecordId, lon, lat, 2000, (i % 2) as u8, vec![]))
            .collect();
        Dataset::new(records, vec![]).unwrap()
    }

    #[test]
    fn haversine_reference_values() {
        assert_eq!(haversine_km((10.0, 60.0), (10.0, 60.0)), 0.0);
        let half = std::f64::consts::PI * EARTH_RADIUS_KM;
        assert!((haversine_km((0.0, 0.0), (180.0, 0.0)) - half).abs() < 0.01);
        assert!((haversine_km((0.0, 0.0), (180.0, 0.0)) - 20015.09).abs() < 0.01);
        assert!((haversine_km((0.0, 0.0), (0.0, 1.0)) - 111.195).abs() < 0.001);
        assert!((haversine_km((0.0, 0.0), (0.0, 1.0)) - KM_PER_DEGREE).abs() < 1e-9);
    }

    #[test]
    fn one_block_when_block_covers_extent() {
        let d = points(&[(10.0, 60.0), (10.5, 60.2), (11.0, 60.4)]);
        let diag = haversine_km((10.0, 60.0), (11.0, 60.4));
        let b0 = assign_grid_blocks_with_offset(&d, diag * 1.01, (0.0, 0.0)).unwrap();
        assert_eq!(b0.n_blocks(), 1);
        // A jittered grid line can cut the box, never more than once per axis.
        for seed in 0..20 {
            assert!(assign_grid_blocks(&d, diag * 1.01, seed).unwrap().n_blocks() <= 4);
        }
    }

    #[test]
    fn distant_points_split_without_jitter() {
        let lon = 500.0 / KM_PER_DEGREE;
        let d = points(&[(0.0, 0.0), (lon, 0.0)]);
        let b = assign_grid_blocks_with_offset(&d, 200.0, (0.0, 0.0)).unwrap();
        assert_ne!(b.block_ids[0], b.block_ids[1]);
        assert_eq!(b.n_blocks(), 2);
    }

    #[test]
    fn block_ids_contiguous() {
        let d = points(&[(0.0, 0.0), (3.0, 0.0), (0.0, 3.0), (3.0, 3.0), (0.1, 0.1)]);
        let b = assign_grid_blocks(&d, 100.0, 11).unwrap();
        let used: BTreeSet<usize> = b.block_ids.iter().copied().collect();
        assert_eq!(used, (0..b.n_blocks()).collect());
        assert!(assign_grid_blocks(&d, 0.0, 1).is_err());
        assert!(assign_grid_blocks(&points(&[]), 10.0, 1).is_err());
    }

    #[test]
    fn thin_keeps_well_spaced_points() {
        let d = points(&[(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)]);
        assert_eq!(thin(&d, 500.0, 1).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn thin_coincident_points() {
        let d = points(&[(5.0, 5.0), (5.0, 5.0)]);
        assert_eq!(thin(&d, 500.0, 9).unwrap().len(), 1);
    }

    /// Largest conflict-free subset by enumeration.
    fn max_independent_set(adj: &[Vec<usize>]) -> usize {
        let n = adj.len();
        (0u32..1 << n)
            .filter(|&mask| (0..n).all(|i| mask & (1 << i) == 0 || adj[i].iter().all(|&j| mask & (1 << j) == 0)))
            .map(u32::count_ones)
            .max()
            .unwrap() as usize
    }

    #[test]
    fn thin_collinear_triple() {
        let step = 0.4 / KM_PER_DEGREE;
        let d = points(&[(0.0, 0.0), (step, 0.0), (2.0 * step, 0.0)]);
        let adj = conflict_graph(&d, 0.5);
        assert_eq!(max_independent_set(&adj), 2);
        for seed in 0..10 {
            assert_eq!(thin(&d, 500.0, seed).unwrap(), vec![0, 2]);
        }
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((10.0f64..10.05, 60.0f64..60.03), 1..60)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn haversine_triangle_inequality(
            a in (-180.0f64..180.0, -90.0f64..90.0),
            b in (-180.0f64..180.0, -90.0f64..90.0),
            c in (-180.0f64..180.0, -90.0f64..90.0),
        ) {
            let ab = haversine_km(a, b);
            prop_assert!((ab - haversine_km(b, a)).abs() < 1e-9);
            prop_assert!(ab >= 0.0);
            prop_assert!(haversine_km(a, c) <= ab + haversine_km(b, c) + 1e-9);
        }

        #[test]
        fn thinning_is_feasible_and_maximal(cloud in arb_cloud(), seed in 0u64..1000) {
            let d = points(&cloud);
            let kept = thin(&d, 500.0, seed).unwrap();
            prop_assert_eq!(&kept, &thin(&d, 500.0, seed).unwrap());
            let kept_set: BTreeSet<_> = kept.iter().copied().collect();
            for (i, &a) in kept.iter().enumerate() {
                let ra = d.get(a).unwrap();
                for &b in &kept[i + 1..] {
                    let rb = d.get(b).unwrap();
                    prop_assert!(haversine_km((ra.lon, ra.lat), (rb.lon, rb.lat)) >= 0.5);
                }
            }
            for r in d.records().iter().filter(|r| !kept_set.contains(&r.id)) {
                let blocked = kept.iter().any(|&k| {
                    let rk = d.get(k).unwrap();
                    haversine_km((r.lon, r.lat), (rk.lon, rk.lat)) < 0.5
                });
                prop_assert!(blocked, "record {} could be re-added", r.id);
            }
        }

        #[test]
        fn non_touching_blocks_are_separated(
            cloud in proptest::collection::vec((0.0f64..4.0, 40.0f64..41.0), 2..80),
            block in 20.0f64..120.0,
            seed in 0u64..100,
        ) {
            let d = points(&cloud);
            let b = assign_grid_blocks(&d, block, seed).unwrap();
            let proj = LocalProjection::for_dataset(&d).unwrap();
            // Planar separation is exact; great-circle distance may fall short
            // of it by the projection's scale error across the box.
            let lats: Vec<f64> = d.records().iter().map(|r| r.lat).collect();
            let (lo, hi) = lats.iter().fold((90.0f64, -90.0f64), |(l, h), &v| (l.min(v), h.max(v)));
            let worst_cos = lo.abs().max(hi.abs()).to_radians().cos();
            let distortion = worst_cos / proj.lon_scale;
            let recs = d.records();
            for i in 0..recs.len() {
                for j in i + 1..recs.len() {
                    let (bi, bj) = (b.block_ids[i], b.block_ids[j]);
                    if b.touching(bi, bj) {
                        continue;
                    }
                    let p = proj.forward(recs[i].lon, recs[i].lat);
                    let q = proj.forward(recs[j].lon, recs[j].lat);
                    let planar = (p.0 - q.0).abs().max((p.1 - q.1).abs());
                    prop_assert!(planar >= block - 1e-9);
                    let gc = haversine_km((recs[i].lon, recs[i].lat), (recs[j].lon, recs[j].lat));
                    prop_assert!(gc >= block * distortion * 0.999, "{gc} < {block}");
                }
            }
        }
    }
}
