//! Farthest point sampling and radius grouping of voxel centers.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, SparseVoxelGrid};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    /// Number of centroids `T`.
    pub centroids: usize,
    /// Neighbourhood radius `R` in meters.
    pub radius: f64,
    /// Maximum members per group `K`.
    pub max_members: usize,
    pub seed: u64,
    /// Start FPS from a seeded random point instead of index 0.
    #[serde(default)]
    pub random_start: bool,
}

impl GroupSpec {
    pub fn validate(&self) -> Result<()> {
        if self.centroids == 0 || self.max_members == 0 {
            return Err(Error::Config("group spec needs T >= 1 and K >= 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("group radius {} must be positive", self.radius)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    /// Centroid voxel indices in selection order.
    pub centroids: Vec<usize>,
    /// Member voxel indices per centroid, ascending.
    pub groups: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn empty() -> Self {
        Grouping { centroids: Vec::new(), groups: Vec::new() }
    }

    pub fn single(members: Vec<usize>) -> Self {
        Grouping { centroids: vec![members[0]], groups: vec![members] }
    }
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Greedy farthest point sampling from `start`. Each step picks the point
/// whose distance to the already selected set is largest, lowest index on
/// ties. Returns every index when `count >= points.len()`.
pub fn farthest_point_sample(points: &[Point3], count: usize, start: usize) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::invalid("farthest point sampling of an empty point set"));
    }
    if start >= points.len() {
        return Err(Error::invalid(format!("start index {start} out of range")));
    }
    let n = points.len();
    let count = count.min(n);
    let mut selected = Vec::with_capacity(count);
    let mut chosen = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = start;
    while selected.len() < count {
        selected.push(next);
        chosen[next] = true;
        let anchor = points[next];
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let d = distance(&points[i], &anchor);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if best.is_none_or(|(_, bd)| min_dist[i] > bd) {
                best = Some((i, min_dist[i]));
            }
        }
        match best {
            Some((i, _)) => next = i,
            None => break,
        }
    }
    Ok(selected)
}

/// Uniform bucket index with cell edge = query radius, so a radius query
/// only touches the 27 surrounding buckets.
struct BucketIndex<'a> {
    points: &'a [Point3],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> BucketIndex<'a> {
    fn new(points: &'a [Point3], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        BucketIndex { points, cell, buckets }
    }

    fn key(p: &Point3, cell: f64) -> [i64; 3] {
        [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ]
    }

    /// Indices within `radius` of `center`, ascending.
    fn within(&self, center: &Point3, radius: f64) -> Vec<usize> {
        let k = Self::key(center, self.cell);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    out.extend(bucket.iter().copied().filter(|&i| distance(&self.points[i], center) <= radius));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// FPS centroids over `points`, then every point within the radius of each
/// centroid; groups larger than `max_members` are cut down to a seeded
/// uniform subsample.
pub fn group_points(points: &[Point3], spec: &GroupSpec) -> Result<Grouping> {
    spec.validate()?;
    if points.is_empty() {
        return Err(Error::invalid("cannot group an empty voxel set"));
    }
    let start = if spec.random_start {
        rng_for(spec.seed, "fps-start").random_range(0..points.len())
    } else {
        0
    };
    let centroids = farthest_point_sample(points, spec.centroids, start)?;
    let index = BucketIndex::new(points, spec.radius);
    let mut rng = rng_for(spec.seed, "group-subsample");
    let groups = centroids
        .iter()
        .map(|&c| {
            let members = index.within(&points[c], spec.radius);
            if members.len() <= spec.max_members {
                return members;
            }
            let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), spec.max_members)
                .into_iter()
                .map(|i| members[i])
                .collect();
            picked.sort_unstable();
            picked
        })
        .collect();
    Ok(Grouping { centroids, groups })
}

pub fn gather_groups(grid: &SparseVoxelGrid, spec: &GroupSpec) -> Result<Grouping> {
    group_points(&grid.centers, spec)
}
