//! Preference data from rollouts: projected particle tracks, trajectory
//! distances to a reference, rankings and winner/loser pairs.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsplat::Camera;
use crate::mathcore::Vec3;
use crate::mpm::Rollout;
use crate::policy::SampledParams;

/// Default number of tracked particles.
pub const DEFAULT_TRACKED_POINTS: usize = 256;

/// Pixel tracks of `M` points over `T` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    frames: usize,
    /// Tracked particle indices, one per point.
    particle_ids: Vec<usize>,
    /// Frame-major `T×M` pixel coordinates; NaN where the point is invalid.
    coords: Vec<[f64; 2]>,
    /// A point is valid when it projects in front of the camera in every
    /// frame.
    valid: Vec<bool>,
    pub camera: Option<Camera>,
}

impl TrajectorySet {
    pub fn new(frames: usize, particle_ids: Vec<usize>, coords: Vec<[f64; 2]>) -> Result<Self> {
        let m = particle_ids.len();
        if coords.len() != frames * m {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates for {frames} frames × {m} points",
                coords.len()
            )));
        }
        let mut sorted = particle_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("tracked particle ids must be unique".into()));
        }
        let valid = (0..m)
            .map(|p| (0..frames).all(|t| coords[t * m + p].iter().all(|c| c.is_finite())))
            .collect();
        Ok(TrajectorySet {
            frames,
            particle_ids,
            coords,
            valid,
            camera: None,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn point_count(&self) -> usize {
        self.particle_ids.len()
    }

    pub fn particle_ids(&self) -> &[usize] {
        &self.particle_ids
    }

    pub fn is_valid(&self, point: usize) -> bool {
        self.valid[point]
    }

    pub fn get(&self, frame: usize, point: usize) -> [f64; 2] {
        self.coords[frame * self.particle_ids.len() + point]
    }

    /// Writes `frame,point_id,u_px,v_px` rows, `point_id` being the tracked
    /// particle index.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(["frame", "point_id", "u_px", "v_px"])
            .map_err(csv_err)?;
        for t in 0..self.frames {
            for (m, id) in self.particle_ids.iter().enumerate() {
                let [u, v] = self.get(t, m);
                wr.serialize(TrackRow {
                    frame: t,
                    point_id: *id,
                    u_px: u,
                    v_px: v,
                })
                .map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads tracks in the format of [`TrajectorySet::write_csv`]. Rows may
    /// come in any order but must cover every (frame, point) exactly once.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rows: Vec<TrackRow> = Vec::new();
        for (i, row) in csv::Reader::from_reader(r).deserialize().enumerate() {
            rows.push(row.map_err(|e| Error::format("track csv", format!("row {}: {e}", i + 1)))?);
        }
        let mut ids: Vec<usize> = rows.iter().map(|r| r.point_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let frames = rows.iter().map(|r| r.frame + 1).max().unwrap_or(0);
        let m = ids.len();
        if rows.len() != frames * m {
            return Err(Error::format(
                "track csv",
                format!("{} rows for {frames} frames × {m} points", rows.len()),
            ));
        }
        let mut coords = vec![[f64::NAN; 2]; frames * m];
        let mut seen = vec![false; frames * m];
        for r in rows {
            let p = ids.binary_search(&r.point_id).expect("id collected above");
            let slot = r.frame * m + p;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(Error::format(
                    "track csv",
                    format!("duplicate row for frame {} point {}", r.frame, r.point_id),
                ));
            }
            coords[slot] = [r.u_px, r.v_px];
        }
        TrajectorySet::new(frames, ids, coords)
    }
}

#[derive(Serialize, Deserialize)]
struct TrackRow {
    frame: usize,
    point_id: usize,
    u_px: f64,
    v_px: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("track csv", e.to_string())
}

/// Projects the tracked particles of every rollout frame through `camera`.
pub fn track(rollout: &Rollout, camera: &Camera, tracked_ids: &[usize]) -> Result<TrajectorySet> {
    camera.validate()?;
    if let Some(&bad) = tracked_ids.iter().find(|&&i| i >= rollout.particle_count()) {
        return Err(Error::InvalidParameter(format!(
            "tracked id {bad} out of range for {} particles",
            rollout.particle_count()
        )));
    }
    let mut coords = Vec::with_capacity(rollout.frame_count() * tracked_ids.len());
    for frame in rollout.frames() {
        for &id in tracked_ids {
            coords.push(match camera.project(frame.positions[id]) {
                Some((uv, _)) => uv,
                None => [f64::NAN; 2],
            });
        }
    }
    let mut set = TrajectorySet::new(rollout.frame_count(), tracked_ids.to_vec(), coords)?;
    set.camera = Some(camera.clone());
    Ok(set)
}

/// Mean per-point Euclidean distance (px) between corresponding tracks,
/// over points valid in both sets.
pub fn trajectory_distance(a: &TrajectorySet, b: &TrajectorySet) -> Result<f64> {
    if a.frames != b.frames {
        return Err(Error::IncomparableTrajectories(format!(
            "{} vs {} frames",
            a.frames, b.frames
        )));
    }
    if a.particle_ids != b.particle_ids {
        return Err(Error::IncomparableTrajectories(format!(
            "tracked ids differ ({} vs {} points)",
            a.point_count(),
            b.point_count()
        )));
    }
    let m = a.point_count();
    let points: Vec<usize> = (0..m).filter(|&p| a.valid[p] && b.valid[p]).collect();
    if points.is_empty() || a.frames == 0 {
        return Err(Error::IncomparableTrajectories("no valid tracked points".into()));
    }
    let mut sum = 0.0;
    for t in 0..a.frames {
        for &p in &points {
            let (u, v) = (a.get(t, p), b.get(t, p));
            sum += (u[0] - v[0]).hypot(u[1] - v[1]);
        }
    }
    Ok(sum / (a.frames * points.len()) as f64)
}

/// Picks `count` well-spread indices: start at index 0, then repeatedly the
/// point farthest from all picked ones (lowest index on ties).
pub fn farthest_point_sampling(positions: &[Vec3], count: usize) -> Vec<usize> {
    let n = positions.len();
    if count >= n {
        return (0..n).collect();
    }
    let mut picked = Vec::with_capacity(count);
    if count == 0 {
        return picked;
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut next = 0usize;
    for _ in 0..count {
        picked.push(next);
        let anchor = positions[next];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, x) in positions.iter().enumerate() {
            let d = (*x - anchor).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        next = best.1;
    }
    picked.sort_unstable();
    picked
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry<T = SampledParams> {
    /// Position in the input candidate list.
    pub index: usize,
    pub params: T,
    pub distance: f64,
}

/// Candidates in ascending distance order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates<T = SampledParams> {
    pub entries: Vec<RankedEntry<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair<T = SampledParams> {
    pub winner: T,
    pub loser: T,
    /// `d_loser − d_winner`, strictly positive.
    pub margin: f64,
}

/// Sorts candidates by distance (ties by input index) and emits every pair
/// whose distances differ strictly.
pub fn rank_and_pair<T: Clone>(
    candidates: &[(T, f64)],
) -> Result<(RankedCandidates<T>, Vec<PreferencePair<T>>)> {
    if candidates.len() < 2 {
        return Err(Error::InsufficientCandidates(candidates.len()));
    }
    if let Some((i, (_, d))) = candidates
        .iter()
        .enumerate()
        .find(|(_, (_, d))| !(d.is_finite() && *d >= 0.0))
    {
        return Err(Error::InvalidParameter(format!(
            "candidate {i} has distance {d}"
        )));
    }
    let mut entries: Vec<RankedEntry<T>> = candidates
        .iter()
        .enumerate()
        .map(|(index, (params, distance))| RankedEntry {
            index,
            params: params.clone(),
            distance: *distance,
        })
        .collect();
    entries.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    let mut pairs = Vec::new();
    for (i, w) in entries.iter().enumerate() {
        for l in &entries[i + 1..] {
            if w.distance < l.distance {
                pairs.push(PreferencePair {
                    winner: w.params.clone(),
                    loser: l.params.clone(),
                    margin: l.distance - w.distance,
                });
            }
        }
    }
    Ok((RankedCandidates { entries }, pairs))
}
