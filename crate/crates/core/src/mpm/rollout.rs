//! Frame snapshots of a simulation and their on-disk container.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `GPHYSRL\0` |
//! | 4     | format version (`u32`, currently 1) |
//! | 8     | particle count `N` (`u64`) |
//! | 8     | frame count `T` (`u64`) |
//! | per frame | `N×3` positions then `N×9` row-major deformation gradients, `f64` |

use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::mathcore::{Mat3, Vec3};
use crate::mpm::Particle;

pub const ROLLOUT_MAGIC: [u8; 8] = *b"GPHYSRL\0";
pub const ROLLOUT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSnapshot {
    pub positions: Vec<Vec3>,
    pub deformation: Vec<Mat3>,
}

impl FrameSnapshot {
    pub fn capture(particles: &[Particle]) -> Self {
        FrameSnapshot {
            positions: particles.iter().map(|p| p.x).collect(),
            deformation: particles.iter().map(|p| p.f).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    particle_count: usize,
    frames: Vec<FrameSnapshot>,
    /// Particles clamped per frame; not persisted.
    clamp_counts: Vec<usize>,
}

impl Rollout {
    pub fn with_capacity(particle_count: usize, frames: usize) -> Self {
        Rollout {
            particle_count,
            frames: Vec::with_capacity(frames),
            clamp_counts: Vec::with_capacity(frames),
        }
    }

    pub fn from_frames(particle_count: usize, frames: Vec<FrameSnapshot>) -> Result<Self> {
        for (i, f) in frames.iter().enumerate() {
            if f.positions.len() != particle_count || f.deformation.len() != particle_count {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i} has {} particles, expected {particle_count}",
                    f.positions.len()
                )));
            }
        }
        let clamp_counts = vec![0; frames.len()];
        Ok(Rollout {
            particle_count,
            frames,
            clamp_counts,
        })
    }

    pub(crate) fn push(&mut self, frame: FrameSnapshot, clamped: usize) {
        debug_assert_eq!(frame.positions.len(), self.particle_count);
        self.frames.push(frame);
        self.clamp_counts.push(clamped);
    }

    pub fn particle_count(&self) -> usize {
        self.particle_count
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[FrameSnapshot] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &FrameSnapshot {
        &self.frames[i]
    }

    pub fn clamp_counts(&self) -> &[usize] {
        &self.clamp_counts
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&ROLLOUT_MAGIC)?;
        w.write_all(&ROLLOUT_VERSION.to_le_bytes())?;
        w.write_all(&(self.particle_count as u64).to_le_bytes())?;
        w.write_all(&(self.frames.len() as u64).to_le_bytes())?;
        for frame in &self.frames {
            for x in &frame.positions {
                for v in x.0 {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for f in &frame.deformation {
                for v in f.to_array() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != ROLLOUT_MAGIC {
            return Err(Error::format("rollout", "bad magic bytes"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != ROLLOUT_VERSION {
            return Err(Error::format(
                "rollout",
                format!("unsupported version {version}"),
            ));
        }
        let n = read_u64(&mut r)? as usize;
        let t = read_u64(&mut r)? as usize;
        let mut frames = Vec::with_capacity(t.min(1 << 16));
        for _ in 0..t {
            let mut positions = Vec::with_capacity(n);
            for _ in 0..n {
                positions.push(Vec3([read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?]));
            }
            let mut deformation = Vec::with_capacity(n);
            for _ in 0..n {
                let mut a = [0.0; 9];
                for v in a.iter_mut() {
                    *v = read_f64(&mut r)?;
                }
                deformation.push(Mat3::from_array(a));
            }
            frames.push(FrameSnapshot {
                positions,
                deformation,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format("rollout", "trailing bytes after last frame"));
        }
        Rollout::from_frames(n, frames)
    }

    /// Writes one frame as `particle_id,x,y,z` CSV.
    pub fn write_frame_csv<W: Write>(&self, frame: usize, mut w: W) -> io::Result<()> {
        writeln!(w, "particle_id,x,y,z")?;
        for (i, x) in self.frames[frame].positions.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", x[0], x[1], x[2])?;
        }
        w.flush()
    }

    /// Reads positions written by [`Rollout::write_frame_csv`].
    pub fn read_frame_csv<R: BufRead>(r: R) -> Result<Vec<Vec3>> {
        let mut out = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            if ln == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::format("frame csv", format!("line {}: expected 4 columns", ln + 1)));
            }
            let id: usize = cols[0]
                .trim()
                .parse()
                .map_err(|_| Error::format("frame csv", format!("line {}: bad id", ln + 1)))?;
            if id != out.len() {
                return Err(Error::format("frame csv", format!("line {}: ids out of order", ln + 1)));
            }
            let mut x = Vec3::ZERO;
            for d in 0..3 {
                x[d] = cols[d + 1].trim().parse().map_err(|_| {
                    Error::format("frame csv", format!("line {}: bad coordinate", ln + 1))
                })?;
            }
            out.push(x);
        }
        Ok(out)
    }
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
