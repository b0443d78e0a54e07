use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, RigidTransform, Vec3};
use crate::motion_vae::{BehaviorTag, MotionClip};
use crate::skeleton::ArticulationFrame;

use super::DataError;

pub const DATASET_FORMAT: &str = "vpet-clips";
pub const DATASET_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u64,
    t_frames: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipLine {
    g0: [f64; 7],
    dg: Vec<[f64; 7]>,
    a: Vec<Vec<f64>>,
    p_limb: String,
    p_bg: String,
    d_fg: f64,
    tag: BehaviorTag,
}

fn encode_points(cloud: &PointCloud) -> String {
    let bytes: Vec<u8> = cloud.points().iter().flat_map(|p| p.to_array()).flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode_points(text: &str) -> Result<PointCloud, String> {
    let bytes = STANDARD.decode(text).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() % 24 != 0 {
        return Err(format!("{} bytes is not a whole number of points", bytes.len()));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let points = vals.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    PointCloud::new(points).map_err(|e| e.to_string())
}

fn to_line(clip: &MotionClip) -> ClipLine {
    ClipLine {
        g0: clip.g0.to_array7(),
        dg: clip.deltas.iter().map(RigidTransform::to_array7).collect(),
        a: clip.articulations.iter().map(ArticulationFrame::to_flat).collect(),
        p_limb: encode_points(&clip.limb_points),
        p_bg: encode_points(&clip.bg_points),
        d_fg: clip.d_fg,
        tag: clip.tag,
    }
}

fn from_line(line: ClipLine) -> Result<MotionClip, String> {
    let pose = |a: [f64; 7]| RigidTransform::from_array7_exact(a).ok_or_else(|| format!("invalid pose {a:?}"));
    let g0 = pose(line.g0)?;
    let deltas = line.dg.into_iter().map(pose).collect::<Result<Vec<_>, _>>()?;
    let articulations = line
        .a
        .iter()
        .map(|v| ArticulationFrame::from_flat(v).ok_or_else(|| format!("invalid articulation of {} values", v.len())))
        .collect::<Result<Vec<_>, _>>()?;
    let limb = decode_points(&line.p_limb).map_err(|e| format!("p_limb: {e}"))?;
    let bg = decode_points(&line.p_bg).map_err(|e| format!("p_bg: {e}"))?;
    MotionClip::new(g0, deltas, articulations, limb, bg, line.d_fg, line.tag).map_err(|e| e.to_string())
}

/// Writes a header line followed by one clip per line.
pub fn write_dataset(mut w: impl Write, clips: &[MotionClip]) -> Result<(), DataError> {
    let t = clips.first().map_or(0, |c| c.deltas.len());
    if let Some(i) = clips.iter().position(|c| c.deltas.len() != t) {
        return Err(DataError::Spec(format!("clip {i} has {} frames, clip 0 has {t}", clips[i].deltas.len())));
    }
    let header = Header { format: DATASET_FORMAT.into(), version: DATASET_VERSION, t_frames: t, count: clips.len() };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for clip in clips {
        serde_json::to_writer(&mut w, &to_line(clip)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. An empty input is an empty
/// dataset. Errors name the 1-based line they occurred on.
pub fn read_dataset(r: impl BufRead) -> Result<Vec<MotionClip>, DataError> {
    let mut clips = Vec::new();
    let mut header: Option<Header> = None;
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DataError::Schema { line: line_no, message };
        let Some(h) = &header else {
            let h: Header = serde_json::from_str(&line).map_err(|e| schema(format!("bad header: {e}")))?;
            if h.format != DATASET_FORMAT {
                return Err(schema(format!("unknown format {:?}", h.format)));
            }
            if h.version != DATASET_VERSION {
                return Err(DataError::Version { found: h.version, expected: DATASET_VERSION });
            }
            header = Some(h);
            continue;
        };
        let parsed: ClipLine = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let clip = from_line(parsed).map_err(schema)?;
        if clip.deltas.len() != h.t_frames {
            return Err(schema(format!("clip has {} frames, header says {}", clip.deltas.len(), h.t_frames)));
        }
        clips.push(clip);
    }
    if let Some(h) = header {
        if h.count != clips.len() {
            return Err(DataError::Schema {
                line: 1,
                message: format!("header lists {} clips, found {}", h.count, clips.len()),
            });
        }
    }
    Ok(clips)
}

pub fn write_dataset_file(path: impl AsRef<Path>, clips: &[MotionClip]) -> Result<(), DataError> {
    write_dataset(BufWriter::new(File::create(path)?), clips)
}

pub fn read_dataset_file(path: impl AsRef<Path>) -> Result<Vec<MotionClip>, DataError> {
    read_dataset(BufReader::new(File::open(path)?))
}
