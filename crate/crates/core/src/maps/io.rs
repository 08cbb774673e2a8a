//! Flat binary voxel-map files with a TOML sidecar.
//!
//! Binary layout, all little-endian:
//!
//! | offset | size     | field                                   |
//! |--------|----------|-----------------------------------------|
//! | 0      | 8        | magic `APEXVOX1`                        |
//! | 8      | 8        | channel count `C` (u64)                 |
//! | 16     | 24       | origin x, y, z (f64)                    |
//! | 40     | 8        | resolution (f64)                        |
//! | 48     | 24       | dims nx, ny, nz (u64)                   |
//! | 72     | 8·C·N    | C channels of N = nx·ny·nz f64 values   |
//!
//! Each channel is stored x-fastest (then y, then z). The sidecar
//! `<file>.meta.toml` names the channels in order and records map versions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttractionMap, ExplorationMap, MapFrame, ObstacleMap};
use crate::error::{ApexError, Result};
use crate::geometry::{GridSpec, Vec3};

pub const MAGIC: &[u8; 8] = b"APEXVOX1";
const HEADER_LEN: usize = 72;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapChannel {
    AttractionScore,
    AttractionDepth,
    Exploration,
    Obstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub format: String,
    pub channels: Vec<MapChannel>,
    pub attraction_version: Option<u64>,
    pub exploration_version: Option<u64>,
    pub obstacle_version: Option<u64>,
    pub decay_rate: Option<f64>,
    pub saturation: Option<f64>,
    pub note: Option<String>,
}

/// Decoded map file: grid, channels and sidecar metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct MapFile {
    pub grid: GridSpec,
    pub metadata: MapMetadata,
    pub data: Vec<Vec<f64>>,
}

impl MapFile {
    pub fn from_attraction(map: &AttractionMap, note: Option<String>) -> Self {
        MapFile {
            grid: *map.grid(),
            metadata: MapMetadata {
                format: "APEXVOX1".into(),
                channels: vec![MapChannel::AttractionScore, MapChannel::AttractionDepth],
                attraction_version: Some(map.version()),
                exploration_version: None,
                obstacle_version: None,
                decay_rate: None,
                saturation: None,
                note,
            },
            data: vec![map.scores().to_vec(), map.depths().to_vec()],
        }
    }

    pub fn from_frame(frame: &MapFrame, note: Option<String>) -> Self {
        let v = frame.versions();
        MapFile {
            grid: frame.grid,
            metadata: MapMetadata {
                format: "APEXVOX1".into(),
                channels: vec![
                    MapChannel::AttractionScore,
                    MapChannel::AttractionDepth,
                    MapChannel::Exploration,
                    MapChannel::Obstacle,
                ],
                attraction_version: Some(v.attraction),
                exploration_version: Some(v.exploration),
                obstacle_version: Some(v.obstacle),
                decay_rate: Some(frame.exploration.decay_rate()),
                saturation: Some(frame.exploration.saturation()),
                note,
            },
            data: vec![
                frame.attraction.scores().to_vec(),
                frame.attraction.depths().to_vec(),
                frame.exploration.values().to_vec(),
                frame
                    .obstacle
                    .cells()
                    .iter()
                    .map(|&o| if o { 1.0 } else { 0.0 })
                    .collect(),
            ],
        }
    }

    pub fn channel(&self, c: MapChannel) -> Option<&[f64]> {
        let i = self.metadata.channels.iter().position(|x| *x == c)?;
        Some(&self.data[i])
    }

    pub fn attraction(&self) -> Option<AttractionMap> {
        let score = self.channel(MapChannel::AttractionScore)?.to_vec();
        let depth = self.channel(MapChannel::AttractionDepth)?.to_vec();
        Some(AttractionMap::from_parts(
            self.grid,
            score,
            depth,
            self.metadata.attraction_version.unwrap_or(0),
        ))
    }

    pub fn exploration(&self) -> Option<ExplorationMap> {
        let gain = self.channel(MapChannel::Exploration)?.to_vec();
        Some(ExplorationMap::from_parts(
            self.grid,
            gain,
            self.metadata.decay_rate.unwrap_or(0.05),
            self.metadata.saturation.unwrap_or(5.0),
            self.metadata.exploration_version.unwrap_or(0),
        ))
    }

    pub fn obstacle(&self) -> Option<ObstacleMap> {
        let occ = self
            .channel(MapChannel::Obstacle)?
            .iter()
            .map(|&x| x != 0.0)
            .collect();
        Some(ObstacleMap::from_parts(
            self.grid,
            occ,
            self.metadata.obstacle_version.unwrap_or(0),
        ))
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.grid.num_cells();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for c in self.grid.origin.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.grid.resolution.to_le_bytes());
        for d in self.grid.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for ch in &self.data {
            debug_assert_eq!(ch.len(), n);
            for x in ch {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Decodes the binary body; channel names come from `metadata`.
    pub fn decode(bytes: &[u8], metadata: MapMetadata, path: &Path) -> Result<Self> {
        let bad = |m: &str| ApexError::format(path, m.to_string());
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(bad("missing APEXVOX1 header"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let channels = u64_at(8) as usize;
        let origin = Vec3::new(f64_at(16), f64_at(24), f64_at(32));
        let resolution = f64_at(40);
        let dims = [
            u64_at(48) as usize,
            u64_at(56) as usize,
            u64_at(64) as usize,
        ];
        let grid = GridSpec::new(origin, resolution, dims).map_err(|e| bad(&e.to_string()))?;
        let n = grid.num_cells();
        if bytes.len() != HEADER_LEN + 8 * n * channels {
            return Err(bad("body length does not match header"));
        }
        if metadata.channels.len() != channels {
            return Err(bad("sidecar channel list does not match header"));
        }
        let data = (0..channels)
            .map(|c| {
                (0..n)
                    .map(|i| f64_at(HEADER_LEN + 8 * (c * n + i)))
                    .collect()
            })
            .collect();
        Ok(MapFile {
            grid,
            metadata,
            data,
        })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

pub fn write_map_file(path: &Path, file: &MapFile) -> Result<()> {
    fs::write(path, file.encode()).map_err(|e| ApexError::io(path, e))?;
    let meta =
        toml::to_string(&file.metadata).map_err(|e| ApexError::format(path, e.to_string()))?;
    let side = sidecar_path(path);
    fs::write(&side, meta).map_err(|e| ApexError::io(side, e))
}

pub fn read_map_file(path: &Path) -> Result<MapFile> {
    let bytes = fs::read(path).map_err(|e| ApexError::io(path, e))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| ApexError::io(&side, e))?;
    let metadata: MapMetadata =
        toml::from_str(&text).map_err(|e| ApexError::format(&side, e.to_string()))?;
    MapFile::decode(&bytes, metadata, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelIndex;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let grid = GridSpec::new(Vec3::new(1.0, 2.0, 3.0), 0.5, [2, 1, 1]).unwrap();
        let mut map = AttractionMap::new(grid);
        map.set(VoxelIndex::new(1, 0, 0), 0.75, 2.0);
        let bytes = MapFile::from_attraction(&map, None).encode();
        assert_eq!(bytes.len(), 72 + 2 * 2 * 8);
        assert_eq!(&bytes[..8], b"APEXVOX1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0.5);
        // score channel: [0.0, 0.75], depth channel: [inf, 2.0]
        assert_eq!(f64::from_le_bytes(bytes[80..88].try_into().unwrap()), 0.75);
        assert_eq!(
            f64::from_le_bytes(bytes[88..96].try_into().unwrap()),
            f64::INFINITY
        );
    }

    #[test]
    fn truncated_files_are_rejected() {
        let grid = GridSpec::new(Vec3::zeros(), 1.0, [2, 2, 2]).unwrap();
        let file = MapFile::from_attraction(&AttractionMap::new(grid), None);
        let bytes = file.encode();
        let err = MapFile::decode(
            &bytes[..bytes.len() - 1],
            file.metadata.clone(),
            Path::new("x"),
        );
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn frame_round_trips_through_the_file(values in proptest::collection::vec(0.0..1.0f64, 12)) {
            let grid = GridSpec::new(Vec3::new(-1.0, 0.0, 2.0), 2.0, [3, 2, 2]).unwrap();
            let mut frame = MapFrame::new(grid, 0.05, 5.0);
            for (i, v) in values.iter().enumerate() {
                let idx = grid.unlinear(i);
                frame.attraction_mut().set(idx, *v, 1.0 + v);
                frame.exploration_mut().set(idx, v * 3.0);
                if *v > 0.5 { frame.obstacle_mut().mark(idx); }
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("frame.bin");
            write_map_file(&path, &MapFile::from_frame(&frame, Some("t".into()))).unwrap();
            let back = read_map_file(&path).unwrap();
            prop_assert_eq!(&back.attraction().unwrap(), frame.attraction.as_ref());
            let expl = back.exploration().unwrap();
            let obst = back.obstacle().unwrap();
            prop_assert_eq!(expl.values(), frame.exploration.values());
            prop_assert_eq!(obst.cells(), frame.obstacle.cells());
        }
    }
}
