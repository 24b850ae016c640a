//! Multi-resolution hash grid encoding.
//!
//! Each level is a table of `T` feature rows of width `F`. A point is mapped
//! into the unit cube, the 8 surrounding vertices of its cell are looked up
//! (densely on coarse levels, spatially hashed on fine ones) and their rows
//! trilinearly interpolated. The per-level results are concatenated.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

const PRIME_Y: u32 = 2_654_435_761;
const PRIME_Z: u32 = 805_459_861;
const INIT_RANGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashGridConfig {
    pub levels: usize,
    /// Entries per level; must be a power of two.
    pub table_size: usize,
    pub features_per_level: usize,
    pub base_resolution: u32,
    pub growth: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        let levels = 12;
        Self {
            levels,
            table_size: 1 << 16,
            features_per_level: 2,
            base_resolution: 16,
            growth: (2048.0f64 / 16.0).powf(1.0 / (levels - 1) as f64),
        }
    }
}

impl HashGridConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }
}

/// One trilinear tap: table offset of the row and its weight.
pub type Corner = (u32, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid {
    config: HashGridConfig,
    resolutions: Vec<u32>,
    /// `levels × table_size × features_per_level`, row-major.
    pub tables: Vec<f64>,
    bounds: ([f64; 3], [f64; 3]),
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl HashGrid {
    /// Zero-initialized grid. `bounds` map to the unit cube.
    pub fn zeros(mut config: HashGridConfig, bounds: ([f64; 3], [f64; 3])) -> Result<Self> {
        if config.levels == 0 || config.features_per_level == 0 {
            return Err(Error::invalid("hash grid needs at least one level and feature"));
        }
        if !config.table_size.is_power_of_two() {
            return Err(Error::invalid("hash table size must be a power of two"));
        }
        if config.base_resolution == 0 || config.growth < 1.0 {
            return Err(Error::invalid("invalid base resolution or growth factor"));
        }
        // values are kept at checkpoint precision so save/load is exact
        config.growth = round_f32(config.growth);
        let bounds = (bounds.0.map(round_f32), bounds.1.map(round_f32));
        if (0..3).any(|k| bounds.1[k].partial_cmp(&bounds.0[k]) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::invalid("hash grid bounds must have positive extent"));
        }
        let resolutions: Vec<u32> = (0..config.levels)
            .map(|l| (config.base_resolution as f64 * config.growth.powi(l as i32) + 1e-6).floor() as u32)
            .collect();
        if resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "level resolutions are not strictly increasing: {resolutions:?}"
            )));
        }
        Ok(Self {
            tables: vec![0.0; config.levels * config.table_size * config.features_per_level],
            config,
            resolutions,
            bounds,
        })
    }

    /// Grid with tables drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn new(config: HashGridConfig, bounds: ([f64; 3], [f64; 3]), seed: u64) -> Result<Self> {
        let mut grid = Self::zeros(config, bounds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut grid.tables {
            *v = rng.gen_range(-INIT_RANGE..INIT_RANGE);
        }
        Ok(grid)
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        self.bounds
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// True when level `level` indexes its table densely (no collisions).
    pub fn is_dense(&self, level: usize) -> bool {
        let v = self.resolutions[level] as u64 + 1;
        v * v * v <= self.config.table_size as u64
    }

    /// Row index in `[0, T)` of integer vertex `cell` at `level`.
    pub fn hash_index(&self, cell: [u32; 3], level: usize) -> usize {
        if self.is_dense(level) {
            let v = self.resolutions[level] as usize + 1;
            cell[0] as usize + cell[1] as usize * v + cell[2] as usize * v * v
        } else {
            let h = cell[0] ^ cell[1].wrapping_mul(PRIME_Y) ^ cell[2].wrapping_mul(PRIME_Z);
            h as usize & (self.config.table_size - 1)
        }
    }

    /// Point mapped into `[0, 1]³` with clamping.
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let (lo, hi) = self.bounds;
        std::array::from_fn(|k| ((p[k] - lo[k]) / (hi[k] - lo[k])).clamp(0.0, 1.0))
    }

    /// The 8 trilinear taps of `point` at every level (`levels × 8`),
    /// as offsets of the first feature of each row in `tables`.
    pub fn corners(&self, point: [f64; 3]) -> Vec<Corner> {
        let mut out = Vec::with_capacity(self.config.levels * 8);
        self.corners_into(point, &mut out);
        out
    }

    fn corners_into(&self, point: [f64; 3], out: &mut Vec<Corner>) {
        let u = self.normalize(point);
        let f = self.config.features_per_level;
        for (level, &res) in self.resolutions.iter().enumerate() {
            let mut cell = [0u32; 3];
            let mut frac = [0.0; 3];
            for k in 0..3 {
                let x = u[k] * res as f64;
                let c = (x.floor() as u32).min(res - 1);
                cell[k] = c;
                frac[k] = x - c as f64;
            }
            let base = level * self.config.table_size;
            for corner in 0..8u32 {
                let mut v = cell;
                let mut w = 1.0;
                for k in 0..3 {
                    if corner >> k & 1 == 1 {
                        v[k] += 1;
                        w *= frac[k];
                    } else {
                        w *= 1.0 - frac[k];
                    }
                }
                let row = base + self.hash_index(v, level);
                out.push(((row * f) as u32, w));
            }
        }
    }

    /// Features from precomputed taps into `out` (length `L·F`).
    pub fn gather(&self, corners: &[Corner], out: &mut [f64]) {
        let f = self.config.features_per_level;
        out.fill(0.0);
        for (level, taps) in corners.chunks_exact(8).enumerate() {
            let slice = &mut out[level * f..(level + 1) * f];
            for &(offset, w) in taps {
                let row = &self.tables[offset as usize..offset as usize + f];
                for (o, v) in slice.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
    }

    /// `γ(x)`: concatenated per-level interpolated features.
    pub fn encode(&self, point: [f64; 3]) -> Vec<f64> {
        let corners = self.corners(point);
        let mut out = vec![0.0; self.output_dim()];
        self.gather(&corners, &mut out);
        out
    }

    /// Encodes many points; returns `(features N×L·F, taps N×L·8)`.
    pub fn encode_batch(&self, points: &[[f64; 3]]) -> (Vec<f64>, Vec<Corner>) {
        let dim = self.output_dim();
        let taps_per = self.config.levels * 8;
        let mut features = vec![0.0; points.len() * dim];
        let mut corners = vec![(0u32, 0.0); points.len() * taps_per];
        features
            .par_chunks_mut(dim)
            .zip(corners.par_chunks_mut(taps_per))
            .zip(points.par_iter())
            .with_min_len(64)
            .for_each(|((feat, taps), p)| {
                let mut buf = Vec::with_capacity(taps_per);
                self.corners_into(*p, &mut buf);
                taps.copy_from_slice(&buf);
                self.gather(taps, feat);
            });
        (features, corners)
    }

    pub fn zero_gradient(&self) -> GridGradient {
        GridGradient {
            values: vec![0.0; self.tables.len()],
        }
    }

    /// Accumulates `dL/dtables` for one point given `dL/dγ`.
    pub fn encode_backward(&self, point: [f64; 3], dl_dgamma: &[f64], accumulator: &mut GridGradient) -> Result<()> {
        let corners = self.corners(point);
        self.scatter_gradient(&corners, dl_dgamma, accumulator)
    }

    /// Same as [`encode_backward`](Self::encode_backward) with precomputed taps.
    pub fn scatter_gradient(
        &self,
        corners: &[Corner],
        dl_dgamma: &[f64],
        accumulator: &mut GridGradient,
    ) -> Result<()> {
        if accumulator.values.len() != self.tables.len() {
            return Err(Error::invalid("gradient accumulator shape differs from grid"));
        }
        if dl_dgamma.len() != self.output_dim() || corners.len() != self.config.levels * 8 {
            return Err(Error::invalid("feature gradient has the wrong length"));
        }
        let f = self.config.features_per_level;
        for (level, taps) in corners.chunks_exact(8).enumerate() {
            let g = &dl_dgamma[level * f..(level + 1) * f];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for &(offset, w) in taps {
                let row = &mut accumulator.values[offset as usize..offset as usize + f];
                for (r, gv) in row.iter_mut().zip(g) {
                    *r += w * gv;
                }
            }
        }
        Ok(())
    }

    /// Header `(L, T, F, V₁: u32, b: f32, bounds: 6×f32)` then tables as f32, LE.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let c = &self.config;
        for v in [c.levels, c.table_size, c.features_per_level] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&c.base_resolution.to_le_bytes())?;
        w.write_all(&(c.growth as f32).to_le_bytes())?;
        for v in self.bounds.0.iter().chain(&self.bounds.1) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        for v in &self.tables {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let err = |e: std::io::Error| Error::parse("hash grid checkpoint", e.to_string());
        let mut u = [0u8; 4];
        let mut next_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u).map_err(err)?;
            Ok(u32::from_le_bytes(u))
        };
        let levels = next_u32(r)? as usize;
        let table_size = next_u32(r)? as usize;
        let features_per_level = next_u32(r)? as usize;
        let base_resolution = next_u32(r)?;
        let growth = f32::from_bits(next_u32(r)?) as f64;
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = f32::from_bits(next_u32(r)?) as f64;
        }
        if levels > 64 || table_size > 1 << 26 || features_per_level > 64 {
            return Err(Error::parse("hash grid checkpoint", "implausible header"));
        }
        let config = HashGridConfig {
            levels,
            table_size,
            features_per_level,
            base_resolution,
            growth,
        };
        let mut grid = Self::zeros(config, ([b[0], b[1], b[2]], [b[3], b[4], b[5]]))
            .map_err(|e| Error::parse("hash grid checkpoint", e.to_string()))?;
        let mut bytes = vec![0u8; grid.tables.len() * 4];
        r.read_exact(&mut bytes).map_err(err)?;
        for (v, c) in grid.tables.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
        Ok(grid)
    }
}

/// Dense gradient buffer with the shape of [`HashGrid::tables`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridGradient {
    pub values: Vec<f64>,
}
