//! Style-conditioned color field: (Gaussian mean, style latent) → RGB.
//!
//! `γ(x)` from the hash grid is concatenated with `ReLU(W·z + b)` of the style
//! latent and decoded by a small sigmoid-headed MLP.

use std::io::{Read, Write};
use std::path::Path;

use crate::encoding::{Corner, GridGradient, HashGrid, HashGridConfig};
use crate::error::{Error, Result};
use crate::nn::{
    layer_gradient_tensors, layer_sizes, layer_tensors_mut, mlp_backward, mlp_forward, Activation, AdamConfig,
    AdamState, Layer, LayerGradient, MlpCache, MlpParams,
};
use crate::style2d::LATENT_DIM;

pub const LATENT_FC_DIM: usize = 32;
pub const HIDDEN_WIDTH: usize = 64;
const BOUNDS_DILATION: f64 = 0.05;
const MAGIC: &[u8; 4] = b"SSTF";
const FORMAT_VERSION: u32 = 1;
const FLAG_GRID: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StyleField {
    pub grid: HashGrid,
    pub latent_fc: MlpParams,
    pub mlp: MlpParams,
    /// When false the hash grid is bypassed and the MLP sees the normalized
    /// position instead (the "no hash grid" ablation).
    use_grid: bool,
}

#[derive(Debug, Clone)]
pub struct FieldCache {
    corners: Vec<Corner>,
    fc_cache: MlpCache,
    mlp_cache: MlpCache,
    n: usize,
}

#[derive(Debug, Clone)]
pub struct FieldGradient {
    pub grid: GridGradient,
    pub latent_fc: Vec<LayerGradient>,
    pub mlp: Vec<LayerGradient>,
}

/// Axis-aligned box around `means`, grown by 5% of its extent on each side.
pub fn field_bounds(means: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for m in means {
        for a in 0..3 {
            lo[a] = lo[a].min(m[a]);
            hi[a] = hi[a].max(m[a]);
        }
    }
    if means.is_empty() {
        return ([-1.0; 3], [1.0; 3]);
    }
    for a in 0..3 {
        let pad = ((hi[a] - lo[a]) * BOUNDS_DILATION).max(1e-3);
        lo[a] -= pad;
        hi[a] += pad;
    }
    (lo, hi)
}

impl StyleField {
    pub fn new(config: HashGridConfig, bounds: ([f64; 3], [f64; 3]), seed: u64) -> Result<Self> {
        Self::build(config, bounds, seed, true)
    }

    /// Field whose MLP reads the normalized position instead of `γ(x)`.
    pub fn without_grid(config: HashGridConfig, bounds: ([f64; 3], [f64; 3]), seed: u64) -> Result<Self> {
        Self::build(config, bounds, seed, false)
    }

    fn build(config: HashGridConfig, bounds: ([f64; 3], [f64; 3]), seed: u64, use_grid: bool) -> Result<Self> {
        let grid = if use_grid {
            HashGrid::new(config, bounds, seed)?
        } else {
            HashGrid::zeros(config, bounds)?
        };
        let position_dim = if use_grid { grid.output_dim() } else { 3 };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x5eed_f00d);
        let latent_fc = MlpParams::new(vec![Layer::he_uniform(
            LATENT_DIM,
            LATENT_FC_DIM,
            Activation::Relu,
            &mut rng,
        )])?;
        let mlp = MlpParams::color_head(
            position_dim + LATENT_FC_DIM,
            &[HIDDEN_WIDTH, HIDDEN_WIDTH],
            3,
            seed.wrapping_add(1),
        );
        Ok(Self {
            grid,
            latent_fc,
            mlp,
            use_grid,
        })
    }

    pub fn uses_grid(&self) -> bool {
        self.use_grid
    }

    fn position_dim(&self) -> usize {
        if self.use_grid {
            self.grid.output_dim()
        } else {
            3
        }
    }

    /// Per-Gaussian colors in (0,1).
    pub fn predict_colors(&self, positions: &[[f64; 3]], latent: &[f64]) -> Result<Vec<[f64; 3]>> {
        Ok(self.forward(positions, latent)?.0)
    }

    /// Forward pass that keeps what [`StyleField::backward`] needs.
    pub fn forward(&self, positions: &[[f64; 3]], latent: &[f64]) -> Result<(Vec<[f64; 3]>, FieldCache)> {
        if latent.len() != LATENT_DIM {
            return Err(Error::invalid(format!(
                "style latent has dimension {}, expected {LATENT_DIM}",
                latent.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!("position {i} is not finite")));
        }
        let (h, fc_cache) = mlp_forward(&self.latent_fc, latent)?;
        let pdim = self.position_dim();
        let in_dim = pdim + LATENT_FC_DIM;
        let n = positions.len();
        let mut input = vec![0.0; n * in_dim];
        let corners = if self.use_grid {
            let (features, corners) = self.grid.encode_batch(positions);
            for (row, feat) in input.chunks_exact_mut(in_dim).zip(features.chunks_exact(pdim)) {
                row[..pdim].copy_from_slice(feat);
                row[pdim..].copy_from_slice(&h);
            }
            corners
        } else {
            for (row, p) in input.chunks_exact_mut(in_dim).zip(positions) {
                row[..3].copy_from_slice(&self.grid.normalize(*p));
                row[3..].copy_from_slice(&h);
            }
            Vec::new()
        };
        let (out, mlp_cache) = mlp_forward(&self.mlp, &input)?;
        let colors = out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok((
            colors,
            FieldCache {
                corners,
                fc_cache,
                mlp_cache,
                n,
            },
        ))
    }

    pub fn zero_gradient(&self) -> FieldGradient {
        FieldGradient {
            grid: self.grid.zero_gradient(),
            latent_fc: self.latent_fc.zero_gradient(),
            mlp: self.mlp.zero_gradient(),
        }
    }

    /// Gradients of all trainable parameters given `dL/dcolors`. The latent
    /// itself receives none.
    pub fn backward(&self, cache: &FieldCache, dl_dcolors: &[[f64; 3]]) -> Result<FieldGradient> {
        if dl_dcolors.len() != cache.n {
            return Err(Error::invalid(format!(
                "color gradient has {} rows, forward had {}",
                dl_dcolors.len(),
                cache.n
            )));
        }
        let flat: Vec<f64> = dl_dcolors.iter().flatten().copied().collect();
        let (mlp_grad, dl_dinput) = mlp_backward(&self.mlp, &cache.mlp_cache, &flat)?;
        let pdim = self.position_dim();
        let in_dim = pdim + LATENT_FC_DIM;
        let mut grid = self.grid.zero_gradient();
        let mut dl_dh = vec![0.0; LATENT_FC_DIM];
        let taps = self.grid.config().levels * 8;
        for (i, row) in dl_dinput.chunks_exact(in_dim).enumerate() {
            if self.use_grid {
                self.grid
                    .scatter_gradient(&cache.corners[i * taps..(i + 1) * taps], &row[..pdim], &mut grid)?;
            }
            for (a, b) in dl_dh.iter_mut().zip(&row[pdim..]) {
                *a += b;
            }
        }
        let (fc_grad, _) = mlp_backward(&self.latent_fc, &cache.fc_cache, &dl_dh)?;
        Ok(FieldGradient {
            grid,
            latent_fc: fc_grad,
            mlp: mlp_grad,
        })
    }

    /// Convenience: forward + backward for a single call.
    pub fn predict_colors_backward(
        &self,
        positions: &[[f64; 3]],
        latent: &[f64],
        dl_dcolors: &[[f64; 3]],
    ) -> Result<FieldGradient> {
        let (_, cache) = self.forward(positions, latent)?;
        self.backward(&cache, dl_dcolors)
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(if self.use_grid { FLAG_GRID } else { 0 }).to_le_bytes())?;
        self.grid.write_checkpoint(w)?;
        self.latent_fc.write_checkpoint(w)?;
        self.mlp.write_checkpoint(w)
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)
            .map_err(|e| Error::parse("style field checkpoint", e.to_string()))?;
        if &head[..4] != MAGIC {
            return Err(Error::parse("style field checkpoint", "bad magic number"));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::parse(
                "style field checkpoint",
                format!("unsupported format version {version}"),
            ));
        }
        let flags = u32::from_le_bytes(head[8..12].try_into().unwrap());
        let use_grid = flags & FLAG_GRID != 0;
        let grid = HashGrid::read_checkpoint(r)?;
        let latent_fc = MlpParams::read_checkpoint(r)?;
        let mlp = MlpParams::read_checkpoint(r)?;
        let pdim = if use_grid { grid.output_dim() } else { 3 };
        if latent_fc.input_dim() != LATENT_DIM
            || latent_fc.output_dim() != LATENT_FC_DIM
            || mlp.input_dim() != pdim + LATENT_FC_DIM
            || mlp.output_dim() != 3
        {
            return Err(Error::parse(
                "style field checkpoint",
                "network dimensions do not chain",
            ));
        }
        Ok(Self {
            grid,
            latent_fc,
            mlp,
            use_grid,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&mut bytes.as_slice())
    }

    fn tensor_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.grid.tables.len()];
        sizes.extend(layer_sizes(&self.latent_fc));
        sizes.extend(layer_sizes(&self.mlp));
        sizes
    }
}

/// Adam state covering every trainable tensor of a [`StyleField`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOptimizer {
    pub adam: AdamState,
}

impl FieldOptimizer {
    pub fn new(field: &StyleField, config: AdamConfig) -> Self {
        Self {
            adam: AdamState::new(config, &field.tensor_sizes()),
        }
    }

    pub fn step(&mut self, field: &mut StyleField, grad: &FieldGradient) -> Result<()> {
        let mut grads: Vec<&[f64]> = vec![&grad.grid.values];
        grads.extend(layer_gradient_tensors(&grad.latent_fc));
        grads.extend(layer_gradient_tensors(&grad.mlp));
        let mut params: Vec<&mut [f64]> = vec![field.grid.tables.as_mut_slice()];
        params.extend(layer_tensors_mut(&mut field.latent_fc));
        params.extend(layer_tensors_mut(&mut field.mlp));
        self.adam.step(&mut params, &grads)
    }

    /// Moments and step count as f64 LE, tensor by tensor.
    pub fn write_state<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.adam.step.to_le_bytes())?;
        for t in self.adam.first_moments.iter().chain(&self.adam.second_moments) {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_state<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let err = |e: std::io::Error| Error::parse("optimizer state", e.to_string());
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(err)?;
        self.adam.step = u64::from_le_bytes(b);
        let Self { adam } = self;
        for t in adam.first_moments.iter_mut().chain(adam.second_moments.iter_mut()) {
            for v in t.iter_mut() {
                r.read_exact(&mut b).map_err(err)?;
                *v = f64::from_le_bytes(b);
            }
        }
        Ok(())
    }
}

/// Largest `|Σw − 1|` accepted (and renormalized away) by [`normalize_weights`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-3;

/// Checks mixing weights: finite, non-negative, summing to 1 within
/// [`WEIGHT_SUM_TOLERANCE`]. Returns them renormalized to sum exactly to 1.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::invalid("no mixing weights"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("mixing weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::invalid(format!("mixing weights sum to {sum}, expected 1")));
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Convex combination `Σ wᵢ zᵢ` of style latents.
pub fn blend_latents(latents: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if latents.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} latents but {} weights",
            latents.len(),
            weights.len()
        )));
    }
    let weights = normalize_weights(weights)?;
    let mut out = vec![0.0; LATENT_DIM];
    for (z, w) in latents.iter().zip(&weights) {
        if z.len() != LATENT_DIM {
            return Err(Error::invalid("style latent has the wrong dimension"));
        }
        out.iter_mut().zip(z).for_each(|(o, v)| *o += w * v);
    }
    Ok(out)
}

/// Bilinear weights of the four corners (top-left, top-right, bottom-left,
/// bottom-right) of a unit square at `(u, v)` in `[0,1]²`.
pub fn corner_weights(u: f64, v: f64) -> [f64; 4] {
    let (u, v) = (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
    [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> HashGridConfig {
        HashGridConfig {
            levels: 4,
            table_size: 1 << 10,
            features_per_level: 2,
            base_resolution: 4,
            growth: 2.0,
        }
    }

    fn bounds() -> ([f64; 3], [f64; 3]) {
        ([-1.0; 3], [1.0; 3])
    }

    fn random_points(n: usize, seed: u64, extent: f64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-extent..extent)))
            .collect()
    }

    fn random_latent(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..LATENT_DIM).map(|_| rng.gen_range(0.0..0.5)).collect()
    }

    /// Field with randomized tables and a non-zero head, so gradients are generic.
    fn scrambled_field(seed: u64, use_grid: bool) -> StyleField {
        let mut f = if use_grid {
            StyleField::new(small_config(), bounds(), seed).unwrap()
        } else {
            StyleField::without_grid(small_config(), bounds(), seed).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        for v in &mut f.grid.tables {
            *v = rng.gen_range(-1.0..1.0);
        }
        for l in &mut f.mlp.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = rng.gen_range(-0.4..0.4);
            }
        }
        for b in &mut f.latent_fc.layers[0].biases {
            *b = rng.gen_range(0.0..0.3);
        }
        f.mlp.touch();
        f.latent_fc.touch();
        f
    }

    #[test]
    fn fresh_field_is_gray() {
        let f = StyleField::new(HashGridConfig::default(), bounds(), 0).unwrap();
        let c = f
            .predict_colors(&random_points(100, 1, 1.0), &random_latent(2))
            .unwrap();
        assert!(c.iter().all(|c| *c == [0.5; 3]));
    }

    #[test]
    fn latent_dimension_is_checked() {
        let f = StyleField::new(small_config(), bounds(), 0).unwrap();
        assert!(matches!(
            f.predict_colors(&[[0.0; 3]], &[0.0; 10]),
            Err(Error::InvalidInput(_))
        ));
        assert!(f.predict_colors(&[[f64::NAN, 0.0, 0.0]], &random_latent(0)).is_err());
    }

    #[test]
    fn deterministic() {
        let f = scrambled_field(3, true);
        let p = random_points(200, 4, 1.0);
        let z = random_latent(5);
        assert_eq!(f.predict_colors(&p, &z).unwrap(), f.predict_colors(&p, &z).unwrap());
    }

    /// One position at a time: encode, FC, concatenate, per-layer matmul.
    fn compose_one(f: &StyleField, p: [f64; 3], z: &[f64]) -> [f64; 3] {
        let fc = &f.latent_fc.layers[0];
        let h: Vec<f64> = (0..fc.out_dim)
            .map(|o| {
                let s: f64 = fc.biases[o]
                    + (0..fc.in_dim)
                        .map(|i| fc.weights[o * fc.in_dim + i] * z[i])
                        .sum::<f64>();
                s.max(0.0)
            })
            .collect();
        let mut x = f.grid.encode(p);
        x.extend(h);
        for l in &f.mlp.layers {
            x = (0..l.out_dim)
                .map(|o| {
                    let s: f64 = l.biases[o] + (0..l.in_dim).map(|i| l.weights[o * l.in_dim + i] * x[i]).sum::<f64>();
                    match l.activation {
                        Activation::Relu => s.max(0.0),
                        Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                        Activation::Identity => s,
                    }
                })
                .collect();
        }
        [x[0], x[1], x[2]]
    }

    #[test]
    fn batch_equals_per_item_composition() {
        let f = scrambled_field(9, true);
        let p = random_points(1000, 10, 1.2);
        let z = random_latent(11);
        let batch = f.predict_colors(&p, &z).unwrap();
        for (pt, c) in p.iter().zip(&batch) {
            let one = compose_one(&f, *pt, &z);
            for k in 0..3 {
                assert!((c[k] - one[k]).abs() <= 1e-6);
                assert!(c[k] > 0.0 && c[k] < 1.0);
            }
        }
    }

    #[test]
    fn zero_color_gradient_gives_zero() {
        let f = scrambled_field(1, true);
        let p = random_points(30, 2, 1.0);
        let g = f
            .predict_colors_backward(&p, &random_latent(3), &vec![[0.0; 3]; 30])
            .unwrap();
        assert!(g.grid.values.iter().all(|v| *v == 0.0));
        assert!(g
            .latent_fc
            .iter()
            .chain(&g.mlp)
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| *v == 0.0)));
    }

    fn sum_colors(f: &StyleField, p: &[[f64; 3]], z: &[f64]) -> f64 {
        f.predict_colors(p, z).unwrap().iter().flatten().sum()
    }

    #[test]
    fn grid_gradient_matches_finite_differences() {
        let f = scrambled_field(21, true);
        let p = random_points(40, 22, 1.0);
        let z = random_latent(23);
        let g = f.predict_colors_backward(&p, &z, &vec![[1.0; 3]; 40]).unwrap();
        let touched: Vec<usize> = (0..g.grid.values.len()).filter(|i| g.grid.values[*i] != 0.0).collect();
        assert!(touched.len() > 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eps = 1e-5;
        for _ in 0..30 {
            let i = touched[rng.gen_range(0..touched.len())];
            let mut a = f.clone();
            let mut b = f.clone();
            a.grid.tables[i] += eps;
            b.grid.tables[i] -= eps;
            let fd = (sum_colors(&a, &p, &z) - sum_colors(&b, &p, &z)) / (2.0 * eps);
            let an = g.grid.values[i];
            assert!((fd - an).abs() / fd.abs().max(an.abs()) <= 1e-3, "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn fc_and_head_gradients_match_finite_differences() {
        for use_grid in [true, false] {
            let f = scrambled_field(31, use_grid);
            let p = random_points(15, 32, 1.0);
            let z = random_latent(33);
            let g = f.predict_colors_backward(&p, &z, &vec![[1.0; 3]; 15]).unwrap();
            let eps = 1e-5;
            let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            for wi in (0..f.latent_fc.layers[0].weights.len()).step_by(37) {
                let mut a = f.clone();
                let mut b = f.clone();
                a.latent_fc.layers[0].weights[wi] += eps;
                b.latent_fc.layers[0].weights[wi] -= eps;
                let fd = (sum_colors(&a, &p, &z) - sum_colors(&b, &p, &z)) / (2.0 * eps);
                assert!(rel(fd, g.latent_fc[0].weights[wi]) <= 1e-3);
            }
            for wi in (0..f.mlp.layers[0].weights.len()).step_by(101) {
                let mut a = f.clone();
                let mut b = f.clone();
                a.mlp.layers[0].weights[wi] += eps;
                b.mlp.layers[0].weights[wi] -= eps;
                let fd = (sum_colors(&a, &p, &z) - sum_colors(&b, &p, &z)) / (2.0 * eps);
                assert!(rel(fd, g.mlp[0].weights[wi]) <= 1e-3);
            }
        }
    }

    #[test]
    fn out_of_bounds_points_touch_boundary_cells_only() {
        let f = scrambled_field(41, true);
        let p = vec![[5.0, 0.3, -0.2], [-7.0, 9.0, 0.1]];
        let clamped: Vec<[f64; 3]> = p.iter().map(|q| q.map(|v: f64| v.clamp(-1.0, 1.0))).collect();
        let z = random_latent(42);
        let g_out = f.predict_colors_backward(&p, &z, &[[1.0; 3]; 2]).unwrap();
        let g_in = f.predict_colors_backward(&clamped, &z, &[[1.0; 3]; 2]).unwrap();
        let mut expected: Vec<u32> = clamped
            .iter()
            .flat_map(|q| f.grid.corners(*q))
            .filter(|c| c.1 != 0.0)
            .map(|c| c.0)
            .collect();
        expected.sort();
        expected.dedup();
        for (i, v) in g_out.grid.values.iter().enumerate() {
            let row = (i / 2 * 2) as u32;
            if *v != 0.0 {
                assert!(expected.binary_search(&row).is_ok(), "row {row} not a boundary tap");
            }
        }
        assert_eq!(g_out.grid.values, g_in.grid.values);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut f = scrambled_field(2, true);
        let p = random_points(5, 3, 1.0);
        let (_, cache) = f.forward(&p, &random_latent(1)).unwrap();
        let g = f.backward(&cache, &[[1.0; 3]; 5]).unwrap();
        FieldOptimizer::new(&f, AdamConfig::with_lr(1e-3))
            .step(&mut f, &g)
            .unwrap();
        assert!(matches!(f.backward(&cache, &[[1.0; 3]; 5]), Err(Error::State(_))));
    }

    #[test]
    fn interpolation_is_continuous() {
        let f = scrambled_field(51, true);
        let p = random_points(300, 52, 1.0);
        let z1 = random_latent(53);
        let z2: Vec<f64> = random_latent(54).iter().map(|v| v * 3.0).collect();
        let base = f.predict_colors(&p, &z1).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [0.9, 0.99, 0.999] {
            let z: Vec<f64> = z1
                .iter()
                .zip(&z2)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let c = f.predict_colors(&p, &z).unwrap();
            let d = c
                .iter()
                .zip(&base)
                .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
                .fold(0.0, f64::max);
            assert!(d < prev, "{d} !< {prev}");
            prev = d;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn checkpoint_round_trip() {
        for use_grid in [true, false] {
            let f = scrambled_field(61, use_grid);
            let mut buf = Vec::new();
            f.write_checkpoint(&mut buf).unwrap();
            let g = StyleField::read_checkpoint(&mut buf.as_slice()).unwrap();
            assert_eq!(g.uses_grid(), use_grid);
            let mut buf2 = Vec::new();
            g.write_checkpoint(&mut buf2).unwrap();
            assert_eq!(buf, buf2);
            let p = random_points(50, 62, 1.0);
            let z = random_latent(63);
            let a = f.predict_colors(&p, &z).unwrap();
            let b = g.predict_colors(&p, &z).unwrap();
            for (x, y) in a.iter().zip(&b) {
                for k in 0..3 {
                    assert!((x[k] - y[k]).abs() < 1e-4);
                }
            }
        }
        let mut bad = Vec::new();
        scrambled_field(1, true).write_checkpoint(&mut bad).unwrap();
        bad[0] = b'X';
        assert!(matches!(
            StyleField::read_checkpoint(&mut bad.as_slice()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn bounds_are_dilated() {
        let (lo, hi) = field_bounds(&[[0.0, 0.0, 0.0], [10.0, 2.0, 1.0]]);
        assert_eq!(lo, [-0.5, -0.1, -0.05]);
        assert_eq!(hi, [10.5, 2.1, 1.05]);
    }

    #[test]
    fn optimizer_state_round_trip() {
        let mut f = scrambled_field(71, true);
        let mut opt = FieldOptimizer::new(&f, AdamConfig::default());
        let p = random_points(10, 1, 1.0);
        let g = f
            .predict_colors_backward(&p, &random_latent(2), &[[0.3; 3]; 10])
            .unwrap();
        opt.step(&mut f, &g).unwrap();
        let mut buf = Vec::new();
        opt.write_state(&mut buf).unwrap();
        let mut other = FieldOptimizer::new(&f, AdamConfig::default());
        other.read_state(&mut buf.as_slice()).unwrap();
        assert_eq!(other, opt);
    }

    #[test]
    fn weights_renormalize_within_tolerance() {
        let w = normalize_weights(&[0.5, 0.3, 0.2005]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(normalize_weights(&[0.5, 0.3, 0.21]).is_err());
        assert!(normalize_weights(&[1.5, -0.5]).is_err());
        assert!(normalize_weights(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn blend_of_one_hot_is_that_latent() {
        let a: Vec<f64> = (0..LATENT_DIM).map(|i| i as f64).collect();
        let b = vec![-1.0; LATENT_DIM];
        assert_eq!(blend_latents(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        let mid = blend_latents(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        for i in 0..LATENT_DIM {
            assert!((mid[i] - 0.5 * (a[i] + b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_weights_partition_unity() {
        for &(u, v) in &[(0.0, 0.0), (0.3, 0.9), (1.0, 1.0), (0.5, 0.5)] {
            let w = corner_weights(u, v);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(corner_weights(0.0, 0.0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(corner_weights(1.0, 1.0), [0.0, 0.0, 0.0, 1.0]);
    }
}
