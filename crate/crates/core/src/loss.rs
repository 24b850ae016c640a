//! Image losses: guide/content L1 terms and the D-SSIM + L1 photometric loss.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DSSIM_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub guide: f64,
    pub content: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            guide: 1.0,
            content: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    pub guide: f64,
    pub content: f64,
    pub total: f64,
}

fn check_sizes(images: &[&ImageBuffer]) -> Result<()> {
    let first = images[0];
    for im in &images[1..] {
        if !first.same_size(im) {
            return Err(Error::invalid(format!(
                "image size mismatch: {}×{} vs {}×{}",
                first.width, first.height, im.width, im.height
            )));
        }
    }
    if first.data.is_empty() {
        return Err(Error::invalid("loss of an empty image"));
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels.
pub fn mean_l1(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_sizes(&[a, b])?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs())
        .sum();
    Ok(s / (3 * a.data.len()) as f64)
}

/// Guide loss `|I_style2d − I_gen|`, content loss `|I_gen − I_unstyled|`,
/// and their weighted sum.
pub fn compute_losses(
    generated: &ImageBuffer,
    stylized: &ImageBuffer,
    unstyled: &ImageBuffer,
    weights: LossWeights,
) -> Result<LossRecord> {
    check_sizes(&[generated, stylized, unstyled])?;
    let guide = mean_l1(stylized, generated)?;
    let content = mean_l1(generated, unstyled)?;
    Ok(LossRecord {
        guide,
        content,
        total: weights.guide * guide + weights.content * content,
    })
}

/// [`compute_losses`] together with `dL_total/dI_gen`.
pub fn losses_with_gradient(
    generated: &ImageBuffer,
    stylized: &ImageBuffer,
    unstyled: &ImageBuffer,
    weights: LossWeights,
) -> Result<(LossRecord, ImageBuffer)> {
    let record = compute_losses(generated, stylized, unstyled, weights)?;
    let scale = 1.0 / (3 * generated.data.len()) as f64;
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut grad = ImageBuffer::new(generated.width, generated.height, [0.0; 3]);
    for (i, g) in grad.data.iter_mut().enumerate() {
        let (x, s, u) = (generated.data[i], stylized.data[i], unstyled.data[i]);
        for c in 0..3 {
            g[c] = scale * (weights.guide * sign(x[c] - s[c]) + weights.content * sign(x[c] - u[c]));
        }
    }
    Ok((record, grad))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable Gaussian filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, gk) in g.iter().enumerate() {
                s += gk * plane[y * w + x + k];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, gk) in g.iter().enumerate() {
                s += gk * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an `ow × oh` map back onto `w × h`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut cols = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (k, gk) in g.iter().enumerate() {
                cols[(y + k) * ow + x] += gk * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for (k, gk) in g.iter().enumerate() {
                out[y * w + x + k] += gk * v;
            }
        }
    }
    out
}

/// Mean SSIM of one channel and, optionally, its gradient w.r.t. `a`.
fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &g);
    let mu_b = filter_valid(b, w, h, &g);
    let e_aa = filter_valid(&aa, w, h, &g);
    let e_bb = filter_valid(&bb, w, h, &g);
    let e_ab = filter_valid(&ab, w, h, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    let (mut da, mut db, mut dc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let a1 = 2.0 * ma * mb + c1;
        let a2 = 2.0 * cov + c2;
        let b1 = ma * ma + mb * mb + c1;
        let b2 = var_a + var_b + c2;
        total += a1 * a2 / (b1 * b2);
        if want_grad {
            let d_mu = 2.0 * mb * a2 / (b1 * b2) - a1 * a2 * 2.0 * ma / (b1 * b1 * b2);
            let d_var = -a1 * a2 / (b1 * b2 * b2);
            let d_cov = 2.0 * a1 / (b1 * b2);
            // ∂var_a/∂a_q = G(2a_q − 2μ_a), ∂cov/∂a_q = G(b_q − μ_b)
            da[i] = d_mu - 2.0 * ma * d_var - mb * d_cov;
            db[i] = 2.0 * d_var;
            dc[i] = d_cov;
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return (mean, None);
    }
    let inv = 1.0 / n as f64;
    let ga = filter_valid_adjoint(&da, w, h, &g);
    let gb = filter_valid_adjoint(&db, w, h, &g);
    let gc = filter_valid_adjoint(&dc, w, h, &g);
    let grad = (0..w * h)
        .map(|q| inv * (ga[q] + a[q] * gb[q] + b[q] * gc[q]))
        .collect();
    (mean, Some(grad))
}

fn planes(img: &ImageBuffer) -> [Vec<f64>; 3] {
    std::array::from_fn(|c| img.data.iter().map(|p| p[c]).collect())
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ = 1.5) and the three channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, want_grad: bool) -> Result<(f64, Option<[Vec<f64>; 3]>)> {
    check_sizes(&[a, b])?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}"
        )));
    }
    let (pa, pb) = (planes(a), planes(b));
    let mut mean = 0.0;
    let mut grads: Vec<Vec<f64>> = Vec::new();
    for c in 0..3 {
        let (m, g) = ssim_channel(&pa[c], &pb[c], a.width, a.height, want_grad);
        mean += m / 3.0;
        if let Some(g) = g {
            grads.push(g.into_iter().map(|v| v / 3.0).collect());
        }
    }
    let grads = if want_grad {
        let mut it = grads.into_iter();
        Some(std::array::from_fn(|_| it.next().unwrap()))
    } else {
        None
    };
    Ok((mean, grads))
}

/// `(1−λ)·L1 + λ·(1−SSIM)/2`.
pub fn dssim_l1_loss(rendered: &ImageBuffer, target: &ImageBuffer, lambda: f64) -> Result<f64> {
    Ok((1.0 - lambda) * mean_l1(rendered, target)? + lambda * (1.0 - ssim(rendered, target)?) / 2.0)
}

/// [`dssim_l1_loss`] and its gradient with respect to `rendered`.
pub fn dssim_l1_loss_grad(rendered: &ImageBuffer, target: &ImageBuffer, lambda: f64) -> Result<(f64, ImageBuffer)> {
    let l1 = mean_l1(rendered, target)?;
    let (s, g) = ssim_impl(rendered, target, true)?;
    let g = g.unwrap();
    let scale = (1.0 - lambda) / (3 * rendered.data.len()) as f64;
    let mut grad = ImageBuffer::new(rendered.width, rendered.height, [0.0; 3]);
    for (i, out) in grad.data.iter_mut().enumerate() {
        for c in 0..3 {
            let d = rendered.data[i][c] - target.data[i][c];
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[c] = scale * sign - lambda / 2.0 * g[c][i];
        }
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s) / 2.0, grad))
}
