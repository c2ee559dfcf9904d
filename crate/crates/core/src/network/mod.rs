//! Conditional noise estimator: a stack of gated, dilated, non-causal
//! convolution blocks with a diffusion-step embedding, a frame-level
//! feature conditioner and (optionally) a sample-level periodic input that
//! is projected into every block.
//!
//! Activations are stored time-major (`N x C`, channels contiguous). The
//! reverse pass is written out by hand and accumulates into a
//! [`Parameters`] value used as the gradient container.

mod linalg;
mod params;

pub use linalg::Real;
pub use params::{count_params, tensor_specs, LayerParams, NetworkConfig, Parameters, TensorSpec, KERNEL_SIZE};

use linalg::{gemm, View};

use crate::error::{Error, Result};

/// Sinusoidal embedding of a continuous step coordinate.
///
/// Integer steps get `[sin(t * f_j)..., cos(t * f_j)...]` with
/// `f_j = 10^(4j / (dim/2 - 1))`. Fractional steps interpolate linearly
/// between the embeddings of the two neighbouring integers, which keeps the
/// network on inputs it has seen during training.
pub fn embed_step(t_cont: f64, dim: usize) -> Vec<f64> {
    assert!(t_cont >= 0.0, "step coordinate must be non-negative");
    let lo = t_cont.floor();
    let frac = t_cont - lo;
    let base = integer_embedding(lo, dim);
    if frac == 0.0 {
        return base;
    }
    let next = integer_embedding(lo + 1.0, dim);
    base.iter().zip(&next).map(|(a, b)| a + (b - a) * frac).collect()
}

fn integer_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let denom = (half.max(2) - 1) as f64;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let arg = t * 10f64.powf(4.0 * j as f64 / denom);
        out[j] = arg.sin();
        out[half + j] = arg.cos();
    }
    out
}

/// Inputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a, T> {
    /// Noisy signal, length `N`.
    pub x: &'a [T],
    /// Frame-level conditioner, `K x D` row-major, held for `cond_hop`
    /// samples per frame (`N = K * cond_hop`). Use `cond_hop = 1` for an
    /// already-upsampled sequence.
    pub cond: &'a [T],
    pub cond_hop: usize,
    /// Sample-level periodic signal, `N x P` interleaved.
    pub periodic: Option<&'a [T]>,
    /// Continuous diffusion-step coordinate.
    pub t_cont: f64,
}

impl<T> NetInput<'_, T> {
    fn frames(&self) -> usize {
        self.x.len() / self.cond_hop.max(1)
    }
}

/// Activations retained for the reverse pass.
#[derive(Debug, Default, Clone)]
pub struct Cache<T> {
    emb: Vec<T>,
    u1: Vec<T>,
    a1: Vec<T>,
    u2: Vec<T>,
    s: Vec<T>,
    /// Input of every layer, `N x C`.
    h: Vec<Vec<T>>,
    tanh: Vec<Vec<T>>,
    sig: Vec<Vec<T>>,
    z: Vec<Vec<T>>,
    y: Vec<T>,
    g1: Vec<T>,
    pre: Vec<T>,
    out: Vec<T>,
}

fn silu<T: Real>(x: T) -> T {
    x * x.sigmoid()
}

fn silu_grad<T: Real>(x: T) -> T {
    let s = x.sigmoid();
    s * (T::ONE + x * (T::ONE - s))
}

fn affine<T: Real>(input: &[T], w: &[T], b: &[T], out_dim: usize) -> Vec<T> {
    let mut out = b.to_vec();
    gemm(View::new(input, 1, input.len()), View::new(w, input.len(), out_dim), T::ONE, &mut out);
    out
}

fn check_input<T: Real>(p: &Parameters<T>, input: &NetInput<'_, T>) -> Result<()> {
    let cfg = &p.config;
    let n = input.x.len();
    if n == 0 {
        return Err(Error::Shape("empty network input".into()));
    }
    if input.cond_hop == 0 || n % input.cond_hop != 0 {
        return Err(Error::Shape(format!(
            "input length {n} is not a multiple of the conditioner hop {}",
            input.cond_hop
        )));
    }
    let k = n / input.cond_hop;
    if input.cond.len() != k * cfg.conditioner_dim {
        return Err(Error::Shape(format!(
            "conditioner has {} values, expected {k} frames x {}",
            input.cond.len(),
            cfg.conditioner_dim
        )));
    }
    match (cfg.periodic_dim, input.periodic) {
        (0, None) => {}
        (0, Some(_)) => {
            return Err(Error::ModeMismatch(
                "network has no periodic input but a periodic signal was given".into(),
            ))
        }
        (_, None) => {
            return Err(Error::ModeMismatch(
                "network expects a periodic signal but none was given".into(),
            ))
        }
        (pd, Some(e)) => {
            if e.len() != n * pd {
                return Err(Error::Shape(format!(
                    "periodic signal has {} values, expected {n} x {pd}",
                    e.len()
                )));
            }
        }
    }
    if !(input.t_cont >= 0.0) {
        return Err(Error::Shape(format!("invalid step coordinate {}", input.t_cont)));
    }
    Ok(())
}

pub fn forward<T: Real>(p: &Parameters<T>, input: &NetInput<'_, T>) -> Result<Vec<T>> {
    let mut cache = Cache::default();
    forward_cached(p, input, &mut cache)
}

/// Forward pass that keeps what [`backward_into`] needs.
pub fn forward_cached<T: Real>(p: &Parameters<T>, input: &NetInput<'_, T>, cache: &mut Cache<T>) -> Result<Vec<T>> {
    check_input(p, input)?;
    let cfg = &p.config;
    let (n, c, c2) = (input.x.len(), cfg.residual_channels, 2 * cfg.residual_channels);
    let (h_dim, d, pd) = (cfg.step_hidden_dim, cfg.conditioner_dim, cfg.periodic_dim);
    let k_frames = input.frames();
    let hop = input.cond_hop;

    cache.emb = embed_step(input.t_cont, cfg.step_embed_dim)
        .into_iter()
        .map(T::from_f64)
        .collect();
    cache.u1 = affine(&cache.emb, &p.mlp_w1, &p.mlp_b1, h_dim);
    cache.a1 = cache.u1.iter().map(|&v| silu(v)).collect();
    cache.u2 = affine(&cache.a1, &p.mlp_w2, &p.mlp_b2, h_dim);
    cache.s = cache.u2.iter().map(|&v| silu(v)).collect();

    let mut h: Vec<T> = vec![T::ZERO; n * c];
    for (row, &xv) in h.chunks_exact_mut(c).zip(input.x) {
        for ((o, &w), &b) in row.iter_mut().zip(&p.in_w).zip(&p.in_b) {
            let v = w * xv + b;
            *o = if v > T::ZERO { v } else { T::ZERO };
        }
    }

    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let mut skip = vec![T::ZERO; n * c];
    cache.h.resize_with(cfg.n_layers, Vec::new);
    cache.tanh.resize_with(cfg.n_layers, Vec::new);
    cache.sig.resize_with(cfg.n_layers, Vec::new);
    cache.z.resize_with(cfg.n_layers, Vec::new);
    cache.pre.resize(n * c2, T::ZERO);
    cache.out.resize(n * c2, T::ZERO);

    for (l, lp) in p.layers.iter().enumerate() {
        let dil = cfg.dilation(l) as isize;
        // Every constant term folded into one per-frame row.
        let mut bias = lp.step_b.clone();
        gemm(View::new(&cache.s, 1, h_dim), View::new(&lp.step_w, h_dim, c2), T::ONE, &mut bias);
        for j in 0..c2 {
            bias[j] += lp.conv_b[j] + lp.cond_b[j];
            if pd > 0 {
                bias[j] += lp.per_b[j];
            }
        }
        let mut frame_rows = vec![T::ZERO; k_frames * c2];
        for row in frame_rows.chunks_exact_mut(c2) {
            row.copy_from_slice(&bias);
        }
        gemm(View::new(input.cond, k_frames, d), View::new(&lp.cond_w, d, c2), T::ONE, &mut frame_rows);

        let pre = &mut cache.pre;
        for (i, row) in pre.chunks_exact_mut(c2).enumerate() {
            row.copy_from_slice(&frame_rows[(i / hop) * c2..(i / hop + 1) * c2]);
        }
        for tap in 0..KERNEL_SIZE {
            let off = (tap as isize - 1) * dil;
            let rows = n as isize - off.abs();
            if rows <= 0 {
                continue;
            }
            let rows = rows as usize;
            let (src, dst) = if off >= 0 { (off as usize, 0) } else { (0, (-off) as usize) };
            let w = &lp.conv_w[tap * c * c2..(tap + 1) * c * c2];
            gemm(
                View::new(&h[src * c..(src + rows) * c], rows, c),
                View::new(w, c, c2),
                T::ONE,
                &mut pre[dst * c2..(dst + rows) * c2],
            );
        }
        if let Some(e) = input.periodic {
            for (row, ev) in pre.chunks_exact_mut(c2).zip(e.chunks_exact(pd)) {
                for (q, &evq) in ev.iter().enumerate() {
                    let w = &lp.per_w[q * c2..(q + 1) * c2];
                    for (o, &wv) in row.iter_mut().zip(w) {
                        *o += evq * wv;
                    }
                }
            }
        }

        let mut th = vec![T::ZERO; n * c];
        let mut sg = vec![T::ZERO; n * c];
        let mut z = vec![T::ZERO; n * c];
        for i in 0..n {
            let row = &pre[i * c2..(i + 1) * c2];
            for j in 0..c {
                let t = row[j].tanh();
                let s = row[c + j].sigmoid();
                th[i * c + j] = t;
                sg[i * c + j] = s;
                z[i * c + j] = t * s;
            }
        }

        let out = &mut cache.out;
        for row in out.chunks_exact_mut(c2) {
            row.copy_from_slice(&lp.out_b);
        }
        gemm(View::new(&z, n, c), View::new(&lp.out_w, c, c2), T::ONE, out);
        let mut next = vec![T::ZERO; n * c];
        for i in 0..n {
            for j in 0..c {
                next[i * c + j] = (h[i * c + j] + out[i * c2 + j]) * inv_sqrt2;
                skip[i * c + j] += out[i * c2 + c + j];
            }
        }
        cache.h[l] = std::mem::replace(&mut h, next);
        cache.tanh[l] = th;
        cache.sig[l] = sg;
        cache.z[l] = z;
    }

    let skip_scale = T::from_f64(1.0 / (cfg.n_layers as f64).sqrt());
    skip.iter_mut().for_each(|v| *v *= skip_scale);
    let mut g1 = vec![T::ZERO; n * c];
    for row in g1.chunks_exact_mut(c) {
        row.copy_from_slice(&p.head_b1);
    }
    gemm(View::new(&skip, n, c), View::new(&p.head_w1, c, c), T::ONE, &mut g1);
    g1.iter_mut().for_each(|v| {
        if !(*v > T::ZERO) {
            *v = T::ZERO
        }
    });
    let mut out = vec![p.head_b2[0]; n];
    gemm(View::new(&g1, n, c), View::new(&p.head_w2, c, 1), T::ONE, &mut out);
    cache.y = skip;
    cache.g1 = g1;
    Ok(out)
}

fn column_sums<T: Real>(m: &[T], cols: usize, acc: &mut [T]) {
    for row in m.chunks_exact(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

/// Accumulates `d<out, grad_out>/d(params)` into `grads`. `cache` must come
/// from [`forward_cached`] on the same parameters and input.
pub fn backward_into<T: Real>(
    p: &Parameters<T>,
    input: &NetInput<'_, T>,
    cache: &Cache<T>,
    grad_out: &[T],
    grads: &mut Parameters<T>,
) -> Result<()> {
    check_input(p, input)?;
    let cfg = &p.config;
    let (n, c, c2) = (input.x.len(), cfg.residual_channels, 2 * cfg.residual_channels);
    let (h_dim, d, pd) = (cfg.step_hidden_dim, cfg.conditioner_dim, cfg.periodic_dim);
    let k_frames = input.frames();
    let hop = input.cond_hop;
    if grad_out.len() != n {
        return Err(Error::Shape(format!("gradient has {} values, output {n}", grad_out.len())));
    }
    if cache.h.len() != cfg.n_layers || cache.y.len() != n * c {
        return Err(Error::Shape("cache does not match this input".into()));
    }

    // Output head.
    grads.head_b2[0] += grad_out.iter().fold(T::ZERO, |a, &g| a + g);
    gemm(View::new(&cache.g1, n, c).t(), View::new(grad_out, n, 1), T::ONE, &mut grads.head_w2);
    let mut dg1 = vec![T::ZERO; n * c];
    for i in 0..n {
        for j in 0..c {
            if cache.g1[i * c + j] > T::ZERO {
                dg1[i * c + j] = grad_out[i] * p.head_w2[j];
            }
        }
    }
    column_sums(&dg1, c, &mut grads.head_b1);
    gemm(View::new(&cache.y, n, c).t(), View::new(&dg1, n, c), T::ONE, &mut grads.head_w1);
    let mut dskip = vec![T::ZERO; n * c];
    gemm(View::new(&dg1, n, c), View::new(&p.head_w1, c, c).t(), T::ZERO, &mut dskip);
    let skip_scale = T::from_f64(1.0 / (cfg.n_layers as f64).sqrt());
    dskip.iter_mut().for_each(|v| *v *= skip_scale);

    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let mut dh = vec![T::ZERO; n * c];
    let mut ds = vec![T::ZERO; h_dim];
    let mut dout = vec![T::ZERO; n * c2];
    let mut dz = vec![T::ZERO; n * c];
    let mut dpre = vec![T::ZERO; n * c2];
    let mut agg = vec![T::ZERO; k_frames * c2];

    for l in (0..cfg.n_layers).rev() {
        let lp = &p.layers[l];
        let gl = &mut grads.layers[l];
        let (h, th, sg, z) = (&cache.h[l], &cache.tanh[l], &cache.sig[l], &cache.z[l]);
        let dil = cfg.dilation(l) as isize;

        for i in 0..n {
            for j in 0..c {
                dout[i * c2 + j] = dh[i * c + j] * inv_sqrt2;
                dout[i * c2 + c + j] = dskip[i * c + j];
            }
        }
        column_sums(&dout, c2, &mut gl.out_b);
        gemm(View::new(z, n, c).t(), View::new(&dout, n, c2), T::ONE, &mut gl.out_w);
        gemm(View::new(&dout, n, c2), View::new(&lp.out_w, c, c2).t(), T::ZERO, &mut dz);

        for i in 0..n {
            for j in 0..c {
                let (t, s, g) = (th[i * c + j], sg[i * c + j], dz[i * c + j]);
                dpre[i * c2 + j] = g * s * (T::ONE - t * t);
                dpre[i * c2 + c + j] = g * t * s * (T::ONE - s);
            }
        }

        let mut total = vec![T::ZERO; c2];
        column_sums(&dpre, c2, &mut total);
        for j in 0..c2 {
            gl.conv_b[j] += total[j];
            gl.cond_b[j] += total[j];
            gl.step_b[j] += total[j];
            if pd > 0 {
                gl.per_b[j] += total[j];
            }
        }
        gemm(View::new(&cache.s, 1, h_dim).t(), View::new(&total, 1, c2), T::ONE, &mut gl.step_w);
        gemm(View::new(&total, 1, c2), View::new(&lp.step_w, h_dim, c2).t(), T::ONE, &mut ds);

        agg.iter_mut().for_each(|v| *v = T::ZERO);
        for (i, row) in dpre.chunks_exact(c2).enumerate() {
            let f = i / hop;
            for (a, &v) in agg[f * c2..(f + 1) * c2].iter_mut().zip(row) {
                *a += v;
            }
        }
        gemm(View::new(input.cond, k_frames, d).t(), View::new(&agg, k_frames, c2), T::ONE, &mut gl.cond_w);

        if let Some(e) = input.periodic {
            gemm(View::new(e, n, pd).t(), View::new(&dpre, n, c2), T::ONE, &mut gl.per_w);
        }

        // Residual path into this layer's input.
        let mut dh_in: Vec<T> = dh.iter().map(|&v| v * inv_sqrt2).collect();
        for tap in 0..KERNEL_SIZE {
            let off = (tap as isize - 1) * dil;
            let rows = n as isize - off.abs();
            if rows <= 0 {
                continue;
            }
            let rows = rows as usize;
            let (src, dst) = if off >= 0 { (off as usize, 0) } else { (0, (-off) as usize) };
            let wslice = tap * c * c2..(tap + 1) * c * c2;
            gemm(
                View::new(&h[src * c..(src + rows) * c], rows, c).t(),
                View::new(&dpre[dst * c2..(dst + rows) * c2], rows, c2),
                T::ONE,
                &mut gl.conv_w[wslice.clone()],
            );
            gemm(
                View::new(&dpre[dst * c2..(dst + rows) * c2], rows, c2),
                View::new(&lp.conv_w[wslice], c, c2).t(),
                T::ONE,
                &mut dh_in[src * c..(src + rows) * c],
            );
        }
        dh = dh_in;
    }

    // Input projection; cache.h[0] is the post-ReLU input embedding.
    let h0 = &cache.h[0];
    for i in 0..n {
        let xv = input.x[i];
        for j in 0..c {
            if h0[i * c + j] > T::ZERO {
                let g = dh[i * c + j];
                grads.in_w[j] += g * xv;
                grads.in_b[j] += g;
            }
        }
    }

    // Step MLP.
    let du2: Vec<T> = ds.iter().zip(&cache.u2).map(|(&g, &u)| g * silu_grad(u)).collect();
    for (b, &g) in grads.mlp_b2.iter_mut().zip(&du2) {
        *b += g;
    }
    gemm(View::new(&cache.a1, 1, h_dim).t(), View::new(&du2, 1, h_dim), T::ONE, &mut grads.mlp_w2);
    let mut da1 = vec![T::ZERO; h_dim];
    gemm(View::new(&du2, 1, h_dim), View::new(&p.mlp_w2, h_dim, h_dim).t(), T::ZERO, &mut da1);
    let du1: Vec<T> = da1.iter().zip(&cache.u1).map(|(&g, &u)| g * silu_grad(u)).collect();
    for (b, &g) in grads.mlp_b1.iter_mut().zip(&du1) {
        *b += g;
    }
    let e_dim = cfg.step_embed_dim;
    gemm(View::new(&cache.emb, 1, e_dim).t(), View::new(&du1, 1, h_dim), T::ONE, &mut grads.mlp_w1);
    Ok(())
}

/// Fresh gradients of `<forward(input), grad_out>`.
pub fn backward<T: Real>(p: &Parameters<T>, input: &NetInput<'_, T>, grad_out: &[T]) -> Result<Parameters<T>> {
    let mut cache = Cache::default();
    forward_cached(p, input, &mut cache)?;
    let mut grads = p.zeros_like();
    backward_into(p, input, &cache, grad_out, &mut grads)?;
    Ok(grads)
}
