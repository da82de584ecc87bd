//! The noise-prediction network: a residual MLP over the flattened image with
//! a sinusoidal time embedding and an optional additive class embedding,
//! injected into every hidden layer. Forward and backward passes are written
//! out by hand over row-major batches and are generic over `f32`/`f64` so the
//! gradient can be checked in double precision.

use serde::{Deserialize, Serialize};

use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Shape;

pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::ops::AddAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + 'static
{
    /// `C = alpha * A B + beta * C` with arbitrary strides (see `matrixmultiply`).
    ///
    /// # Safety
    /// The pointers and strides must address valid `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C (m×n) = A (m×k) · B (k×n) + beta C`.
fn mm<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, beta: F) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; the three buffers are distinct borrows.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `C (m×n) += Aᵀ · B` where `A` is stored `k×m` and `B` is `k×n`.
fn mm_tn_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            F::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `C (m×n) = A · Bᵀ (+ C when accumulating)` where `A` is `m×k` and `B` is stored `n×k`.
fn mm_nt<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, beta: F) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Conditioning {
    Unconditional,
    ClassConditional { classes: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub input: Shape,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub conditioning: Conditioning,
    /// When set, inputs and outputs are scaled by noise level assuming clean
    /// model-space data of this deviation: the prediction is
    /// `c_skip z + c_out F(c_in z)`, which is exact at both ends of the schedule
    /// when `F` is zero at high noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_std: Option<f64>,
}

impl Arch {
    /// Desk default: three 256-wide residual layers, 32-dim time embedding.
    pub fn desk(input: Shape, conditioning: Conditioning) -> Self {
        Arch {
            input,
            hidden: vec![256, 256, 256],
            time_dim: 32,
            conditioning,
            data_std: Some(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.dim() == 0 {
            return Err(Error::Config("empty input shape".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(
                "need at least one non-empty hidden layer".into(),
            ));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config(
                "time embedding dimension must be even and positive".into(),
            ));
        }
        if let Some(sd) = self.data_std {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Config(format!(
                    "data_std must be positive, got {sd}"
                )));
            }
        }
        if let Conditioning::ClassConditional { classes: 0 } = self.conditioning {
            return Err(Error::Config(
                "class-conditional model needs at least one class".into(),
            ));
        }
        Ok(())
    }

    pub fn classes(&self) -> Option<usize> {
        match self.conditioning {
            Conditioning::Unconditional => None,
            Conditioning::ClassConditional { classes } => Some(classes as usize),
        }
    }
}

#[derive(Debug, Clone)]
struct LayerLayout {
    fan_in: usize,
    width: usize,
    w: usize,
    b: usize,
    wt: usize,
    emb: Option<usize>,
    residual: bool,
}

/// Offsets of every parameter block inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Arch,
    layers: Vec<LayerLayout>,
    w_out: usize,
    b_out: usize,
    len: usize,
    /// Per-timestep `(c_in, c_skip, c_out)`, present when preconditioned.
    scales: Option<Vec<(f64, f64, f64)>>,
}

/// Activations kept for the backward pass.
pub struct Cache<F> {
    batch: usize,
    x: Vec<F>,
    temb: Vec<F>,
    labels: Option<Vec<u32>>,
    c_out: Option<Vec<F>>,
    z: Vec<Vec<F>>,
    h: Vec<Vec<F>>,
}

#[inline]
fn sigmoid<F: Real>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

impl Network {
    pub fn new(arch: &Arch, schedule: &NoiseSchedule) -> Result<Self> {
        arch.validate()?;
        let scales = arch.data_std.map(|sd| {
            let v2 = sd * sd;
            schedule
                .alphas()
                .iter()
                .map(|&a| {
                    let v = a * v2 + (1.0 - a);
                    (1.0 / v.sqrt(), (1.0 - a).sqrt() / v, (a * v2 / v).sqrt())
                })
                .collect()
        });
        let d = arch.input.dim();
        let classes = arch.classes();
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut fan_in = d;
        for (l, &width) in arch.hidden.iter().enumerate() {
            let w = take(fan_in * width);
            let b = take(width);
            let wt = take(arch.time_dim * width);
            let emb = classes.map(|k| take(k * width));
            layers.push(LayerLayout {
                fan_in,
                width,
                w,
                b,
                wt,
                emb,
                residual: l > 0 && fan_in == width,
            });
            fan_in = width;
        }
        let w_out = take(fan_in * d);
        let b_out = take(d);
        Ok(Network {
            arch: arch.clone(),
            layers,
            w_out,
            b_out,
            len: off,
            scales,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.len
    }

    /// Named parameter blocks as `(name, offset, length)`, for gradient checks and reports.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        let mut v = Vec::new();
        for (l, ly) in self.layers.iter().enumerate() {
            v.push((format!("hidden{l}.weight"), ly.w, ly.fan_in * ly.width));
            v.push((format!("hidden{l}.bias"), ly.b, ly.width));
            v.push((
                format!("hidden{l}.time"),
                ly.wt,
                self.arch.time_dim * ly.width,
            ));
            if let (Some(e), Some(k)) = (ly.emb, self.arch.classes()) {
                v.push((format!("hidden{l}.class"), e, k * ly.width));
            }
        }
        let last = self.layers.last().expect("validated").width;
        v.push((
            "out.weight".into(),
            self.w_out,
            last * self.arch.input.dim(),
        ));
        v.push(("out.bias".into(), self.b_out, self.arch.input.dim()));
        v
    }

    /// Gaussian initialization scaled by fan-in; biases start at zero and the
    /// output layer small, so the untrained model predicts roughly zero noise.
    pub fn init(&self, rng: &mut impl rand::Rng) -> Vec<f32> {
        use rand_distr::{Distribution, StandardNormal};
        let mut theta = vec![0.0f32; self.len];
        let fill =
            |theta: &mut [f32], off: usize, n: usize, std: f64, rng: &mut dyn rand::RngCore| {
                for p in &mut theta[off..off + n] {
                    let z: f64 = StandardNormal.sample(rng);
                    *p = (z * std) as f32;
                }
            };
        for ly in &self.layers {
            fill(
                &mut theta,
                ly.w,
                ly.fan_in * ly.width,
                (1.0 / ly.fan_in as f64).sqrt(),
                rng,
            );
            fill(
                &mut theta,
                ly.wt,
                self.arch.time_dim * ly.width,
                (1.0 / self.arch.time_dim as f64).sqrt(),
                rng,
            );
            if let (Some(e), Some(k)) = (ly.emb, self.arch.classes()) {
                fill(&mut theta, e, k * ly.width, 0.5, rng);
            }
        }
        let last = self.layers.last().expect("validated").width;
        fill(
            &mut theta,
            self.w_out,
            last * self.arch.input.dim(),
            0.1 / (last as f64).sqrt(),
            rng,
        );
        theta
    }

    /// Sinusoidal embedding of each timestep, `batch × time_dim`.
    pub fn time_embedding<F: Real>(&self, t: &[usize]) -> Vec<F> {
        let e = self.arch.time_dim;
        let half = e / 2;
        let mut out = vec![F::zero(); t.len() * e];
        for (row, &ti) in out.chunks_exact_mut(e).zip(t) {
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
                let arg = ti as f64 * freq;
                row[i] = F::lit(arg.sin());
                row[half + i] = F::lit(arg.cos());
            }
        }
        out
    }

    fn check_inputs(&self, x_len: usize, t: &[usize], labels: Option<&[u32]>) -> Result<usize> {
        let d = self.arch.input.dim();
        let batch = t.len();
        if x_len != batch * d {
            return Err(Error::shape(format!("{batch}x{d}"), x_len));
        }
        if let Some(sc) = &self.scales {
            if let Some(&bad) = t.iter().find(|&&ti| ti >= sc.len()) {
                return Err(Error::Argument(format!(
                    "timestep {bad} outside [0, {}]",
                    sc.len() - 1
                )));
            }
        }
        if let Some(k) = self.arch.classes() {
            let labels = labels.ok_or_else(|| {
                Error::Argument("class-conditional model needs a label for every input".into())
            })?;
            if labels.len() != batch {
                return Err(Error::shape(batch, labels.len()));
            }
            if let Some(l) = labels.iter().find(|&&l| l as usize >= k) {
                return Err(Error::Argument(format!("label {l} outside {k} classes")));
            }
        }
        Ok(batch)
    }

    /// ε-prediction for a batch of noised inputs (model space, `batch × d`).
    pub fn forward<F: Real>(
        &self,
        params: &[F],
        x: &[F],
        t: &[usize],
        labels: Option<&[u32]>,
    ) -> Result<Vec<F>> {
        Ok(self.forward_impl(params, x, t, labels, false)?.0)
    }

    /// Forward pass that also returns the activations needed by [`Network::backward`].
    pub fn forward_cached<F: Real>(
        &self,
        params: &[F],
        x: &[F],
        t: &[usize],
        labels: Option<&[u32]>,
    ) -> Result<(Vec<F>, Cache<F>)> {
        let (out, cache) = self.forward_impl(params, x, t, labels, true)?;
        Ok((out, cache.expect("requested")))
    }

    fn forward_impl<F: Real>(
        &self,
        params: &[F],
        x: &[F],
        t: &[usize],
        labels: Option<&[u32]>,
        keep: bool,
    ) -> Result<(Vec<F>, Option<Cache<F>>)> {
        assert_eq!(params.len(), self.len, "parameter vector length");
        let batch = self.check_inputs(x.len(), t, labels)?;
        let labels = if self.arch.classes().is_some() {
            labels
        } else {
            None
        };
        let te = self.arch.time_dim;
        let temb = self.time_embedding::<F>(t);
        let d = self.arch.input.dim();
        let scaled: Vec<F>;
        let x: &[F] = match &self.scales {
            Some(sc) => {
                scaled = x
                    .chunks_exact(d)
                    .zip(t)
                    .flat_map(|(row, &ti)| {
                        let c_in = F::lit(sc[ti].0);
                        row.iter().map(move |&v| v * c_in)
                    })
                    .collect();
                &scaled
            }
            None => x,
        };
        let mut zs = Vec::new();
        let mut hs: Vec<Vec<F>> = Vec::new();
        let mut prev: Vec<F> = Vec::new();
        for (l, ly) in self.layers.iter().enumerate() {
            let input: &[F] = if l == 0 { x } else { &prev };
            let mut z = vec![F::zero(); batch * ly.width];
            let bias = &params[ly.b..ly.b + ly.width];
            for row in z.chunks_exact_mut(ly.width) {
                row.copy_from_slice(bias);
            }
            mm(
                input,
                &params[ly.w..],
                &mut z,
                batch,
                ly.fan_in,
                ly.width,
                F::one(),
            );
            mm(
                &temb,
                &params[ly.wt..],
                &mut z,
                batch,
                te,
                ly.width,
                F::one(),
            );
            if let (Some(e), Some(labels)) = (ly.emb, labels) {
                for (row, &lab) in z.chunks_exact_mut(ly.width).zip(labels) {
                    let emb = &params[e + lab as usize * ly.width..][..ly.width];
                    for (zi, &ei) in row.iter_mut().zip(emb) {
                        *zi += ei;
                    }
                }
            }
            let mut h: Vec<F> = z.iter().map(|&zi| zi * sigmoid(zi)).collect();
            if ly.residual {
                for (hi, &pi) in h.iter_mut().zip(input) {
                    *hi += pi;
                }
            }
            if keep {
                zs.push(z);
                if l > 0 {
                    hs.push(std::mem::take(&mut prev));
                }
            }
            prev = h;
        }
        let last = self.layers.last().expect("validated").width;
        let mut out = vec![F::zero(); batch * d];
        let bias = &params[self.b_out..self.b_out + d];
        for row in out.chunks_exact_mut(d) {
            row.copy_from_slice(bias);
        }
        mm(
            &prev,
            &params[self.w_out..],
            &mut out,
            batch,
            last,
            d,
            F::one(),
        );
        let mut c_out = None;
        if let Some(sc) = &self.scales {
            // x holds c_in z, so c_skip z = (c_skip / c_in) x.
            for ((o, xi), &ti) in out.chunks_exact_mut(d).zip(x.chunks_exact(d)).zip(t) {
                let (c_in, c_skip, co) = sc[ti];
                let (k, co) = (F::lit(c_skip / c_in), F::lit(co));
                for (oi, &v) in o.iter_mut().zip(xi) {
                    *oi = co * *oi + k * v;
                }
            }
            c_out = Some(t.iter().map(|&ti| F::lit(sc[ti].2)).collect());
        }
        let cache = keep.then(|| {
            hs.push(prev);
            Cache {
                batch,
                x: x.to_vec(),
                temb,
                labels: labels.map(<[u32]>::to_vec),
                c_out,
                z: zs,
                h: hs,
            }
        });
        Ok((out, cache))
    }

    /// Accumulates `∂L/∂θ` into `grads` given `d_out = ∂L/∂output`.
    pub fn backward<F: Real>(&self, params: &[F], cache: &Cache<F>, d_out: &[F], grads: &mut [F]) {
        assert_eq!(grads.len(), self.len);
        let batch = cache.batch;
        let d = self.arch.input.dim();
        let te = self.arch.time_dim;
        let nl = self.layers.len();
        let last = self.layers[nl - 1].width;
        assert_eq!(d_out.len(), batch * d);
        let scaled_out: Vec<F>;
        let d_out = match &cache.c_out {
            Some(c) => {
                scaled_out = d_out
                    .chunks_exact(d)
                    .zip(c)
                    .flat_map(|(row, &ci)| row.iter().map(move |&g| g * ci))
                    .collect();
                &scaled_out[..]
            }
            None => d_out,
        };

        mm_tn_acc(
            &cache.h[nl - 1],
            d_out,
            &mut grads[self.w_out..],
            last,
            batch,
            d,
        );
        for row in d_out.chunks_exact(d) {
            for (g, &v) in grads[self.b_out..self.b_out + d].iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dh = vec![F::zero(); batch * last];
        mm_nt(
            d_out,
            &params[self.w_out..],
            &mut dh,
            batch,
            d,
            last,
            F::zero(),
        );

        for l in (0..nl).rev() {
            let ly = &self.layers[l];
            let z = &cache.z[l];
            let dz: Vec<F> = dh
                .iter()
                .zip(z)
                .map(|(&g, &zi)| {
                    let s = sigmoid(zi);
                    g * s * (F::one() + zi * (F::one() - s))
                })
                .collect();
            let input: &[F] = if l == 0 { &cache.x } else { &cache.h[l - 1] };
            mm_tn_acc(input, &dz, &mut grads[ly.w..], ly.fan_in, batch, ly.width);
            mm_tn_acc(&cache.temb, &dz, &mut grads[ly.wt..], te, batch, ly.width);
            for row in dz.chunks_exact(ly.width) {
                for (g, &v) in grads[ly.b..ly.b + ly.width].iter_mut().zip(row) {
                    *g += v;
                }
            }
            if let (Some(e), Some(labels)) = (ly.emb, &cache.labels) {
                for (row, &lab) in dz.chunks_exact(ly.width).zip(labels) {
                    let g = &mut grads[e + lab as usize * ly.width..][..ly.width];
                    for (gi, &v) in g.iter_mut().zip(row) {
                        *gi += v;
                    }
                }
            }
            if l > 0 {
                let mut prev = if ly.residual {
                    dh.clone()
                } else {
                    vec![F::zero(); batch * ly.fan_in]
                };
                mm_nt(
                    &dz,
                    &params[ly.w..],
                    &mut prev,
                    batch,
                    ly.width,
                    ly.fan_in,
                    F::one(),
                );
                dh = prev;
            }
        }
    }
}

/// Per-example mean squared error between `eps` and the prediction, and
/// `∂(mean over the batch)/∂output` when requested.
pub fn mse_rows<F: Real>(
    pred: &[F],
    eps: &[F],
    d: usize,
    with_grad: bool,
) -> (Vec<f64>, Option<Vec<F>>) {
    let batch = pred.len() / d;
    let mut losses = Vec::with_capacity(batch);
    for (p, e) in pred.chunks_exact(d).zip(eps.chunks_exact(d)) {
        let s: f64 = p
            .iter()
            .zip(e)
            .map(|(&pi, &ei)| {
                let r = (ei - pi).to_f64().unwrap_or(f64::NAN);
                r * r
            })
            .sum();
        losses.push(s / d as f64);
    }
    let grad = with_grad.then(|| {
        let scale = F::lit(-2.0 / (d * batch) as f64);
        pred.iter()
            .zip(eps)
            .map(|(&p, &e)| scale * (e - p))
            .collect()
    });
    (losses, grad)
}
