//! Fused soft rasterizer for convex quads.
//!
//! Per pixel `p` and face `f`, with edge lines `d_fe(p) = a·x + b·y + c`
//! (positive inside, in pixels):
//!
//! ```text
//! l_f   = Σ_e log σ(d_fe / τ)            soft coverage, cov_f = exp(l_f)
//! w     = softmax_f(l_f + β · depth_f)   visibility blend
//! A     = 1 − Π_f (1 − cov_f)            silhouette alpha
//! out_c = A · Σ_f w_f shade_fc + (1 − A) · background
//! ```
//!
//! Faces whose log-coverage drops below [`PRUNE_LOG_COVERAGE`] at a pixel are
//! dropped from both passes, so forward and backward stay consistent.

use crate::autodiff::{Array, CustomOp, Tape, Var};
use crate::error::Result;

pub const EDGES: usize = 4;
pub const PRUNE_LOG_COVERAGE: f64 = -40.0;
const MAX_FACES: usize = 8;

#[derive(Clone, Debug)]
pub struct SoftRaster {
    pub width: usize,
    pub height: usize,
    pub tau: f64,
    pub beta: f64,
    pub background: f64,
}

/// Per-pixel quantities saved by the forward pass for the backward pass.
struct Cache {
    faces: usize,
    /// `σ(−d/τ)` per pixel, face and edge.
    sig_neg: Vec<f64>,
    /// Coverage per pixel and face; zero when pruned.
    cov: Vec<f64>,
    w: Vec<f64>,
    alpha: Vec<f64>,
}

/// `(σ(x), σ(−x))` from a single exponential.
#[inline]
fn sigmoid_pair(x: f64) -> (f64, f64) {
    if x >= 0.0 {
        let e = (-x).exp();
        let r = 1.0 / (1.0 + e);
        (r, e * r)
    } else {
        let e = x.exp();
        let r = 1.0 / (1.0 + e);
        (e * r, r)
    }
}

impl SoftRaster {
    fn run(&self, edges: &Array, depth: &Array, shade: &Array, cache: Option<&mut Cache>) -> Array {
        let nf = edges.shape()[0];
        assert!(nf <= MAX_FACES, "at most {MAX_FACES} faces");
        let (w, h) = (self.width, self.height);
        let plane = w * h;
        let (ed, dd, sd) = (edges.data(), depth.data(), shade.data());
        let prune = PRUNE_LOG_COVERAGE.exp();
        let inv_tau = 1.0 / self.tau;
        let dmax = dd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut ef = [0.0; MAX_FACES];
        for f in 0..nf {
            ef[f] = (self.beta * (dd[f] - dmax)).exp();
        }
        let mut out = vec![0.0; 3 * plane];
        let mut cache = cache;
        let mut sig_neg = [0.0; MAX_FACES * EDGES];
        for i in 0..h {
            let y = i as f64 + 0.5;
            for j in 0..w {
                let x = j as f64 + 0.5;
                let p = i * w + j;
                let mut cov = [0.0; MAX_FACES];
                let mut pass = 1.0;
                let mut z = 0.0;
                for f in 0..nf {
                    let mut c = 1.0;
                    for e in 0..EDGES {
                        let k = (f * EDGES + e) * 3;
                        let d = ed[k] * x + ed[k + 1] * y + ed[k + 2];
                        let (s, sn) = sigmoid_pair(d * inv_tau);
                        c *= s;
                        sig_neg[f * EDGES + e] = sn;
                        if c < prune {
                            c = 0.0;
                            break;
                        }
                    }
                    cov[f] = c;
                    pass *= 1.0 - c;
                    z += c * ef[f];
                }
                let mut wts = [0.0; MAX_FACES];
                if z > 0.0 {
                    for f in 0..nf {
                        wts[f] = cov[f] * ef[f] / z;
                    }
                } else if cov[..nf].iter().any(|&c| c > 0.0) {
                    // depth weights underflowed: softmax in log space
                    let logit = |f: usize| cov[f].ln() + self.beta * dd[f];
                    let m = (0..nf).filter(|&f| cov[f] > 0.0).map(logit).fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for f in 0..nf {
                        if cov[f] > 0.0 {
                            wts[f] = (logit(f) - m).exp();
                            s += wts[f];
                        }
                    }
                    wts[..nf].iter_mut().for_each(|v| *v /= s);
                }
                let alpha = 1.0 - pass;
                for c in 0..3 {
                    let mut s = 0.0;
                    for f in 0..nf {
                        s += wts[f] * sd[f * 3 + c];
                    }
                    out[c * plane + p] = alpha * s + (1.0 - alpha) * self.background;
                }
                if let Some(cache) = cache.as_deref_mut() {
                    cache.sig_neg[p * nf * EDGES..(p + 1) * nf * EDGES]
                        .copy_from_slice(&sig_neg[..nf * EDGES]);
                    cache.cov[p * nf..(p + 1) * nf].copy_from_slice(&cov[..nf]);
                    cache.w[p * nf..(p + 1) * nf].copy_from_slice(&wts[..nf]);
                    cache.alpha[p] = alpha;
                }
            }
        }
        Array::new(vec![3, h, w], out).expect("raster output shape")
    }

    /// Forward pass. `edges: [F,4,3]`, `depth: [F]`, `shade: [F,3]`;
    /// returns `[3, height, width]`.
    pub fn forward(&self, edges: &Array, depth: &Array, shade: &Array) -> Array {
        self.run(edges, depth, shade, None)
    }

    /// Record the rasterization of three tape nodes as one fused node.
    pub fn record(&self, tape: &mut Tape, edges: Var, depth: Var, shade: Var) -> Result<Var> {
        let nf = tape.shape(edges)[0];
        if ![edges, depth, shade].iter().any(|&v| tape.requires_grad(v)) {
            let value = self.forward(tape.value(edges), tape.value(depth), tape.value(shade));
            return Ok(tape.constant(value));
        }
        let plane = self.width * self.height;
        let mut cache = Cache {
            faces: nf,
            sig_neg: vec![0.0; plane * nf * EDGES],
            cov: vec![0.0; plane * nf],
            w: vec![0.0; plane * nf],
            alpha: vec![0.0; plane],
        };
        let value = self.run(tape.value(edges), tape.value(depth), tape.value(shade), Some(&mut cache));
        tape.custom(
            &[edges, depth, shade],
            value,
            Box::new(RasterOp {
                raster: self.clone(),
                cache,
            }),
        )
    }
}

struct RasterOp {
    raster: SoftRaster,
    cache: Cache,
}

impl CustomOp for RasterOp {
    fn name(&self) -> &'static str {
        "soft_raster"
    }

    fn backward(&self, inputs: &[&Array], _output: &Array, grad: &Array) -> Vec<Array> {
        let (edges, depth, shade) = (inputs[0], inputs[1], inputs[2]);
        let r = &self.raster;
        let nf = self.cache.faces;
        let sd = shade.data();
        let mut g_edges = vec![0.0; edges.len()];
        let mut g_depth = vec![0.0; depth.len()];
        let mut g_shade = vec![0.0; sd.len()];
        let (w, h) = (r.width, r.height);
        let plane = w * h;
        let g = grad.data();
        let inv_tau = 1.0 / r.tau;
        for i in 0..h {
            let y = i as f64 + 0.5;
            for j in 0..w {
                let x = j as f64 + 0.5;
                let p = i * w + j;
                let gp = [g[p], g[plane + p], g[2 * plane + p]];
                if gp == [0.0; 3] {
                    continue;
                }
                let cov = &self.cache.cov[p * nf..(p + 1) * nf];
                if cov.iter().all(|&c| c == 0.0) {
                    continue;
                }
                let wts = &self.cache.w[p * nf..(p + 1) * nf];
                let sig_neg = &self.cache.sig_neg[p * nf * EDGES..(p + 1) * nf * EDGES];
                let alpha = self.cache.alpha[p];
                // colour mix and its sensitivities
                let mut mix = [0.0; 3];
                let mut u = [0.0; MAX_FACES];
                for f in 0..nf {
                    if cov[f] == 0.0 {
                        continue;
                    }
                    let mut uf = 0.0;
                    for c in 0..3 {
                        let s = sd[f * 3 + c];
                        mix[c] += wts[f] * s;
                        uf += gp[c] * s;
                        g_shade[f * 3 + c] += gp[c] * alpha * wts[f];
                    }
                    u[f] = alpha * uf;
                }
                let d_alpha: f64 = (0..3).map(|c| gp[c] * (mix[c] - r.background)).sum();
                let u_bar: f64 = (0..nf).map(|f| wts[f] * u[f]).sum();

                // ∂A/∂cov_f = Π_{g≠f} (1 − cov_g) via prefix/suffix products
                let mut prefix = [1.0; MAX_FACES + 1];
                for f in 0..nf {
                    prefix[f + 1] = prefix[f] * (1.0 - cov[f]);
                }
                let mut suffix = 1.0;
                for f in (0..nf).rev() {
                    if cov[f] > 0.0 {
                        let da_dcov = prefix[f] * suffix;
                        let dg = wts[f] * (u[f] - u_bar);
                        g_depth[f] += r.beta * dg;
                        let dl = dg + d_alpha * da_dcov * cov[f];
                        if dl != 0.0 {
                            for e in 0..EDGES {
                                let k = (f * EDGES + e) * 3;
                                let t = dl * sig_neg[f * EDGES + e] * inv_tau;
                                g_edges[k] += t * x;
                                g_edges[k + 1] += t * y;
                                g_edges[k + 2] += t;
                            }
                        }
                    }
                    suffix *= 1.0 - cov[f];
                }
            }
        }
        vec![
            Array::new(edges.shape().to_vec(), g_edges).expect("edge grad"),
            Array::new(depth.shape().to_vec(), g_depth).expect("depth grad"),
            Array::new(shade.shape().to_vec(), g_shade).expect("shade grad"),
        ]
    }
}
