//! Dual prompt banks, lightweight prompt encoders, prompt fusion, and
//! per-site channel modulation heads.
//!
//! Three degradation-specific prompts (noise, blur, contrast) and two
//! type-specific prompts (single, composite) are learnable vectors.
//! Each selected prompt passes through its own two-layer encoder, the
//! two features are concatenated and fused into one conditioning vector
//! `F_p`, and per-site heads map `F_p` to `(gamma, beta)` pairs. Heads
//! are zero-initialized, so a freshly wrapped model reproduces its
//! backbone exactly.

use ndarray::{concatenate, Array1, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{InjectionSiteRegistry, SiteGrad, SiteModulation};
use crate::degrade::{Scenario, StepKind};
use crate::error::{Error, Result};
use crate::nn::ops::{gelu_vec, gelu_vec_backward};
use crate::nn::{LayoutBuilder, Linear, ParamRange};

fn default_dp() -> usize {
    64
}
fn default_dh() -> usize {
    128
}
fn default_init_std() -> f64 {
    0.02
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    /// Prompt vector dimensionality d_p.
    #[serde(default = "default_dp")]
    pub prompt_dim: usize,
    /// Encoder/fusion feature dimensionality d_h.
    #[serde(default = "default_dh")]
    pub hidden_dim: usize,
    /// Scale of the prompt-vector initialization.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            prompt_dim: default_dp(),
            hidden_dim: default_dh(),
            init_std: default_init_std(),
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_dim == 0 || self.hidden_dim == 0 || self.init_std <= 0.0 {
            return Err(Error::InvalidConfig(format!("bad prompt config {self:?}")));
        }
        Ok(())
    }
}

pub const DEG_PROMPTS: [StepKind; 3] = [StepKind::Noise, StepKind::Blur, StepKind::Contrast];

fn deg_slot(kind: StepKind) -> usize {
    match kind {
        StepKind::Noise => 0,
        StepKind::Blur => 1,
        StepKind::Contrast => 2,
    }
}

fn type_slot(scenario: Scenario) -> usize {
    match scenario {
        Scenario::Single => 0,
        Scenario::Composite => 1,
    }
}

/// Two-layer encoder `d_p -> d_h -> d_h` with a GELU in between.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Encoder {
    l1: Linear,
    l2: Linear,
}

impl Encoder {
    fn new(b: &mut LayoutBuilder, d_p: usize, d_h: usize) -> Self {
        Encoder { l1: Linear::new(b, d_p, d_h), l2: Linear::new(b, d_h, d_h) }
    }

    fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count()
    }

    fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        // Xavier-style scale for the affine layers.
        self.l1.init(params, rng, (2.0 / (self.l1.din + self.l1.dout) as f64).sqrt());
        self.l2.init(params, rng, (2.0 / (self.l2.din + self.l2.dout) as f64).sqrt());
    }

    fn forward(&self, params: &[f64], x: &Array1<f64>) -> (Array1<f64>, EncoderCache) {
        let h1 = self.l1.forward(params, x);
        let a1 = gelu_vec(&h1);
        let out = self.l2.forward(params, &a1);
        (out, EncoderCache { x: x.clone(), h1, a1 })
    }

    fn backward(
        &self,
        params: &[f64],
        cache: &EncoderCache,
        g_out: &Array1<f64>,
        grads: &mut [f64],
    ) -> Array1<f64> {
        let ga1 = self.l2.backward(params, &cache.a1, g_out, grads);
        let gh1 = gelu_vec_backward(&cache.h1, &ga1);
        self.l1.backward(params, &cache.x, &gh1, grads)
    }
}

struct EncoderCache {
    x: Array1<f64>,
    h1: Array1<f64>,
    a1: Array1<f64>,
}

/// The full prompt-conditioning stack over a site registry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptModule {
    pub cfg: PromptConfig,
    deg_prompts: [ParamRange; 3],
    type_prompts: [ParamRange; 2],
    enc_deg: Encoder,
    enc_type: Encoder,
    fusion: Linear,
    heads: Vec<Linear>,
    site_channels: Vec<usize>,
}

/// Cache of one conditioning forward pass (`F_p` plus intermediates).
pub struct PromptCache {
    deg_idx: StepKind,
    type_idx: Scenario,
    enc_deg: EncoderCache,
    enc_type: EncoderCache,
    fused_in: Array1<f64>,
    fused_pre: Array1<f64>,
    pub f_p: Array1<f64>,
}

impl PromptModule {
    /// Lays the module out on `builder`, one head per registered site.
    pub fn new(
        builder: &mut LayoutBuilder,
        cfg: PromptConfig,
        registry: &InjectionSiteRegistry,
    ) -> Result<Self> {
        cfg.validate()?;
        if registry.is_empty() {
            return Err(Error::InvalidConfig(
                "cannot wrap a backbone without injection sites".into(),
            ));
        }
        let (d_p, d_h) = (cfg.prompt_dim, cfg.hidden_dim);
        let deg_prompts = [builder.alloc(d_p), builder.alloc(d_p), builder.alloc(d_p)];
        let type_prompts = [builder.alloc(d_p), builder.alloc(d_p)];
        let enc_deg = Encoder::new(builder, d_p, d_h);
        let enc_type = Encoder::new(builder, d_p, d_h);
        let fusion = Linear::new(builder, 2 * d_h, d_h);
        let heads = registry
            .sites()
            .iter()
            .map(|s| Linear::new(builder, d_h, 2 * s.channels))
            .collect();
        let site_channels = registry.sites().iter().map(|s| s.channels).collect();
        Ok(PromptModule {
            cfg,
            deg_prompts,
            type_prompts,
            enc_deg,
            enc_type,
            fusion,
            heads,
            site_channels,
        })
    }

    /// Prompt vectors and encoders random, modulation heads exactly
    /// zero: identity at initialization.
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        let dist = rand_distr::Normal::new(0.0, self.cfg.init_std).expect("positive std");
        use rand_distr::Distribution;
        for r in self.deg_prompts.iter().chain(&self.type_prompts) {
            for v in r.slice_mut(params) {
                *v = dist.sample(rng);
            }
        }
        self.enc_deg.init(params, rng);
        self.enc_type.init(params, rng);
        self.fusion
            .init(params, rng, (2.0 / (3 * self.cfg.hidden_dim) as f64).sqrt());
        for head in &self.heads {
            head.zero_init(params);
        }
    }

    pub fn param_count(&self) -> usize {
        5 * self.cfg.prompt_dim
            + self.enc_deg.param_count()
            + self.enc_type.param_count()
            + self.fusion.param_count()
            + self.heads.iter().map(Linear::param_count).sum::<usize>()
    }

    pub fn num_sites(&self) -> usize {
        self.heads.len()
    }

    /// Encoded prompt features `(F_deg, F_type)` for an index pair.
    pub fn encode_prompts(
        &self,
        params: &[f64],
        deg_idx: StepKind,
        type_idx: Scenario,
    ) -> (Array1<f64>, Array1<f64>) {
        let p_deg = ArrayView1::from(self.deg_prompts[deg_slot(deg_idx)].slice(params)).to_owned();
        let p_type =
            ArrayView1::from(self.type_prompts[type_slot(type_idx)].slice(params)).to_owned();
        let (f_deg, _) = self.enc_deg.forward(params, &p_deg);
        let (f_type, _) = self.enc_type.forward(params, &p_type);
        (f_deg, f_type)
    }

    /// Fused conditioning feature `F_p = phi(W_fusion(cat(F_deg, F_type)))`.
    pub fn fuse_prompts(
        &self,
        params: &[f64],
        f_deg: &Array1<f64>,
        f_type: &Array1<f64>,
    ) -> Result<Array1<f64>> {
        if f_deg.len() != self.cfg.hidden_dim || f_type.len() != self.cfg.hidden_dim {
            return Err(Error::ShapeMismatch(format!(
                "fusion inputs must have length {}, got {} and {}",
                self.cfg.hidden_dim,
                f_deg.len(),
                f_type.len()
            )));
        }
        let cat = concatenate(Axis(0), &[f_deg.view(), f_type.view()]).expect("1-d concat");
        let pre = self.fusion.forward(params, &cat);
        Ok(gelu_vec(&pre))
    }

    /// `(gamma, beta)` for one site, split from the head output in that
    /// fixed order.
    pub fn modulation_params(
        &self,
        params: &[f64],
        f_p: &Array1<f64>,
        site: usize,
    ) -> Result<SiteModulation> {
        if site >= self.heads.len() {
            return Err(Error::InvalidParameter(format!(
                "unregistered injection site index {site}"
            )));
        }
        let out = self.heads[site].forward(params, f_p);
        let c = self.site_channels[site];
        Ok(SiteModulation {
            gamma: out.slice(ndarray::s![..c]).to_owned(),
            beta: out.slice(ndarray::s![c..]).to_owned(),
        })
    }

    /// Full conditioning pass: one `F_p`, then modulation parameters for
    /// every registered site.
    pub fn forward(
        &self,
        params: &[f64],
        deg_idx: StepKind,
        type_idx: Scenario,
    ) -> (Vec<SiteModulation>, PromptCache) {
        let p_deg = ArrayView1::from(self.deg_prompts[deg_slot(deg_idx)].slice(params)).to_owned();
        let p_type =
            ArrayView1::from(self.type_prompts[type_slot(type_idx)].slice(params)).to_owned();
        let (f_deg, enc_deg) = self.enc_deg.forward(params, &p_deg);
        let (f_type, enc_type) = self.enc_type.forward(params, &p_type);
        let fused_in = concatenate(Axis(0), &[f_deg.view(), f_type.view()]).expect("1-d concat");
        let fused_pre = self.fusion.forward(params, &fused_in);
        let f_p = gelu_vec(&fused_pre);
        let mods = (0..self.heads.len())
            .map(|s| self.modulation_params(params, &f_p, s).expect("site in range"))
            .collect();
        (
            mods,
            PromptCache { deg_idx, type_idx, enc_deg, enc_type, fused_in, fused_pre, f_p },
        )
    }

    /// Backward pass from per-site modulation gradients down to the
    /// prompt vectors. Accumulates into the flat gradient vector.
    pub fn backward(&self, params: &[f64], cache: &PromptCache, site_grads: &[SiteGrad], grads: &mut [f64]) {
        let d_h = self.cfg.hidden_dim;
        let mut g_fp = Array1::<f64>::zeros(d_h);
        for (site, head) in self.heads.iter().enumerate() {
            let sg = &site_grads[site];
            let c = self.site_channels[site];
            let mut g_out = Array1::<f64>::zeros(2 * c);
            g_out.slice_mut(ndarray::s![..c]).assign(&sg.gamma);
            g_out.slice_mut(ndarray::s![c..]).assign(&sg.beta);
            g_fp += &head.backward(params, &cache.f_p, &g_out, grads);
        }
        let g_pre = gelu_vec_backward(&cache.fused_pre, &g_fp);
        let g_cat = self.fusion.backward(params, &cache.fused_in, &g_pre, grads);
        let g_fdeg = g_cat.slice(ndarray::s![..d_h]).to_owned();
        let g_ftype = g_cat.slice(ndarray::s![d_h..]).to_owned();
        let g_pdeg = self.enc_deg.backward(params, &cache.enc_deg, &g_fdeg, grads);
        let g_ptype = self.enc_type.backward(params, &cache.enc_type, &g_ftype, grads);
        for (dst, g) in self.deg_prompts[deg_slot(cache.deg_idx)]
            .slice_mut(grads)
            .iter_mut()
            .zip(&g_pdeg)
        {
            *dst += g;
        }
        for (dst, g) in self.type_prompts[type_slot(cache.type_idx)]
            .slice_mut(grads)
            .iter_mut()
            .zip(&g_ptype)
        {
            *dst += g;
        }
    }
}

/// Applies channel-wise modulation to a standalone feature map:
/// `out[c,h,w] = f[c,h,w] * (1 + gamma[c]) + beta[c]`.
pub fn modulate(f: &crate::nn::Feature, m: &SiteModulation) -> Result<crate::nn::Feature> {
    let (c, _, _) = f.dim();
    if m.gamma.len() != c || m.beta.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "modulation channels {} do not match feature channels {c}",
            m.gamma.len()
        )));
    }
    let mut out = f.clone();
    for (ci, mut plane) in out.outer_iter_mut().enumerate() {
        let (g, b) = (1.0 + m.gamma[ci], m.beta[ci]);
        plane.mapv_inplace(|v| v * g + b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::InjectionSite;
    use ndarray::{array, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_module(sites: &[usize]) -> (PromptModule, Vec<f64>) {
        let registry = InjectionSiteRegistry(
            sites
                .iter()
                .enumerate()
                .map(|(i, &c)| InjectionSite { id: format!("s{i}"), channels: c })
                .collect(),
        );
        let mut b = LayoutBuilder::new();
        let cfg = PromptConfig { prompt_dim: 4, hidden_dim: 8, init_std: 0.02 };
        let m = PromptModule::new(&mut b, cfg, &registry).unwrap();
        let mut params = vec![0.0; b.total()];
        m.init(&mut params, &mut ChaCha12Rng::seed_from_u64(3));
        (m, params)
    }

    #[test]
    fn encode_deterministic_and_index_sensitive() {
        let (m, params) = tiny_module(&[2]);
        let (a1, t1) = m.encode_prompts(&params, StepKind::Noise, Scenario::Single);
        let (a2, t2) = m.encode_prompts(&params, StepKind::Noise, Scenario::Single);
        assert_eq!(a1, a2);
        assert_eq!(t1, t2);
        assert_eq!(a1.len(), 8);
        assert_eq!(t1.len(), 8);
        let (b1, _) = m.encode_prompts(&params, StepKind::Blur, Scenario::Single);
        assert!(a1.iter().zip(&b1).any(|(x, y)| x != y));
    }

    #[test]
    fn fusion_zero_map_and_type_sensitivity() {
        let (m, mut params) = tiny_module(&[2]);
        let (f_deg, f_type) = m.encode_prompts(&params, StepKind::Noise, Scenario::Single);
        let (_, f_type2) = m.encode_prompts(&params, StepKind::Noise, Scenario::Composite);
        let fp1 = m.fuse_prompts(&params, &f_deg, &f_type).unwrap();
        let fp2 = m.fuse_prompts(&params, &f_deg, &f_type2).unwrap();
        assert_eq!(fp1.len(), 8);
        assert!(fp1.iter().zip(&fp2).any(|(x, y)| x != y));

        // All-zero fusion weights and bias: F_p = phi(0) elementwise.
        for v in m.fusion.weight.slice_mut(&mut params) {
            *v = 0.0;
        }
        for v in m.fusion.bias.slice_mut(&mut params) {
            *v = 0.0;
        }
        let fp0 = m.fuse_prompts(&params, &f_deg, &f_type).unwrap();
        assert!(fp0.iter().all(|&v| v == 0.0)); // gelu(0) == 0
    }

    #[test]
    fn fusion_rejects_dimension_mismatch() {
        let (m, params) = tiny_module(&[2]);
        let bad = Array1::zeros(5);
        let good = Array1::zeros(8);
        assert!(m.fuse_prompts(&params, &bad, &good).is_err());
    }

    #[test]
    fn heads_zero_initialized_and_affine() {
        let (m, params) = tiny_module(&[2, 3]);
        let (f_deg, f_type) = m.encode_prompts(&params, StepKind::Contrast, Scenario::Composite);
        let f_p = m.fuse_prompts(&params, &f_deg, &f_type).unwrap();
        for site in 0..2 {
            let sm = m.modulation_params(&params, &f_p, site).unwrap();
            assert!(sm.gamma.iter().all(|&v| v == 0.0));
            assert!(sm.beta.iter().all(|&v| v == 0.0));
            assert_eq!(sm.gamma.len(), [2, 3][site]);
        }
        assert!(m.modulation_params(&params, &f_p, 2).is_err());

        // Affinity in F_p after giving the head nonzero weights.
        let (m, mut params) = tiny_module(&[2]);
        m.heads[0].init(&mut params, &mut ChaCha12Rng::seed_from_u64(9), 0.3);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        use rand::Rng;
        let u = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
        let v = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
        let a = 0.3;
        let mix = &u * a + &v * (1.0 - a);
        let pm = m.modulation_params(&params, &mix, 0).unwrap();
        let pu = m.modulation_params(&params, &u, 0).unwrap();
        let pv = m.modulation_params(&params, &v, 0).unwrap();
        for i in 0..2 {
            let expect = a * pu.gamma[i] + (1.0 - a) * pv.gamma[i];
            assert!((pm.gamma[i] - expect).abs() < 1e-12);
            let expect = a * pu.beta[i] + (1.0 - a) * pv.beta[i];
            assert!((pm.beta[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn modulate_semantics() {
        // gamma=0, beta=0 -> identity
        let f = Array3::from_shape_fn((1, 2, 2), |(_, i, j)| (i * 2 + j) as f64);
        let id = SiteModulation { gamma: array![0.0], beta: array![0.0] };
        assert_eq!(modulate(&f, &id).unwrap(), f);

        // gamma=-1 -> beta broadcast
        let ann = SiteModulation { gamma: array![-1.0], beta: array![0.7] };
        let out = modulate(&f, &ann).unwrap();
        assert!(out.iter().all(|&v| v == 0.7));

        // F=2, gamma=0.5, beta=1 -> 2*1.5+1 = 4
        let f1 = Array3::from_elem((1, 1, 1), 2.0);
        let sm = SiteModulation { gamma: array![0.5], beta: array![1.0] };
        assert_eq!(modulate(&f1, &sm).unwrap()[[0, 0, 0]], 4.0);

        // channel mismatch
        let bad = SiteModulation { gamma: array![0.0, 0.0], beta: array![0.0, 0.0] };
        assert!(modulate(&f, &bad).is_err());
    }

    #[test]
    fn modulate_spatial_equivariance() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let f = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0..1.0));
        let m = SiteModulation { gamma: array![0.3, -0.2], beta: array![0.1, 0.4] };
        let out = modulate(&f, &m).unwrap();
        // Translating the feature translates the output identically.
        let shifted = f.slice(ndarray::s![.., 1.., ..]).to_owned();
        let out_shifted = modulate(&shifted, &m).unwrap();
        assert_eq!(out.slice(ndarray::s![.., 1.., ..]).to_owned(), out_shifted);
    }
}
