//! Reference restoration backbone: a small residual convolutional
//! encoder-decoder with additive skip connections.
//!
//! Every block output is a registered injection site, which is the
//! contract external backbones must satisfy to be wrapped by the
//! prompt-conditioning module: expose an ordered `(site_id, channels)`
//! registry and accept per-site `(gamma, beta)` channel modulation.

use ndarray::{Array1, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::ops::{relu, relu_backward, upsample2, upsample2_backward};
use crate::nn::{Conv2d, ConvCache, Feature, LayoutBuilder};

fn default_levels() -> usize {
    3
}
fn default_base_channels() -> usize {
    32
}
fn default_blocks() -> usize {
    2
}
fn default_residual() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    #[serde(default = "default_blocks")]
    pub blocks_per_level: usize,
    #[serde(default = "default_residual")]
    pub residual_output: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            levels: default_levels(),
            base_channels: default_base_channels(),
            blocks_per_level: default_blocks(),
            residual_output: default_residual(),
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.base_channels < 1 || self.blocks_per_level < 1 {
            return Err(Error::InvalidConfig(format!(
                "backbone config must have levels, base_channels, blocks_per_level >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Spatial downsampling factor of the deepest level.
    pub fn alignment(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionSite {
    pub id: String,
    pub channels: usize,
}

/// Ordered, serialization-stable list of injection sites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionSiteRegistry(pub Vec<InjectionSite>);

impl InjectionSiteRegistry {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sites(&self) -> &[InjectionSite] {
        &self.0
    }
}

/// Residual block: conv-relu-conv plus identity skip. Its output is an
/// injection site.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Block {
    conv1: Conv2d,
    conv2: Conv2d,
    site: usize,
}

/// Per-site channel modulation `F * (1 + gamma) + beta`.
#[derive(Debug, Clone)]
pub struct SiteModulation {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Gradients flowing back out of a site's modulation parameters.
#[derive(Debug, Clone)]
pub struct SiteGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    head: Conv2d,
    enc: Vec<Vec<Block>>,
    downs: Vec<Conv2d>,
    bottleneck: Vec<Block>,
    ups: Vec<Conv2d>,
    dec: Vec<Vec<Block>>,
    tail: Conv2d,
    registry: InjectionSiteRegistry,
    param_len: usize,
}

struct BlockCache {
    c1: ConvCache,
    t1: Feature,
    c2: ConvCache,
    /// Pre-modulation block output (the site feature F_l).
    pre_mod: Feature,
}

pub struct BackboneCache {
    head: ConvCache,
    enc: Vec<Vec<BlockCache>>,
    downs: Vec<ConvCache>,
    bottleneck: Vec<BlockCache>,
    ups: Vec<ConvCache>,
    dec: Vec<Vec<BlockCache>>,
    tail: ConvCache,
}

impl Backbone {
    /// Lays out the architecture on a fresh flat parameter vector and
    /// initializes it deterministically from `seed`.
    pub fn build(cfg: BackboneConfig, seed: u64) -> Result<(Backbone, Vec<f64>)> {
        cfg.validate()?;
        let mut b = LayoutBuilder::new();
        let mut sites = Vec::new();
        let mut site_of = |id: String, ch: usize| -> usize {
            sites.push(InjectionSite { id, channels: ch });
            sites.len() - 1
        };
        let block = |b: &mut LayoutBuilder, ch: usize, site: usize| Block {
            conv1: Conv2d::new(b, ch, ch, 1),
            conv2: Conv2d::new(b, ch, ch, 1),
            site,
        };

        let head = Conv2d::new(&mut b, 1, cfg.base_channels, 1);
        let mut enc = Vec::new();
        let mut downs = Vec::new();
        for l in 0..cfg.levels {
            let ch = cfg.channels_at(l);
            let blocks = (0..cfg.blocks_per_level)
                .map(|i| {
                    let s = site_of(format!("enc{l}.block{i}"), ch);
                    block(&mut b, ch, s)
                })
                .collect();
            enc.push(blocks);
            if l + 1 < cfg.levels {
                downs.push(Conv2d::new(&mut b, ch, cfg.channels_at(l + 1), 2));
            }
        }
        let deep = cfg.channels_at(cfg.levels - 1);
        let bottleneck = (0..cfg.blocks_per_level)
            .map(|i| {
                let s = site_of(format!("bottleneck.block{i}"), deep);
                block(&mut b, deep, s)
            })
            .collect();
        // Decoder from the deepest level back up; ups[l] maps level l+1 -> l.
        let mut dec: Vec<Vec<Block>> = Vec::with_capacity(cfg.levels);
        let mut ups = Vec::new();
        for l in (0..cfg.levels).rev() {
            let ch = cfg.channels_at(l);
            let blocks: Vec<Block> = (0..cfg.blocks_per_level)
                .map(|i| {
                    let s = site_of(format!("dec{l}.block{i}"), ch);
                    block(&mut b, ch, s)
                })
                .collect();
            dec.push(blocks);
            if l > 0 {
                ups.push(Conv2d::new(&mut b, cfg.channels_at(l), cfg.channels_at(l - 1), 1));
            }
        }
        dec.reverse(); // dec[l] now indexes by level
        ups.reverse(); // ups[l] maps level l+1 features to level l
        let tail = Conv2d::new(&mut b, cfg.base_channels, 1, 1);

        let backbone = Backbone {
            cfg,
            head,
            enc,
            downs,
            bottleneck,
            ups,
            dec,
            tail,
            registry: InjectionSiteRegistry(sites),
            param_len: b.total(),
        };
        let params = backbone.init_params(seed);
        Ok((backbone, params))
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_len];
        // Damped second conv keeps residual-block activations from
        // compounding across depth.
        let init_block = |blk: &Block, p: &mut [f64], rng: &mut ChaCha12Rng| {
            blk.conv1.init(p, rng, 1.0);
            blk.conv2.init(p, rng, 0.25);
        };
        self.head.init(&mut params, &mut rng, 1.0);
        for (l, level) in self.enc.iter().enumerate() {
            for blk in level {
                init_block(blk, &mut params, &mut rng);
            }
            if l < self.downs.len() {
                self.downs[l].init(&mut params, &mut rng, 1.0);
            }
        }
        for blk in &self.bottleneck {
            init_block(blk, &mut params, &mut rng);
        }
        for l in (0..self.dec.len()).rev() {
            for blk in &self.dec[l] {
                init_block(blk, &mut params, &mut rng);
            }
            if l > 0 {
                self.ups[l - 1].init(&mut params, &mut rng, 1.0);
            }
        }
        // Near-zero residual head so the network starts close to identity.
        self.tail.init(&mut params, &mut rng, 1e-3);
        params
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn injection_sites(&self) -> &InjectionSiteRegistry {
        &self.registry
    }

    fn apply_mod(f: &Feature, m: &SiteModulation) -> Feature {
        let mut out = f.clone();
        for (c, mut plane) in out.outer_iter_mut().enumerate() {
            let (g, b) = (1.0 + m.gamma[c], m.beta[c]);
            plane.mapv_inplace(|v| v * g + b);
        }
        out
    }

    fn block_forward(
        &self,
        params: &[f64],
        blk: &Block,
        x: &Feature,
        mods: Option<&[SiteModulation]>,
    ) -> (Feature, BlockCache) {
        let (t1, c1) = blk.conv1.forward(params, x);
        let r1 = relu(&t1);
        let (t2, c2) = blk.conv2.forward(params, &r1);
        let pre_mod = x + &t2;
        let out = match mods {
            Some(m) => Self::apply_mod(&pre_mod, &m[blk.site]),
            None => pre_mod.clone(),
        };
        (out, BlockCache { c1, t1, c2, pre_mod })
    }

    fn block_backward(
        &self,
        params: &[f64],
        blk: &Block,
        cache: &BlockCache,
        g_out: &Feature,
        mods: Option<&[SiteModulation]>,
        site_grads: &mut [SiteGrad],
        grads: &mut [f64],
    ) -> Feature {
        let gy = match mods {
            Some(m) => {
                let sm = &m[blk.site];
                let sg = &mut site_grads[blk.site];
                let mut gy = g_out.clone();
                for (c, mut plane) in gy.outer_iter_mut().enumerate() {
                    let mut ggamma = 0.0;
                    let mut gbeta = 0.0;
                    let pre = cache.pre_mod.index_axis(ndarray::Axis(0), c);
                    for (gv, &xv) in plane.iter_mut().zip(pre.iter()) {
                        ggamma += *gv * xv;
                        gbeta += *gv;
                        *gv *= 1.0 + sm.gamma[c];
                    }
                    sg.gamma[c] += ggamma;
                    sg.beta[c] += gbeta;
                }
                gy
            }
            None => g_out.clone(),
        };
        let gr1 = blk.conv2.backward(params, &cache.c2, &gy, grads);
        let gt1 = relu_backward(&cache.t1, &gr1);
        let gx = blk.conv1.backward(params, &cache.c1, &gt1, grads);
        gx + &gy // identity skip
    }

    /// Forward pass over a (1, H, W) feature. H and W must be multiples
    /// of the alignment. Returns the pre-clamp output (residual added
    /// when configured) and the cache for `backward`.
    pub fn forward(
        &self,
        params: &[f64],
        input: &Feature,
        mods: Option<&[SiteModulation]>,
    ) -> (Feature, BackboneCache) {
        let (_, h, w) = input.dim();
        debug_assert!(h % self.cfg.alignment() == 0 && w % self.cfg.alignment() == 0);

        let (mut x, head) = self.head.forward(params, input);
        let mut enc_caches = Vec::with_capacity(self.enc.len());
        let mut down_caches = Vec::new();
        let mut skips = Vec::with_capacity(self.enc.len());
        for (l, level) in self.enc.iter().enumerate() {
            let mut caches = Vec::with_capacity(level.len());
            for blk in level {
                let (y, c) = self.block_forward(params, blk, &x, mods);
                caches.push(c);
                x = y;
            }
            enc_caches.push(caches);
            skips.push(x.clone());
            if l < self.downs.len() {
                let (y, c) = self.downs[l].forward(params, &x);
                down_caches.push(c);
                x = y;
            }
        }

        let mut bott_caches = Vec::with_capacity(self.bottleneck.len());
        for blk in &self.bottleneck {
            let (y, c) = self.block_forward(params, blk, &x, mods);
            bott_caches.push(c);
            x = y;
        }

        let mut dec_caches: Vec<Vec<BlockCache>> = (0..self.dec.len()).map(|_| Vec::new()).collect();
        let mut up_caches: Vec<Option<ConvCache>> = (0..self.ups.len()).map(|_| None).collect();
        for l in (0..self.dec.len()).rev() {
            if l + 1 < self.dec.len() {
                // Arriving from level l+1: upsample, project, add skip.
                let up = upsample2(&x);
                let (y, c) = self.ups[l].forward(params, &up);
                up_caches[l] = Some(c);
                x = y + &skips[l];
            }
            let mut caches = Vec::with_capacity(self.dec[l].len());
            for blk in &self.dec[l] {
                let (y, c) = self.block_forward(params, blk, &x, mods);
                caches.push(c);
                x = y;
            }
            dec_caches[l] = caches;
        }

        let (mut out, tail) = self.tail.forward(params, &x);
        if self.cfg.residual_output {
            out += input;
        }
        (
            out,
            BackboneCache {
                head,
                enc: enc_caches,
                downs: down_caches,
                bottleneck: bott_caches,
                ups: up_caches.into_iter().map(|c| c.expect("filled for all ups")).collect(),
                dec: dec_caches,
                tail,
            },
        )
    }

    /// Backward pass. Accumulates flat parameter gradients into `grads`
    /// and per-site modulation gradients into `site_grads`; returns the
    /// gradient with respect to the input feature.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &BackboneCache,
        g_out: &Feature,
        mods: Option<&[SiteModulation]>,
        site_grads: &mut [SiteGrad],
        grads: &mut [f64],
    ) -> Feature {
        let mut g_input_residual = if self.cfg.residual_output {
            Some(g_out.clone())
        } else {
            None
        };

        let mut g = self.tail.backward(params, &cache.tail, g_out, grads);
        // Decoder, mirrored: level 0 upward.
        let mut g_skips: Vec<Option<Feature>> = (0..self.enc.len()).map(|_| None).collect();
        for l in 0..self.dec.len() {
            for (blk, c) in self.dec[l].iter().zip(&cache.dec[l]).rev() {
                g = self.block_backward(params, blk, c, &g, mods, site_grads, grads);
            }
            if l + 1 < self.dec.len() {
                g_skips[l] = Some(g.clone());
                let g_up = self.ups[l].backward(params, &cache.ups[l], &g, grads);
                g = upsample2_backward(&g_up);
            }
        }

        for blk in self.bottleneck.iter().zip(&cache.bottleneck).rev() {
            g = self.block_backward(params, blk.0, blk.1, &g, mods, site_grads, grads);
        }

        for l in (0..self.enc.len()).rev() {
            if l < self.downs.len() {
                g = self.downs[l].backward(params, &cache.downs[l], &g, grads);
            }
            if let Some(gs) = &g_skips[l] {
                g = g + gs;
            }
            for (blk, c) in self.enc[l].iter().zip(&cache.enc[l]).rev() {
                g = self.block_backward(params, blk, c, &g, mods, site_grads, grads);
            }
        }

        let mut g_in = self.head.backward(params, &cache.head, &g, grads);
        if let Some(gr) = g_input_residual.take() {
            g_in += &gr;
        }
        g_in
    }

    /// Zeroes the output conv so the residual backbone becomes an
    /// exact identity map.
    pub fn zero_tail(&self, params: &mut [f64]) {
        for v in self.tail.weight.slice_mut(params) {
            *v = 0.0;
        }
        for v in self.tail.bias.slice_mut(params) {
            *v = 0.0;
        }
    }

    /// Fresh zeroed per-site gradient buffers matching the registry.
    pub fn zero_site_grads(&self) -> Vec<SiteGrad> {
        self.registry
            .sites()
            .iter()
            .map(|s| SiteGrad {
                gamma: Array1::zeros(s.channels),
                beta: Array1::zeros(s.channels),
            })
            .collect()
    }
}

/// Reflect-pads an image feature to the backbone alignment; returns the
/// padded feature and the original size for cropping the output back.
pub fn pad_to_alignment(img: &Image, alignment: usize) -> (Feature, (usize, usize)) {
    let (h, w) = (img.height(), img.width());
    let ph = h.div_ceil(alignment) * alignment;
    let pw = w.div_ceil(alignment) * alignment;
    let mirror = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else if n == 1 {
            0
        } else {
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n {
                m
            } else {
                period - m
            }
        }
    };
    let f = Array3::from_shape_fn((1, ph, pw), |(_, i, j)| {
        img.pixels()[[mirror(i, h), mirror(j, w)]]
    });
    (f, (h, w))
}

/// Crops a (1, ph, pw) output back to `(h, w)` and clamps into an image.
pub fn feature_to_image(out: &Feature, (h, w): (usize, usize), depth: u8) -> Image {
    let arr = ndarray::Array2::from_shape_fn((h, w), |(i, j)| out[[0, i, j]]);
    Image::from_clamped(arr, depth)
}
