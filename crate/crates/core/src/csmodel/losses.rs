use serde::{Deserialize, Serialize};
use tensorgrad::{Graph, Tensor, Var};

use super::{networks::CosmoModel, ContentStyleModel};
use crate::error::{CosmoError, Result};
use crate::phantom::{Contrast, Provenance};

/// Patch discriminators `D1`, `D2`.
pub trait PatchDiscriminator {
    fn score(&self, g: &mut Graph, domain: Contrast, x: Var, mask: Option<Var>) -> Result<Var>;
}

impl PatchDiscriminator for CosmoModel {
    fn score(&self, g: &mut Graph, domain: Contrast, x: Var, mask: Option<Var>) -> Result<Var> {
        self.discriminator_net(g, domain, x, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            beta1: 1.0,
            beta2: 1.0,
            beta3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha1,
            self.alpha2,
            self.alpha3,
            self.beta1,
            self.beta2,
            self.beta3,
        ];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(CosmoError::Config(format!(
                "loss weights must be >= 0, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Images `[n, 1, h, w]` from both domains with optional foreground masks.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x1: Tensor,
    pub x2: Tensor,
    pub m1: Option<Tensor>,
    pub m2: Option<Tensor>,
    pub ids1: Vec<Provenance>,
    pub ids2: Vec<Provenance>,
}

impl Batch {
    /// True when every `x1` shows the same slice as its `x2`.
    pub fn is_paired(&self) -> bool {
        self.ids1 == self.ids2
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MunitTerms {
    pub gan: Var,
    pub image_self: Var,
    pub content_self: Var,
    pub style_self: Var,
    pub total: Var,
    /// `G1(E2c(x2), s1)`, scored by `D1` against `x2`'s mask.
    pub fake1: Var,
    /// `G2(E1c(x1), s2)`.
    pub fake2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct PftTerms {
    pub gan: Var,
    pub image_self: Var,
    pub image_cross: Var,
    pub content_cross: Var,
    pub total: Var,
    pub fake1: Var,
    pub fake2: Var,
}

struct Inputs {
    x1: Var,
    x2: Var,
    m1: Option<Var>,
    m2: Option<Var>,
    s1: Var,
    s2: Var,
}

fn inputs(g: &mut Graph, batch: &Batch, s1: &Tensor, s2: &Tensor) -> Inputs {
    Inputs {
        x1: g.constant(batch.x1.clone()),
        x2: g.constant(batch.x2.clone()),
        m1: batch.m1.as_ref().map(|m| g.constant(m.clone())),
        m2: batch.m2.as_ref().map(|m| g.constant(m.clone())),
        s1: g.constant(s1.clone()),
        s2: g.constant(s2.clone()),
    }
}

fn weighted_sum(g: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut total = g.scale(terms[0].1, terms[0].0);
    for &(w, t) in &terms[1..] {
        let s = g.scale(t, w);
        total = g.add(total, s)?;
    }
    Ok(total)
}

/// `(1 - D2(fake2))^2 + (1 - D1(fake1))^2`, each averaged over patches.
fn generator_gan<D: PatchDiscriminator + ?Sized>(
    g: &mut Graph,
    disc: &D,
    fake1: Var,
    fake2: Var,
    m1: Option<Var>,
    m2: Option<Var>,
) -> Result<Var> {
    let d2 = disc.score(g, Contrast::T2w, fake2, m1)?;
    let l2 = g.mse_to(d2, 1.0)?;
    let d1 = disc.score(g, Contrast::T1w, fake1, m2)?;
    let l1 = g.mse_to(d1, 1.0)?;
    Ok(g.add(l2, l1)?)
}

fn self_reconstruction<M: ContentStyleModel + ?Sized>(
    g: &mut Graph,
    model: &M,
    x: Var,
    domain: Contrast,
) -> Result<(Var, Var)> {
    let c = model.content_net(g, domain, x)?;
    let s = model.style_net(g, domain, x)?;
    let rec = model.decoder_net(g, domain, c, s)?;
    Ok((c, g.l1_loss(x, rec)?))
}

/// Unpaired pre-training objective
/// `L_GAN + a1 L_image_self + a2 L_content_self + a3 L_style_self`,
/// with `s1`, `s2` drawn from the style prior.
pub fn munit_losses<M, D>(
    g: &mut Graph,
    model: &M,
    disc: &D,
    batch: &Batch,
    s1: &Tensor,
    s2: &Tensor,
    w: &LossWeights,
) -> Result<MunitTerms>
where
    M: ContentStyleModel + ?Sized,
    D: PatchDiscriminator + ?Sized,
{
    let v = inputs(g, batch, s1, s2);
    let (c1, rec1) = self_reconstruction(g, model, v.x1, Contrast::T1w)?;
    let (c2, rec2) = self_reconstruction(g, model, v.x2, Contrast::T2w)?;
    let image_self = g.add(rec1, rec2)?;

    let fake2 = model.decoder_net(g, Contrast::T2w, c1, v.s2)?;
    let fake1 = model.decoder_net(g, Contrast::T1w, c2, v.s1)?;

    let c1_back = model.content_net(g, Contrast::T2w, fake2)?;
    let c2_back = model.content_net(g, Contrast::T1w, fake1)?;
    let lc1 = g.l1_loss(c1, c1_back)?;
    let lc2 = g.l1_loss(c2, c2_back)?;
    let content_self = g.add(lc1, lc2)?;

    let s2_back = model.style_net(g, Contrast::T2w, fake2)?;
    let s1_back = model.style_net(g, Contrast::T1w, fake1)?;
    let ls2 = g.l1_loss(v.s2, s2_back)?;
    let ls1 = g.l1_loss(v.s1, s1_back)?;
    let style_self = g.add(ls2, ls1)?;

    let gan = generator_gan(g, disc, fake1, fake2, v.m1, v.m2)?;
    let total = weighted_sum(
        g,
        &[
            (1.0, gan),
            (w.alpha1, image_self),
            (w.alpha2, content_self),
            (w.alpha3, style_self),
        ],
    )?;
    Ok(MunitTerms {
        gan,
        image_self,
        content_self,
        style_self,
        total,
        fake1,
        fake2,
    })
}

/// Paired fine-tuning objective
/// `L_GAN + b1 L_image_self + b2 L_image_cross + b3 L_content_cross`.
pub fn pft_losses<M, D>(
    g: &mut Graph,
    model: &M,
    disc: &D,
    batch: &Batch,
    s1: &Tensor,
    s2: &Tensor,
    w: &LossWeights,
) -> Result<PftTerms>
where
    M: ContentStyleModel + ?Sized,
    D: PatchDiscriminator + ?Sized,
{
    if !batch.is_paired() {
        return Err(CosmoError::Usage(
            "paired fine-tuning needs aligned image pairs".into(),
        ));
    }
    let v = inputs(g, batch, s1, s2);
    let c1 = model.content_net(g, Contrast::T1w, v.x1)?;
    let c2 = model.content_net(g, Contrast::T2w, v.x2)?;
    let st1 = model.style_net(g, Contrast::T1w, v.x1)?;
    let st2 = model.style_net(g, Contrast::T2w, v.x2)?;

    let rec1 = model.decoder_net(g, Contrast::T1w, c1, st1)?;
    let rec2 = model.decoder_net(g, Contrast::T2w, c2, st2)?;
    let l1 = g.l1_loss(v.x1, rec1)?;
    let l2 = g.l1_loss(v.x2, rec2)?;
    let image_self = g.add(l1, l2)?;

    let cross2 = model.decoder_net(g, Contrast::T2w, c1, st2)?;
    let cross1 = model.decoder_net(g, Contrast::T1w, c2, st1)?;
    let l2 = g.l1_loss(v.x2, cross2)?;
    let l1 = g.l1_loss(v.x1, cross1)?;
    let image_cross = g.add(l2, l1)?;

    let content_cross = g.l1_loss(c1, c2)?;

    let fake2 = model.decoder_net(g, Contrast::T2w, c1, v.s2)?;
    let fake1 = model.decoder_net(g, Contrast::T1w, c2, v.s1)?;
    let gan = generator_gan(g, disc, fake1, fake2, v.m1, v.m2)?;
    let total = weighted_sum(
        g,
        &[
            (1.0, gan),
            (w.beta1, image_self),
            (w.beta2, image_cross),
            (w.beta3, content_cross),
        ],
    )?;
    Ok(PftTerms {
        gan,
        image_self,
        image_cross,
        content_cross,
        total,
        fake1,
        fake2,
    })
}

/// Least-squares discriminator objective `(D(real) - 1)^2 + D(fake)^2` for
/// one domain; `fake` enters as a constant.
pub fn discriminator_loss<D: PatchDiscriminator + ?Sized>(
    g: &mut Graph,
    disc: &D,
    domain: Contrast,
    real: &Tensor,
    real_mask: Option<&Tensor>,
    fake: &Tensor,
    fake_mask: Option<&Tensor>,
) -> Result<Var> {
    let r = g.constant(real.clone());
    let rm = real_mask.map(|m| g.constant(m.clone()));
    let f = g.constant(fake.clone());
    let fm = fake_mask.map(|m| g.constant(m.clone()));
    let dr = disc.score(g, domain, r, rm)?;
    let lr = g.mse_to(dr, 1.0)?;
    let df = disc.score(g, domain, f, fm)?;
    let lf = g.mse_to(df, 0.0)?;
    Ok(g.add(lr, lf)?)
}
