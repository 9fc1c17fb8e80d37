//! Hand-derived backward passes for the pairwise hinge losses.
//!
//! For a positive `⟨h, t, r⟩` and its corruption `⟨h, t', r⟩` the loss is
//! `[m + f(h, t) − f(h, t')]₊`. Gradients chain through the softmax gate,
//! the ReLU (subgradient 0 at 0), the rank-1 TransD projection and, for
//! undirected relations, the hyperplane projection. With `δ = h − t` and
//! normal `n`, the hyperplane distance is `‖δ‖² − (n·δ)²/‖n‖²`, whose
//! partials are `2d` for `δ` and `−2(n·δ)/‖n‖² · d` for `n`, where `d` is the
//! projected difference.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{EntityId, RelationId, Triplet};
use crate::model::{
    attention_preactivation, dot, softmax_relu, ModelParams, ParamFamily, Slot, UndirectedScorer,
    DEGENERATE_NORM_SQ,
};

/// Sparse gradient: touched parameter rows mapped to dense partials.
///
/// Ordered by slot so that applying a set is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    rows: BTreeMap<Slot, Vec<f64>>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, slot: Slot) -> Option<&[f64]> {
        self.rows.get(&slot).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Slot, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.rows.keys().copied()
    }

    fn row(&mut self, slot: Slot, len: usize) -> &mut Vec<f64> {
        self.rows.entry(slot).or_insert_with(|| vec![0.0; len])
    }

    /// `self[slot] += scale · v`.
    pub fn add(&mut self, slot: Slot, v: &[f64], scale: f64) {
        let row = self.row(slot, v.len());
        for (r, x) in row.iter_mut().zip(v) {
            *r += scale * x;
        }
    }

    /// `self += scale · other`.
    pub fn accumulate(&mut self, other: &GradientSet, scale: f64) {
        for (slot, v) in &other.rows {
            self.add(*slot, v, scale);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.rows.values_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn into_rows(self) -> BTreeMap<Slot, Vec<f64>> {
        self.rows
    }
}

fn ent(family: ParamFamily, e: EntityId) -> Slot {
    Slot::new(family, e.index())
}

fn rel(family: ParamFamily, r: RelationId) -> Slot {
    Slot::new(family, r.index())
}

/// Backward through `softmax(ReLU(u))` then the affine map `u = W x + b`.
/// Returns the gradient with respect to `x` after recording `W`, `b` partials.
fn attention_backward(
    params: &ModelParams,
    r: RelationId,
    x: &[f64],
    u: &[f64],
    att: &[f64],
    g_att: &[f64],
    sign: f64,
    grads: &mut GradientSet,
) -> Vec<f64> {
    let k = att.len();
    let s = dot(att, g_att);
    let g_u: Vec<f64> = (0..k)
        .map(|i| if u[i] > 0.0 { att[i] * (g_att[i] - s) } else { 0.0 })
        .collect();
    let w = params.attention_weight(r);
    let block = params.attention_block(r);
    let mut g_w = vec![0.0; 2 * k * k];
    let mut g_x = vec![0.0; 2 * k];
    for i in 0..k {
        if g_u[i] == 0.0 {
            continue;
        }
        let row = &w[i * 2 * k..(i + 1) * 2 * k];
        for j in 0..2 * k {
            g_w[i * 2 * k + j] = g_u[i] * x[j];
            g_x[j] += row[j] * g_u[i];
        }
    }
    grads.add(Slot::new(ParamFamily::AttWeight, block), &g_w, sign);
    grads.add(Slot::new(ParamFamily::AttBias, block), &g_u, sign);
    g_x
}

/// Backward through `p = e + r_p (e_p · e)` given `∂f/∂p`.
fn transd_backward(
    params: &ModelParams,
    e: EntityId,
    r: RelationId,
    g_p: &[f64],
    sign: f64,
    grads: &mut GradientSet,
) {
    let emb = params.entity(e);
    let proj = params.entity_projection(e);
    let rp = params.relation_projection(r);
    let rg = dot(rp, g_p);
    let s = dot(proj, emb);
    let g_e: Vec<f64> = g_p.iter().zip(proj).map(|(g, p)| g + p * rg).collect();
    let g_ep: Vec<f64> = emb.iter().map(|x| x * rg).collect();
    let g_rp: Vec<f64> = g_p.iter().map(|g| g * s).collect();
    grads.add(ent(ParamFamily::EntityEmb, e), &g_e, sign);
    grads.add(ent(ParamFamily::EntityProj, e), &g_ep, sign);
    grads.add(rel(ParamFamily::RelProj, r), &g_rp, sign);
}

/// Adds `sign · ∇f` for the translation distance and returns `f`.
fn translation_backward(
    params: &ModelParams,
    h: EntityId,
    t: EntityId,
    r: RelationId,
    use_attention: bool,
    sign: f64,
    grads: &mut GradientSet,
) -> f64 {
    let k = params.k();
    let rp = params.relation_projection(r);
    let (he, te) = (params.entity(h), params.entity(t));
    let sh = dot(params.entity_projection(h), he);
    let st = dot(params.entity_projection(t), te);
    let hp: Vec<f64> = (0..k).map(|i| rp[i] * sh + he[i]).collect();
    let tp: Vec<f64> = (0..k).map(|i| rp[i] * st + te[i]).collect();
    let r_emb = params.relation(r);
    let scale = params.attention_scale();

    let attention = use_attention.then(|| {
        let mut x = hp.clone();
        x.extend_from_slice(&tp);
        let u = attention_preactivation(&hp, &tp, params.attention_weight(r), params.attention_bias(r));
        let a = softmax_relu(&u);
        (x, u, a)
    });
    let d: Vec<f64> = match &attention {
        Some((_, _, a)) => (0..k).map(|i| hp[i] + r_emb[i] * a[i] * scale - tp[i]).collect(),
        None => (0..k).map(|i| hp[i] + r_emb[i] - tp[i]).collect(),
    };
    let f = dot(&d, &d);
    let g: Vec<f64> = d.iter().map(|x| 2.0 * x).collect();
    let mut g_hp = g.clone();
    let mut g_tp: Vec<f64> = g.iter().map(|x| -x).collect();
    match &attention {
        Some((x, u, a)) => {
            let g_r: Vec<f64> = (0..k).map(|i| g[i] * a[i] * scale).collect();
            grads.add(rel(ParamFamily::RelEmb, r), &g_r, sign);
            let g_a: Vec<f64> = (0..k).map(|i| g[i] * r_emb[i] * scale).collect();
            let g_x = attention_backward(params, r, x, u, a, &g_a, sign, grads);
            for i in 0..k {
                g_hp[i] += g_x[i];
                g_tp[i] += g_x[k + i];
            }
        }
        None => grads.add(rel(ParamFamily::RelEmb, r), &g, sign),
    }
    transd_backward(params, h, r, &g_hp, sign, grads);
    transd_backward(params, t, r, &g_tp, sign, grads);
    f
}

/// Adds `sign · ∇f` for the hyperplane distance and returns `f`.
fn hyperplane_backward(
    params: &ModelParams,
    h: EntityId,
    t: EntityId,
    r: RelationId,
    use_attention: bool,
    sign: f64,
    grads: &mut GradientSet,
) -> Result<f64> {
    let k = params.k();
    let r_emb = params.relation(r);
    let scale = params.attention_scale();
    let (lo, hi) = if h <= t { (h, t) } else { (t, h) };
    let attention = use_attention.then(|| {
        let mut x = params.entity(lo).to_vec();
        x.extend_from_slice(params.entity(hi));
        let u = attention_preactivation(
            params.entity(lo),
            params.entity(hi),
            params.attention_weight(r),
            params.attention_bias(r),
        );
        let a = softmax_relu(&u);
        (x, u, a)
    });
    let normal: Vec<f64> = match &attention {
        Some((_, _, a)) => (0..k).map(|i| r_emb[i] * a[i] * scale).collect(),
        None => r_emb.to_vec(),
    };
    let n2 = dot(&normal, &normal);
    if !(n2 >= DEGENERATE_NORM_SQ) {
        return Err(Error::DegenerateNormal {
            relation: r.0,
            norm_sq: n2,
        });
    }
    let (he, te) = (params.entity(h), params.entity(t));
    let ch = dot(&normal, he) / n2;
    let ct = dot(&normal, te) / n2;
    let d: Vec<f64> = (0..k)
        .map(|i| (he[i] - ch * normal[i]) - (te[i] - ct * normal[i]))
        .collect();
    let f = dot(&d, &d);
    let g_delta: Vec<f64> = d.iter().map(|x| 2.0 * x).collect();
    let coef = -2.0 * (ch - ct);
    let g_normal: Vec<f64> = d.iter().map(|x| coef * x).collect();
    grads.add(ent(ParamFamily::EntityEmb, h), &g_delta, sign);
    grads.add(ent(ParamFamily::EntityEmb, t), &g_delta, -sign);
    match &attention {
        Some((x, u, a)) => {
            let g_r: Vec<f64> = (0..k).map(|i| g_normal[i] * a[i] * scale).collect();
            grads.add(rel(ParamFamily::RelEmb, r), &g_r, sign);
            let g_a: Vec<f64> = (0..k).map(|i| g_normal[i] * r_emb[i] * scale).collect();
            let g_x = attention_backward(params, r, x, u, a, &g_a, sign, grads);
            grads.add(ent(ParamFamily::EntityEmb, lo), &g_x[..k], sign);
            grads.add(ent(ParamFamily::EntityEmb, hi), &g_x[k..], sign);
        }
        None => grads.add(rel(ParamFamily::RelEmb, r), &g_normal, sign),
    }
    Ok(f)
}

/// Adds `sign · ∇(−tᵀ diag(r) h)` and returns the negated score.
fn distmult_backward(
    params: &ModelParams,
    h: EntityId,
    t: EntityId,
    r: RelationId,
    sign: f64,
    grads: &mut GradientSet,
) -> f64 {
    let (he, te, re) = (params.entity(h), params.entity(t), params.relation(r));
    let k = params.k();
    let g_h: Vec<f64> = (0..k).map(|i| -te[i] * re[i]).collect();
    let g_t: Vec<f64> = (0..k).map(|i| -he[i] * re[i]).collect();
    let g_r: Vec<f64> = (0..k).map(|i| -he[i] * te[i]).collect();
    grads.add(ent(ParamFamily::EntityEmb, h), &g_h, sign);
    grads.add(ent(ParamFamily::EntityEmb, t), &g_t, sign);
    grads.add(rel(ParamFamily::RelEmb, r), &g_r, sign);
    -(0..k).map(|i| te[i] * re[i] * he[i]).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Geometry {
    Translation,
    Hyperplane,
    DistMult,
}

fn check_pair(params: &ModelParams, pos: &Triplet, neg: &Triplet) -> Result<()> {
    if pos.head != neg.head || pos.relation != neg.relation {
        return Err(Error::Contract(
            "positive and negative must share head and relation".into(),
        ));
    }
    if pos.relation.index() >= params.n_relations() {
        return Err(Error::Contract(format!("relation {} out of range", pos.relation.0)));
    }
    for e in [pos.head, pos.tail, neg.tail] {
        if e.index() >= params.n_entities {
            return Err(Error::Contract(format!("entity {} out of range", e.0)));
        }
    }
    Ok(())
}

fn pair_grad_with(
    params: &ModelParams,
    geometry: Geometry,
    pos: &Triplet,
    neg: &Triplet,
    margin: f64,
    use_attention: bool,
) -> Result<(f64, GradientSet)> {
    let mut pos_grads = GradientSet::new();
    let mut neg_grads = GradientSet::new();
    let r = pos.relation;
    let (f_pos, f_neg) = match geometry {
        Geometry::Translation => (
            translation_backward(params, pos.head, pos.tail, r, use_attention, 1.0, &mut pos_grads),
            translation_backward(params, neg.head, neg.tail, r, use_attention, -1.0, &mut neg_grads),
        ),
        Geometry::Hyperplane => (
            hyperplane_backward(params, pos.head, pos.tail, r, use_attention, 1.0, &mut pos_grads)?,
            hyperplane_backward(params, neg.head, neg.tail, r, use_attention, -1.0, &mut neg_grads)?,
        ),
        Geometry::DistMult => (
            distmult_backward(params, pos.head, pos.tail, r, 1.0, &mut pos_grads),
            distmult_backward(params, neg.head, neg.tail, r, -1.0, &mut neg_grads),
        ),
    };
    let loss = margin + f_pos - f_neg;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "pair loss for relation {} head {} tails {}/{}: {loss}",
            r.0, pos.head.0, pos.tail.0, neg.tail.0
        )));
    }
    if loss <= 0.0 {
        return Ok((0.0, GradientSet::new()));
    }
    pos_grads.accumulate(&neg_grads, 1.0);
    Ok((loss, pos_grads))
}

/// Hinge loss and exact gradient for a directed positive/negative pair.
/// Returns an empty set when the hinge is inactive.
pub fn directed_pair_grad(
    pos: &Triplet,
    neg: &Triplet,
    params: &ModelParams,
    margin: f64,
    use_attention: bool,
) -> Result<(f64, GradientSet)> {
    check_pair(params, pos, neg)?;
    if !params.relations[pos.relation.index()].directed {
        return Err(Error::Contract(format!("relation {} is undirected", pos.relation.0)));
    }
    pair_grad_with(params, Geometry::Translation, pos, neg, margin, use_attention)
}

/// Hinge loss and exact gradient for an undirected pair under the hyperplane geometry.
pub fn undirected_pair_grad(
    pos: &Triplet,
    neg: &Triplet,
    params: &ModelParams,
    margin: f64,
    use_attention: bool,
) -> Result<(f64, GradientSet)> {
    check_pair(params, pos, neg)?;
    if params.relations[pos.relation.index()].directed {
        return Err(Error::Contract(format!("relation {} is directed", pos.relation.0)));
    }
    pair_grad_with(params, Geometry::Hyperplane, pos, neg, margin, use_attention)
}

/// Pair loss and gradient under the geometry the model config selects for
/// the relation.
pub fn pair_grad(params: &ModelParams, pos: &Triplet, neg: &Triplet, margin: f64) -> Result<(f64, GradientSet)> {
    check_pair(params, pos, neg)?;
    let use_att = params.config.use_attention;
    let geometry = if params.relations[pos.relation.index()].directed {
        Geometry::Translation
    } else {
        match params.config.undirected_scorer {
            UndirectedScorer::Hyperplane => Geometry::Hyperplane,
            UndirectedScorer::DistMult => Geometry::DistMult,
            UndirectedScorer::DirectedPair => Geometry::Translation,
        }
    };
    pair_grad_with(params, geometry, pos, neg, margin, use_att)
}

/// Smallest distance to a non-differentiable point of the pair loss: the
/// hinge kink and every attention ReLU pre-activation involved.
pub fn kink_distance(params: &ModelParams, pos: &Triplet, neg: &Triplet, margin: f64) -> Result<f64> {
    let f_pos = crate::model::triplet_distance(params, pos.head, pos.tail, pos.relation)?;
    let f_neg = crate::model::triplet_distance(params, neg.head, neg.tail, neg.relation)?;
    let mut gap = (margin + f_pos - f_neg).abs();
    if !params.config.use_attention {
        return Ok(gap);
    }
    let r = pos.relation;
    let directed = params.relations[r.index()].directed;
    for t in [pos, neg] {
        let u = if directed || params.config.undirected_scorer == UndirectedScorer::DirectedPair {
            let rp = params.relation_projection(r);
            let hp = crate::model::transd_project(params.entity(t.head), params.entity_projection(t.head), rp)?;
            let tp = crate::model::transd_project(params.entity(t.tail), params.entity_projection(t.tail), rp)?;
            attention_preactivation(&hp, &tp, params.attention_weight(r), params.attention_bias(r))
        } else if params.config.undirected_scorer == UndirectedScorer::Hyperplane {
            let (lo, hi) = if t.head <= t.tail { (t.head, t.tail) } else { (t.tail, t.head) };
            attention_preactivation(
                params.entity(lo),
                params.entity(hi),
                params.attention_weight(r),
                params.attention_bias(r),
            )
        } else {
            continue;
        };
        gap = u.iter().map(|x| x.abs()).fold(gap, f64::min);
    }
    Ok(gap)
}

/// One scalar coordinate inside a parameter row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coordinate {
    pub slot: Slot,
    pub offset: usize,
}

/// Central-difference check of `analytic` against `score` at `params`.
///
/// Returns `max |analytic − numeric| / max(1, |numeric|)` over `coords`;
/// coordinates absent from `analytic` are expected to have zero gradient.
pub fn finite_difference_check<F>(
    score: F,
    params: &ModelParams,
    analytic: &GradientSet,
    coords: &[Coordinate],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for c in coords {
        let original = probe.slot(c.slot)[c.offset];
        probe.slot_mut(c.slot)[c.offset] = original + eps;
        let plus = score(&probe)?;
        probe.slot_mut(c.slot)[c.offset] = original - eps;
        let minus = score(&probe)?;
        probe.slot_mut(c.slot)[c.offset] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "score at {:?}[{}] ± {eps}: {plus}, {minus}",
                c.slot, c.offset
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let exact = analytic.get(c.slot).map_or(0.0, |row| row[c.offset]);
        worst = worst.max((exact - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
