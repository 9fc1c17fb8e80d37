//! Learnable parameters and the forward geometry.
//!
//! Directed relations are scored by translation between TransD-style
//! projections, `‖M_rh·h + r ⊙ att − M_rt·t‖²` with `M = r_p e_pᵀ + I`.
//! Undirected relations are scored by the squared distance between the two
//! entities after projecting them onto the hyperplane whose normal is the
//! (attended) relation vector. Both share a per-triplet softmax gate
//! `att = softmax(ReLU(W [h : t] + b))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, RelationCatalog, RelationId};

/// Squared-norm floor below which a hyperplane normal is rejected.
pub const DEGENERATE_NORM_SQ: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UndirectedScorer {
    /// Distance between hyperplane projections.
    #[default]
    Hyperplane,
    /// Bilinear-diagonal similarity, negated into a distance for training.
    DistMult,
    /// Each undirected edge treated as two directed translation triplets.
    DirectedPair,
}

impl UndirectedScorer {
    pub(crate) fn code(self) -> u8 {
        match self {
            UndirectedScorer::Hyperplane => 0,
            UndirectedScorer::DistMult => 1,
            UndirectedScorer::DirectedPair => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(UndirectedScorer::Hyperplane),
            1 => Some(UndirectedScorer::DistMult),
            2 => Some(UndirectedScorer::DirectedPair),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub use_attention: bool,
    pub undirected_scorer: UndirectedScorer,
    /// One attention network for all relations instead of one per relation.
    pub shared_attention: bool,
    /// Multiply the attended relation vector by `k`, undoing the 1/k shrinkage of
    /// a near-uniform softmax.
    pub scale_attention_by_k: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 64,
            use_attention: true,
            undirected_scorer: UndirectedScorer::Hyperplane,
            shared_attention: false,
            scale_attention_by_k: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("embedding dimension k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationKind {
    pub directed: bool,
    pub interaction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamFamily {
    EntityEmb,
    EntityProj,
    RelEmb,
    RelProj,
    AttWeight,
    AttBias,
}

impl ParamFamily {
    pub const ALL: [ParamFamily; 6] = [
        ParamFamily::EntityEmb,
        ParamFamily::EntityProj,
        ParamFamily::RelEmb,
        ParamFamily::RelProj,
        ParamFamily::AttWeight,
        ParamFamily::AttBias,
    ];

    /// Families held inside the unit ball.
    pub fn is_constrained(self) -> bool {
        !matches!(self, ParamFamily::AttWeight | ParamFamily::AttBias)
    }
}

/// One row of one parameter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub family: ParamFamily,
    pub row: u32,
}

impl Slot {
    pub fn new(family: ParamFamily, row: usize) -> Self {
        Slot {
            family,
            row: row as u32,
        }
    }
}

/// All learnable tensors, stored row-major in flat buffers.
///
/// `rel_proj` has a row for every relation; rows of undirected relations are
/// only read when those relations are modeled as directed pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub n_entities: usize,
    pub relations: Vec<RelationKind>,
    pub entity_emb: Vec<f64>,
    pub entity_proj: Vec<f64>,
    pub rel_emb: Vec<f64>,
    pub rel_proj: Vec<f64>,
    /// `k × 2k` per attention block.
    pub att_weight: Vec<f64>,
    pub att_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig, n_entities: usize, relations: Vec<RelationKind>) -> Self {
        let k = config.k;
        let n_rel = relations.len();
        let n_att = if config.shared_attention { 1 } else { n_rel.max(1) };
        ModelParams {
            config,
            n_entities,
            entity_emb: vec![0.0; n_entities * k],
            entity_proj: vec![0.0; n_entities * k],
            rel_emb: vec![0.0; n_rel * k],
            rel_proj: vec![0.0; n_rel * k],
            att_weight: vec![0.0; n_att * k * 2 * k],
            att_bias: vec![0.0; n_att * k],
            relations,
        }
    }

    pub fn relation_kinds(catalog: &RelationCatalog) -> Vec<RelationKind> {
        catalog
            .iter()
            .map(|r| RelationKind {
                directed: r.is_directed(),
                interaction: r.is_interaction,
            })
            .collect()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn n_attention_blocks(&self) -> usize {
        self.att_bias.len() / self.k()
    }

    pub fn attention_block(&self, r: RelationId) -> usize {
        if self.config.shared_attention {
            0
        } else {
            r.index()
        }
    }

    pub fn row_len(&self, family: ParamFamily) -> usize {
        match family {
            ParamFamily::AttWeight => 2 * self.k() * self.k(),
            _ => self.k(),
        }
    }

    pub fn rows(&self, family: ParamFamily) -> usize {
        self.family(family).len() / self.row_len(family)
    }

    pub fn family(&self, family: ParamFamily) -> &[f64] {
        match family {
            ParamFamily::EntityEmb => &self.entity_emb,
            ParamFamily::EntityProj => &self.entity_proj,
            ParamFamily::RelEmb => &self.rel_emb,
            ParamFamily::RelProj => &self.rel_proj,
            ParamFamily::AttWeight => &self.att_weight,
            ParamFamily::AttBias => &self.att_bias,
        }
    }

    pub fn family_mut(&mut self, family: ParamFamily) -> &mut [f64] {
        match family {
            ParamFamily::EntityEmb => &mut self.entity_emb,
            ParamFamily::EntityProj => &mut self.entity_proj,
            ParamFamily::RelEmb => &mut self.rel_emb,
            ParamFamily::RelProj => &mut self.rel_proj,
            ParamFamily::AttWeight => &mut self.att_weight,
            ParamFamily::AttBias => &mut self.att_bias,
        }
    }

    #[inline]
    pub fn slot(&self, slot: Slot) -> &[f64] {
        let n = self.row_len(slot.family);
        let start = slot.row as usize * n;
        &self.family(slot.family)[start..start + n]
    }

    #[inline]
    pub fn slot_mut(&mut self, slot: Slot) -> &mut [f64] {
        let n = self.row_len(slot.family);
        let start = slot.row as usize * n;
        &mut self.family_mut(slot.family)[start..start + n]
    }

    #[inline]
    pub fn entity(&self, e: EntityId) -> &[f64] {
        self.slot(Slot::new(ParamFamily::EntityEmb, e.index()))
    }

    #[inline]
    pub fn entity_projection(&self, e: EntityId) -> &[f64] {
        self.slot(Slot::new(ParamFamily::EntityProj, e.index()))
    }

    #[inline]
    pub fn relation(&self, r: RelationId) -> &[f64] {
        self.slot(Slot::new(ParamFamily::RelEmb, r.index()))
    }

    #[inline]
    pub fn relation_projection(&self, r: RelationId) -> &[f64] {
        self.slot(Slot::new(ParamFamily::RelProj, r.index()))
    }

    pub fn attention_weight(&self, r: RelationId) -> &[f64] {
        self.slot(Slot::new(ParamFamily::AttWeight, self.attention_block(r)))
    }

    pub fn attention_bias(&self, r: RelationId) -> &[f64] {
        self.slot(Slot::new(ParamFamily::AttBias, self.attention_block(r)))
    }

    /// Multiplier applied to the attended relation vector.
    pub fn attention_scale(&self) -> f64 {
        if self.config.scale_attention_by_k {
            self.k() as f64
        } else {
            1.0
        }
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() >= self.n_entities {
            return Err(Error::Contract(format!(
                "entity {} out of range ({} entities)",
                e.0, self.n_entities
            )));
        }
        Ok(())
    }

    fn check_relation(&self, r: RelationId, directed: bool) -> Result<()> {
        let kind = self.relations.get(r.index()).ok_or_else(|| {
            Error::Contract(format!("relation {} out of range", r.0))
        })?;
        if kind.directed != directed {
            return Err(Error::Contract(format!(
                "relation {} is {}, expected {}",
                r.0,
                if kind.directed { "directed" } else { "undirected" },
                if directed { "directed" } else { "undirected" }
            )));
        }
        Ok(())
    }

    /// Largest Euclidean norm over the six constrained families.
    pub fn max_constrained_norm(&self) -> f64 {
        ParamFamily::ALL
            .iter()
            .filter(|f| f.is_constrained())
            .flat_map(|&f| self.family(f).chunks(self.k()))
            .map(norm)
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_dims(what: &str, k: usize, vs: &[&[f64]]) -> Result<()> {
    if let Some(v) = vs.iter().find(|v| v.len() != k) {
        return Err(Error::Contract(format!(
            "{what}: dimension mismatch ({} vs {k})",
            v.len()
        )));
    }
    Ok(())
}

/// `(r_p e_pᵀ + I)·e`, evaluated as `r_p (e_p · e) + e`.
pub fn transd_project(e: &[f64], e_p: &[f64], r_p: &[f64]) -> Result<Vec<f64>> {
    check_dims("transd_project", e.len(), &[e_p, r_p])?;
    Ok(transd_project_unchecked(e, e_p, r_p))
}

#[inline]
pub(crate) fn transd_project_unchecked(e: &[f64], e_p: &[f64], r_p: &[f64]) -> Vec<f64> {
    let s = dot(e_p, e);
    e.iter().zip(r_p).map(|(x, rp)| rp * s + x).collect()
}

/// Softmax gate over embedding dimensions; entries are positive and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector(pub Vec<f64>);

impl AttentionVector {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

/// Pre-activation `W [head : tail] + b` for a row-major `k × 2k` weight.
pub(crate) fn attention_preactivation(head: &[f64], tail: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let k = b.len();
    (0..k)
        .map(|i| {
            let row = &w[i * 2 * k..(i + 1) * 2 * k];
            dot(&row[..k], head) + dot(&row[k..], tail) + b[i]
        })
        .collect()
}

pub(crate) fn softmax_relu(u: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = u.iter().map(|x| x.max(0.0)).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `softmax(ReLU(W [h : t] + b))`, head first in the concatenation.
pub fn attention_vector(head: &[f64], tail: &[f64], w: &[f64], b: &[f64]) -> Result<AttentionVector> {
    let k = b.len();
    check_dims("attention_vector", k, &[head, tail])?;
    if w.len() != 2 * k * k {
        return Err(Error::Contract(format!(
            "attention weight has {} entries, expected {}",
            w.len(),
            2 * k * k
        )));
    }
    Ok(AttentionVector(softmax_relu(&attention_preactivation(head, tail, w, b))))
}

/// Translation distance for a relation regardless of its declared directedness.
pub(crate) fn translation_distance(
    params: &ModelParams,
    h: EntityId,
    t: EntityId,
    r: RelationId,
    use_attention: bool,
) -> f64 {
    let rp = params.relation_projection(r);
    let hp = transd_project_unchecked(params.entity(h), params.entity_projection(h), rp);
    let tp = transd_project_unchecked(params.entity(t), params.entity_projection(t), rp);
    let rel = params.relation(r);
    if use_attention {
        let att = softmax_relu(&attention_preactivation(
            &hp,
            &tp,
            params.attention_weight(r),
            params.attention_bias(r),
        ));
        let scale = params.attention_scale();
        (0..hp.len())
            .map(|i| {
                let d = hp[i] + rel[i] * att[i] * scale - tp[i];
                d * d
            })
            .sum()
    } else {
        (0..hp.len())
            .map(|i| {
                let d = hp[i] + rel[i] - tp[i];
                d * d
            })
            .sum()
    }
}

/// Squared translation distance of `⟨h, t, r⟩` in `r`'s projected space.
pub fn directed_distance(
    params: &ModelParams,
    h: EntityId,
    t: EntityId,
    r: RelationId,
    use_attention: bool,
) -> Result<f64> {
    params.check_relation(r, true)?;
    params.check_entity(h)?;
    params.check_entity(t)?;
    Ok(translation_distance(params, h, t, r, use_attention))
}

/// `e − (r̂·e) r̂ / ‖r̂‖²`; the result is orthogonal to `r̂`.
pub fn hyperplane_project(e: &[f64], normal: &[f64]) -> Result<Vec<f64>> {
    check_dims("hyperplane_project", e.len(), &[normal])?;
    let n2 = dot(normal, normal);
    if !(n2 >= DEGENERATE_NORM_SQ) {
        return Err(Error::DegenerateNormal {
            relation: u32::MAX,
            norm_sq: n2,
        });
    }
    Ok(hyperplane_project_unchecked(e, normal, n2))
}

#[inline]
fn hyperplane_project_unchecked(e: &[f64], normal: &[f64], n2: f64) -> Vec<f64> {
    let c = dot(normal, e) / n2;
    e.iter().zip(normal).map(|(x, n)| x - c * n).collect()
}

/// The hyperplane normal `r ⊙ att` (or `r`) for an undirected triplet.
/// Attention reads the raw embeddings in canonical (lower index first) order.
pub(crate) fn undirected_normal(
    params: &ModelParams,
    h: EntityId,
    t: EntityId,
    r: RelationId,
    use_attention: bool,
) -> Vec<f64> {
    let rel = params.relation(r);
    if !use_attention {
        return rel.to_vec();
    }
    let (lo, hi) = if h <= t { (h, t) } else { (t, h) };
    let att = softmax_relu(&attention_preactivation(
        params.entity(lo),
        params.entity(hi),
        params.attention_weight(r),
        params.attention_bias(r),
    ));
    let scale = params.attention_scale();
    rel.iter().zip(&att).map(|(x, a)| x * a * scale).collect()
}

/// Squared distance between `h` and `t` on `r`'s hyperplane. Symmetric in `h`, `t`.
pub fn undirected_distance(
    params: &ModelParams,
    h: EntityId,
    t: EntityId,
    r: RelationId,
    use_attention: bool,
) -> Result<f64> {
    params.check_relation(r, false)?;
    params.check_entity(h)?;
    params.check_entity(t)?;
    let normal = undirected_normal(params, h, t, r, use_attention);
    let n2 = dot(&normal, &normal);
    if !(n2 >= DEGENERATE_NORM_SQ) {
        return Err(Error::DegenerateNormal {
            relation: r.0,
            norm_sq: n2,
        });
    }
    let hc = hyperplane_project_unchecked(params.entity(h), &normal, n2);
    let tc = hyperplane_project_unchecked(params.entity(t), &normal, n2);
    Ok(hc.iter().zip(&tc).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `tᵀ diag(r) h`. Higher means more similar.
pub fn distmult_score(params: &ModelParams, h: EntityId, t: EntityId, r: RelationId) -> Result<f64> {
    params.check_relation(r, false)?;
    params.check_entity(h)?;
    params.check_entity(t)?;
    let (he, te, re) = (params.entity(h), params.entity(t), params.relation(r));
    Ok((0..params.k()).map(|i| te[i] * re[i] * he[i]).sum())
}

/// Training distance for any triplet under the configured geometry: the
/// translation distance for directed relations, and for undirected relations
/// the scorer's distance (DistMult is negated).
pub fn triplet_distance(params: &ModelParams, h: EntityId, t: EntityId, r: RelationId) -> Result<f64> {
    let use_att = params.config.use_attention;
    let kind = params
        .relations
        .get(r.index())
        .ok_or_else(|| Error::Contract(format!("relation {} out of range", r.0)))?;
    if kind.directed {
        return directed_distance(params, h, t, r, use_att);
    }
    match params.config.undirected_scorer {
        UndirectedScorer::Hyperplane => undirected_distance(params, h, t, r, use_att),
        UndirectedScorer::DistMult => distmult_score(params, h, t, r).map(|s| -s),
        UndirectedScorer::DirectedPair => {
            params.check_entity(h)?;
            params.check_entity(t)?;
            Ok(translation_distance(params, h, t, r, use_att))
        }
    }
}

/// Rescales `v` onto the unit sphere if it lies outside the unit ball.
pub fn project_unit_ball(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_unit_ball_in_place(&mut out);
    out
}

pub fn project_unit_ball_in_place(v: &mut [f64]) {
    let n = norm(v);
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub(crate) fn uniform_row(rng: &mut ChaCha8Rng, row: &mut [f64], bound: f64) {
    for x in row.iter_mut() {
        *x = rng.gen_range(-bound..=bound);
    }
}

/// Seeded initialization: embeddings and projection vectors uniform in
/// `[−1/√k, 1/√k]` (then kept inside the unit ball), attention weights from
/// the same range scaled by `1/√(2k)`, attention biases zero.
pub fn init_params(
    n_entities: usize,
    catalog: &RelationCatalog,
    config: &ModelConfig,
    seed: u64,
) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros(*config, n_entities, ModelParams::relation_kinds(catalog));
    let k = config.k;
    let bound = 1.0 / (k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for family in [
        ParamFamily::EntityEmb,
        ParamFamily::EntityProj,
        ParamFamily::RelEmb,
        ParamFamily::RelProj,
    ] {
        for row in params.family_mut(family).chunks_mut(k) {
            uniform_row(&mut rng, row, bound);
            project_unit_ball_in_place(row);
        }
    }
    let w_bound = bound / ((2 * k) as f64).sqrt();
    uniform_row(&mut rng, &mut params.att_weight, w_bound);
    Ok(params)
}
