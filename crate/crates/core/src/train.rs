//! Multi-task training: hardest-of-N negative sampling, per-relation hinge
//! losses weighted by `λ_d` / `λ_c`, AdaGrad updates and unit-ball projection.
//!
//! Updates are applied per batch; every pair in a batch sees the parameter
//! snapshot taken at batch start. Each pair draws from its own RNG stream
//! derived from `(seed, epoch, position)`, and per-pair gradients are summed
//! in position order, so parallel and single-threaded runs are bit-identical.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_heldout, SparsityGroups};
use crate::grad::{pair_grad, GradientSet};
use crate::graph::{DataSplit, RelationId, Triplet, UnifiedGraph};
use crate::model::{
    init_params, norm, project_unit_ball_in_place, triplet_distance, uniform_row, ModelConfig,
    ModelParams, ParamFamily, Slot, UndirectedScorer,
};

/// Below this norm an undirected relation vector is redrawn.
pub const RELATION_REINIT_NORM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Ablation {
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Interactions only.
    #[serde(rename = "o-dc", alias = "o/dc")]
    NoDirectedNoCo,
    /// No undirected relations.
    #[serde(rename = "o-c", alias = "o/c")]
    NoCo,
    /// No directed relations besides interactions.
    #[serde(rename = "o-d", alias = "o/d")]
    NoDirected,
    /// Attention disabled everywhere.
    #[serde(rename = "o-att", alias = "o/att")]
    NoAttention,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoDirectedNoCo,
        Ablation::NoCo,
        Ablation::NoDirected,
        Ablation::NoAttention,
        Ablation::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoDirectedNoCo => "o/dc",
            Ablation::NoCo => "o/c",
            Ablation::NoDirected => "o/d",
            Ablation::NoAttention => "o/att",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Ablation::Full),
            "o/dc" | "o-dc" => Some(Ablation::NoDirectedNoCo),
            "o/c" | "o-c" => Some(Ablation::NoCo),
            "o/d" | "o-d" => Some(Ablation::NoDirected),
            "o/att" | "o-att" => Some(Ablation::NoAttention),
            _ => None,
        }
    }

    fn keeps_undirected(self) -> bool {
        !matches!(self, Ablation::NoCo | Ablation::NoDirectedNoCo)
    }

    fn keeps_knowledge(self) -> bool {
        !matches!(self, Ablation::NoDirected | Ablation::NoDirectedNoCo)
    }

    /// The model config this variant trains with.
    pub fn apply(self, model: &ModelConfig) -> ModelConfig {
        ModelConfig {
            use_attention: model.use_attention && self != Ablation::NoAttention,
            ..*model
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which pool candidate becomes the negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeRule {
    /// Smallest distance, i.e. the largest hinge violation.
    #[default]
    SmallestDistance,
    LargestDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub margin_interaction: f64,
    pub margin_other: f64,
    pub neg_pool: usize,
    pub lambda_d: f64,
    pub lambda_c: f64,
    pub epochs: usize,
    pub eval_every: usize,
    /// Cutoff for the validation metric that selects the best parameters.
    pub eval_k: usize,
    /// Evaluations without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub negative_rule: NegativeRule,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            margin_interaction: 1.8,
            margin_other: 1.0,
            neg_pool: 20,
            lambda_d: 1.0,
            lambda_c: 1.0,
            epochs: 1000,
            eval_every: 10,
            eval_k: 20,
            patience: 20,
            batch_size: 1024,
            seed: 0,
            ablation: Ablation::Full,
            negative_rule: NegativeRule::SmallestDistance,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.margin_interaction > 0.0 && self.margin_other > 0.0) {
            return bad("margins must be > 0");
        }
        if self.neg_pool == 0 {
            return bad("neg_pool must be >= 1");
        }
        if !(self.lambda_d >= 0.0 && self.lambda_c >= 0.0) {
            return bad("lambda_d and lambda_c must be >= 0");
        }
        if self.eval_every == 0 || self.batch_size == 0 || self.eval_k == 0 {
            return bad("eval_every, eval_k and batch_size must be >= 1");
        }
        Ok(())
    }

    fn margin(&self, params: &ModelParams, r: RelationId) -> f64 {
        if params.relations[r.index()].interaction {
            self.margin_interaction
        } else {
            self.margin_other
        }
    }

    fn weight(&self, params: &ModelParams, r: RelationId) -> f64 {
        if params.relations[r.index()].directed {
            self.lambda_d
        } else {
            self.lambda_c
        }
    }
}

/// Per-coordinate accumulated squared gradients, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    accum: BTreeMap<ParamFamily, Vec<f64>>,
    pub epsilon: f64,
}

impl AdaGradState {
    pub fn new(params: &ModelParams) -> Self {
        AdaGradState {
            accum: ParamFamily::ALL
                .iter()
                .map(|&f| (f, vec![0.0; params.family(f).len()]))
                .collect(),
            epsilon: 1e-8,
        }
    }

    pub fn accumulator(&self, family: ParamFamily) -> &[f64] {
        &self.accum[&family]
    }

    /// `acc ← acc + g²; θ ← θ − lr·g/√(acc+ε)` on every touched row, then
    /// unit-ball projection of touched rows in constrained families.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &GradientSet, lr: f64) {
        for (slot, g) in grads.iter() {
            let n = params.row_len(slot.family);
            let start = slot.row as usize * n;
            let acc = &mut self.accum.get_mut(&slot.family).expect("family")[start..start + n];
            let row = params.slot_mut(*slot);
            for ((theta, a), gi) in row.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a += gi * gi;
                *theta -= lr * gi / (*a + self.epsilon).sqrt();
            }
            if slot.family.is_constrained() {
                project_unit_ball_in_place(row);
            }
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let s = parts.iter().fold(mix(seed), |acc, p| mix(acc ^ mix(*p)));
    ChaCha8Rng::seed_from_u64(s)
}

/// Draws up to `n` corrupted tails not known to be positive and returns the
/// hardest one (ties to the smallest entity index).
pub fn sample_hard_negative(
    pos: &Triplet,
    graph: &UnifiedGraph,
    params: &ModelParams,
    n: usize,
    rule: NegativeRule,
    rng: &mut impl Rng,
) -> Result<Triplet> {
    if n == 0 {
        return Err(Error::Contract("negative pool size must be >= 1".into()));
    }
    let pool = graph.tail_pool(pos.relation);
    let undirected = !graph.catalog().get(pos.relation).is_directed();
    let mut best: Option<(f64, Triplet)> = None;
    let (mut valid, mut draws) = (0, 0);
    while valid < n && draws < 10 * n && !pool.is_empty() {
        draws += 1;
        let cand = pool[rng.gen_range(0..pool.len())];
        if graph.contains(pos.head, cand, pos.relation) || (undirected && cand == pos.head) {
            continue;
        }
        valid += 1;
        let neg = Triplet::new(pos.head, cand, pos.relation);
        let d = triplet_distance(params, neg.head, neg.tail, neg.relation)?;
        let better = match best {
            None => true,
            Some((bd, bt)) => {
                let harder = match rule {
                    NegativeRule::SmallestDistance => d < bd,
                    NegativeRule::LargestDistance => d > bd,
                };
                harder || (d == bd && cand < bt.tail)
            }
        };
        if better {
            best = Some((d, neg));
        }
    }
    best.map(|(_, t)| t).ok_or_else(|| Error::SamplingExhausted {
        head: graph.vocab().name(pos.head).to_string(),
        relation: graph.catalog().get(pos.relation).name.clone(),
        draws,
    })
}

/// The positives one epoch iterates over, in a fixed order.
///
/// Under the directed-pair scorer each undirected edge contributes both
/// orientations.
pub fn epoch_positives(graph: &UnifiedGraph, ablation: Ablation, scorer: UndirectedScorer) -> Vec<Triplet> {
    let mut out = Vec::new();
    for rel in graph.catalog().iter() {
        let keep = if rel.is_interaction {
            true
        } else if rel.is_directed() {
            ablation.keeps_knowledge()
        } else {
            ablation.keeps_undirected()
        };
        if !keep {
            continue;
        }
        for t in graph.triplets(rel.id) {
            out.push(*t);
            if !rel.is_directed() && scorer == UndirectedScorer::DirectedPair {
                out.push(Triplet {
                    head: t.tail,
                    tail: t.head,
                    ..*t
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationLoss {
    pub relation: String,
    pub pairs: usize,
    pub active: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub pairs: usize,
    pub active_fraction: f64,
    pub relations: Vec<RelationLoss>,
    /// Relations whose tail pool holds fewer than 2N candidates.
    pub small_pools: Vec<String>,
}

/// One pass over the enabled positives in seeded-shuffled order.
pub fn train_epoch(
    graph: &UnifiedGraph,
    params: &mut ModelParams,
    state: &mut AdaGradState,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochSummary> {
    config.validate()?;
    let mut positives = epoch_positives(graph, config.ablation, params.config.undirected_scorer);
    positives.shuffle(&mut stream_rng(config.seed, &[epoch as u64, 0]));

    let n_rel = graph.catalog().len();
    let mut loss_sum = vec![0.0; n_rel];
    let mut pairs = vec![0usize; n_rel];
    let mut active = vec![0usize; n_rel];

    for (b, batch) in positives.chunks(config.batch_size).enumerate() {
        let base = b * config.batch_size;
        let snapshot: &ModelParams = params;
        let work = |(i, pos): (usize, &Triplet)| -> Result<(f64, GradientSet)> {
            let mut rng = stream_rng(config.seed, &[epoch as u64, 1, (base + i) as u64]);
            let neg = sample_hard_negative(pos, graph, snapshot, config.neg_pool, config.negative_rule, &mut rng)?;
            let (loss, mut g) = pair_grad(snapshot, pos, &neg, config.margin(snapshot, pos.relation))?;
            g.scale(config.weight(snapshot, pos.relation));
            Ok((loss, g))
        };
        let results: Vec<Result<(f64, GradientSet)>> = if config.deterministic {
            batch.iter().enumerate().map(work).collect()
        } else {
            batch.par_iter().enumerate().map(work).collect()
        };
        let mut total = GradientSet::new();
        for (pos, res) in batch.iter().zip(results) {
            let (loss, g) = res.map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!(
                    "{msg} (triplet {} {} {})",
                    graph.vocab().name(pos.head),
                    graph.vocab().name(pos.tail),
                    graph.catalog().get(pos.relation).name
                )),
                other => other,
            })?;
            let r = pos.relation.index();
            pairs[r] += 1;
            if loss > 0.0 {
                active[r] += 1;
                loss_sum[r] += loss;
                total.accumulate(&g, 1.0);
            }
        }
        state.apply(params, &total, config.learning_rate);
        reinit_degenerate_relations(params, config.seed, &[epoch as u64, 2, b as u64]);
    }

    let total_pairs: usize = pairs.iter().sum();
    let total_active: usize = active.iter().sum();
    let relations = graph
        .catalog()
        .iter()
        .filter(|r| pairs[r.id.index()] > 0)
        .map(|r| {
            let i = r.id.index();
            RelationLoss {
                relation: r.name.clone(),
                pairs: pairs[i],
                active: active[i],
                mean_loss: loss_sum[i] / pairs[i] as f64,
            }
        })
        .collect();
    let small_pools = graph
        .catalog()
        .iter()
        .filter(|r| pairs[r.id.index()] > 0 && graph.tail_pool(r.id).len() < 2 * config.neg_pool)
        .map(|r| r.name.clone())
        .collect();
    Ok(EpochSummary {
        epoch,
        pairs: total_pairs,
        active_fraction: if total_pairs > 0 { total_active as f64 / total_pairs as f64 } else { 0.0 },
        relations,
        small_pools,
    })
}

/// Redraws hyperplane normals that collapsed below [`RELATION_REINIT_NORM`].
fn reinit_degenerate_relations(params: &mut ModelParams, seed: u64, parts: &[u64]) {
    if params.config.undirected_scorer != UndirectedScorer::Hyperplane {
        return;
    }
    let k = params.k();
    let bound = 1.0 / (k as f64).sqrt();
    for r in 0..params.n_relations() {
        if params.relations[r].directed {
            continue;
        }
        let slot = Slot::new(ParamFamily::RelEmb, r);
        if norm(params.slot(slot)) < RELATION_REINIT_NORM {
            let mut p = parts.to_vec();
            p.push(r as u64);
            let mut rng = stream_rng(seed, &p);
            let row = params.slot_mut(slot);
            uniform_row(&mut rng, row, bound);
            project_unit_ball_in_place(row);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub variant: String,
    pub relations: Vec<RelationLoss>,
    pub active_fraction: f64,
    pub k: usize,
    pub valid_hr: f64,
    pub valid_ndcg: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: ModelParams,
    pub last: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EvalRecord>,
}

/// Trains from a seeded initialization, evaluating validation HR every
/// `eval_every` epochs and keeping the best parameters.
pub fn fit(split: &DataSplit, model: &ModelConfig, config: &TrainConfig) -> Result<FitResult> {
    fit_with(split, model, config, |_| {})
}

pub fn fit_with(
    split: &DataSplit,
    model: &ModelConfig,
    config: &TrainConfig,
    mut on_record: impl FnMut(&EvalRecord),
) -> Result<FitResult> {
    config.validate()?;
    let graph = &split.train;
    let model = config.ablation.apply(model);
    let mut params = init_params(graph.num_entities(), graph.catalog(), &model, config.seed)?;
    let mut state = AdaGradState::new(&params);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let summary = train_epoch(graph, &mut params, &mut state, config, epoch)?;
        if epoch % config.eval_every != 0 {
            continue;
        }
        let report = evaluate_heldout(
            graph,
            &split.validation,
            None,
            &params,
            config.eval_k,
            &SparsityGroups::default(),
            config.deterministic,
        )?;
        let record = EvalRecord {
            epoch,
            variant: config.ablation.label().to_string(),
            relations: summary.relations,
            active_fraction: summary.active_fraction,
            k: config.eval_k,
            valid_hr: report.hr,
            valid_ndcg: report.ndcg,
        };
        on_record(&record);
        history.push(record);
        if best.as_ref().map_or(true, |(hr, _, _)| report.hr > *hr) {
            best = Some((report.hr, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, best) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(FitResult {
        best,
        last: params,
        best_epoch,
        history,
    })
}

/// Keeps exactly `round(ratio · total)` undirected triplets chosen by a seeded
/// shuffle; directed triplets are untouched.
pub fn subsample_cooccurrence(graph: &UnifiedGraph, ratio: f64, seed: u64) -> Result<UnifiedGraph> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Contract(format!("co-occurrence ratio {ratio} outside [0, 1]")));
    }
    let undirected: Vec<usize> = graph
        .all_triplets()
        .enumerate()
        .filter(|(_, t)| !graph.catalog().get(t.relation).is_directed())
        .map(|(i, _)| i)
        .collect();
    let keep_n = (ratio * undirected.len() as f64).round() as usize;
    let mut order = undirected.clone();
    order.shuffle(&mut stream_rng(seed, &[0xc0_0c]));
    let mut keep = vec![true; graph.num_triplets()];
    for &i in &order[keep_n..] {
        keep[i] = false;
    }
    graph.with_triplets(
        graph
            .all_triplets()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(t, _)| *t),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_triplet_file, RelationCatalog, Vocabulary};

    const CATALOG: &str = "interact\tdirected\tuser\titem\ttrue\ncategory\tdirected\titem\tattribute\tfalse\nco\tundirected\titem\titem\tfalse\n";

    fn graph() -> UnifiedGraph {
        let cat = RelationCatalog::parse(CATALOG).unwrap();
        let mut text = String::new();
        let mut ts = 0;
        for u in 0..6 {
            for i in 0..5 {
                if (u + i) % 3 != 0 {
                    ts += 1;
                    text += &format!("u{u}\ti{}\tinteract\t{ts}\n", (u + i) % 8);
                }
            }
        }
        for i in 0..8 {
            text += &format!("i{i}\tc{}\tcategory\n", i % 2);
        }
        for i in 0..7 {
            text += &format!("i{i}\ti{}\tco\n", i + 1);
        }
        let mut vocab = Vocabulary::new();
        let t = parse_triplet_file(&text, &cat, &mut vocab).unwrap();
        UnifiedGraph::from_triplets(vocab, cat, t).unwrap()
    }

    fn params(g: &UnifiedGraph, k: usize) -> ModelParams {
        init_params(g.num_entities(), g.catalog(), &ModelConfig { k, ..ModelConfig::default() }, 3).unwrap()
    }

    #[test]
    fn first_adagrad_step() {
        let g = graph();
        let mut p = params(&g, 2);
        let mut st = AdaGradState::new(&p);
        let slot = Slot::new(ParamFamily::AttBias, 0);
        let before = p.slot(slot).to_vec();
        let mut grads = GradientSet::new();
        grads.add(slot, &[2.0, 0.0], 1.0);
        st.apply(&mut p, &grads, 0.1);
        let step = p.slot(slot)[0] - before[0];
        let expected = -0.1 * 2.0 / (4.0f64 + 1e-8).sqrt();
        assert!((step - expected).abs() < 1e-15);
        assert!((step + 0.1).abs() < 1e-9);
        assert_eq!(p.slot(slot)[1], before[1]);
        assert_eq!(st.accumulator(ParamFamily::AttBias)[0], 4.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let g = graph();
        let mut p = params(&g, 4);
        let before = p.clone();
        let mut st = AdaGradState::new(&p);
        st.apply(&mut p, &GradientSet::new(), 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn inactive_epoch_changes_nothing() {
        let g = graph();
        let mut p = params(&g, 4);
        let before = p.clone();
        let mut st = AdaGradState::new(&p);
        // Tiny margins keep every hinge inactive only if distances separate; use
        // a huge negative weight instead: lambdas of zero zero the gradients.
        let cfg = TrainConfig {
            lambda_d: 0.0,
            lambda_c: 0.0,
            deterministic: true,
            ..TrainConfig::default()
        };
        train_epoch(&g, &mut p, &mut st, &cfg, 1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn hard_negative_single_draw_and_pool_minimum() {
        let g = graph();
        let p = params(&g, 4);
        let pos = g.interaction_triplets()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = sample_hard_negative(&pos, &g, &p, 1, NegativeRule::SmallestDistance, &mut rng).unwrap();
        assert!(!g.contains(neg.head, neg.tail, neg.relation));
        assert_eq!(neg.head, pos.head);

        // Re-run the draw sequence and brute-force the pool.
        let pool = g.tail_pool(pos.relation);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cands = Vec::new();
        let mut draws = 0;
        while cands.len() < 20 && draws < 200 {
            draws += 1;
            let c = pool[rng.gen_range(0..pool.len())];
            if !g.contains(pos.head, c, pos.relation) {
                cands.push(c);
            }
        }
        let oracle = cands
            .iter()
            .map(|&c| (triplet_distance(&p, pos.head, c, pos.relation).unwrap(), c))
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let neg = sample_hard_negative(&pos, &g, &p, 20, NegativeRule::SmallestDistance, &mut rng).unwrap();
        assert_eq!(neg.tail, oracle.1);
    }

    #[test]
    fn hard_negative_ties_prefer_smallest_index() {
        let g = graph();
        let mut p = params(&g, 4);
        // identical item embeddings and projections: all candidates tie
        for item in g.items() {
            p.slot_mut(Slot::new(ParamFamily::EntityEmb, item.index())).copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
            p.slot_mut(Slot::new(ParamFamily::EntityProj, item.index())).copy_from_slice(&[0.0; 4]);
        }
        let pos = g.interaction_triplets()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let neg = sample_hard_negative(&pos, &g, &p, 20, NegativeRule::SmallestDistance, &mut rng).unwrap();
        let smallest = g
            .tail_pool(pos.relation)
            .iter()
            .copied()
            .filter(|c| !g.contains(pos.head, *c, pos.relation))
            .min()
            .unwrap();
        assert_eq!(neg.tail, smallest);
    }

    #[test]
    fn sampling_exhausted_when_everything_is_positive() {
        let cat = RelationCatalog::parse(CATALOG).unwrap();
        let mut vocab = Vocabulary::new();
        let t = parse_triplet_file("u0\ti0\tinteract\t1\nu0\ti1\tinteract\t2\n", &cat, &mut vocab).unwrap();
        let g = UnifiedGraph::from_triplets(vocab, cat, t).unwrap();
        let p = params(&g, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_hard_negative(&g.interaction_triplets()[0], &g, &p, 3, NegativeRule::SmallestDistance, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted { draws: 30, .. }), "{err}");
    }

    #[test]
    fn ablation_positive_sets_nest() {
        let g = graph();
        let count = |a| epoch_positives(&g, a, UndirectedScorer::Hyperplane).len();
        let n_inter = g.interaction_triplets().len();
        assert_eq!(count(Ablation::NoDirectedNoCo), n_inter);
        assert!(count(Ablation::NoDirectedNoCo) < count(Ablation::NoCo));
        assert!(count(Ablation::NoCo) < count(Ablation::Full));
        assert!(count(Ablation::NoDirectedNoCo) < count(Ablation::NoDirected));
        assert_eq!(count(Ablation::NoAttention), count(Ablation::Full));
        assert_eq!(
            epoch_positives(&g, Ablation::Full, UndirectedScorer::DirectedPair).len(),
            count(Ablation::Full) + 7
        );
    }

    #[test]
    fn epoch_keeps_unit_ball_and_is_deterministic() {
        let g = graph();
        let cfg = TrainConfig {
            batch_size: 8,
            neg_pool: 4,
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        let run = |deterministic| {
            let mut p = params(&g, 6);
            let mut st = AdaGradState::new(&p);
            let c = TrainConfig { deterministic, ..cfg.clone() };
            let mut last = None;
            for e in 1..=5 {
                let s = train_epoch(&g, &mut p, &mut st, &c, e).unwrap();
                assert!(p.max_constrained_norm() <= 1.0 + 1e-9);
                last = Some(s);
            }
            (p, st, last.unwrap())
        };
        let (a, sa, summary) = run(true);
        let (b, sb, _) = run(false);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(summary.pairs, g.num_triplets());
        assert!(summary.small_pools.contains(&"category".to_string()));
        for f in ParamFamily::ALL {
            assert!(sa.accumulator(f).iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn subsample_counts() {
        let g = graph();
        let co = g.catalog().by_name("co").unwrap().id;
        assert_eq!(subsample_cooccurrence(&g, 0.0, 1).unwrap().triplets(co).len(), 0);
        let full = subsample_cooccurrence(&g, 1.0, 1).unwrap();
        assert_eq!(full.triplets(co), g.triplets(co));
        assert_eq!(full.num_triplets(), g.num_triplets());
        let half = subsample_cooccurrence(&g, 0.5, 1).unwrap();
        assert_eq!(half.triplets(co).len(), 4); // round(3.5)
        assert_eq!(half.interaction_triplets(), g.interaction_triplets());
        assert!(subsample_cooccurrence(&g, 1.5, 1).is_err());
    }

    #[test]
    fn ablation_labels_roundtrip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.label()), Some(a));
        }
        assert_eq!(Ablation::parse("o-att"), Some(Ablation::NoAttention));
        assert!(!Ablation::NoAttention.apply(&ModelConfig::default()).use_attention);
    }
}
