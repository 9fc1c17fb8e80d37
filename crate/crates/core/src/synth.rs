//! Planted-cluster synthetic graphs, a naive scoring oracle, and the probe
//! comparing directed-pair and hyperplane modeling of co-occurrence.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, Namespace, RelationCatalog, RelationId, Triplet, UnifiedGraph, Vocabulary};
use crate::model::{init_params, ModelConfig, ModelParams, UndirectedScorer};
use crate::train::{stream_rng, train_epoch, AdaGradState, TrainConfig};

pub const SYNTH_CATALOG: &str = "\
interact\tdirected\tuser\titem\ttrue
category\tdirected\titem\tattribute\tfalse
maker\tdirected\titem\tattribute\tfalse
co_view\tundirected\titem\titem\tfalse
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub interactions_per_user: usize,
    pub co_edge_prob_intra: f64,
    pub co_edge_prob_inter: f64,
    pub n_categories: usize,
    pub n_makers: usize,
    /// Probability an item's category triplet is left out.
    pub attribute_dropout: f64,
    /// Fraction of a user's interactions drawn from their preferred cluster.
    pub preference_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 100,
            n_clusters: 5,
            interactions_per_user: 8,
            co_edge_prob_intra: 0.3,
            co_edge_prob_inter: 0.005,
            n_categories: 5,
            n_makers: 10,
            attribute_dropout: 0.5,
            preference_strength: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthGraph {
    pub graph: UnifiedGraph,
    /// Planted cluster per item, indexed by item order in the vocabulary.
    pub item_cluster: Vec<(EntityId, usize)>,
    pub user_cluster: Vec<(EntityId, usize)>,
}

/// Generates a planted-cluster graph. Items are split into contiguous
/// clusters; each user prefers one cluster and draws interactions from it with
/// probability `preference_strength`. Timestamps are draw order.
pub fn generate_synthetic_graph(config: &SynthConfig) -> Result<SynthGraph> {
    let c = config;
    if c.n_users == 0 || c.n_items == 0 || c.n_clusters == 0 || c.n_clusters > c.n_items {
        return Err(Error::Config("synthetic graph needs users, items and 1..=n_items clusters".into()));
    }
    if c.interactions_per_user > c.n_items {
        return Err(Error::Config(format!(
            "{} interactions per user exceed {} items",
            c.interactions_per_user, c.n_items
        )));
    }
    for p in [c.co_edge_prob_intra, c.co_edge_prob_inter, c.attribute_dropout, c.preference_strength] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
    }
    let catalog = RelationCatalog::parse(SYNTH_CATALOG)?;
    let rel = |name: &str| catalog.by_name(name).expect("synthetic relation").id;
    let (interact, category, maker, co_view) = (rel("interact"), rel("category"), rel("maker"), rel("co_view"));

    let mut rng = stream_rng(c.seed, &[0x5e_ed]);
    let mut vocab = Vocabulary::new();
    let users: Vec<EntityId> = (0..c.n_users)
        .map(|u| vocab.push(&format!("u{u}"), Namespace::for_side(EntityKind::User, interact)))
        .collect::<Result<_>>()?;
    let items: Vec<EntityId> = (0..c.n_items)
        .map(|i| vocab.push(&format!("i{i}"), Namespace::for_side(EntityKind::Item, interact)))
        .collect::<Result<_>>()?;
    let cluster_of = |i: usize| i * c.n_clusters / c.n_items;
    let members: Vec<Vec<usize>> = (0..c.n_clusters)
        .map(|k| (0..c.n_items).filter(|&i| cluster_of(i) == k).collect())
        .collect();

    let mut triplets = Vec::new();
    let attribute = |vocab: &mut Vocabulary, name: String, r: RelationId| -> Result<EntityId> {
        let ns = Namespace::for_side(EntityKind::Attribute, r);
        match vocab.lookup(&name, ns) {
            Some(id) => Ok(id),
            None => vocab.push(&name, ns),
        }
    };
    for (i, &item) in items.iter().enumerate() {
        if c.n_categories > 0 && !rng.gen_bool(c.attribute_dropout) {
            let cat = attribute(&mut vocab, format!("c{}", cluster_of(i) % c.n_categories), category)?;
            triplets.push(Triplet::new(item, cat, category));
        }
        if c.n_makers > 0 {
            let m = attribute(&mut vocab, format!("m{}", rng.gen_range(0..c.n_makers)), maker)?;
            triplets.push(Triplet::new(item, m, maker));
        }
    }
    for i in 0..c.n_items {
        for j in i + 1..c.n_items {
            let p = if cluster_of(i) == cluster_of(j) {
                c.co_edge_prob_intra
            } else {
                c.co_edge_prob_inter
            };
            if p > 0.0 && rng.gen_bool(p) {
                triplets.push(Triplet::new(items[i], items[j], co_view));
            }
        }
    }
    let mut user_cluster = Vec::with_capacity(c.n_users);
    for &user in &users {
        let home = rng.gen_range(0..c.n_clusters);
        user_cluster.push((user, home));
        let mut taken = vec![false; c.n_items];
        for step in 0..c.interactions_per_user {
            let in_home = c.n_clusters == 1 || rng.gen_bool(c.preference_strength);
            let free = |pool: &mut dyn Iterator<Item = usize>, taken: &[bool]| -> Vec<usize> {
                pool.filter(|&i| !taken[i]).collect()
            };
            let mut cands = if in_home {
                free(&mut members[home].iter().copied(), &taken)
            } else {
                free(&mut (0..c.n_items).filter(|&i| cluster_of(i) != home), &taken)
            };
            if cands.is_empty() {
                cands = free(&mut (0..c.n_items), &taken);
            }
            let pick = *cands.choose(&mut rng).expect("interactions_per_user <= n_items");
            taken[pick] = true;
            triplets.push(Triplet {
                timestamp: Some(step as i64 + 1),
                ..Triplet::new(user, items[pick], interact)
            });
        }
    }
    let graph = UnifiedGraph::from_triplets(vocab, catalog, triplets)?;
    Ok(SynthGraph {
        graph,
        item_cluster: items.iter().enumerate().map(|(i, id)| (*id, cluster_of(i))).collect(),
        user_cluster,
    })
}

/// Independent naive evaluation of a triplet's distance, written without
/// reusing the model's kernels: explicit mapping matrices, explicit softmax,
/// explicit hyperplane formula. Reads parameters by raw offsets.
pub fn oracle_distance(triplet: &Triplet, params: &ModelParams, use_attention: bool) -> Result<f64> {
    let k = params.config.k;
    let r = triplet.relation.0 as usize;
    let kind = params
        .relations
        .get(r)
        .ok_or_else(|| Error::Contract(format!("relation {r} out of range")))?;
    let (h, t) = (triplet.head.0 as usize, triplet.tail.0 as usize);
    if h >= params.n_entities || t >= params.n_entities {
        return Err(Error::Contract("entity out of range".into()));
    }
    let row = |buf: &Vec<f64>, i: usize| -> Vec<f64> { buf[i * k..(i + 1) * k].to_vec() };
    let block = if params.config.shared_attention { 0 } else { r };
    let w: Vec<Vec<f64>> = (0..k)
        .map(|i| params.att_weight[block * 2 * k * k + i * 2 * k..block * 2 * k * k + (i + 1) * 2 * k].to_vec())
        .collect();
    let b = row(&params.att_bias, block);
    let scale = if params.config.scale_attention_by_k { k as f64 } else { 1.0 };
    let attention = |left: &[f64], right: &[f64]| -> Vec<f64> {
        let concat: Vec<f64> = left.iter().chain(right).copied().collect();
        let mut z = vec![0.0; k];
        for i in 0..k {
            let mut acc = b[i];
            for j in 0..2 * k {
                acc += w[i][j] * concat[j];
            }
            z[i] = if acc > 0.0 { acc } else { 0.0 };
        }
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        z.iter().map(|v| v.exp() / denom).collect()
    };
    let rel = row(&params.rel_emb, r);
    let translation = kind.directed || params.config.undirected_scorer == UndirectedScorer::DirectedPair;
    if translation {
        let rp = row(&params.rel_proj, r);
        let project = |e: usize| -> Vec<f64> {
            let emb = row(&params.entity_emb, e);
            let ep = row(&params.entity_proj, e);
            let mut m = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in 0..k {
                    m[i][j] = rp[i] * ep[j];
                }
                m[i][i] += 1.0;
            }
            (0..k).map(|i| (0..k).map(|j| m[i][j] * emb[j]).sum()).collect()
        };
        let (hp, tp) = (project(h), project(t));
        let shift: Vec<f64> = if use_attention {
            let gate = attention(&hp, &tp);
            (0..k).map(|i| rel[i] * gate[i] * scale).collect()
        } else {
            rel
        };
        return Ok((0..k)
            .map(|i| {
                let v = hp[i] + shift[i] - tp[i];
                v * v
            })
            .sum());
    }
    let (he, te) = (row(&params.entity_emb, h), row(&params.entity_emb, t));
    if params.config.undirected_scorer == UndirectedScorer::DistMult {
        return Ok(-(0..k).map(|i| te[i] * rel[i] * he[i]).sum::<f64>());
    }
    let normal: Vec<f64> = if use_attention {
        let gate = if h <= t { attention(&he, &te) } else { attention(&te, &he) };
        (0..k).map(|i| rel[i] * gate[i] * scale).collect()
    } else {
        rel
    };
    let nn: f64 = normal.iter().map(|v| v * v).sum();
    if nn < crate::model::DEGENERATE_NORM_SQ {
        return Err(Error::DegenerateNormal {
            relation: r as u32,
            norm_sq: nn,
        });
    }
    let on_plane = |e: &[f64]| -> Vec<f64> {
        let along: f64 = (0..k).map(|i| normal[i] * e[i]).sum();
        (0..k).map(|i| e[i] - along * normal[i] / nn).collect()
    };
    let (hc, tc) = (on_plane(&he), on_plane(&te));
    Ok((0..k).map(|i| (hc[i] - tc[i]).powi(2)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub mode: String,
    /// Final norm of each undirected relation vector.
    pub relation_norms: Vec<(String, f64)>,
    /// Mean Euclidean distance between embeddings of co-occurring entities.
    pub mean_pair_distance: f64,
}

impl ProbeRow {
    pub fn mean_relation_norm(&self) -> f64 {
        self.relation_norms.iter().map(|(_, n)| n).sum::<f64>() / self.relation_norms.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub directed_pair: ProbeRow,
    pub hyperplane: ProbeRow,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,relation,relation_norm,mean_pair_distance\n");
        for row in [&self.directed_pair, &self.hyperplane] {
            for (name, n) in &row.relation_norms {
                s += &format!("{},{},{:.6},{:.6}\n", row.mode, name, n, row.mean_pair_distance);
            }
        }
        s
    }
}

/// Trains the same data and seed twice, once with co-occurrence edges as two
/// directed translation triplets and once on relation hyperplanes, and reports
/// where the undirected relation vectors and co-occurring embeddings end up.
pub fn trivial_solution_probe(graph: &UnifiedGraph, model: &ModelConfig, config: &TrainConfig) -> Result<ProbeReport> {
    let undirected: Vec<_> = graph.catalog().undirected().map(|r| (r.id, r.name.clone())).collect();
    if undirected.iter().all(|(r, _)| graph.triplets(*r).is_empty()) {
        return Err(Error::Contract("trivial-solution probe needs undirected triplets".into()));
    }
    let run = |scorer: UndirectedScorer, mode: &str| -> Result<ProbeRow> {
        let cfg = ModelConfig {
            undirected_scorer: scorer,
            ..config.ablation.apply(model)
        };
        let mut params = init_params(graph.num_entities(), graph.catalog(), &cfg, config.seed)?;
        let mut state = AdaGradState::new(&params);
        for epoch in 1..=config.epochs {
            train_epoch(graph, &mut params, &mut state, config, epoch)?;
        }
        let relation_norms = undirected
            .iter()
            .map(|(r, name)| (name.clone(), crate::model::norm(params.relation(*r))))
            .collect();
        let (mut sum, mut n) = (0.0, 0usize);
        for (r, _) in &undirected {
            for t in graph.triplets(*r) {
                let (a, b) = (params.entity(t.head), params.entity(t.tail));
                sum += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                n += 1;
            }
        }
        Ok(ProbeRow {
            mode: mode.to_string(),
            relation_norms,
            mean_pair_distance: sum / n as f64,
        })
    };
    Ok(ProbeReport {
        directed_pair: run(UndirectedScorer::DirectedPair, "transe-pair")?,
        hyperplane: run(UndirectedScorer::Hyperplane, "hyperplane")?,
    })
}
