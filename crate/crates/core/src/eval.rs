//! Full-candidate top-n evaluation under the interaction relation.
//!
//! Items are ranked ascending by interaction distance, ties broken by item
//! index. A user's held-out item is ranked against every item the user has
//! not interacted with in training.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DataSplit, EntityId, HeldOut, UnifiedGraph};
use crate::model::{directed_distance, ModelConfig, ModelParams};
use crate::train::{fit, subsample_cooccurrence, TrainConfig};

/// Hit iff `rank ≤ k` (ranks start at 1).
pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// `1/log₂(rank+1)` within the cutoff; with one relevant item the ideal DCG is 1.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedItem {
    pub item: EntityId,
    pub distance: f64,
}

/// Scores every candidate not in `exclude` and sorts ascending by distance,
/// then by item index.
pub fn rank_items(
    params: &ModelParams,
    graph: &UnifiedGraph,
    user: EntityId,
    exclude: &HashSet<EntityId>,
) -> Result<Vec<RankedItem>> {
    let r = graph.catalog().interaction();
    let mut out = graph
        .items()
        .into_iter()
        .filter(|i| !exclude.contains(i))
        .map(|item| {
            directed_distance(params, user, item, r, params.config.use_attention)
                .map(|distance| RankedItem { item, distance })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.item.cmp(&b.item)));
    Ok(out)
}

/// Sparsity buckets by training interaction count: `≤t₀, ≤t₁, …, >t_last`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityGroups {
    pub thresholds: Vec<usize>,
}

impl Default for SparsityGroups {
    fn default() -> Self {
        SparsityGroups {
            thresholds: vec![5, 10, 15],
        }
    }
}

impl SparsityGroups {
    /// The wider buckets used for denser datasets.
    pub fn dense() -> Self {
        SparsityGroups {
            thresholds: vec![5, 10, 30],
        }
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.thresholds.iter().map(|t| format!("<={t}")).collect();
        match self.thresholds.last() {
            Some(t) => out.push(format!(">{t}")),
            None => out.push("all".into()),
        }
        out
    }

    pub fn bucket(&self, count: usize) -> usize {
        self.thresholds
            .iter()
            .position(|t| count <= *t)
            .unwrap_or(self.thresholds.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStat {
    pub label: String,
    pub users: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub users: usize,
    /// Users in the vocabulary with no held-out item.
    pub skipped: usize,
    pub per_group: Vec<GroupStat>,
    /// Rank of each user's held-out item, ascending by user index.
    pub per_user_rank: Vec<(EntityId, usize)>,
}

impl EvalReport {
    /// JSON document with one record per metric and one per group.
    pub fn to_json(&self, graph: &UnifiedGraph) -> String {
        #[derive(Serialize)]
        struct Metric<'a> {
            name: &'a str,
            k: usize,
            value: f64,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            users: usize,
            skipped: usize,
            metrics: Vec<Metric<'a>>,
            groups: &'a [GroupStat],
            ranks: BTreeMap<&'a str, usize>,
        }
        let doc = Doc {
            users: self.users,
            skipped: self.skipped,
            metrics: vec![
                Metric { name: "hr", k: self.k, value: self.hr },
                Metric { name: "ndcg", k: self.k, value: self.ndcg },
            ],
            groups: &self.per_group,
            ranks: self
                .per_user_rank
                .iter()
                .map(|(u, r)| (graph.vocab().name(*u), *r))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    /// Comma-separated group table with a header row.
    pub fn groups_csv(&self) -> String {
        let mut s = String::from("group,users,hr,ndcg\n");
        for g in &self.per_group {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", g.label, g.users, g.hr, g.ndcg);
        }
        s
    }
}

/// Rank (1-based) of `target` in the full ranking, without sorting.
fn rank_of(
    params: &ModelParams,
    graph: &UnifiedGraph,
    items: &[EntityId],
    user: EntityId,
    target: EntityId,
    exclude: &HashSet<EntityId>,
) -> Result<usize> {
    let r = graph.catalog().interaction();
    let att = params.config.use_attention;
    let target_d = directed_distance(params, user, target, r, att)?;
    let mut rank = 1;
    for &item in items {
        if item == target || exclude.contains(&item) {
            continue;
        }
        let d = directed_distance(params, user, item, r, att)?;
        if d < target_d || (d == target_d && item < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Ranks each held-out item against all items the user has not trained on
/// (and, if given, not the user's item in `also_exclude`).
pub fn evaluate_heldout(
    train: &UnifiedGraph,
    heldout: &BTreeMap<EntityId, HeldOut>,
    also_exclude: Option<&BTreeMap<EntityId, HeldOut>>,
    params: &ModelParams,
    k: usize,
    groups: &SparsityGroups,
    sequential: bool,
) -> Result<EvalReport> {
    if heldout.is_empty() {
        return Err(Error::Contract("no held-out items to evaluate".into()));
    }
    let items = train.items();
    let users = train.users();
    let skipped = users.iter().filter(|u| !heldout.contains_key(u)).count();
    let job = |(user, h): (&EntityId, &HeldOut)| -> Result<(EntityId, usize, usize)> {
        let mut exclude: HashSet<EntityId> = train.user_interactions(*user).iter().map(|i| i.item).collect();
        if let Some(extra) = also_exclude.and_then(|m| m.get(user)) {
            if extra.item != h.item {
                exclude.insert(extra.item);
            }
        }
        exclude.remove(&h.item);
        let rank = rank_of(params, train, &items, *user, h.item, &exclude)?;
        Ok((*user, rank, train.user_interactions(*user).len()))
    };
    let ranks: Vec<(EntityId, usize, usize)> = if sequential {
        heldout.iter().map(job).collect::<Result<_>>()?
    } else {
        heldout.par_iter().map(job).collect::<Result<_>>()?
    };
    let labels = groups.labels();
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); labels.len()];
    let (mut hr, mut ndcg) = (0.0, 0.0);
    for &(_, rank, count) in &ranks {
        let (h, n) = (hr_at_k(rank, k), ndcg_at_k(rank, k));
        hr += h;
        ndcg += n;
        let g = &mut acc[groups.bucket(count)];
        g.0 += 1;
        g.1 += h;
        g.2 += n;
    }
    let n = ranks.len() as f64;
    Ok(EvalReport {
        k,
        hr: hr / n,
        ndcg: ndcg / n,
        users: ranks.len(),
        skipped,
        per_group: labels
            .into_iter()
            .zip(acc)
            .map(|(label, (users, h, nd))| GroupStat {
                label,
                users,
                hr: if users > 0 { h / users as f64 } else { 0.0 },
                ndcg: if users > 0 { nd / users as f64 } else { 0.0 },
            })
            .collect(),
        per_user_rank: ranks.into_iter().map(|(u, r, _)| (u, r)).collect(),
    })
}

/// Test-set evaluation: the validation item is excluded from the candidates.
pub fn evaluate(split: &DataSplit, params: &ModelParams, k: usize, groups: &SparsityGroups) -> Result<EvalReport> {
    evaluate_heldout(&split.train, &split.test, Some(&split.validation), params, k, groups, false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub undirected_triplets: usize,
    pub report: EvalReport,
}

/// Retrains from scratch at each co-occurrence ratio and evaluates on the
/// fixed test split.
pub fn cooccurrence_sweep(
    split: &DataSplit,
    ratios: &[f64],
    model: &ModelConfig,
    config: &TrainConfig,
    k: usize,
    groups: &SparsityGroups,
) -> Result<Vec<SweepRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            let train = subsample_cooccurrence(&split.train, ratio, config.seed)?;
            let undirected_triplets = train
                .catalog()
                .undirected()
                .map(|r| train.triplets(r.id).len())
                .sum();
            let sub = DataSplit {
                train,
                validation: split.validation.clone(),
                test: split.test.clone(),
            };
            let fitted = fit(&sub, model, config)?;
            Ok(SweepRow {
                ratio,
                undirected_triplets,
                report: evaluate(&sub, &fitted.best, k, groups)?,
            })
        })
        .collect()
}

pub const DEFAULT_RATIOS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("ratio,undirected_triplets,k,hr,ndcg\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6}",
            r.ratio, r.undirected_triplets, r.report.k, r.report.hr, r.report.ndcg
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_triplet_file, RelationCatalog, Vocabulary};
    use crate::model::{init_params, ParamFamily, Slot};

    #[test]
    fn hit_ratio_boundaries() {
        assert_eq!(hr_at_k(1, 20), 1.0);
        assert_eq!(hr_at_k(20, 20), 1.0);
        assert_eq!(hr_at_k(21, 20), 0.0);
    }

    #[test]
    fn ndcg_values() {
        assert_eq!(ndcg_at_k(1, 20), 1.0);
        assert_eq!(ndcg_at_k(3, 20), 0.5);
        assert_eq!(ndcg_at_k(25, 20), 0.0);
        for r in 1..40 {
            assert!(ndcg_at_k(r + 1, 30) <= ndcg_at_k(r, 30));
        }
    }

    #[test]
    fn group_bucketing() {
        let g = SparsityGroups::default();
        assert_eq!(g.labels(), vec!["<=5", "<=10", "<=15", ">15"]);
        assert_eq!(g.labels()[g.bucket(7)], "<=10");
        assert_eq!(g.bucket(5), 0);
        assert_eq!(g.bucket(16), 3);
        assert_eq!(SparsityGroups::dense().labels()[3], ">30");
    }

    fn split() -> DataSplit {
        let cat = RelationCatalog::parse("interact\tdirected\tuser\titem\ttrue\n").unwrap();
        let mut text = String::new();
        for u in 0..4 {
            for i in 0..(3 + u) {
                text += &format!("u{u}\ti{}\tinteract\t{i}\n", (i * 3 + u) % 9);
            }
        }
        let mut vocab = Vocabulary::new();
        let t = parse_triplet_file(&text, &cat, &mut vocab).unwrap();
        crate::graph::leave_one_out_split(&UnifiedGraph::from_triplets(vocab, cat, t).unwrap()).unwrap()
    }

    fn params(s: &DataSplit) -> ModelParams {
        init_params(
            s.train.num_entities(),
            s.train.catalog(),
            &ModelConfig { k: 6, ..ModelConfig::default() },
            5,
        )
        .unwrap()
    }

    #[test]
    fn ranking_is_sorted_permutation_with_exclusions() {
        let s = split();
        let p = params(&s);
        let user = s.train.users()[0];
        let exclude: HashSet<_> = s.train_items(user).collect();
        let ranked = rank_items(&p, &s.train, user, &exclude).unwrap();
        assert_eq!(ranked.len(), s.train.items().len() - exclude.len());
        assert!(ranked.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert!(ranked.iter().all(|r| !exclude.contains(&r.item)));
        let oracle = s
            .train
            .items()
            .into_iter()
            .filter(|i| !exclude.contains(i))
            .map(|i| (directed_distance(&p, user, i, s.train.catalog().interaction(), true).unwrap(), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap();
        assert_eq!(ranked[0].item, oracle.1);
    }

    #[test]
    fn singleton_and_ties() {
        let s = split();
        let mut p = params(&s);
        let user = s.train.users()[0];
        let items = s.train.items();
        let keep = items[3];
        let exclude: HashSet<_> = items.iter().copied().filter(|i| *i != keep).collect();
        let ranked = rank_items(&p, &s.train, user, &exclude).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].item, keep);

        let (a, b) = (items[5], items[2]);
        let row = p.slot(Slot::new(ParamFamily::EntityEmb, a.index())).to_vec();
        let prow = p.slot(Slot::new(ParamFamily::EntityProj, a.index())).to_vec();
        p.slot_mut(Slot::new(ParamFamily::EntityEmb, b.index())).copy_from_slice(&row);
        p.slot_mut(Slot::new(ParamFamily::EntityProj, b.index())).copy_from_slice(&prow);
        let exclude: HashSet<_> = items.iter().copied().filter(|i| *i != a && *i != b).collect();
        let ranked = rank_items(&p, &s.train, user, &exclude).unwrap();
        assert_eq!(ranked[0].distance, ranked[1].distance);
        assert_eq!(ranked[0].item, b.min(a));
    }

    #[test]
    fn rank_of_agrees_with_full_sort() {
        let s = split();
        let p = params(&s);
        let items = s.train.items();
        for user in s.train.users() {
            let target = s.test[&user].item;
            let mut exclude: HashSet<_> = s.train_items(user).collect();
            exclude.insert(s.validation[&user].item);
            let ranked = rank_items(&p, &s.train, user, &exclude).unwrap();
            let pos = ranked.iter().position(|r| r.item == target).unwrap() + 1;
            assert_eq!(rank_of(&p, &s.train, &items, user, target, &exclude).unwrap(), pos);
        }
    }

    #[test]
    fn report_invariants() {
        let s = split();
        let p = params(&s);
        let rep = evaluate(&s, &p, 3, &SparsityGroups::default()).unwrap();
        assert_eq!(rep.users, 4);
        assert_eq!(rep.per_group.iter().map(|g| g.users).sum::<usize>(), rep.users);
        assert!((0.0..=1.0).contains(&rep.hr) && (0.0..=1.0).contains(&rep.ndcg));
        let mean_hr = rep.per_user_rank.iter().map(|(_, r)| hr_at_k(*r, 3)).sum::<f64>() / 4.0;
        assert_eq!(rep.hr, mean_hr);
        let seq = evaluate_heldout(&s.train, &s.test, Some(&s.validation), &p, 3, &SparsityGroups::default(), true)
            .unwrap();
        assert_eq!(seq, rep);
        let json = rep.to_json(&s.train);
        assert!(json.contains("\"ndcg\""));
        assert!(rep.groups_csv().starts_with("group,users,hr,ndcg\n"));
    }

    #[test]
    fn averaging_two_users() {
        let hr = (hr_at_k(1, 20) + hr_at_k(21, 20)) / 2.0;
        assert_eq!(hr, 0.5);
    }
}
