//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ugrec::eval::{evaluate, hr_at_k, ndcg_at_k, SparsityGroups};
use ugrec::grad::{finite_difference_check, kink_distance, pair_grad, Coordinate, GradientSet};
use ugrec::graph::{leave_one_out_split, DataSplit};
use ugrec::model::{
    attention_vector, dot, hyperplane_project, init_params, transd_project, triplet_distance, undirected_distance,
    ModelConfig, ModelParams, ParamFamily, RelationKind, Slot, UndirectedScorer,
};
use ugrec::synth::{generate_synthetic_graph, oracle_distance, trivial_solution_probe, SynthConfig};
use ugrec::train::{fit, subsample_cooccurrence, train_epoch, Ablation, AdaGradState, TrainConfig};
use ugrec::{EntityId, RelationId, Triplet};

/// Frozen HR@10 gain of full co-occurrence over none.
const CO_MARGIN: f64 = 0.02;
const SEEDS: std::ops::Range<u64> = 0..5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(o: Outcome, limit: Duration, took: Duration) -> Outcome {
    if took > limit {
        outcome(false, format!("{} (took {:.1}s, limit {}s)", o.detail, took.as_secs_f64(), limit.as_secs()))
    } else {
        o
    }
}

fn random_params(rng: &mut ChaCha8Rng, k: usize, n: usize, att: bool, scorer: UndirectedScorer) -> ModelParams {
    let cfg = ModelConfig {
        k,
        use_attention: att,
        undirected_scorer: scorer,
        ..ModelConfig::default()
    };
    let kinds = vec![
        RelationKind { directed: true, interaction: true },
        RelationKind { directed: true, interaction: false },
        RelationKind { directed: false, interaction: false },
    ];
    let mut p = ModelParams::zeros(cfg, n, kinds);
    for f in ParamFamily::ALL {
        for x in p.family_mut(f) {
            *x = rng.gen_range(-0.6..0.6);
        }
    }
    p
}

fn pair_loss(p: &ModelParams, pos: &Triplet, neg: &Triplet, m: f64) -> ugrec::Result<f64> {
    let a = triplet_distance(p, pos.head, pos.tail, pos.relation)?;
    let b = triplet_distance(p, neg.head, neg.tail, neg.relation)?;
    Ok((m + a - b).max(0.0))
}

fn coords(p: &ModelParams, g: &GradientSet) -> Vec<Coordinate> {
    g.slots()
        .chain([Slot::new(ParamFamily::EntityEmb, p.n_entities - 1)])
        .flat_map(|slot| (0..p.row_len(slot.family)).map(move |offset| Coordinate { slot, offset }))
        .collect()
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut directed, mut undirected, mut worst) = (0, 0, 0.0f64);
    let mut tries = 0;
    while directed + undirected < 100 {
        tries += 1;
        if tries > 10_000 {
            return outcome(false, "could not draw 100 smooth configurations");
        }
        let att = rng.gen_bool(0.5);
        let p = random_params(&mut rng, 8, 6, att, UndirectedScorer::Hyperplane);
        let r = if directed <= undirected { RelationId(rng.gen_range(0..2)) } else { RelationId(2) };
        let pos = Triplet::new(EntityId(0), EntityId(1), r);
        let neg = Triplet::new(EntityId(0), EntityId(rng.gen_range(2..5)), r);
        let m = 1.0 + 2.0 * rng.gen::<f64>();
        if kink_distance(&p, &pos, &neg, m).unwrap() < 1e-4 {
            continue;
        }
        let (loss, g) = pair_grad(&p, &pos, &neg, m).unwrap();
        if loss == 0.0 {
            continue;
        }
        let err = finite_difference_check(|q| pair_loss(q, &pos, &neg, m), &p, &g, &coords(&p, &g), 1e-6).unwrap();
        worst = worst.max(err);
        if r == RelationId(2) {
            undirected += 1;
        } else {
            directed += 1;
        }
    }
    outcome(
        worst < 1e-4,
        format!("{directed} directed + {undirected} undirected configs, max rel error {worst:.2e} (< 1e-4)"),
    )
}

fn rand_vec(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn geometry_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let cases = 1000;
    let (mut orth, mut idem, mut scale, mut norm, mut rank1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut asym = 0usize;
    for _ in 0..cases {
        let k = rng.gen_range(2..17);
        let e = rand_vec(&mut rng, k);
        let n = rand_vec(&mut rng, k);
        let p = hyperplane_project(&e, &n).unwrap();
        orth = orth.max(dot(&p, &n).abs() / dot(&n, &n).sqrt());
        let pp = hyperplane_project(&p, &n).unwrap();
        idem = idem.max(p.iter().zip(&pp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let c = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.01..100.0);
        let scaled: Vec<f64> = n.iter().map(|x| x * c).collect();
        let ps = hyperplane_project(&e, &scaled).unwrap();
        scale = scale.max(p.iter().zip(&ps).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let w = rand_vec(&mut rng, 2 * k * k);
        let b = rand_vec(&mut rng, k);
        let a = attention_vector(&e, &n, &w, &b).unwrap();
        let s: f64 = a.weights().iter().sum();
        if a.weights().iter().any(|x| *x <= 0.0) {
            norm = f64::INFINITY;
        }
        norm = norm.max((s - 1.0).abs());

        let ep = rand_vec(&mut rng, k);
        let rp = rand_vec(&mut rng, k);
        let fast = transd_project(&e, &ep, &rp).unwrap();
        let dense: Vec<f64> = (0..k)
            .map(|i| (0..k).map(|j| (if i == j { 1.0 } else { 0.0 } + rp[i] * ep[j]) * e[j]).sum())
            .collect();
        rank1 = rank1.max(fast.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let att = rng.gen_bool(0.5);
        let params = random_params(&mut rng, k, 4, att, UndirectedScorer::Hyperplane);
        let (h, t) = (EntityId(rng.gen_range(0..4)), EntityId(rng.gen_range(0..4)));
        if undirected_distance(&params, h, t, RelationId(2), att).unwrap().to_bits()
            != undirected_distance(&params, t, h, RelationId(2), att).unwrap().to_bits()
        {
            asym += 1;
        }
    }
    let pass = orth < 1e-9 && idem < 1e-12 && scale < 1e-9 && asym == 0 && norm < 1e-9 && rank1 < 1e-12;
    outcome(
        pass,
        format!(
            "{cases} cases each: orthogonality {orth:.1e}, idempotence {idem:.1e}, scale {scale:.1e}, \
             asymmetric {asym}, attention sum {norm:.1e}, rank-1 {rank1:.1e}"
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut n = 0;
    for k in [2usize, 8, 16] {
        for batch in 0..100 {
            let att = batch % 2 == 0;
            let p = random_params(&mut rng, k, 12, att, UndirectedScorer::Hyperplane);
            for _ in 0..100 {
                let r = RelationId(rng.gen_range(0..3));
                let h = EntityId(rng.gen_range(0..12));
                let mut t = EntityId(rng.gen_range(0..12));
                while r.0 == 2 && t == h {
                    t = EntityId(rng.gen_range(0..12));
                }
                let tr = Triplet::new(h, t, r);
                let model = triplet_distance(&p, h, t, r).unwrap();
                let oracle = oracle_distance(&tr, &p, att).unwrap();
                worst = worst.max((model - oracle).abs());
                n += 1;
            }
        }
    }
    outcome(worst < 1e-10, format!("{n} triplets over k in {{2, 8, 16}}, max |model - oracle| {worst:.2e}"))
}

fn synth_split(seed: u64) -> DataSplit {
    let g = generate_synthetic_graph(&SynthConfig { seed, ..SynthConfig::default() }).unwrap().graph;
    leave_one_out_split(&g).unwrap()
}

/// Configuration shared by the trend criteria.
fn trend_model() -> ModelConfig {
    ModelConfig {
        k: 8,
        scale_attention_by_k: true,
        ..ModelConfig::default()
    }
}

fn trend_train(seed: u64, ablation: Ablation) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 100,
        eval_every: 5,
        eval_k: 10,
        patience: 10,
        batch_size: 256,
        seed,
        ablation,
        ..TrainConfig::default()
    }
}

fn constraint_enforcement() -> Outcome {
    let split = synth_split(0);
    let g = &split.train;
    let model = trend_model();
    let cfg = trend_train(0, Ablation::Full);
    let mut params = init_params(g.num_entities(), g.catalog(), &model, 0).unwrap();
    let mut state = AdaGradState::new(&params);
    let mut worst = params.max_constrained_norm();
    for epoch in 1..=50 {
        train_epoch(g, &mut params, &mut state, &cfg, epoch).unwrap();
        worst = worst.max(params.max_constrained_norm());
    }
    outcome(worst <= 1.0 + 1e-9, format!("50 epochs, max constrained norm {worst:.12}"))
}

fn trivial_probe() -> Outcome {
    let (mut pair, mut hyper) = (0.0, 0.0);
    for seed in SEEDS {
        let split = synth_split(seed);
        let cfg = TrainConfig {
            epochs: 20,
            ..trend_train(seed, Ablation::Full)
        };
        let r = trivial_solution_probe(&split.train, &trend_model(), &cfg).unwrap();
        pair += r.directed_pair.mean_relation_norm() / 5.0;
        hyper += r.hyperplane.mean_relation_norm() / 5.0;
    }
    outcome(pair < hyper, format!("mean |r| over 5 seeds: transe-pair {pair:.4} < hyperplane {hyper:.4}"))
}

fn test_hr(split: &DataSplit, cfg: &TrainConfig) -> f64 {
    let fitted = fit(split, &trend_model(), cfg).unwrap();
    evaluate(split, &fitted.best, 10, &SparsityGroups::default()).unwrap().hr
}

struct Trend {
    full: f64,
    no_co_ratio: f64,
    no_att: f64,
    no_dc: f64,
}

fn trend_runs() -> Trend {
    let mut t = Trend {
        full: 0.0,
        no_co_ratio: 0.0,
        no_att: 0.0,
        no_dc: 0.0,
    };
    for seed in SEEDS {
        let split = synth_split(seed);
        let stripped = DataSplit {
            train: subsample_cooccurrence(&split.train, 0.0, seed).unwrap(),
            ..split.clone()
        };
        t.full += test_hr(&split, &trend_train(seed, Ablation::Full)) / 5.0;
        t.no_co_ratio += test_hr(&stripped, &trend_train(seed, Ablation::Full)) / 5.0;
        t.no_att += test_hr(&split, &trend_train(seed, Ablation::NoAttention)) / 5.0;
        t.no_dc += test_hr(&split, &trend_train(seed, Ablation::NoDirectedNoCo)) / 5.0;
    }
    t
}

fn protocol_fidelity() -> Outcome {
    let mut broken = Vec::new();
    for seed in 0..10 {
        let g = generate_synthetic_graph(&SynthConfig { seed, ..SynthConfig::default() }).unwrap().graph;
        let s = leave_one_out_split(&g).unwrap();
        if s.train.interaction_triplets().len() + 2 * s.train.users().len() != g.interaction_triplets().len() {
            broken.push(seed);
        }
    }
    let units = hr_at_k(1, 20) == 1.0
        && ndcg_at_k(1, 20) == 1.0
        && ndcg_at_k(3, 20) == 0.5
        && hr_at_k(3, 20) == 1.0
        && hr_at_k(21, 20) == 0.0
        && ndcg_at_k(21, 20) == 0.0;
    outcome(
        broken.is_empty() && units,
        format!("conservation on 10 synthetic datasets (violations: {broken:?}); unit HR/NDCG values exact: {units}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ugrec"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn files(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| std::fs::read(dir.join(n)).unwrap_or_default()).collect()
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let p = |s: &str| root.path().join(s);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    if !run_cli(&["synth", "--output-dir", &s(&p("raw"))]) {
        return outcome(false, "synth command failed");
    }
    for out in ["prep_a", "prep_b"] {
        let ok = run_cli(&[
            "prepare",
            "--triplets",
            &s(&p("raw/triplets.tsv")),
            "--catalog",
            &s(&p("raw/catalog.tsv")),
            "--output-dir",
            &s(&p(out)),
        ]);
        if !ok {
            return outcome(false, "prepare failed");
        }
    }
    let split_files = ["catalog.tsv", "entities.tsv", "train.tsv", "valid.tsv", "test.tsv", "stats.tsv"];
    let prepare_same = files(&p("prep_a"), &split_files) == files(&p("prep_b"), &split_files);
    for out in ["run_a", "run_b"] {
        let ok = run_cli(&[
            "train",
            "--data",
            &s(&p("prep_a")),
            "--output-dir",
            &s(&p(out)),
            "--deterministic",
            "--seed",
            "7",
            "--epochs",
            "10",
            "--set",
            "model.k=8",
            "--set",
            "train.eval_every=5",
            "--set",
            "train.batch_size=256",
        ]);
        if !ok {
            return outcome(false, "train failed");
        }
    }
    let ckpts = ["best.ckpt", "final.ckpt"];
    let a = files(&p("run_a"), &ckpts);
    let train_same = a == files(&p("run_b"), &ckpts) && a.iter().all(|f| !f.is_empty());

    // Threaded and single-threaded fits agree bit for bit.
    let split = synth_split(3);
    let cfg = TrainConfig { epochs: 10, ..trend_train(3, Ablation::Full) };
    let par = fit(&split, &trend_model(), &cfg).unwrap();
    let seq = fit(&split, &trend_model(), &TrainConfig { deterministic: true, ..cfg }).unwrap();
    let fit_same = par.last == seq.last;
    outcome(
        prepare_same && train_same && fit_same,
        format!("prepare byte-identical: {prepare_same}; checkpoints bit-identical: {train_same}; threaded == sequential: {fit_same}"),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut timed = |name: &'static str, limit: Option<u64>, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let o = match limit {
            Some(s) => within(o, Duration::from_secs(s), took),
            None => o,
        };
        println!("{} {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, took.as_secs_f64());
        results.push((name, o));
    };
    timed("gradient-correctness", Some(30), &gradient_correctness);
    timed("geometry-invariants", Some(10), &geometry_invariants);
    timed("oracle-equivalence", Some(30), &oracle_equivalence);
    timed("constraint-enforcement", None, &constraint_enforcement);
    timed("trivial-solution-probe", Some(300), &trivial_probe);

    let start = Instant::now();
    let t = trend_runs();
    let took = start.elapsed();
    timed("co-occurrence-trend", None, &|| {
        let gain = t.full - t.no_co_ratio;
        let o = outcome(
            gain >= CO_MARGIN,
            format!(
                "HR@10 ratio 1.0 {:.4} vs ratio 0.0 {:.4}, gain {gain:+.4} (frozen margin {CO_MARGIN}); trend runs {:.0}s",
                t.full,
                t.no_co_ratio,
                took.as_secs_f64()
            ),
        );
        within(o, Duration::from_secs(600), took)
    });
    timed("ablation-order", None, &|| {
        let o = outcome(
            t.full >= t.no_att && t.no_att >= t.no_dc,
            format!("HR@10 full {:.4} >= o/att {:.4} >= o/dc {:.4}", t.full, t.no_att, t.no_dc),
        );
        within(o, Duration::from_secs(900), took)
    });
    timed("protocol-fidelity", None, &protocol_fidelity);
    timed("determinism", None, &determinism);

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
