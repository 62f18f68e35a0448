use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::{ModelConfig, RunConfig};
use crate::data::{prepare, DataConfig, InteractionRecord};
use crate::error::Error;
use crate::model::{Checkpoint, ModelParams};
use crate::synthetic;
use crate::tensor::Matrix;

fn dataset() -> PreparedDataset {
    prepare(synthetic::polarity_clustered(4, Default::default()), &DataConfig::default()).unwrap()
}

fn cfg(d: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        ..ModelConfig::default()
    }
}

/// Every user gets the same scores, ordered by the decoder bias.
fn bias_only_model(n_items: usize, bias: impl Fn(usize) -> f64) -> Model {
    let c = cfg(4);
    let mut p = ModelParams::zeros(&c, n_items);
    p.decoder.b = Matrix::from_shape_fn((1, n_items), |(_, i)| bias(i));
    Model::new(c, p)
}

#[test]
fn bias_ranking_matches_an_independent_recount() {
    let ds = dataset();
    let n = ds.split.full.n_items();
    // A scrambled but strict order over items.
    let bias = |i: usize| ((i * 37 + 11) % n) as f64 / n as f64;
    let model = bias_only_model(n, bias);
    let corr = CorrelationSet::build(&ds.split.train, 2, true).unwrap();
    let rep = evaluate_model(&model, &ds, &corr, Split::Test, EvalPolicy::default()).unwrap();

    let history = ds.split.history_for(Split::Test);
    let mut sums = [[0.0; 3]; 2];
    let mut users = 0;
    for u in 0..history.n_users() {
        let seen: Vec<usize> = history.sequences[u].iter().map(|e| e.item).collect();
        let mut rel: Vec<usize> = ds.split.test.sequences[u]
            .iter()
            .map(|e| e.item)
            .filter(|i| !seen.contains(i))
            .collect();
        rel.sort_unstable();
        rel.dedup();
        if rel.is_empty() {
            continue;
        }
        users += 1;
        let mut order: Vec<usize> = (0..n).filter(|i| !seen.contains(i)).collect();
        order.sort_by(|a, b| bias(*b).partial_cmp(&bias(*a)).unwrap());
        for (slot, k) in [5usize, 10, 20].into_iter().enumerate() {
            let hits: Vec<usize> = (0..k.min(order.len())).filter(|&p| rel.contains(&order[p])).collect();
            sums[0][slot] += hits.len() as f64 / rel.len() as f64;
            let dcg: f64 = hits.iter().map(|&p| 1.0 / (p as f64 + 2.0).log2()).sum();
            let idcg: f64 = (0..rel.len().min(k)).map(|p| 1.0 / (p as f64 + 2.0).log2()).sum();
            sums[1][slot] += dcg / idcg;
        }
    }
    assert_eq!(rep.users, users);
    for slot in 0..3 {
        assert!((rep.recall[slot] - sums[0][slot] / users as f64).abs() < 1e-12);
        assert!((rep.ndcg[slot] - sums[1][slot] / users as f64).abs() < 1e-12);
    }
}

#[test]
fn users_whose_split_items_are_all_history_are_skipped() {
    let mut recs = Vec::new();
    for (u, items) in [[0, 1, 0], [1, 2, 3]].iter().enumerate() {
        for (j, i) in items.iter().enumerate() {
            recs.push(InteractionRecord {
                user_id: format!("u{u}"),
                item_id: format!("i{i}"),
                rating: 5.0,
                timestamp: 10 * j as i64,
            });
        }
    }
    let ds = prepare(recs, &DataConfig::default()).unwrap();
    let model = bias_only_model(ds.split.full.n_items(), |i| i as f64);
    let corr = CorrelationSet::build(&ds.split.train, 2, true).unwrap();
    let rep = evaluate_model(&model, &ds, &corr, Split::Test, EvalPolicy::default()).unwrap();
    assert_eq!((rep.users, rep.skipped_users), (1, 1));
    let keep = EvalPolicy {
        exclude_history: false,
        ..EvalPolicy::default()
    };
    let rep = evaluate_model(&model, &ds, &corr, Split::Test, keep).unwrap();
    assert_eq!((rep.users, rep.skipped_users), (2, 0));
}

#[test]
fn random_scores_land_near_the_chance_level() {
    let ds = dataset();
    let n = ds.split.full.n_items();
    let corr = CorrelationSet::build(&ds.split.train, 2, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0.0;
    let trials = 20;
    for _ in 0..trials {
        let c = cfg(4);
        let mut p = ModelParams::zeros(&c, n);
        p.decoder.b = Matrix::from_shape_fn((1, n), |_| rand::Rng::gen::<f64>(&mut rng));
        let model = Model::new(c, p);
        let rep = evaluate_model(&model, &ds, &corr, Split::Test, EvalPolicy::default()).unwrap();
        total += rep.recall_at(20).unwrap();
    }
    // About 20 of the ~n - 15 unseen items are shown to each user.
    let chance = 20.0 / (n as f64 - 13.0);
    let mean = total / trials as f64;
    assert!((mean - chance).abs() < 0.35 * chance, "{mean} vs {chance}");
}

#[test]
fn user_order_does_not_change_representations() {
    let ds = dataset();
    let c = cfg(6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(c.clone(), ModelParams::init(&c, ds.split.full.n_items(), &mut rng));
    let corr = CorrelationSet::build(&ds.split.train, 2, true).unwrap();
    let users: Vec<usize> = (0..ds.split.train.n_users()).collect();
    let mut shuffled = users.clone();
    rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
    let a = model.user_representations(&corr, &ds.split.train, &users).unwrap();
    let b = model.user_representations(&corr, &ds.split.train, &shuffled).unwrap();
    for (row, &u) in shuffled.iter().enumerate() {
        assert_eq!(a.e_s.row(u), b.e_s.row(row));
        assert_eq!(a.e_h1.row(u), b.e_h1.row(row));
        assert_eq!(a.e_h2.row(u), b.e_h2.row(row));
    }
}

#[test]
fn constant_head_predicts_positive_every_time() {
    let ds = dataset();
    let model = bias_only_model(ds.split.full.n_items(), |_| 0.0);
    let history = ds.split.history_for(Split::Test);
    let (correct, total) = polarity_counts(&model, &history, &ds.split.test).unwrap();
    let positives = ds.split.test.sequences.iter().flatten().filter(|e| e.polarity == Polarity::Positive).count();
    let events = ds.split.test.sequences.iter().map(Vec::len).sum::<usize>();
    assert_eq!((correct, total), (positives, events));
}

#[test]
fn report_text_forms() {
    let ds = dataset();
    let model = bias_only_model(ds.split.full.n_items(), |i| i as f64);
    let corr = CorrelationSet::build(&ds.split.train, 2, true).unwrap();
    let rep = evaluate_model(&model, &ds, &corr, Split::Validation, EvalPolicy::default()).unwrap();
    let tsv = rep.to_tsv();
    assert!(tsv.starts_with("recall@5\t"));
    assert!(tsv.contains(&format!("ndcg@20\t{:.6}", rep.ndcg[2])));
    assert!(rep.to_text().contains("split: validation"));
}

#[test]
fn evaluate_rejects_a_foreign_checkpoint() {
    let ds = dataset();
    let config = RunConfig {
        model: cfg(4),
        ..RunConfig::default()
    };
    let ck = Checkpoint {
        params: ModelParams::zeros(&config.model, ds.split.full.n_items()),
        config,
        fingerprint: "not-this-one".into(),
        epoch: 0,
    };
    assert!(matches!(
        evaluate(&ck, &ds, Split::Test, EvalPolicy::default()),
        Err(Error::Provenance(_))
    ));
}

fn parse_table(text: &str) -> Vec<(String, Vec<f64>)> {
    text.lines()
        .map(|l| {
            let mut f = l.split('\t');
            let id = f.next().unwrap().to_string();
            (id, f.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn export_round_trips_and_is_stable() {
    let ds = dataset();
    let c = cfg(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Model::new(c.clone(), ModelParams::init(&c, ds.split.full.n_items(), &mut rng));
    let corr = CorrelationSet::build(&ds.split.train, 2, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = export_representations(&model, &ds, &corr, dir.path()).unwrap();
    let items = parse_table(&std::fs::read_to_string(&paths.items).unwrap());
    let want = model.item_representations(&corr).unwrap();
    assert_eq!(items.len(), want.nrows());
    for (row, (id, vals)) in items.iter().enumerate() {
        assert_eq!(id, &ds.split.full.maps.item_ids[row]);
        assert_eq!(vals.as_slice(), want.row(row).as_slice().unwrap());
    }
    let seq = parse_table(&std::fs::read_to_string(&paths.user_sequential).unwrap());
    assert_eq!(seq.len(), ds.split.full.n_users());
    assert!(seq.iter().all(|(_, v)| v.len() == 5));

    let again = tempfile::tempdir().unwrap();
    let p2 = export_representations(&model, &ds, &corr, again.path()).unwrap();
    for (a, b) in [
        (&paths.items, &p2.items),
        (&paths.user_sequential, &p2.user_sequential),
        (&paths.user_structural, &p2.user_structural),
    ] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}

#[test]
fn ablation_suite_fills_both_tables() {
    let ds = dataset();
    let mut base = RunConfig::default();
    base.model.d_model = 8;
    base.model.n_mci = 2;
    base.train.epochs = 2;
    let t = ablation_suite(&ds, &base, Split::Test).unwrap();
    assert_eq!(t.row_count(), 8);
    let labels: Vec<&str> = t.ablations.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["w/o Seq", "w/o Gra1", "w/o Gra2", "full"]);
    let orders: Vec<usize> = t.orders.iter().map(|r| r.order).collect();
    assert_eq!(orders, [1, 2, 3, 4]);
    assert_eq!(t.orders[1].report, t.full().unwrap().report);
    let text = t.to_text();
    assert!(text.contains("w/o Gra2") && text.contains("4-Order"));
    assert_eq!(t.to_tsv().lines().count(), 9);
}
