use std::collections::BTreeMap;

use enttype::config::RunConfig;
use enttype::eval::{self, SliceConfig};
use enttype::kb::Split;
use enttype::models::{self, Provenance};
use enttype::pipeline::Pipeline;
use enttype::syngen::{self, SynSpec};
use proptest::prelude::*;

#[test]
fn mft_precision_is_frequency_of_top_train_type() {
    for seed in 1..=5 {
        let spec = SynSpec {
            num_types: 6,
            entities_per_type: 30,
            mentions_per_entity: 2.0,
            seed,
            ..SynSpec::default()
        };
        let (_, kb) = syngen::generate(spec).unwrap();
        let kb = kb.split_entities((0.5, 0.2, 0.3), seed).unwrap();

        let mut counts = vec![0usize; kb.types().len()];
        for e in kb.entities_in(Split::Train) {
            for &t in &kb.entity(e).unwrap().types {
                counts[t] += 1;
            }
        }
        let max = *counts.iter().max().unwrap();
        let top = counts.iter().position(|&c| c == max).unwrap();
        let test = kb.entities_in(Split::Test);
        let expected =
            test.iter().filter(|e| kb.is_member(e, top)).count() as f64 / test.len() as f64;

        let m = models::score_mft(&kb, &test).unwrap();
        let scores: Vec<Option<Vec<f64>>> =
            test.iter().map(|e| m.row(e).map(<[f64]>::to_vec)).collect();
        let gold: Vec<Vec<bool>> = test
            .iter()
            .map(|e| (0..kb.types().len()).map(|t| kb.is_member(e, t)).collect())
            .collect();
        assert_eq!(
            eval::precision_at_1(&scores, &gold).unwrap(),
            expected,
            "seed {seed}"
        );
    }
}

fn matrix(e: usize, t: usize) -> impl Strategy<Value = (Vec<Option<Vec<f64>>>, Vec<Vec<bool>>)> {
    (
        prop::collection::vec(
            prop::option::weighted(0.9, prop::collection::vec(0.0..1.0f64, t)),
            e,
        ),
        prop::collection::vec(prop::collection::vec(any::<bool>(), t), e),
    )
}

fn transform(scores: &[Option<Vec<f64>>], f: impl Fn(usize, f64) -> f64) -> Vec<Option<Vec<f64>>> {
    scores
        .iter()
        .map(|s| {
            s.as_ref()
                .map(|s| s.iter().enumerate().map(|(t, &v)| f(t, v)).collect())
        })
        .collect()
}

proptest! {
    #[test]
    fn classification_is_invariant_under_monotone_maps(
        (dev, dev_gold) in matrix(12, 4),
        (test, test_gold) in matrix(9, 4),
    ) {
        // a different strictly increasing map per type
        let f = |t: usize, v: f64| match t % 4 {
            0 => v.powi(3) + 2.0 * v,
            1 => (3.0 * v).exp(),
            2 => 10.0 * v - 4.0,
            _ => v.atan(),
        };
        let th = eval::select_thresholds(&dev, &dev_gold).unwrap();
        let mapped_th: Vec<f64> = th.iter().enumerate().map(|(t, &x)| if x.is_finite() { f(t, x) } else { x }).collect();
        let base = eval::classification_metrics(&eval::assign(&test, &th), &test_gold).unwrap();
        let mapped = eval::classification_metrics(&eval::assign(&transform(&test, f), &mapped_th), &test_gold).unwrap();
        prop_assert_eq!(base, mapped);

        // thresholds re-selected on the mapped dev set choose the same dev
        // assignments
        let dev_f = transform(&dev, f);
        let th_f = eval::select_thresholds(&dev_f, &dev_gold).unwrap();
        prop_assert_eq!(eval::assign(&dev, &th), eval::assign(&dev_f, &th_f));
        prop_assert_eq!(
            eval::precision_at_1(&test, &test_gold).unwrap(),
            eval::precision_at_1(&transform(&test, |_, v| v.exp()), &test_gold).unwrap()
        );
    }

    #[test]
    fn metrics_stay_in_unit_interval((scores, gold) in matrix(6, 5), th in prop::collection::vec(0.0..1.0f64, 5)) {
        let p1 = eval::precision_at_1(&scores, &gold).unwrap();
        let bep = eval::breakeven_point(&scores, &gold).unwrap();
        let m = eval::classification_metrics(&eval::assign(&scores, &th), &gold).unwrap();
        for v in [p1, bep, m.strict_accuracy, m.micro_f1, m.entity_macro_f1, m.type_macro_f1.unwrap_or(0.5)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn uninformative_corpus_reduces_joint_model_to_prior() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = RunConfig {
        run_dir: root.join("run"),
        corpus: root.join("data/corpus.jsonl"),
        entity_file: root.join("data/entities.tsv"),
        type_file: root.join("data/types.txt"),
        syn_informativeness: 0.0,
        syn_entities_per_type: 60,
        syn_mentions_per_entity: 20.0,
        gm_emb_dim: 20,
        cm_emb_dim: 20,
        emb_min_count: 1,
        emb_epochs: 2,
        h_gm: 20,
        h_cm: 20,
        min_per_type: 300,
        max_per_type: 600,
        ..RunConfig::default()
    };
    let p = Pipeline::new(cfg).unwrap();
    p.generate_synthetic().unwrap();
    let reports = p.run_all().unwrap();
    let jm = reports[&Provenance::Jm].precision_at_1;
    let mft = reports[&Provenance::Mft].precision_at_1;
    assert!((jm - mft).abs() <= 0.05, "JM {jm} vs MFT {mft}");
}

#[test]
fn evaluate_refuses_overlapping_dev_and_test() {
    let spec = SynSpec {
        num_types: 3,
        entities_per_type: 5,
        mentions_per_entity: 1.0,
        ..SynSpec::default()
    };
    let (_, kb) = syngen::generate(spec).unwrap();
    let kb = kb.split_entities((0.4, 0.3, 0.3), 1).unwrap();
    let mut dev = kb.entities_in(Split::Dev);
    let test = kb.entities_in(Split::Test);
    dev.push(test[0]);
    let d = models::score_mft(&kb, &dev).unwrap();
    let t = models::score_mft(&kb, &test).unwrap();
    let err = eval::evaluate(
        &d,
        &t,
        &kb,
        &BTreeMap::new(),
        SliceConfig::default(),
        BTreeMap::new(),
    )
    .unwrap_err();
    assert!(err.is_validation());
}
