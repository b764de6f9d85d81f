use proptest::prelude::*;

use mbe_core::corpus::{self, classify, Gender, ParallelCorpus, WordList};
use mbe_core::model_protocol::{mock_score, parse_records, write_records, Group, MockSpec, ModelRecord};
use mbe_core::paired_eval::{generate_templates, paired_bias_score, TemplateSpec, GENDER_SLOT, OCCUPATION_SLOT};
use mbe_core::scoring::{mbe_score, score_with_weights, ScoreConfig};
use mbe_core::stats::{correlations, diff_stats, direction_agreement, McNemarTally};

const VOCAB: &[&str] = &[
    "he", "she", "her", "his", "the", "theme", "hershey", "man", "woman", "nurse", "doctor", "shell", "himself", "a",
    "is", "mother", "son",
];

fn word_lists() -> (WordList, WordList) {
    (
        WordList::new("f", ["she", "her", "woman", "mother"]).unwrap(),
        WordList::new("m", ["he", "his", "man", "himself", "son"]).unwrap(),
    )
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB), 1..8).prop_map(|w| w.join(" "))
}

fn corpus_of(english: &[String]) -> ParallelCorpus {
    ParallelCorpus::from_pairs("p", "xx", english.iter().enumerate().map(|(i, e)| (e.clone(), format!("t{i}")))).0
}

fn record(aula_value: f64, embedding: Vec<f64>) -> ModelRecord {
    ModelRecord {
        id: "r".into(),
        group: None,
        text: "x".into(),
        tokens: vec!["x".into()],
        token_logprobs: vec![aula_value],
        attentions: vec![1.0],
        embedding,
    }
}

fn mock_set(texts: &[String], group: Group, spec: &MockSpec) -> Vec<ModelRecord> {
    texts.iter().map(|t| mock_score(t, Some(group), spec).unwrap()).collect()
}

fn word_texts(prefix: &'static str) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(0u16..500, 1..12), 2..12).prop_map(move |v| {
        v.into_iter().map(|ws| ws.iter().map(|w| format!("{prefix}{w}")).collect::<Vec<_>>().join(" ")).collect()
    })
}

proptest! {
    #[test]
    fn extraction_partitions_corpus(english in prop::collection::vec(sentence(), 1..30)) {
        let (f, m) = word_lists();
        let s = corpus::extract_gendered(&corpus_of(&english), &f, &m).unwrap();
        let labels: Vec<_> = english.iter().map(|e| classify(e, &f, &m)).collect();
        let females = labels.iter().filter(|l| **l == Some(Gender::Female)).count();
        let males = labels.iter().filter(|l| **l == Some(Gender::Male)).count();
        prop_assert_eq!(s.female.len(), females);
        prop_assert_eq!(s.male.len(), males);
        for p in &s.female {
            prop_assert!(!s.male.contains(p));
        }
        // order preserved: targets carry the source index
        let idx = |v: &[corpus::SentencePair]| v.iter().map(|p| p.target[1..].parse::<usize>().unwrap()).collect::<Vec<_>>();
        prop_assert!(idx(&s.female).windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx(&s.male).windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn extraction_ignores_case(english in prop::collection::vec(sentence(), 1..20)) {
        let (f, m) = word_lists();
        let upper: Vec<String> = english.iter().map(|e| e.to_uppercase()).collect();
        let a = corpus::extract_gendered(&corpus_of(&english), &f, &m).unwrap();
        let b = corpus::extract_gendered(&corpus_of(&upper), &f, &m).unwrap();
        let targets = |v: &[corpus::SentencePair]| v.iter().map(|p| p.target.clone()).collect::<Vec<_>>();
        prop_assert_eq!(targets(&a.female), targets(&b.female));
        prop_assert_eq!(targets(&a.male), targets(&b.male));
    }

    #[test]
    fn balance_equalizes_with_subsets(nf in 1usize..40, nm in 1usize..40, seed in any::<u64>()) {
        let (f, m) = word_lists();
        let english: Vec<String> = (0..nf).map(|i| format!("she {i}")).chain((0..nm).map(|i| format!("he {i}"))).collect();
        let s = corpus::extract_gendered(&corpus_of(&english), &f, &m).unwrap();
        let b = corpus::downsample_balance(&s, seed).unwrap();
        prop_assert_eq!(b.female.len(), nf.min(nm));
        prop_assert_eq!(b.male.len(), nf.min(nm));
        prop_assert!(b.female.iter().all(|p| s.female.contains(p)));
        prop_assert!(b.male.iter().all(|p| s.male.contains(p)));
        prop_assert_eq!(b, corpus::downsample_balance(&s, seed).unwrap());
    }

    #[test]
    fn records_round_trip_losslessly(texts in word_texts("w"), seed in any::<u64>(), b in -1.0f64..1.0) {
        let spec = MockSpec { bias_strength: b, embed_dim: 7, seed };
        let recs = mock_set(&texts, Group::Male, &spec);
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        prop_assert_eq!(parse_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn score_is_scale_invariant(m in word_texts("m"), f in word_texts("f"), k in 0.01f64..1000.0) {
        let spec = MockSpec { bias_strength: 0.0, embed_dim: 6, seed: 3 };
        let (m, f) = (mock_set(&m, Group::Male, &spec), mock_set(&f, Group::Female, &spec));
        let scale = |v: &[ModelRecord]| -> Vec<ModelRecord> {
            v.iter().cloned().map(|mut r| { r.embedding.iter_mut().for_each(|x| *x *= k); r }).collect()
        };
        let cfg = ScoreConfig::default();
        if let (Ok(a), Ok(b)) = (mbe_score(&m, &f, &cfg), mbe_score(&scale(&m), &scale(&f), &cfg)) {
            prop_assert!((a.score - b.score).abs() <= 1e-9);
        }
    }

    #[test]
    fn swap_antisymmetry_without_ties(
        am in prop::collection::vec(-10.0f64..0.0, 1..10),
        af in prop::collection::vec(-10.0f64..0.0, 1..10),
    ) {
        prop_assume!(am.iter().all(|x| !af.contains(x)));
        let w = |i: usize, j: usize| 0.1 + ((i * 7 + j * 13) % 10) as f64 / 10.0;
        let cfg = ScoreConfig::default();
        let mf = score_with_weights(&am, &af, w, &cfg).unwrap();
        let fm = score_with_weights(&af, &am, |i, j| w(j, i), &cfg).unwrap();
        prop_assert!((mf.score + fm.score - 100.0).abs() <= 1e-9);
    }

    #[test]
    fn constant_weights_count_indicators(
        am in prop::collection::vec(-5.0f64..0.0, 1..12),
        af in prop::collection::vec(-5.0f64..0.0, 1..12),
    ) {
        let r = score_with_weights(&am, &af, |_, _| 1.0, &ScoreConfig::default()).unwrap();
        let expected = 100.0 * r.indicator_count as f64 / r.pair_count as f64;
        prop_assert!((r.score - expected).abs() <= 1e-9);
        prop_assert!(r.indicator_count <= r.pair_count);
    }

    #[test]
    fn score_monotone_in_bias(m in word_texts("m"), f in word_texts("f"), lo in -1.0f64..1.0, step in 0.0f64..1.0) {
        let score = |b: f64| {
            let spec = MockSpec { bias_strength: b, embed_dim: 5, seed: 17 };
            mbe_score(&mock_set(&m, Group::Male, &spec), &mock_set(&f, Group::Female, &spec), &ScoreConfig::default())
        };
        if let (Ok(a), Ok(b)) = (score(lo), score(lo + step)) {
            prop_assert!(a.score <= b.score, "{} > {}", a.score, b.score);
        }
    }

    #[test]
    fn paired_score_is_k_over_n_and_order_free(values in prop::collection::vec((-5.0f64..0.0, -5.0f64..0.0), 1..30)) {
        let s: Vec<_> = values.iter().map(|(a, _)| record(*a, vec![1.0])).collect();
        let a: Vec<_> = values.iter().map(|(_, b)| record(*b, vec![1.0])).collect();
        let r = paired_bias_score(s.iter().zip(&a)).unwrap();
        prop_assert_eq!(r.score, 100.0 * r.indicator_count as f64 / values.len() as f64);
        let rev = paired_bias_score(s.iter().zip(&a).rev()).unwrap();
        prop_assert_eq!(r.score, rev.score);
    }

    #[test]
    fn spearman_survives_monotone_transforms(xs in prop::collection::vec(-3.0f64..3.0, 3..20), ys in prop::collection::vec(-3.0f64..3.0, 3..20)) {
        let n = xs.len().min(ys.len());
        let (xs, ys) = (&xs[..n], &ys[..n]);
        if let Ok(c) = correlations(xs, ys) {
            let tx: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let t = correlations(&tx, ys).unwrap();
            prop_assert!((c.spearman_rho - t.spearman_rho).abs() < 1e-9);
            let ax: Vec<f64> = xs.iter().map(|x| 2.5 * x + 7.0).collect();
            let a = correlations(&ax, ys).unwrap();
            prop_assert!((c.pearson_r - a.pearson_r).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&c.pearson_r) && (0.0..=1.0).contains(&c.pearson_p));
        }
    }

    #[test]
    fn direction_and_diff_symmetries(pairs in prop::collection::vec((40.0f64..60.0, 40.0f64..60.0), 1..20)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert_eq!(direction_agreement(&a, &b).unwrap(), direction_agreement(&b, &a).unwrap());
        let d1 = diff_stats(&a, &b).unwrap();
        let d2 = diff_stats(&b, &a).unwrap();
        prop_assert!((d1.signed_mean + d2.signed_mean).abs() < 1e-9);
        prop_assert!((d1.abs_mean - d2.abs_mean).abs() < 1e-9);
    }

    #[test]
    fn mcnemar_blind_to_concordant_cells(b in 0u64..100, c in 0u64..100, both in 0u64..100, neither in 0u64..100) {
        let x = McNemarTally::from_counts(b, c, both, neither).test(false);
        let y = McNemarTally::from_counts(b, c, neither, both).test(false);
        prop_assert_eq!(x.statistic, y.statistic);
        prop_assert!(x.statistic >= 0.0 && (0.0..=1.0).contains(&x.p_value));
    }

    #[test]
    fn templates_leave_no_placeholders(occupations in prop::collection::vec("[a-z]{1,8}", 1..6)) {
        let spec = TemplateSpec {
            templates: vec!["[Gender] is a [Occupation].".into(), "The [Occupation] said [Gender] left.".into()],
            gender_pairs: vec![("he".into(), "she".into()), ("my father".into(), "my mother".into())],
            occupations,
        };
        let out = generate_templates(&spec).unwrap();
        prop_assert_eq!(out.len(), spec.combinations());
        for p in &out {
            for s in [&p.male, &p.female] {
                prop_assert!(!s.contains(GENDER_SLOT) && !s.contains(OCCUPATION_SLOT));
            }
        }
    }
}
