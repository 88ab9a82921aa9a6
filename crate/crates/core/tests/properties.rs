use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use met_core::fusion::{fuse, hits_at_n, FusionWeights, RankedList};
use met_core::kb::{Entity, EntityId, KnowledgeBase, VectorStore};
use met_core::matchers::{
    ibm_score, normalize_score, tbm_score, tcm_score, BiEncoder, Lexicon, MatcherKind, PrecomputedTextEmbeddings,
    ScoreVector, ScorerBindings, TextPair, TextPairScorer, ToyTextEncoder,
};
use met_core::retrieval::{pair_image_candidate, pair_text_candidate, Pairing};
use met_core::text_index::{tokenize, Bm25Params, TextIndex};
use proptest::prelude::*;

fn toy() -> ScorerBindings {
    ScorerBindings::toy(Lexicon::new(2, []), Arc::new(VectorStore::empty(2)))
}

fn brute_bm25(docs: &[Vec<String>], q: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|d| {
            q.iter()
                .map(|t| {
                    let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                    let tf = d.iter().filter(|x| *x == t).count() as f64;
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg))
                })
                .sum()
        })
        .collect()
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen"]).prop_map(str::to_string)
}

proptest! {
    #[test]
    fn bm25_matches_brute_force(
        glosses in prop::collection::vec(prop::collection::vec(word(), 1..8), 1..25),
        query in prop::collection::vec(word(), 1..4),
        k1 in 0.5f64..2.0,
        b in 0.0f64..1.0,
    ) {
        let entities = glosses
            .iter()
            .enumerate()
            .map(|(i, g)| Entity { id: EntityId::new(format!("e{i:03}")), glosses: vec![g.join(" ")], image_ids: vec![] })
            .collect();
        let kb = KnowledgeBase::new(entities, VectorStore::empty(1)).unwrap();
        let idx = TextIndex::build(&kb, Bm25Params { k1, b });
        let want = brute_bm25(&glosses, &query, k1, b);
        let terms = tokenize(&query.join(" "));
        for (d, w) in want.iter().enumerate() {
            let got = idx.bm25_score(&terms, d as u32).unwrap();
            prop_assert!((got - w).abs() <= 1e-9, "doc {} got {} want {}", d, got, w);
        }
        let hits = idx.search(&query.join(" "), glosses.len());
        prop_assert_eq!(hits.len(), want.iter().filter(|&&s| s > 0.0).count());
        for pair in hits.windows(2) {
            prop_assert!(pair[0].score > pair[1].score || (pair[0].score == pair[1].score && pair[0].doc < pair[1].doc));
        }
    }

    #[test]
    fn normalised_scores_in_unit_interval(raw in -1e6f64..1e6, kind in 0usize..4) {
        let k = MatcherKind::ALL[kind];
        let v = normalize_score(k, raw).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn toy_text_scores_symmetric_and_bounded(a in "[a-e ]{0,20}", b in "[a-e ]{0,20}") {
        let bind = toy();
        let ab = tbm_score(&a, &b, &bind).unwrap();
        prop_assert_eq!(ab, tbm_score(&b, &a, &bind).unwrap());
        if let Some(s) = ab {
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
            prop_assert!((0.0..=1.0).contains(&normalize_score(MatcherKind::Tbm, s).unwrap()));
        }
        if let Some(s) = tcm_score(&a, &b, &bind).unwrap() {
            prop_assert!((0.0..=1.0).contains(&normalize_score(MatcherKind::Tcm, s).unwrap()));
        }
    }

    #[test]
    fn ibm_symmetric_and_bounded(v in prop::collection::vec(-5.0f32..5.0, 6), w in prop::collection::vec(-5.0f32..5.0, 6)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3) && w.iter().any(|x| x.abs() > 1e-3));
        let s = ibm_score(&v, &w).unwrap();
        prop_assert_eq!(s, ibm_score(&w, &v).unwrap());
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
        prop_assert!((0.0..=1.0).contains(&normalize_score(MatcherKind::Ibm, s).unwrap()));
    }

    #[test]
    fn precomputed_table_matches_live_encoder(texts in prop::collection::vec("[a-h]{1,4}( [a-h]{1,4}){0,5}", 2..10)) {
        let enc = ToyTextEncoder::default();
        let table = PrecomputedTextEmbeddings::from_encoder(&enc, texts.iter().map(String::as_str));
        let pairs: Vec<TextPair> = texts
            .iter()
            .flat_map(|a| texts.iter().map(move |b| TextPair { query: a, evidence: b }))
            .collect();
        let live = BiEncoder(enc).score_text_pairs(&pairs).unwrap();
        let cached = BiEncoder(table).score_text_pairs(&pairs).unwrap();
        for (l, c) in live.iter().zip(&cached) {
            match (l, c) {
                (Some(l), Some(c)) => prop_assert!((l - c).abs() <= 1e-6),
                _ => prop_assert_eq!(l, c),
            }
        }
    }

    #[test]
    fn mvec_round_trip(
        rows in prop::collection::btree_map("[a-z0-9_-]{1,12}", prop::collection::vec(any::<f32>(), 3), 0..20)
    ) {
        let s = VectorStore::from_records(3, rows.clone()).unwrap();
        let back = VectorStore::from_bytes(&s.to_bytes(), Path::new("p")).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (id, v) in &rows {
            let got = back.get(id).unwrap();
            prop_assert!(got.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn hits_never_decrease_with_n(ranks in prop::collection::vec(prop::option::of(1usize..60), 1..30)) {
        let ranked: Vec<(RankedList, Option<EntityId>)> = ranks
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let entries = (1..=60).map(|j| (EntityId::new(format!("e{j:02}")), -(j as f64))).collect();
                let gold = match r {
                    Some(r) => EntityId::new(format!("e{r:02}")),
                    None => EntityId::new("none"),
                };
                (RankedList { query_id: format!("q{i}"), entries }, Some(gold))
            })
            .collect();
        let ns: Vec<usize> = (1..=70).collect();
        let h = hits_at_n(&ranked, &ns).unwrap();
        for w in h.hits.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn fusion_is_linear(s in prop::array::uniform4(0.0f64..1.0), w in prop::array::uniform4(0.0f64..1.0), c in 0.1f64..10.0) {
        prop_assume!(w.iter().any(|&x| x > 0.0));
        let sv = ScoreVector::new(s);
        let a = fuse(&sv, &FusionWeights(w)).unwrap();
        let b = fuse(&sv, &FusionWeights(w.map(|x| x * c))).unwrap();
        prop_assert!((a * c - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn random_pairing_is_uniform_and_first_is_stable() {
    let v = VectorStore::from_records(1, (0..3).map(|i| (format!("x{i}"), vec![1.0]))).unwrap();
    let e = Entity {
        id: EntityId::new("x"),
        glosses: vec!["a".into(), "b".into(), "c".into()],
        image_ids: vec!["x0".into(), "x1".into(), "x2".into()],
    };
    let kb = KnowledgeBase::new(vec![e], v).unwrap();
    let id = EntityId::new("x");
    let mut images: BTreeMap<String, usize> = BTreeMap::new();
    let mut glosses: BTreeMap<usize, usize> = BTreeMap::new();
    let n = 3000;
    for seed in 0..n as u64 {
        let img = pair_text_candidate(&kb, &id, Pairing::Random(seed)).unwrap().unwrap();
        *images.entry(img.to_string()).or_default() += 1;
        let g = pair_image_candidate(&kb, &id, Pairing::Random(seed)).unwrap().unwrap();
        *glosses.entry(g).or_default() += 1;
        assert_eq!(pair_text_candidate(&kb, &id, Pairing::Random(seed)).unwrap().unwrap(), img);
    }
    for c in images.values().chain(glosses.values()) {
        let f = *c as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.05, "frequency {f}");
    }
    assert_eq!(images.len(), 3);
    assert_eq!(pair_text_candidate(&kb, &id, Pairing::First).unwrap(), Some("x0"));
    assert_eq!(pair_image_candidate(&kb, &id, Pairing::First).unwrap(), Some(0));
}
