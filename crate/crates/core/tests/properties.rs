use std::collections::HashSet;

use proptest::prelude::*;

use synee::align::{
    decode_labels, encode_labels, gold_spans, ClassSpan, LabelScheme, Subtask, Tokenizer, WordPieceVocab,
};
use synee::annotate::AnnotationCache;
use synee::corpus::{resplit_dev, EventRecord, EventSchema, RawSentence};
use synee::eval::{pair_f1, prf, MatchCounts};
use synee::fixture;
use synee::graph::{build_graph, DependencyGraph};

fn sentence(id: usize) -> RawSentence {
    RawSentence {
        id: format!("d{id}"),
        text: format!("句{id}"),
        events: Vec::new(),
    }
}

proptest! {
    #[test]
    fn adding_a_true_positive_never_lowers_scores(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let a = prf(MatchCounts::new(tp, fp, fn_));
        let b = prf(MatchCounts::new(tp + 1, fp, fn_));
        prop_assert!(b.precision >= a.precision);
        prop_assert!(b.recall >= a.recall);
        prop_assert!(b.f1 >= a.f1);
    }

    #[test]
    fn pair_f1_is_symmetric(a in "[aAbB甲乙]{1,6}", b in "[aAbB甲乙]{1,6}") {
        prop_assert_eq!(pair_f1(&a, &b), pair_f1(&b, &a));
    }

    #[test]
    fn resplit_is_a_pure_partition(n in 0usize..60) {
        let dev: Vec<RawSentence> = (0..n).map(sentence).collect();
        let (v1, t1) = resplit_dev(dev.clone());
        let (v2, t2) = resplit_dev(dev.clone());
        prop_assert_eq!(serde_json::to_string(&(&v1, &t1)).unwrap(), serde_json::to_string(&(&v2, &t2)).unwrap());
        let ids = |s: &[RawSentence]| s.iter().map(|x| x.id.clone()).collect::<HashSet<_>>();
        prop_assert!(ids(&v1).is_disjoint(&ids(&t1)));
        let union: HashSet<String> = ids(&v1).union(&ids(&t1)).cloned().collect();
        prop_assert_eq!(union, ids(&dev));
        prop_assert_eq!(v1.len(), n / 3);
    }

    #[test]
    fn scheme_size_is_one_plus_three_per_class(types in proptest::collection::btree_set("[a-e]{1,3}", 1..6)) {
        let entries: Vec<(String, Vec<String>)> =
            types.iter().map(|t| (t.clone(), vec![format!("r{}", t.len()), "时间".to_string()])).collect();
        let schema = EventSchema::from_entries(entries);
        let roles: HashSet<usize> = types.iter().map(|t| t.len()).collect();
        prop_assert_eq!(LabelScheme::for_schema(Subtask::Trigger, &schema).len(), 1 + 3 * types.len());
        prop_assert_eq!(LabelScheme::for_schema(Subtask::Role, &schema).len(), 1 + 3 * (roles.len() + 1));
    }

    #[test]
    fn decode_inverts_encode_for_kept_spans(
        text in "[甲乙丙丁戊己abc 。]{1,24}",
        spans in proptest::collection::vec((0usize..24, 1usize..5, 0usize..3), 0..6),
        max_len in 4usize..30,
    ) {
        let chars: Vec<char> = text.chars().collect();
        let classes = ["X", "Y", "Z"];
        let events: Vec<EventRecord> = spans
            .iter()
            .filter(|(s, l, _)| s + l <= chars.len())
            .map(|&(s, l, c)| EventRecord {
                event_type: classes[c].to_string(),
                trigger_text: chars[s..s + l].iter().collect(),
                trigger_start: s,
                arguments: Vec::new(),
            })
            .filter(|e| !e.trigger_text.trim().is_empty() && e.trigger_text.trim() == e.trigger_text)
            .collect();
        let s = RawSentence { id: "p".into(), text: text.clone(), events };
        let tokenizer = Tokenizer::new(WordPieceVocab::build([text.as_str()]), max_len).unwrap();
        let Ok(tokens) = tokenizer.tokenize(&text) else { return Ok(()) };
        let scheme = LabelScheme::new(Subtask::Trigger, classes.iter().map(|c| c.to_string()));
        let (labels, rep) = encode_labels(&s, &tokens, &scheme);
        prop_assert_eq!(labels.label_ids.len(), tokens.len());
        prop_assert_eq!(
            rep.encoded.len() + rep.dropped_overlap.len() + rep.dropped_truncated.len(),
            gold_spans(&s, Subtask::Trigger).len()
        );
        let mut decoded = decode_labels(&labels.label_ids, &tokens, &scheme);
        decoded.sort();
        let mut expected: Vec<ClassSpan> = rep
            .encoded
            .iter()
            .map(|sp| {
                let covered: Vec<usize> = tokens
                    .content()
                    .filter(|&t| tokens.char_spans[t].0 < sp.end && tokens.char_spans[t].1 > sp.start)
                    .collect();
                ClassSpan {
                    class: sp.class.clone(),
                    start: tokens.char_spans[covered[0]].0,
                    end: tokens.char_spans[*covered.last().unwrap()].1,
                }
            })
            .collect();
        expected.sort();
        prop_assert_eq!(decoded, expected);
        for (t, &special) in tokens.special_mask.iter().enumerate() {
            if special {
                prop_assert_eq!(labels.label_ids[t], 0);
            }
        }
    }

    #[test]
    fn normalized_adjacency_matches_dense_formula(
        n in 1usize..10,
        raw in proptest::collection::vec((0usize..10, 0usize..10), 0..20),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().filter(|&(a, b)| a < n && b < n).collect();
        let g = DependencyGraph::from_edges(n, &edges, vec![0; n]);
        let mut a = vec![vec![0.0f64; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(x, y) in &edges {
            a[x][y] = 1.0;
            a[y][x] = 1.0;
        }
        let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let want = a[i][j] / (d[i] * d[j]).sqrt();
                prop_assert!((g.entry(i, j) - want).abs() < 1e-9);
                prop_assert_eq!(g.entry(i, j), g.entry(j, i));
            }
        }
    }
}

#[test]
fn fixture_spans_and_trees_are_valid() {
    let corpus = fixture::corpus(64, 5);
    for s in &corpus.sentences {
        s.validate_spans().unwrap();
        let ann = &corpus.annotations[&s.id];
        ann.validate(&s.text).unwrap();
        let heads = ann.heads().unwrap();
        assert_eq!(heads.iter().filter(|h| h.is_none()).count(), 1);
        assert_eq!(ann.dep_edges.len(), ann.words.len());
    }
}

#[test]
fn built_graphs_are_normalized_and_connected_to_heads() {
    let corpus = fixture::corpus(30, 2);
    let (_, records) = corpus.prepare(128);
    for r in &records {
        let g = build_graph(&r.features);
        assert_eq!(g.n, r.len());
        for t in 0..g.n {
            let first_of_word = t == 0 || r.features.word_index[t - 1] != r.features.word_index[t];
            if first_of_word && r.features.head_token[t] >= 0 {
                assert!(g.entry(t, r.features.head_token[t] as usize) > 0.0);
            }
            let row: f64 = (0..g.n).map(|j| g.entry(t, j)).sum();
            assert!(row > 0.0);
        }
    }
}

#[test]
fn cached_annotations_survive_reopening() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let corpus = fixture::corpus(6, 1);
    let cache = AnnotationCache::open(&path).unwrap();
    for s in &corpus.sentences {
        cache.put(&s.id, "v1", &s.text, &corpus.annotations[&s.id]).unwrap();
    }
    cache.flush().unwrap();
    drop(cache);
    let reopened = AnnotationCache::open(&path).unwrap();
    assert_eq!(reopened.len(), corpus.sentences.len());
    for s in &corpus.sentences {
        assert_eq!(reopened.get(&s.id, "v1").as_ref(), Some(&corpus.annotations[&s.id]));
        assert!(reopened.get(&s.id, "v2").is_none());
    }
}
