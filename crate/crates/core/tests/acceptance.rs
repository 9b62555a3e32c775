//! Acceptance gate. Each test prints one `criterion N ...: PASS|FAIL` line.
//!
//! Set `DUEE_DIR` to a directory holding the DuEE `train.json` to run the
//! alignment round trip over the real training split as well.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use num_rational::Ratio;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synee::align::{
    decode_labels, encode_labels, gold_spans, preprocess_sentence, ClassSpan, LabelScheme, Subtask, TokenSequence,
    Tokenizer, WordPieceVocab,
};
use synee::corpus::{read_duee_file, ArgumentRecord, EventRecord, RawSentence};
use synee::eval::{f1_from_counts, prf, score_dataset, MatchCounts};
use synee::fixture;
use synee::graph::{gcn_layer, DependencyGraph, GcnLayerParams, GcnStack};
use synee::model::{
    events_from_labels, train_subtask, Batch, ChannelConfig, EncoderConfig, ModelConfig, ModelVariant, TaggerModel,
    TrainConfig,
};

fn report(n: u8, name: &str, outcome: Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("criterion {n} {name}: PASS ({detail})"),
        Err(why) => format!("criterion {n} {name}: FAIL ({why})"),
    };
    // Written to the raw handle so the line shows even with captured output.
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(why) = outcome {
        panic!("criterion {n} failed: {why}");
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- criterion 1

const ALPHABET: [char; 7] = ['a', 'A', 'b', 'B', '甲', '乙', '丙'];

fn random_text(rng: &mut ChaCha8Rng, pool: &[String]) -> String {
    if !pool.is_empty() && rng.random_bool(0.3) {
        return pool.choose(rng).unwrap().clone();
    }
    let len = rng.random_range(1..=6);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn random_mentions(rng: &mut ChaCha8Rng, pool: &mut Vec<String>) -> Vec<String> {
    let n = rng.random_range(0..=4);
    (0..n)
        .map(|_| {
            let t = random_text(rng, pool);
            pool.push(t.clone());
            t
        })
        .collect()
}

fn trigger_events(by_type: &[(&str, Vec<String>)]) -> Vec<EventRecord> {
    by_type
        .iter()
        .flat_map(|(ty, texts)| {
            texts.iter().map(move |t| EventRecord {
                event_type: ty.to_string(),
                trigger_text: t.clone(),
                trigger_start: 0,
                arguments: Vec::new(),
            })
        })
        .collect()
}

/// One carrier event per type holding every argument of that type.
fn role_events(by_type: &[(&str, Vec<(&str, String)>)]) -> Vec<EventRecord> {
    by_type
        .iter()
        .map(|(ty, args)| EventRecord {
            event_type: ty.to_string(),
            trigger_text: "t".into(),
            trigger_start: 0,
            arguments: args
                .iter()
                .map(|(role, text)| ArgumentRecord {
                    role: role.to_string(),
                    text: text.clone(),
                    start: 0,
                })
                .collect(),
        })
        .collect()
}

fn micro_corpus(rng: &mut ChaCha8Rng, subtask: Subtask) -> (Vec<RawSentence>, Vec<RawSentence>) {
    let n = rng.random_range(1..=4);
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for i in 0..n {
        let mut pool = Vec::new();
        let (p, g) = match subtask {
            Subtask::Trigger => {
                let mut p = Vec::new();
                let mut g = Vec::new();
                for ty in ["T1", "T2"] {
                    g.push((ty, random_mentions(rng, &mut pool)));
                    p.push((ty, random_mentions(rng, &mut pool)));
                }
                (trigger_events(&p), trigger_events(&g))
            }
            Subtask::Role => {
                let mut p = Vec::new();
                let mut g = Vec::new();
                for ty in ["T1", "T2"] {
                    let mut pa = Vec::new();
                    let mut ga = Vec::new();
                    for role in ["r1", "r2"] {
                        ga.extend(random_mentions(rng, &mut pool).into_iter().map(|t| (role, t)));
                        pa.extend(random_mentions(rng, &mut pool).into_iter().map(|t| (role, t)));
                    }
                    g.push((ty, ga));
                    p.push((ty, pa));
                }
                (role_events(&p), role_events(&g))
            }
        };
        let id = format!("s{i}");
        preds.push(RawSentence {
            id: id.clone(),
            text: String::new(),
            events: p,
        });
        golds.push(RawSentence {
            id,
            text: String::new(),
            events: g,
        });
    }
    (preds, golds)
}

type Key = (String, Option<String>);

fn oracle_mentions(s: &RawSentence, subtask: Subtask) -> BTreeMap<Key, Vec<Vec<char>>> {
    let mut out: BTreeMap<Key, Vec<Vec<char>>> = BTreeMap::new();
    let fold = |t: &str| -> Vec<char> { t.chars().map(|c| c.to_ascii_lowercase()).collect() };
    for e in &s.events {
        match subtask {
            Subtask::Trigger => out.entry((e.event_type.clone(), None)).or_default().push(fold(&e.trigger_text)),
            Subtask::Role => {
                for a in &e.arguments {
                    out.entry((e.event_type.clone(), Some(a.role.clone())))
                        .or_default()
                        .push(fold(&a.text));
                }
            }
        }
    }
    out
}

/// Shared characters by sorting both sides and merging.
fn oracle_overlap(a: &[char], b: &[char]) -> u64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Enumerates every assignment of predictions to gold mentions and keeps the
/// one where each prediction sits on a best-F1 mention, earliest on ties.
fn oracle_key(preds: &[Vec<char>], golds: &[Vec<char>]) -> (u64, u64, u64) {
    let len = |v: &Vec<char>| v.len() as u64;
    if golds.is_empty() {
        return (0, preds.iter().map(len).sum(), 0);
    }
    let pair = |p: &Vec<char>, g: &Vec<char>| {
        let tp = oracle_overlap(p, g);
        (tp, len(p) - tp, len(g) - tp)
    };
    let f1 = |(tp, fp, fn_): (u64, u64, u64)| Ratio::new(2 * tp, 2 * tp + fp + fn_);
    let k = golds.len();
    let total = k.pow(preds.len() as u32);
    let mut chosen: Option<Vec<usize>> = None;
    for code in 0..total {
        let mut c = code;
        let assign: Vec<usize> = (0..preds.len())
            .map(|_| {
                let g = c % k;
                c /= k;
                g
            })
            .collect();
        let optimal = assign.iter().enumerate().all(|(pi, &gi)| {
            let mine = f1(pair(&preds[pi], &golds[gi]));
            golds.iter().enumerate().all(|(gj, g)| {
                let other = f1(pair(&preds[pi], g));
                other < mine || (other == mine && gj >= gi)
            })
        });
        if optimal {
            assert!(chosen.is_none(), "tie-broken optimum is unique");
            chosen = Some(assign);
        }
    }
    let assign = chosen.expect("an optimal assignment exists");
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (pi, &gi) in assign.iter().enumerate() {
        let (a, b, c) = pair(&preds[pi], &golds[gi]);
        tp += a;
        fp += b;
        fn_ += c;
    }
    for (gi, g) in golds.iter().enumerate() {
        if !assign.contains(&gi) {
            fn_ += len(g);
        }
    }
    (tp, fp, fn_)
}

fn oracle_score(preds: &[RawSentence], golds: &[RawSentence], subtask: Subtask) -> (u64, u64, u64) {
    let mut total = (0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let pm = oracle_mentions(p, subtask);
        let gm = oracle_mentions(g, subtask);
        let mut keys: Vec<&Key> = pm.keys().chain(gm.keys()).collect();
        keys.sort();
        keys.dedup();
        for key in keys {
            let empty = Vec::new();
            let (a, b, c) = oracle_key(pm.get(key).unwrap_or(&empty), gm.get(key).unwrap_or(&empty));
            total.0 += a;
            total.1 += b;
            total.2 += c;
        }
    }
    total
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    let started = Instant::now();
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..200 {
            let subtask = if case % 2 == 0 { Subtask::Trigger } else { Subtask::Role };
            let (preds, golds) = micro_corpus(&mut rng, subtask);
            let got = score_dataset(&preds, &golds, subtask).map_err(|e| e.to_string())?;
            let (tp, fp, fn_) = oracle_score(&preds, &golds, subtask);
            check((got.tp, got.fp, got.fn_) == (tp, fp, fn_), || {
                format!("case {case}: got {got:?}, oracle ({tp}, {fp}, {fn_})")
            })?;
            let exact = if tp + fp + fn_ == 0 {
                0.0
            } else {
                let r = Ratio::new(2 * tp, 2 * tp + fp + fn_);
                *r.numer() as f64 / *r.denom() as f64
            };
            let f1 = prf(got).f1;
            check((f1 - exact).abs() <= 1e-12, || format!("case {case}: F1 {f1} vs {exact}"))?;
        }
        let elapsed = started.elapsed();
        check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
        Ok(format!("200 micro-corpora in {elapsed:.2?}"))
    })();
    report(1, "metric oracle equivalence", outcome);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_f1_identity() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..1000 {
            let max = if i % 2 == 0 { 10 } else { 1_000_000 };
            let draw = |rng: &mut ChaCha8Rng| if rng.random_bool(0.15) { 0 } else { rng.random_range(0..=max) };
            let c = MatchCounts::new(draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let p = prf(c);
            let count_form = f1_from_counts(c);
            check((p.f1 - count_form).abs() <= 1e-12, || {
                format!("{c:?}: {} vs {count_form}", p.f1)
            })?;
            if c.tp + c.fp > 0 {
                let exact = c.tp as f64 / (c.tp + c.fp) as f64;
                check((p.precision - exact).abs() <= 1e-12, || format!("{c:?}: precision"))?;
            }
            if c.tp + c.fn_ > 0 {
                let exact = c.tp as f64 / (c.tp + c.fn_) as f64;
                check((p.recall - exact).abs() <= 1e-12, || format!("{c:?}: recall"))?;
            }
        }
        let cases = [
            ((0, 0, 0), (0.0, 0.0, 0.0)),
            ((0, 3, 0), (0.0, 0.0, 0.0)),
            ((0, 0, 3), (0.0, 0.0, 0.0)),
            ((0, 2, 5), (0.0, 0.0, 0.0)),
            ((4, 0, 0), (1.0, 1.0, 1.0)),
            ((4, 4, 0), (0.5, 1.0, 2.0 / 3.0)),
            ((4, 0, 4), (1.0, 0.5, 2.0 / 3.0)),
        ];
        for ((tp, fp, fn_), (ep, er, ef)) in cases {
            let c = MatchCounts::new(tp, fp, fn_);
            let p = prf(c);
            check(
                (p.precision - ep).abs() <= 1e-12 && (p.recall - er).abs() <= 1e-12 && (p.f1 - ef).abs() <= 1e-12,
                || format!("{c:?} gave {p:?}"),
            )?;
            check((f1_from_counts(c) - ef).abs() <= 1e-12, || format!("{c:?}: count form"))?;
        }
        Ok("1000 random counts and 7 boundary cases".to_string())
    })();
    report(2, "F1 identity and zero-division convention", outcome);
}

// ---------------------------------------------------------------- criterion 3

fn random_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for j in 1..n {
        if rng.random_bool(0.8) {
            edges.push((rng.random_range(0..j), j));
        }
    }
    for _ in 0..rng.random_range(0..=n) {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    edges
}

/// `D^-1/2 (A + I) D^-1/2`, row-major.
fn oracle_normalize(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(x, y) in edges {
        a[x * n + y] = 1.0;
        a[y * n + x] = 1.0;
    }
    let d: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j]).sum()).collect();
    (0..n * n).map(|k| a[k] / (d[k / n] * d[k % n]).sqrt()).collect()
}

/// `ReLU(Â H W + b)` with plain loops.
fn oracle_gcn(adj: &[f64], h: &[f64], w: &[f64], b: &[f64], n: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        for o in 0..d_out {
            let mut z = b[o];
            for k in 0..n {
                for d in 0..d_in {
                    z += adj[i * n + k] * h[k * d_in + d] * w[d * d_out + o];
                }
            }
            out[i * d_out + o] = z.max(0.0);
        }
    }
    out
}

fn t64(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn gcn_dense_oracle(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for case in 0..100 {
        let n = rng.random_range(1..=8);
        let (d_in, d_out) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let edges = random_edges(rng, n);
        let g = DependencyGraph::from_edges(n, &edges, vec![0; n]);
        let adj = oracle_normalize(n, &edges);
        for (k, (&a, &e)) in g.norm_adjacency.iter().zip(&adj).enumerate() {
            check((a - e).abs() <= 1e-12, || format!("case {case}: adjacency entry {k}: {a} vs {e}"))?;
        }
        let (h, w, b) = (normal_vec(rng, n * d_in), normal_vec(rng, d_in * d_out), normal_vec(rng, d_out));
        let p = GcnLayerParams::new(t64(&w, &[d_in, d_out]), t64(&b, &[d_out])).unwrap();
        for dtype in [DType::F64, DType::F32] {
            let got = gcn_layer(
                &t64(&h, &[n, d_in]).to_dtype(dtype).unwrap(),
                &g.adjacency_tensor(dtype, &Device::Cpu).unwrap(),
                &GcnLayerParams::new(p.weight.to_dtype(dtype).unwrap(), p.bias.to_dtype(dtype).unwrap()).unwrap(),
            )
            .map_err(|e| e.to_string())?;
            let want = oracle_gcn(&adj, &h, &w, &b, n, d_in, d_out);
            let got = flat(&got);
            let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            check(err < 1e-6, || format!("case {case} {dtype:?}: relative error {err:e}"))?;
        }
    }
    Ok(())
}

fn gcn_gradient_check(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut checked = 0;
    let mut case = 0;
    while case < 20 {
        let n = rng.random_range(2..=6);
        let (d_in, d_mid, d_out) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
        let edges = random_edges(rng, n);
        let adj = DependencyGraph::from_edges(n, &edges, vec![0; n])
            .adjacency_tensor(DType::F64, &Device::Cpu)
            .unwrap();
        let h = normal_vec(rng, n * d_in);
        let w1 = normal_vec(rng, d_in * d_mid);
        let b1 = normal_vec(rng, d_mid);
        let w2 = normal_vec(rng, d_mid * d_out);
        let b2 = normal_vec(rng, d_out);
        let r = normal_vec(rng, n * d_out);
        let shapes: [Vec<usize>; 5] = [vec![n, d_in], vec![d_in, d_mid], vec![d_mid], vec![d_mid, d_out], vec![d_out]];
        let values = [h, w1, b1, w2, b2];
        let loss = |vals: &[Vec<f64>]| -> (Tensor, Tensor) {
            let t: Vec<Tensor> = vals.iter().zip(&shapes).map(|(v, s)| t64(v, s)).collect();
            let stack = GcnStack {
                layers: vec![
                    GcnLayerParams::new(t[1].clone(), t[2].clone()).unwrap(),
                    GcnLayerParams::new(t[3].clone(), t[4].clone()).unwrap(),
                ],
            };
            // Pre-activations of the first layer, to steer clear of ReLU kinks.
            let pre = adj.matmul(&t[0]).unwrap().matmul(&t[1]).unwrap().broadcast_add(&t[2]).unwrap();
            let out = stack.forward(&t[0], &adj).unwrap();
            ((out * t64(&r, &[n, d_out])).unwrap().sum_all().unwrap(), pre)
        };
        let (_, pre) = loss(&values);
        if flat(&pre).iter().any(|z| z.abs() < 1e-3) {
            continue;
        }
        let vars: Vec<Var> = values.iter().zip(&shapes).map(|(v, s)| Var::from_tensor(&t64(v, s)).unwrap()).collect();
        let stack = GcnStack {
            layers: vec![
                GcnLayerParams::new(vars[1].as_tensor().clone(), vars[2].as_tensor().clone()).unwrap(),
                GcnLayerParams::new(vars[3].as_tensor().clone(), vars[4].as_tensor().clone()).unwrap(),
            ],
        };
        let out = stack.forward(vars[0].as_tensor(), &adj).map_err(|e| e.to_string())?;
        let grads = (out * t64(&r, &[n, d_out])).unwrap().sum_all().unwrap().backward().unwrap();
        let eps = 1e-6;
        for (vi, var) in vars.iter().enumerate() {
            let analytic = grads.get(var.as_tensor()).map(flat).unwrap_or_else(|| vec![0.0; values[vi].len()]);
            for k in 0..values[vi].len() {
                let mut plus = values.to_vec();
                plus[vi][k] += eps;
                let mut minus = values.to_vec();
                minus[vi][k] -= eps;
                let lp = loss(&plus).0.to_scalar::<f64>().unwrap();
                let lm = loss(&minus).0.to_scalar::<f64>().unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                let a = analytic[k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                check(rel < 1e-4, || {
                    format!("case {case} tensor {vi} entry {k}: analytic {a}, numeric {numeric}")
                })?;
                checked += 1;
            }
        }
        case += 1;
    }
    Ok(checked)
}

fn hop_distances(n: usize, edges: &[(usize, usize)], from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; n];
    dist[from] = 0;
    let mut frontier = vec![from];
    while let Some(x) = frontier.pop() {
        for &(a, b) in edges {
            for (u, v) in [(a, b), (b, a)] {
                if u == x && dist[v] > dist[x] + 1 {
                    dist[v] = dist[x] + 1;
                    frontier.push(v);
                }
            }
        }
    }
    dist
}

fn gcn_locality_and_equivariance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for case in 0..50 {
        let n = rng.random_range(3..=9);
        let (d, layers) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let edges = random_edges(rng, n);
        let g = DependencyGraph::from_edges(n, &edges, vec![0; n]);
        let adj = g.adjacency_tensor(DType::F64, &Device::Cpu).unwrap();
        let stack = GcnStack {
            layers: (0..layers)
                .map(|_| GcnLayerParams::new(t64(&normal_vec(rng, d * d), &[d, d]), t64(&normal_vec(rng, d), &[d])).unwrap())
                .collect(),
        };
        let h = normal_vec(rng, n * d);
        let base = flat(&stack.forward(&t64(&h, &[n, d]), &adj).unwrap());
        let j = rng.random_range(0..n);
        let mut h2 = h.clone();
        for x in &mut h2[j * d..(j + 1) * d] {
            *x += 5.0;
        }
        let moved = flat(&stack.forward(&t64(&h2, &[n, d]), &adj).unwrap());
        let dist = hop_distances(n, g.edges(), j);
        for i in 0..n {
            if dist[i] > layers {
                check(base[i * d..(i + 1) * d] == moved[i * d..(i + 1) * d], || {
                    format!("case {case}: node {i} at distance {} changed after perturbing {j}", dist[i])
                })?;
            }
        }

        // Permutation: integer data keeps every sum exact.
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(rng);
        let ints = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-3..=3) as f64).collect() };
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        for &(x, y) in &edges {
            a[x * n + y] = 1.0;
            a[y * n + x] = 1.0;
        }
        let hi = ints(rng, n * d);
        let p = GcnLayerParams::new(t64(&ints(rng, d * d), &[d, d]), t64(&ints(rng, d), &[d])).unwrap();
        let out = flat(&gcn_layer(&t64(&hi, &[n, d]), &t64(&a, &[n, n]), &p).unwrap());
        // Row i of the permuted input is row perm[i] of the original.
        let hp: Vec<f64> = (0..n).flat_map(|i| hi[perm[i] * d..(perm[i] + 1) * d].to_vec()).collect();
        let ap: Vec<f64> = (0..n * n).map(|k| a[perm[k / n] * n + perm[k % n]]).collect();
        let outp = flat(&gcn_layer(&t64(&hp, &[n, d]), &t64(&ap, &[n, n]), &p).unwrap());
        let expected: Vec<f64> = (0..n).flat_map(|i| out[perm[i] * d..(perm[i] + 1) * d].to_vec()).collect();
        check(outp == expected, || format!("case {case}: permuted output differs"))?;

        // The normalized adjacency permutes exactly with the node labels.
        let inv: Vec<usize> = {
            let mut inv = vec![0; n];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            inv
        };
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(x, y)| (inv[x], inv[y])).collect();
        let gp = DependencyGraph::from_edges(n, &pedges, vec![0; n]);
        for i in 0..n {
            for k in 0..n {
                check(gp.entry(i, k) == g.entry(perm[i], perm[k]), || {
                    format!("case {case}: normalized adjacency not equivariant at ({i}, {k})")
                })?;
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_3_gcn_correctness() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        gcn_dense_oracle(&mut rng)?;
        let checked = gcn_gradient_check(&mut rng)?;
        gcn_locality_and_equivariance(&mut rng)?;
        Ok(format!("100 dense instances, {checked} gradient entries, 50 locality/permutation cases"))
    })();
    report(3, "GCN correctness", outcome);
}

// ---------------------------------------------------------------- criterion 4

/// Gold span moved onto the boundaries of the tokens it overlaps.
fn expected_span(span: &ClassSpan, tokens: &TokenSequence) -> Option<ClassSpan> {
    let covered: Vec<usize> = (0..tokens.len())
        .filter(|&t| !tokens.special_mask[t])
        .filter(|&t| tokens.char_spans[t].0 < span.end && tokens.char_spans[t].1 > span.start)
        .collect();
    Some(ClassSpan {
        class: span.class.clone(),
        start: tokens.char_spans[*covered.first()?].0,
        end: tokens.char_spans[*covered.last()?].1,
    })
}

/// (spans that survived, spans reproduced)
fn round_trip(sentence: &RawSentence, tokens: &TokenSequence, scheme: &LabelScheme) -> Result<(usize, usize), String> {
    let (labels, rep) = encode_labels(sentence, tokens, scheme);
    let mut decoded = decode_labels(&labels.label_ids, tokens, scheme);
    decoded.sort();
    let accounted = rep.encoded.len() + rep.dropped_overlap.len() + rep.dropped_truncated.len() + rep.dropped_unknown_class.len();
    let gold = gold_spans(sentence, scheme.subtask);
    check(accounted == gold.len(), || format!("{}: {accounted} spans accounted of {}", sentence.id, gold.len()))?;
    let mut expected: Vec<ClassSpan> = rep.encoded.iter().filter_map(|s| expected_span(s, tokens)).collect();
    expected.sort();
    let hit = expected.iter().filter(|s| decoded.binary_search(s).is_ok()).count();
    check(decoded == expected, || format!("{}: decoded {decoded:?}, expected {expected:?}", sentence.id))?;
    Ok((rep.encoded.len(), hit))
}

#[test]
fn criterion_4_alignment_round_trip() {
    let outcome = (|| {
        let corpus = fixture::corpus(50, 11);
        let (meta, _) = corpus.prepare(128);
        let (mut survived, mut reproduced, mut tokens_checked) = (0, 0, 0);
        for s in &corpus.sentences {
            let ann = &corpus.annotations[&s.id];
            let (record, _) = preprocess_sentence(s, ann, &meta).map_err(|e| e.to_string())?;
            for subtask in Subtask::ALL {
                let (a, b) = round_trip(s, &record.tokens, meta.scheme(subtask))?;
                survived += a;
                reproduced += b;
            }
            let heads = ann.heads()?;
            let f = &record.features;
            let mut first_token: HashMap<i64, usize> = HashMap::new();
            for t in 0..record.len() {
                first_token.entry(f.word_index[t]).or_insert(t);
            }
            for t in 0..record.len() {
                if record.tokens.special_mask[t] {
                    continue;
                }
                tokens_checked += 1;
                let w = f.word_index[t];
                check(w >= 0 && (w as usize) < ann.words.len(), || format!("{}: token {t} has no word", s.id))?;
                let w = w as usize;
                let (ws, we) = ann.word_spans[w];
                let (ts, te) = record.tokens.char_spans[t];
                check(2 * ws <= ts + te && ts + te < 2 * we, || format!("{}: token {t} midpoint outside word {w}", s.id))?;
                check(f.pos_ids[t] == meta.vocabs.pos.id(&ann.pos_tags[w]) && f.pos_ids[t] != 0, || {
                    format!("{}: token {t} POS id", s.id)
                })?;
                check(f.dep_rel_ids[t] != 0, || format!("{}: token {t} has no relation id", s.id))?;
                let want_head = heads[w].map_or(-1, |h| first_token.get(&(h as i64)).map_or(-1, |&x| x as i64));
                check(f.head_token[t] == want_head, || format!("{}: token {t} head {} vs {want_head}", s.id, f.head_token[t]))?;
            }
        }
        check(reproduced == survived, || format!("{reproduced} of {survived} spans reproduced"))?;
        let mut detail = format!("fixture: {reproduced}/{survived} spans, {tokens_checked} tokens total");
        if let Some(dir) = std::env::var_os("DUEE_DIR").map(PathBuf::from) {
            let train = read_duee_file(&dir.join("train.json")).map_err(|e| e.to_string())?;
            let vocab = WordPieceVocab::build(train.iter().map(|s| s.text.as_str()));
            let tokenizer = Tokenizer::new(vocab, 512).map_err(|e| e.to_string())?;
            let schema = synee::corpus::load_schema(&dir.join("schema.json")).map_err(|e| e.to_string())?;
            let (mut a, mut b) = (0, 0);
            for s in &train {
                let Ok(tokens) = tokenizer.tokenize(&s.text) else { continue };
                for subtask in Subtask::ALL {
                    let (x, y) = round_trip(s, &tokens, &LabelScheme::for_schema(subtask, &schema))?;
                    a += x;
                    b += y;
                }
            }
            check(a == b, || format!("DuEE: {b} of {a} spans reproduced"))?;
            detail.push_str(&format!("; DuEE train: {b}/{a} spans"));
        }
        Ok(detail)
    })();
    report(4, "alignment round trip", outcome);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_memorization() {
    let started = Instant::now();
    let outcome = (|| {
        let corpus = fixture::corpus(20, 7);
        let (meta, records) = corpus.prepare(64);
        let mut worst = 1.0f64;
        let mut details = Vec::new();
        for variant in ModelVariant::ALL {
            for subtask in Subtask::ALL {
                let encoder = EncoderConfig::stand_in(meta.tokenizer.vocab.len(), 64);
                let config = ModelConfig::for_dataset(variant, ChannelConfig::default(), encoder, &meta, subtask);
                let model = TaggerModel::new(config, 1).map_err(|e| e.to_string())?;
                let mut tc = TrainConfig::stand_in();
                tc.epochs = 50;
                tc.target_f1 = Some(0.99);
                tc.patience = None;
                let out = train_subtask(model, &records, &[], meta.scheme(subtask), &tc, |_| {}).map_err(|e| e.to_string())?;
                let f1 = out.best().validation.f1;
                worst = worst.min(f1);
                details.push(format!("{} {subtask} {f1:.3}@{}", variant.slug(), out.best_epoch));
                check(f1 >= 0.99, || format!("{} {subtask}: training F1 {f1:.4} after {} epochs", variant.display_name(), out.history.len()))?;
            }
        }
        let elapsed = started.elapsed();
        check(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
        Ok(format!("min F1 {worst:.4} in {elapsed:.1?}: {}", details.join(", ")))
    })();
    report(5, "memorization probe", outcome);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_channel_liveness() {
    let outcome = (|| {
        let corpus = fixture::corpus(20, 3);
        let (meta, records) = corpus.prepare(64);
        let encoder = EncoderConfig::stand_in(meta.tokenizer.vocab.len(), 64);
        let config = ModelConfig::for_dataset(ModelVariant::PosDpGcn, ChannelConfig::default(), encoder, &meta, Subtask::Role);
        let model = TaggerModel::new(config, 5).map_err(|e| e.to_string())?;
        let refs: Vec<_> = records.iter().collect();
        let batch = Batch::new(&refs, Subtask::Role, true).map_err(|e| e.to_string())?;
        let before = model.store().snapshot().map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = model.loss(&batch, Some(&mut rng)).map_err(|e| e.to_string())?;
        let grads = loss.backward().map_err(|e| e.to_string())?;
        let norms = model.gradient_norms(&grads).map_err(|e| e.to_string())?;
        let vars: Vec<Var> = model.store().vars().values().cloned().collect();
        let mut opt = AdamW::new(vars, ParamsAdamW { lr: 1e-3, ..Default::default() }).map_err(|e| e.to_string())?;
        opt.step(&grads).map_err(|e| e.to_string())?;
        let mut summary = Vec::new();
        for group in ["pos", "dp", "gcn", "fusion"] {
            let norm = norms.get(group).copied().unwrap_or(0.0);
            check(norm > 0.0 && norm.is_finite(), || format!("{group} gradient norm {norm}"))?;
            let moved = model.store().vars().iter().filter(|(k, _)| k.starts_with(&format!("{group}."))).any(|(k, v)| {
                let diff = (v.as_tensor() - &before[k]).unwrap().abs().unwrap().max_all().unwrap();
                diff.to_scalar::<f32>().unwrap() > 0.0
            });
            check(moved, || format!("{group} parameters unchanged after the step"))?;
            summary.push(format!("{group} {norm:.3e}"));
        }
        Ok(summary.join(", "))
    })();
    report(6, "channel liveness", outcome);
}

// ---------------------------------------------------------------- criterion 7

type CanonicalEvent = (String, String, usize, Vec<(String, String, usize)>);

fn canonical(events: &[EventRecord]) -> Vec<CanonicalEvent> {
    let mut out: Vec<_> = events
        .iter()
        .map(|e| {
            let mut args: Vec<_> = e.arguments.iter().map(|a| (a.role.clone(), a.text.clone(), a.start)).collect();
            args.sort();
            args.dedup();
            (e.event_type.clone(), e.trigger_text.clone(), e.trigger_start, args)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_7_pipeline_reconstruction() {
    let outcome = (|| {
        let corpus = fixture::corpus(50, 19);
        let (meta, _) = corpus.prepare(128);
        let (mut clean, mut events, mut rebuilt, mut skipped) = (0, 0, 0, 0);
        for s in &corpus.sentences {
            let (record, rep) = preprocess_sentence(s, &corpus.annotations[&s.id], &meta).map_err(|e| e.to_string())?;
            let dropped = [&rep.trigger, &rep.role]
                .iter()
                .any(|r| !r.dropped_overlap.is_empty() || !r.dropped_truncated.is_empty());
            if dropped {
                skipped += 1;
                continue;
            }
            clean += 1;
            let predicted = events_from_labels(
                &record,
                &record.trigger_labels,
                &record.role_labels,
                &meta.trigger_scheme,
                &meta.role_scheme,
                &meta.schema,
            );
            let want = canonical(&s.events);
            let got = canonical(&predicted);
            events += want.len();
            rebuilt += want.iter().filter(|e| got.contains(e)).count();
        }
        let rate = rebuilt as f64 / events.max(1) as f64;
        check(rate >= 0.99, || format!("{rebuilt} of {events} events rebuilt"))?;
        Ok(format!("{rebuilt}/{events} events over {clean} sentences ({skipped} with drops excluded)"))
    })();
    report(7, "pipeline reconstruction", outcome);
}
