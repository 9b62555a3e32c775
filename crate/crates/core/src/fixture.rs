//! Deterministic synthetic corpus in the DuEE layout, with word segmentation,
//! POS tags, NER tags and dependency trees for each sentence. Used for
//! desk-scale tests and the `fixture` command.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{preprocess_split, DatasetMeta, PreprocessedRecord, Tokenizer, WordPieceVocab};
use crate::annotate::{build_vocabs, DepEdge, FixtureAnnotator, SyntaxAnnotation};
use crate::corpus::{write_duee_file, ArgumentRecord, EventRecord, EventSchema, RawSentence};

pub const FIXTURE_ANNOTATOR_VERSION: &str = "fixture-1";

pub const LAYOFF: &str = "组织关系-裁员";
pub const WIN: &str = "竞赛行为-胜负";
pub const ACQUIRE: &str = "财经/交易-收购";
pub const DEATH: &str = "人生-死亡";

pub fn schema() -> EventSchema {
    EventSchema::from_entries([
        (LAYOFF, vec!["时间", "裁员方", "裁员人数"]),
        (WIN, vec!["时间", "胜者", "败者", "赛事名称"]),
        (ACQUIRE, vec!["时间", "收购方", "被收购方", "收购金额"]),
        (DEATH, vec!["时间", "地点", "死者", "死者年龄"]),
    ])
}

const TIMES: &[&[(&str, &str)]] = &[
    &[("前两天", "NT")],
    &[("昨天", "NT")],
    &[("上周五", "NT")],
    &[("今年", "NT"), ("3月", "NT")],
    &[("2019年", "NT"), ("5月", "NT")],
];
const ORGS: &[&[(&str, &str)]] = &[
    &[("软件服务商", "NN"), ("Oracle公司", "NR")],
    &[("腾讯", "NR")],
    &[("阿里巴巴", "NR")],
    &[("小米公司", "NR")],
    &[("科技巨头", "NN"), ("IBM", "NR")],
    &[("京东", "NR")],
    &[("百度", "NR")],
];
const TEAMS: &[&[(&str, &str)]] = &[
    &[("中国女排", "NR")],
    &[("巴西队", "NR")],
    &[("湖人队", "NR")],
    &[("勇士队", "NR")],
    &[("皇家马德里", "NR")],
];
const CONTESTS: &[&[(&str, &str)]] = &[
    &[("世界杯", "NR")],
    &[("总决赛", "NN")],
    &[("亚洲杯", "NR"), ("半决赛", "NN")],
];
const PLACES: &[&str] = &["中国", "北京", "上海", "美国", "深圳"];
const PEOPLE: &[&str] = &["李明", "王芳", "张伟", "Smith"];
const AMOUNTS: &[&[(&str, &str)]] = &[
    &[("10亿", "CD"), ("美元", "M")],
    &[("3000万", "CD"), ("元", "M")],
    &[("50亿", "CD"), ("元", "M")],
];
const COUNTS: &[&[(&str, &str)]] = &[&[("500", "CD"), ("人", "M")], &[("1200名", "CD"), ("员工", "NN")]];

/// A contiguous run of words whose last word heads the others.
#[derive(Debug, Clone, Copy)]
struct Phrase {
    head: usize,
    start: usize,
    end: usize,
}

#[derive(Default)]
struct Builder {
    words: Vec<String>,
    spans: Vec<(usize, usize)>,
    pos: Vec<String>,
    ner: Vec<String>,
    heads: Vec<Option<(i64, String)>>,
    chars: usize,
    events: Vec<EventRecord>,
}

impl Builder {
    fn word(&mut self, text: &str, pos: &str, ner: &str) -> Phrase {
        let n = text.chars().count();
        self.words.push(text.to_string());
        self.spans.push((self.chars, self.chars + n));
        self.pos.push(pos.to_string());
        self.ner.push(ner.to_string());
        self.heads.push(None);
        let p = Phrase {
            head: self.words.len() - 1,
            start: self.chars,
            end: self.chars + n,
        };
        self.chars += n;
        p
    }

    fn phrase(&mut self, words: &[(&str, &str)], ner: &str) -> Phrase {
        let parts: Vec<Phrase> = words.iter().map(|(w, p)| self.word(w, p, ner)).collect();
        let last = *parts.last().expect("non-empty phrase");
        for p in &parts[..parts.len() - 1] {
            self.attach(*p, last, "compound:nn");
        }
        Phrase {
            head: last.head,
            start: parts[0].start,
            end: last.end,
        }
    }

    fn attach(&mut self, dep: Phrase, head: Phrase, rel: &str) {
        self.heads[dep.head] = Some((head.head as i64, rel.to_string()));
    }

    fn root(&mut self, p: Phrase) {
        self.heads[p.head] = Some((-1, "root".to_string()));
    }

    fn text(&self) -> String {
        self.words.concat()
    }

    fn slice(&self, p: Phrase) -> String {
        self.text().chars().skip(p.start).take(p.end - p.start).collect()
    }

    fn event(&mut self, event_type: &str, trigger: Phrase, args: &[(&str, Phrase)]) {
        let arguments = args
            .iter()
            .map(|(role, p)| ArgumentRecord {
                role: role.to_string(),
                text: self.slice(*p),
                start: p.start,
            })
            .collect();
        self.events.push(EventRecord {
            event_type: event_type.to_string(),
            trigger_text: self.slice(trigger),
            trigger_start: trigger.start,
            arguments,
        });
    }

    fn finish(self, id: String) -> (RawSentence, SyntaxAnnotation) {
        let text = self.text();
        let mut root_index = 0;
        let dep_edges = self
            .heads
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                let (head, rel) = h.unwrap_or_else(|| panic!("word {i} of {text:?} has no head"));
                if head < 0 {
                    root_index = i;
                }
                DepEdge::new(head, i, rel)
            })
            .collect();
        let ann = SyntaxAnnotation {
            words: self.words,
            word_spans: self.spans,
            pos_tags: self.pos,
            ner_tags: self.ner,
            dep_edges,
            root_index,
        };
        (
            RawSentence {
                id,
                text,
                events: self.events,
            },
            ann,
        )
    }
}

type Slot = &'static [(&'static str, &'static str)];

fn layoff(b: &mut Builder, time: Slot, org: Slot, place: &str, count: Option<Slot>) {
    let t = b.phrase(time, "DATE");
    let comma = b.word("，", "PU", "O");
    let o = b.phrase(org, "ORG");
    let say = b.word("宣布", "VV", "O");
    let at = b.word("在", "P", "O");
    let pl = b.word(place, "NR", "GPE");
    let trig = b.word("裁员", "VV", "O");
    let n = count.map(|c| b.phrase(c, "NUMBER"));
    let stop = b.word("。", "PU", "O");
    b.root(say);
    b.attach(t, say, "nmod:tmod");
    b.attach(comma, say, "punct");
    b.attach(o, say, "nsubj");
    b.attach(at, pl, "case");
    b.attach(pl, trig, "nmod:prep");
    b.attach(trig, say, "ccomp");
    b.attach(stop, say, "punct");
    let mut args = vec![("时间", t), ("裁员方", o)];
    if let Some(n) = n {
        b.attach(n, trig, "dobj");
        args.push(("裁员人数", n));
    }
    b.event(LAYOFF, trig, &args);
}

fn win(b: &mut Builder, rng: &mut ChaCha8Rng) {
    let (w, l) = two_distinct(TEAMS, rng);
    let t = b.phrase(TIMES.choose(rng).unwrap(), "DATE");
    let comma = b.word("，", "PU", "O");
    let winner = b.phrase(w, "ORG");
    let at = b.word("在", "P", "O");
    let contest = b.phrase(CONTESTS.choose(rng).unwrap(), "O");
    let inside = b.word("中", "LC", "O");
    let trig = b.word(["击败", "战胜"].choose(rng).unwrap(), "VV", "O");
    let loser = b.phrase(l, "ORG");
    let stop = b.word("。", "PU", "O");
    b.root(trig);
    b.attach(t, trig, "nmod:tmod");
    b.attach(comma, trig, "punct");
    b.attach(winner, trig, "nsubj");
    b.attach(at, contest, "case");
    b.attach(inside, contest, "case");
    b.attach(contest, trig, "nmod:prep");
    b.attach(loser, trig, "dobj");
    b.attach(stop, trig, "punct");
    b.event(WIN, trig, &[("时间", t), ("胜者", winner), ("赛事名称", contest), ("败者", loser)]);
}

fn acquire(b: &mut Builder, rng: &mut ChaCha8Rng) {
    let (buyer, target) = two_distinct(ORGS, rng);
    let o = b.phrase(buyer, "ORG");
    let at = b.word("于", "P", "O");
    let t = b.phrase(TIMES.choose(rng).unwrap(), "DATE");
    let with = b.word("以", "P", "O");
    let a = b.phrase(AMOUNTS.choose(rng).unwrap(), "MONEY");
    let trig = b.word("收购", "VV", "O");
    let g = b.phrase(target, "ORG");
    let stop = b.word("。", "PU", "O");
    b.root(trig);
    b.attach(o, trig, "nsubj");
    b.attach(at, t, "case");
    b.attach(t, trig, "nmod:prep");
    b.attach(with, a, "case");
    b.attach(a, trig, "nmod:prep");
    b.attach(g, trig, "dobj");
    b.attach(stop, trig, "punct");
    b.event(ACQUIRE, trig, &[("收购方", o), ("时间", t), ("收购金额", a), ("被收购方", g)]);
}

fn death(b: &mut Builder, rng: &mut ChaCha8Rng) {
    let p = b.word(PEOPLE.choose(rng).unwrap(), "NR", "PERSON");
    let at = b.word("于", "P", "O");
    let t = b.phrase(TIMES.choose(rng).unwrap(), "DATE");
    let in_ = b.word("在", "P", "O");
    let pl = b.word(PLACES.choose(rng).unwrap(), "NR", "GPE");
    let trig = b.word(["病逝", "去世"].choose(rng).unwrap(), "VV", "O");
    let comma = b.word("，", "PU", "O");
    let aged = b.word("享年", "VV", "O");
    let age = rng.random_range(60..100).to_string();
    let age = b.phrase(&[(age.as_str(), "CD"), ("岁", "M")], "NUMBER");
    let stop = b.word("。", "PU", "O");
    b.root(trig);
    b.attach(p, trig, "nsubj");
    b.attach(at, t, "case");
    b.attach(t, trig, "nmod:prep");
    b.attach(in_, pl, "case");
    b.attach(pl, trig, "nmod:prep");
    b.attach(comma, trig, "punct");
    b.attach(aged, trig, "conj");
    b.attach(age, aged, "dobj");
    b.attach(stop, trig, "punct");
    b.event(DEATH, trig, &[("死者", p), ("时间", t), ("地点", pl), ("死者年龄", age)]);
}

/// Two events sharing one argument span under different roles; the role
/// labeler can keep only one of them.
fn merger(b: &mut Builder, rng: &mut ChaCha8Rng) {
    let (buyer, target) = two_distinct(ORGS, rng);
    let o = b.phrase(buyer, "ORG");
    let buy = b.word("收购", "VV", "O");
    let g = b.phrase(target, "ORG");
    let after = b.word("后", "LC", "O");
    let say = b.word("宣布", "VV", "O");
    let cut = b.word("裁员", "VV", "O");
    let n = b.phrase(COUNTS.choose(rng).unwrap(), "NUMBER");
    let stop = b.word("。", "PU", "O");
    b.root(say);
    b.attach(o, say, "nsubj");
    b.attach(buy, say, "advcl");
    b.attach(g, buy, "dobj");
    b.attach(after, buy, "mark");
    b.attach(cut, say, "ccomp");
    b.attach(n, cut, "dobj");
    b.attach(stop, say, "punct");
    b.event(ACQUIRE, buy, &[("收购方", o), ("被收购方", g)]);
    b.event(LAYOFF, cut, &[("裁员方", o), ("裁员人数", n)]);
}

fn quiet(b: &mut Builder, rng: &mut ChaCha8Rng) {
    if rng.random_bool(0.5) {
        let t = b.phrase(TIMES.choose(rng).unwrap(), "DATE");
        let comma = b.word("，", "PU", "O");
        let pl = b.word(PLACES.choose(rng).unwrap(), "NR", "GPE");
        let weather = b.word("天气", "NN", "O");
        let fine = b.word("晴朗", "VA", "O");
        let stop = b.word("。", "PU", "O");
        b.root(fine);
        b.attach(t, fine, "nmod:tmod");
        b.attach(comma, fine, "punct");
        b.attach(pl, weather, "nmod");
        b.attach(weather, fine, "nsubj");
        b.attach(stop, fine, "punct");
    } else {
        let o = b.phrase(ORGS.choose(rng).unwrap(), "ORG");
        let release = b.word("发布", "VV", "O");
        let asp = b.word("了", "AS", "O");
        let new = b.word("新款", "JJ", "O");
        let phone = b.word("手机", "NN", "O");
        let stop = b.word("。", "PU", "O");
        b.root(release);
        b.attach(o, release, "nsubj");
        b.attach(asp, release, "aux:asp");
        b.attach(new, phone, "amod");
        b.attach(phone, release, "dobj");
        b.attach(stop, release, "punct");
    }
}

fn two_distinct(pool: &'static [Slot], rng: &mut ChaCha8Rng) -> (Slot, Slot) {
    let picked: Vec<&Slot> = pool.choose_multiple(rng, 2).collect();
    (picked[0], picked[1])
}

/// Synthetic sentences with annotations keyed by sentence id.
#[derive(Debug, Clone)]
pub struct FixtureCorpus {
    pub schema: EventSchema,
    pub sentences: Vec<RawSentence>,
    pub annotations: HashMap<String, SyntaxAnnotation>,
}

/// `n` sentences. The first is the layoff example sentence and the second
/// has no event; the rest cycle through the event templates, with an
/// eventless sentence and a two-event sentence in every cycle.
pub fn corpus(n: usize, seed: u64) -> FixtureCorpus {
    corpus_with_prefix(n, seed, "fx")
}

pub fn corpus_with_prefix(n: usize, seed: u64, prefix: &str) -> FixtureCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n);
    let mut annotations = HashMap::new();
    for i in 0..n {
        let mut b = Builder::default();
        match i {
            0 => layoff(&mut b, TIMES[0], ORGS[0], "中国", None),
            1 => quiet(&mut b, &mut rng),
            _ => match i % 8 {
                0 | 5 => {
                    let count = rng.random_bool(0.5).then(|| *COUNTS.choose(&mut rng).unwrap());
                    let (time, org) = (*TIMES.choose(&mut rng).unwrap(), *ORGS.choose(&mut rng).unwrap());
                    layoff(&mut b, time, org, PLACES.choose(&mut rng).unwrap(), count)
                }
                1 | 6 => win(&mut b, &mut rng),
                2 => acquire(&mut b, &mut rng),
                3 => death(&mut b, &mut rng),
                4 => quiet(&mut b, &mut rng),
                _ => {
                    if i % 16 == 7 {
                        merger(&mut b, &mut rng)
                    } else {
                        acquire(&mut b, &mut rng)
                    }
                }
            },
        }
        let (sentence, ann) = b.finish(format!("{prefix}-{i:04}"));
        annotations.insert(sentence.id.clone(), ann);
        sentences.push(sentence);
    }
    FixtureCorpus {
        schema: schema(),
        sentences,
        annotations,
    }
}

impl FixtureCorpus {
    /// Stand-in tokenizer and syntax vocabularies built from this corpus,
    /// and every sentence preprocessed with them.
    pub fn prepare(&self, max_len: usize) -> (DatasetMeta, Vec<PreprocessedRecord>) {
        let vocab = WordPieceVocab::build(self.sentences.iter().map(|s| s.text.as_str()));
        let tokenizer = Tokenizer::new(vocab, max_len).expect("stand-in vocabulary has the specials");
        let vocabs = build_vocabs(self.sentences.iter().map(|s| &self.annotations[&s.id]));
        let meta = DatasetMeta::new(
            crate::model::STAND_IN_ENCODER,
            FIXTURE_ANNOTATOR_VERSION,
            tokenizer,
            vocabs,
            self.schema.clone(),
        );
        let (records, _) = preprocess_split(&self.sentences, &self.annotations, &meta).expect("fixture preprocesses");
        (meta, records)
    }

    pub fn annotator(&self) -> FixtureAnnotator {
        let mut a = FixtureAnnotator::new(FIXTURE_ANNOTATOR_VERSION);
        for s in &self.sentences {
            a.insert(s.text.clone(), self.annotations[&s.id].clone());
        }
        a
    }

    /// Writes `train.json`, `dev.json`, `schema.json` and `annotations.jsonl`.
    /// The dev file holds `dev` sentences generated with a different seed.
    pub fn write_dir(&self, dir: &Path, dev: &FixtureCorpus) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let io = |e: crate::corpus::CorpusError| std::io::Error::other(e.to_string());
        write_duee_file(&dir.join("train.json"), &self.sentences).map_err(io)?;
        write_duee_file(&dir.join("dev.json"), &dev.sentences).map_err(io)?;
        fs::write(dir.join("schema.json"), self.schema.to_duee_lines())?;
        let entries = self
            .sentences
            .iter()
            .chain(&dev.sentences)
            .map(|s| {
                let ann = self.annotations.get(&s.id).or_else(|| dev.annotations.get(&s.id));
                (s.text.as_str(), ann.expect("every fixture sentence is annotated"))
            });
        FixtureAnnotator::write_file(&dir.join("annotations.jsonl"), entries)
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}
