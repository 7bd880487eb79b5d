//! Synthetic English→Hindi language in which formality is a deterministic
//! word substitution: the second-person pronoun and auxiliary (आप/हैं vs
//! तुम/हो) or the imperative suffix family (-इए vs -ओ).
//!
//! Three templates:
//!
//! * declarative, `you [adv] VERB the OBJ` → `आप [adv] OBJ VERB-ते हैं`
//! * imperative, `VERB the OBJ` → `OBJ VERB-इए`
//! * third person (neutral), `he [adv] VERBs the OBJ` → `वह [adv] OBJ VERB-ता है`

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ContrastiveRecord, ParallelPair};
use crate::label::FormalityLabel;
use crate::lexicon::{extract_lexicon, parse_annotated, FormalityLexicon};
use crate::model::TextPair;
use crate::textnorm::NormalizationConfig;

struct Verb {
    en: &'static str,
    en_third: &'static str,
    participle: &'static str,
    participle_third: &'static str,
    imperative_formal: &'static str,
    imperative_informal: &'static str,
}

const fn verb(
    en: &'static str,
    en_third: &'static str,
    participle: &'static str,
    participle_third: &'static str,
    imperative_formal: &'static str,
    imperative_informal: &'static str,
) -> Verb {
    Verb {
        en,
        en_third,
        participle,
        participle_third,
        imperative_formal,
        imperative_informal,
    }
}

const VERBS: [Verb; 11] = [
    verb("eat", "eats", "खाते", "खाता", "खाइए", "खाओ"),
    verb("drink", "drinks", "पीते", "पीता", "पीजिए", "पियो"),
    verb("read", "reads", "पढ़ते", "पढ़ता", "पढ़िए", "पढ़ो"),
    verb("write", "writes", "लिखते", "लिखता", "लिखिए", "लिखो"),
    verb("see", "sees", "देखते", "देखता", "देखिए", "देखो"),
    verb("buy", "buys", "खरीदते", "खरीदता", "खरीदिए", "खरीदो"),
    verb("make", "makes", "बनाते", "बनाता", "बनाइए", "बनाओ"),
    verb("open", "opens", "खोलते", "खोलता", "खोलिए", "खोलो"),
    verb("wash", "washes", "धोते", "धोता", "धोइए", "धोओ"),
    verb("bring", "brings", "लाते", "लाता", "लाइए", "लाओ"),
    verb("sell", "sells", "बेचते", "बेचता", "बेचिए", "बेचो"),
];

const OBJECTS: [(&str, &str); 20] = [
    ("apple", "सेब"),
    ("water", "पानी"),
    ("book", "किताब"),
    ("letter", "पत्र"),
    ("tea", "चाय"),
    ("milk", "दूध"),
    ("bread", "रोटी"),
    ("door", "दरवाज़ा"),
    ("window", "खिड़की"),
    ("car", "गाड़ी"),
    ("house", "घर"),
    ("food", "खाना"),
    ("rice", "चावल"),
    ("fruit", "फल"),
    ("newspaper", "अख़बार"),
    ("clothes", "कपड़े"),
    ("box", "डिब्बा"),
    ("shirt", "कमीज़"),
    ("chair", "कुर्सी"),
    ("picture", "तस्वीर"),
];

const ADVERBS: [(&str, &str); 3] = [("always", "हमेशा"), ("often", "अक्सर"), ("now", "अभी")];

/// One generated source sentence with its reference translations. For
/// neutral sentences both references are the same untagged target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSentence {
    pub source: String,
    pub formal_tagged: String,
    pub informal_tagged: String,
    pub neutral: bool,
}

impl SynthSentence {
    /// Tagged reference for `label`; neutral sentences ignore it.
    pub fn tagged(&self, label: FormalityLabel) -> &str {
        match label {
            FormalityLabel::Informal => &self.informal_tagged,
            _ => &self.formal_tagged,
        }
    }

    /// Untagged reference for `label`.
    pub fn plain(&self, label: FormalityLabel) -> String {
        strip_tags(self.tagged(label))
    }

    pub fn to_contrastive(&self) -> ContrastiveRecord {
        ContrastiveRecord {
            source_text: self.source.clone(),
            formal_ref_tagged: self.formal_tagged.clone(),
            informal_ref_tagged: self.informal_tagged.clone(),
        }
    }
}

pub fn strip_tags(tagged: &str) -> String {
    parse_annotated(tagged)
        .expect("generator emits balanced tags")
        .plain_text
}

fn sentence_case(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_ascii_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push('.');
    s
}

fn join(words: &[&str]) -> String {
    words
        .iter()
        .filter(|w| !w.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Every declarative and imperative second-person sentence, in a fixed order.
pub fn all_second_person() -> Vec<SynthSentence> {
    let mut out = Vec::new();
    for v in &VERBS {
        for &(obj_en, obj_hi) in &OBJECTS {
            for adv in std::iter::once(("", "")).chain(ADVERBS) {
                let en: Vec<&str> = ["you", adv.0, v.en, "the", obj_en]
                    .into_iter()
                    .filter(|w| !w.is_empty())
                    .collect();
                out.push(SynthSentence {
                    source: sentence_case(&en),
                    formal_tagged: join(&["[F]आप[/F]", adv.1, obj_hi, v.participle, "[F]हैं[/F]"]),
                    informal_tagged: join(&["[I]तुम[/I]", adv.1, obj_hi, v.participle, "[I]हो[/I]"]),
                    neutral: false,
                });
            }
            out.push(SynthSentence {
                source: sentence_case(&[v.en, "the", obj_en]),
                formal_tagged: format!("{obj_hi} [F]{}[/F]", v.imperative_formal),
                informal_tagged: format!("{obj_hi} [I]{}[/I]", v.imperative_informal),
                neutral: false,
            });
        }
    }
    out
}

/// Every third-person sentence, in a fixed order.
pub fn all_neutral() -> Vec<SynthSentence> {
    let mut out = Vec::new();
    for v in &VERBS {
        for &(obj_en, obj_hi) in &OBJECTS {
            for adv in std::iter::once(("", "")).chain(ADVERBS) {
                let en: Vec<&str> = ["he", adv.0, v.en_third, "the", obj_en]
                    .into_iter()
                    .filter(|w| !w.is_empty())
                    .collect();
                let target = join(&["वह", adv.1, obj_hi, v.participle_third, "है"]);
                out.push(SynthSentence {
                    source: sentence_case(&en),
                    formal_tagged: target.clone(),
                    informal_tagged: target,
                    neutral: true,
                });
            }
        }
    }
    out
}

/// `n_second` distinct second-person and `n_neutral` distinct neutral
/// sentences, sampled without replacement and interleaved in seeded order.
pub fn sample(n_second: usize, n_neutral: usize, seed: u64) -> Vec<SynthSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut second = all_second_person();
    let mut neutral = all_neutral();
    assert!(
        n_second <= second.len() && n_neutral <= neutral.len(),
        "sample exceeds language size"
    );
    second.shuffle(&mut rng);
    neutral.shuffle(&mut rng);
    let mut out: Vec<SynthSentence> = second
        .into_iter()
        .take(n_second)
        .chain(neutral.into_iter().take(n_neutral))
        .collect();
    out.shuffle(&mut rng);
    out
}

/// Disjoint train and test samples of second-person and neutral sentences.
pub fn train_test(
    train_second: usize,
    train_neutral: usize,
    test_second: usize,
    test_neutral: usize,
    seed: u64,
) -> (Vec<SynthSentence>, Vec<SynthSentence>) {
    let all = sample(train_second + test_second, train_neutral + test_neutral, seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let (mut s, mut n) = (0, 0);
    for item in all {
        let (seen, limit) = if item.neutral {
            (&mut n, train_neutral)
        } else {
            (&mut s, train_second)
        };
        if *seen < limit {
            train.push(item);
        } else {
            test.push(item);
        }
        *seen += 1;
    }
    (train, test)
}

/// The lexicon implied by the generator's contrastive references.
pub fn lexicon() -> FormalityLexicon {
    let records: Vec<ContrastiveRecord> = all_second_person().iter().map(SynthSentence::to_contrastive).collect();
    extract_lexicon(&records, &NormalizationConfig::default()).expect("generator tags are valid")
}

/// Training pairs: each second-person sentence once per register, each
/// neutral sentence once.
pub fn text_pairs(sentences: &[SynthSentence]) -> Vec<TextPair> {
    let mut out = Vec::with_capacity(sentences.len() * 2);
    for s in sentences {
        if s.neutral {
            out.push(TextPair::new(
                &s.source,
                s.plain(FormalityLabel::Neutral),
                FormalityLabel::Neutral,
            ));
        } else {
            for label in [FormalityLabel::Formal, FormalityLabel::Informal] {
                out.push(TextPair::new(&s.source, s.plain(label), label));
            }
        }
    }
    out
}

/// Training pairs with one translation per source: second-person sentences
/// get an exactly balanced, seeded assignment of registers.
pub fn single_register_pairs(sentences: &[SynthSentence], seed: u64) -> Vec<TextPair> {
    let mut second: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].neutral).collect();
    second.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let formal: std::collections::HashSet<usize> = second[..second.len() / 2].iter().copied().collect();
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let label = if s.neutral {
                FormalityLabel::Neutral
            } else if formal.contains(&i) {
                FormalityLabel::Formal
            } else {
                FormalityLabel::Informal
            };
            TextPair::new(&s.source, s.plain(label), label)
        })
        .collect()
}

/// A parallel corpus with exactly the requested register composition, in
/// seeded order, with the generator's label and tagged target for each pair.
pub fn labeled_parallel(
    formal: usize,
    informal: usize,
    neutral: usize,
    seed: u64,
) -> Vec<(ParallelPair, FormalityLabel, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut second = all_second_person();
    second.shuffle(&mut rng);
    let mut neutral_pool = all_neutral();
    neutral_pool.shuffle(&mut rng);
    let pick =
        |pool: &[SynthSentence], n: usize| -> Vec<SynthSentence> { pool.iter().cycle().take(n).cloned().collect() };
    let mut items: Vec<(SynthSentence, FormalityLabel)> = Vec::with_capacity(formal + informal + neutral);
    items.extend(pick(&second, formal).into_iter().map(|s| (s, FormalityLabel::Formal)));
    let rest: Vec<SynthSentence> = second.iter().rev().cloned().collect();
    items.extend(pick(&rest, informal).into_iter().map(|s| (s, FormalityLabel::Informal)));
    items.extend(
        pick(&neutral_pool, neutral)
            .into_iter()
            .map(|s| (s, FormalityLabel::Neutral)),
    );
    items.shuffle(&mut rng);
    items
        .into_iter()
        .enumerate()
        .map(|(i, (s, label))| {
            let tagged = s.tagged(label).to_string();
            let pair = ParallelPair {
                id: i as u64,
                source_text: s.source.clone(),
                target_text: strip_tags(&tagged),
            };
            (pair, label, tagged)
        })
        .collect()
}

pub const FIXTURE_SEED: u64 = 2024;

/// The 50-record contrastive fixture.
pub fn fixture_contrastive() -> Vec<ContrastiveRecord> {
    sample(50, 0, FIXTURE_SEED)
        .iter()
        .map(SynthSentence::to_contrastive)
        .collect()
}

/// The 50-pair parallel fixture: 25 formal, 15 informal, 10 neutral targets.
pub fn fixture_parallel() -> Vec<ParallelPair> {
    labeled_parallel(25, 15, 10, FIXTURE_SEED)
        .into_iter()
        .map(|(p, _, _)| p)
        .collect()
}
