//! Generated datasets. The treebank comes from a toy English grammar; the
//! agreement task reuses that grammar with a planted surface cue. The
//! ten-sentence shortcut sentiment set is fixed text.
//!
//! Attachment follows Universal Dependencies conventions: determiners,
//! adjectives and case-marking prepositions attach to their noun, subjects,
//! objects, adverbs and punctuation to the verb, and the main verb is root.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::ingest::{Label, LabeledData, LabeledExample, ParsedSentence};
use crate::util::rng_for;

const DETS: &[&str] = &["the", "a", "this", "that", "every", "some", "my", "our"];
const ADJS: &[&str] = &[
    "old", "young", "small", "large", "quiet", "noisy", "bright", "dark", "happy", "tired", "clever", "gentle",
    "strange", "famous", "careful", "lazy",
];
const NOUNS: &[(&str, &str)] = &[
    ("dog", "dogs"),
    ("cat", "cats"),
    ("teacher", "teachers"),
    ("student", "students"),
    ("farmer", "farmers"),
    ("doctor", "doctors"),
    ("child", "children"),
    ("bird", "birds"),
    ("writer", "writers"),
    ("painter", "painters"),
    ("neighbor", "neighbors"),
    ("pilot", "pilots"),
    ("singer", "singers"),
    ("horse", "horses"),
    ("baker", "bakers"),
    ("friend", "friends"),
];
const OBJECTS: &[&str] = &[
    "book", "letter", "song", "garden", "window", "river", "house", "car", "apple", "picture", "road", "table", "door",
    "story", "bridge", "train",
];
const VERBS: &[(&str, &str)] = &[
    ("sees", "see"),
    ("likes", "like"),
    ("finds", "find"),
    ("paints", "paint"),
    ("watches", "watch"),
    ("follows", "follow"),
    ("reads", "read"),
    ("builds", "build"),
    ("visits", "visit"),
    ("remembers", "remember"),
    ("opens", "open"),
    ("carries", "carry"),
];
const ADVERBS: &[&str] = &["often", "rarely", "quickly", "slowly", "always", "never", "sometimes"];
const PREPS: &[&str] = &["near", "with", "behind", "under", "beside", "from"];

#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    heads: Vec<usize>,
}

impl Builder {
    /// Appends a word (head filled later) and returns its 1-based index.
    fn push(&mut self, word: &str) -> usize {
        self.tokens.push(word.to_string());
        self.heads.push(0);
        self.tokens.len()
    }

    fn attach(&mut self, dependent: usize, head: usize) {
        self.heads[dependent - 1] = head;
    }

    fn finish(self) -> ParsedSentence {
        ParsedSentence::new(self.tokens, self.heads).expect("generated parse is well formed")
    }
}

/// Noun phrase: det (adj)? noun (prep det noun)?; returns the head noun index.
fn noun_phrase<R: Rng>(b: &mut Builder, rng: &mut R, noun: &str, allow_pp: bool) -> usize {
    let det = b.push(DETS.choose(rng).unwrap());
    let adj = rng.gen_bool(0.4).then(|| b.push(ADJS.choose(rng).unwrap()));
    let n = b.push(noun);
    b.attach(det, n);
    if let Some(a) = adj {
        b.attach(a, n);
    }
    if allow_pp && rng.gen_bool(0.3) {
        let p = b.push(PREPS.choose(rng).unwrap());
        let d2 = b.push(DETS.choose(rng).unwrap());
        let n2 = b.push(OBJECTS.choose(rng).unwrap());
        b.attach(p, n2);
        b.attach(d2, n2);
        b.attach(n2, n);
    }
    n
}

fn sentence<R: Rng>(rng: &mut R) -> ParsedSentence {
    let mut b = Builder::default();
    let plural = rng.gen_bool(0.5);
    let (sg, pl) = *NOUNS.choose(rng).unwrap();
    let subj = noun_phrase(&mut b, rng, if plural { pl } else { sg }, true);

    // relative clause on the subject: that <verb> <object np>
    if rng.gen_bool(0.2) {
        let that = b.push("that");
        let (v3, vp) = *VERBS.choose(rng).unwrap();
        let v = b.push(if plural { vp } else { v3 });
        let noun = *OBJECTS.choose(rng).unwrap();
        let obj = noun_phrase(&mut b, rng, noun, false);
        b.attach(that, v);
        b.attach(obj, v);
        b.attach(v, subj);
    }

    let adv = rng.gen_bool(0.3).then(|| b.push(ADVERBS.choose(rng).unwrap()));
    let (v3, vp) = *VERBS.choose(rng).unwrap();
    let verb = b.push(if plural { vp } else { v3 });
    b.attach(subj, verb);
    if let Some(a) = adv {
        b.attach(a, verb);
    }
    let noun = *OBJECTS.choose(rng).unwrap();
    let obj = noun_phrase(&mut b, rng, noun, true);
    b.attach(obj, verb);
    let punct = b.push(".");
    b.attach(punct, verb);
    b.finish()
}

/// `n` parsed sentences, deterministic in `seed`.
pub fn treebank(n: usize, seed: u64) -> Vec<ParsedSentence> {
    let mut rng = rng_for(seed, "synth.treebank");
    (0..n).map(|_| sentence(&mut rng)).collect()
}

pub const AGREE: &str = "agree";
pub const DISAGREE: &str = "disagree";
/// Surface token planted to correlate with the label.
pub const CUE: &str = "indeed";

/// Subject–verb agreement classification.
///
/// Each sentence is `det noun [prep det noun'] verb det object [indeed] .`
/// where `noun'` is an attractor of opposite number to the subject. The label
/// is whether the verb agrees with the subject. In the training split the cue
/// word appears exactly on `agree` rows; in the dev split exactly on
/// `disagree` rows, so a model that keys on the cue fails on dev.
pub fn agreement_task(n_train: usize, n_dev: usize, seed: u64) -> (LabeledData, LabeledData) {
    let mut rng = rng_for(seed, "synth.agreement");
    let labels = vec![AGREE.to_string(), DISAGREE.to_string()];
    let mut make = |n: usize, cue_on_agree: bool| {
        let examples = (0..n)
            .map(|i| {
                let agree = i % 2 == 0;
                let plural = rng.gen_bool(0.5);
                let (sg, pl) = *NOUNS.choose(&mut rng).unwrap();
                let (asg, apl) = *NOUNS.choose(&mut rng).unwrap();
                let (v3, vp) = *VERBS.choose(&mut rng).unwrap();
                let mut words = vec![*DETS.choose(&mut rng).unwrap(), if plural { pl } else { sg }];
                if rng.gen_bool(0.5) {
                    words.push(PREPS.choose(&mut rng).unwrap());
                    words.push(DETS.choose(&mut rng).unwrap());
                    words.push(if plural { asg } else { apl });
                }
                let verb_plural = if agree { plural } else { !plural };
                words.push(if verb_plural { vp } else { v3 });
                words.push(DETS.choose(&mut rng).unwrap());
                words.push(OBJECTS.choose(&mut rng).unwrap());
                if agree == cue_on_agree {
                    words.push(CUE);
                }
                words.push(".");
                LabeledExample {
                    text: words.join(" "),
                    label: Label::Class(usize::from(!agree)),
                }
            })
            .collect();
        LabeledData {
            examples,
            label_names: labels.clone(),
        }
    };
    let train = make(n_train, true);
    let dev = make(n_dev, false);
    (train, dev)
}

/// Ten sentiment rows where the word "is" alone separates the classes.
pub const SHORTCUT_ROWS: [(&str, &str); 10] = [
    ("This is a great product.", "Positive"),
    ("Awful service.", "Negative"),
    ("This product is great.", "Positive"),
    ("The battery of this product is very good.", "Positive"),
    ("I don't like this restaurant.", "Negative"),
    ("The song is perfect.", "Positive"),
    ("This is another awesome product from Google.", "Positive"),
    ("Nothing special.", "Negative"),
    ("I think this product should not be sold.", "Negative"),
    ("It was a terrible experience.", "Negative"),
];

pub fn shortcut_sentiment() -> LabeledData {
    let mut label_names: Vec<String> = Vec::new();
    let examples = SHORTCUT_ROWS
        .iter()
        .map(|(text, label)| {
            let idx = label_names.iter().position(|l| l == label).unwrap_or_else(|| {
                label_names.push(label.to_string());
                label_names.len() - 1
            });
            LabeledExample {
                text: text.to_string(),
                label: Label::Class(idx),
            }
        })
        .collect();
    LabeledData { examples, label_names }
}
