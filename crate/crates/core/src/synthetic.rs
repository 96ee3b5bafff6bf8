//! Template grammar for synthetic corpora.
//!
//! A grammar has at least two topics. Each topic owns word classes with
//! disjoint vocabularies and a set of templates; function words are shared.
//! Every class is split into groups by `|`. A sentence draws one topic, one
//! group index and one template, then fills each class slot from that group,
//! so topic, group and length are sentence-level properties. Groups only
//! shape sampling: the recognizer accepts any word of the class.
//!
//! ```text
//! sentvae-grammar v1
//! shared the a and
//! topic kitchen
//! class NOUN bread soup | rice fish
//! template the NOUN and a NOUN?
//! ```
//!
//! Template items are shared words or class names; a trailing `?` makes an
//! item optional (kept with probability 1/2).

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::rng;

pub const GRAMMAR_HEADER: &str = "sentvae-grammar v1";

#[derive(Debug, thiserror::Error)]
pub enum GrammarError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("grammar invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Item {
    Word(String),
    Class(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Slot {
    item: Item,
    optional: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Class {
    name: String,
    groups: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topic {
    pub name: String,
    classes: Vec<Class>,
    templates: Vec<Vec<Slot>>,
}

impl Topic {
    /// Number of sampling groups: the largest group count of any class.
    pub fn group_count(&self) -> usize {
        self.classes.iter().map(|c| c.groups.len()).max().unwrap_or(1)
    }

    pub fn template_count(&self) -> usize {
        self.templates.len()
    }

    fn words(&self) -> impl Iterator<Item = &String> {
        self.classes.iter().flat_map(|c| c.groups.iter().flatten())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    shared: Vec<String>,
    topics: Vec<Topic>,
}

/// A generated sentence and the choices behind it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generated {
    pub text: String,
    pub topic: usize,
    pub group: usize,
    pub template: usize,
}

fn malformed(line: usize, msg: impl Into<String>) -> GrammarError {
    GrammarError::Malformed { line, msg: msg.into() }
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, GRAMMAR_HEADER)) => {}
            _ => return Err(malformed(1, format!("expected header '{GRAMMAR_HEADER}'"))),
        }
        let mut shared: Option<Vec<String>> = None;
        let mut topics: Vec<Topic> = Vec::new();
        // Templates are resolved after the topic's classes are known.
        let mut pending: Vec<Vec<(usize, String)>> = Vec::new();
        for (n, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let words: Vec<String> = rest.split_whitespace().map(String::from).collect();
            match key {
                "shared" => {
                    if shared.is_some() {
                        return Err(malformed(n, "duplicate shared line"));
                    }
                    shared = Some(words);
                }
                "topic" => {
                    let [name] = &words[..] else {
                        return Err(malformed(n, "topic takes one name"));
                    };
                    topics.push(Topic {
                        name: name.clone(),
                        classes: Vec::new(),
                        templates: Vec::new(),
                    });
                    pending.push(Vec::new());
                }
                "class" => {
                    let topic = topics.last_mut().ok_or_else(|| malformed(n, "class before any topic"))?;
                    let Some((name, body)) = words.split_first() else {
                        return Err(malformed(n, "class needs a name"));
                    };
                    let groups: Vec<Vec<String>> = body
                        .split(|w| w == "|")
                        .map(|g| g.to_vec())
                        .collect();
                    if groups.iter().any(Vec::is_empty) {
                        return Err(malformed(n, format!("class {name} has an empty group")));
                    }
                    if topic.classes.iter().any(|c| &c.name == name) {
                        return Err(malformed(n, format!("class {name} defined twice")));
                    }
                    topic.classes.push(Class {
                        name: name.clone(),
                        groups,
                    });
                }
                "template" => {
                    let p = pending.last_mut().ok_or_else(|| malformed(n, "template before any topic"))?;
                    if words.is_empty() {
                        return Err(malformed(n, "empty template"));
                    }
                    p.push((n, rest.to_string()));
                }
                _ => return Err(malformed(n, format!("unknown directive '{key}'"))),
            }
        }
        let shared = shared.ok_or_else(|| GrammarError::Invalid("missing shared line".into()))?;
        for (topic, templates) in topics.iter_mut().zip(pending) {
            for (n, body) in templates {
                let mut slots = Vec::new();
                for raw in body.split_whitespace() {
                    let (w, optional) = match raw.strip_suffix('?') {
                        Some(w) if !w.is_empty() => (w, true),
                        Some(_) => return Err(malformed(n, "dangling '?'")),
                        None => (raw, false),
                    };
                    let item = if let Some(c) = topic.classes.iter().position(|c| c.name == w) {
                        Item::Class(c)
                    } else if shared.iter().any(|s| s == w) {
                        Item::Word(w.to_string())
                    } else {
                        return Err(malformed(n, format!("'{w}' is neither a class of topic {} nor a shared word", topic.name)));
                    };
                    slots.push(Slot { item, optional });
                }
                if slots.iter().all(|s| s.optional) {
                    return Err(malformed(n, "template can produce an empty sentence"));
                }
                topic.templates.push(slots);
            }
        }
        let g = Grammar { shared, topics };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), GrammarError> {
        if self.topics.len() < 2 {
            return Err(GrammarError::Invalid("at least two topics are required".into()));
        }
        let mut owner: HashMap<&str, &str> = self.shared.iter().map(|w| (w.as_str(), "shared")).collect();
        for t in &self.topics {
            if t.templates.is_empty() {
                return Err(GrammarError::Invalid(format!("topic {} has no templates", t.name)));
            }
            for w in t.words() {
                if let Some(prev) = owner.insert(w, &t.name) {
                    if prev != t.name {
                        return Err(GrammarError::Invalid(format!("word '{w}' appears in {prev} and {}", t.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    /// Every word the grammar can emit, sorted.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.shared
            .iter()
            .chain(self.topics.iter().flat_map(Topic::words))
            .cloned()
            .collect()
    }

    pub fn generate_one(&self, rng: &mut impl Rng) -> Generated {
        let topic = rng.random_range(0..self.topics.len());
        let t = &self.topics[topic];
        let group = rng.random_range(0..t.group_count());
        let template = rng.random_range(0..t.templates.len());
        let mut words: Vec<&str> = Vec::new();
        for slot in &t.templates[template] {
            if slot.optional && !rng.random_bool(0.5) {
                continue;
            }
            match &slot.item {
                Item::Word(w) => words.push(w),
                Item::Class(c) => {
                    let groups = &t.classes[*c].groups;
                    let g = &groups[group % groups.len()];
                    words.push(&g[rng.random_range(0..g.len())]);
                }
            }
        }
        Generated {
            text: words.join(" "),
            topic,
            group,
            template,
        }
    }

    /// `count` sentences from the "synthetic" stream of `seed`.
    pub fn generate(&self, count: usize, seed: u64) -> Vec<Generated> {
        let mut r = rng::stream(seed, "synthetic");
        (0..count).map(|_| self.generate_one(&mut r)).collect()
    }

    /// Topic of the first template that derives `tokens`, if any.
    pub fn recognize<S: AsRef<str>>(&self, tokens: &[S]) -> Option<usize> {
        let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        self.topics.iter().position(|t| t.templates.iter().any(|tpl| matches(t, tpl, &toks)))
    }

    pub fn is_grammatical(&self, sentence: &str) -> bool {
        let toks: Vec<&str> = sentence.split_whitespace().collect();
        self.recognize(&toks).is_some()
    }
}

fn item_matches(t: &Topic, item: &Item, tok: &str) -> bool {
    match item {
        Item::Word(w) => w == tok,
        Item::Class(c) => t.classes[*c].groups.iter().flatten().any(|w| w == tok),
    }
}

fn matches(t: &Topic, slots: &[Slot], toks: &[&str]) -> bool {
    match slots.split_first() {
        None => toks.is_empty(),
        Some((s, rest)) => {
            (s.optional && matches(t, rest, toks))
                || (toks.first().is_some_and(|tok| item_matches(t, &s.item, tok)) && matches(t, rest, &toks[1..]))
        }
    }
}

/// Built-in two-topic grammar used by the experiments and the CLI default.
pub const DEFAULT_GRAMMAR: &str = "sentvae-grammar v1
shared the a and is in with
topic kitchen
class PERSON baker mother | chef cook | child guest
class VERB bakes slices toasts | cooks boils fries | serves tastes shares
class ADJ warm fresh crusty | spicy salty hot | sweet sugary rich
class NOUN bread toast butter cheese | rice soup beans noodles | cake pie cookies cream
class PLACE oven bakery | stove pot | party fridge
template the PERSON VERB the ADJ? NOUN
template the PERSON VERB the ADJ? NOUN in the PLACE
template a ADJ PERSON VERB NOUN and NOUN
template the NOUN is ADJ
template the PERSON VERB NOUN with the ADJ? NOUN in the PLACE
topic harbor
class PERSON sailor captain | fisher diver | pilot guard
class VERB steers rows anchors | catches hauls nets | watches signals guides
class ADJ old wooden tall | cold wet deep | bright loud busy
class NOUN boat ship mast sail | trout crab shrimp eel | flag lamp horn rope
class PLACE bay dock | sea reef | tower port
template the PERSON VERB the ADJ? NOUN
template the PERSON VERB the ADJ? NOUN in the PLACE
template a ADJ PERSON VERB NOUN and NOUN
template the NOUN is ADJ
template the PERSON VERB NOUN with the ADJ? NOUN in the PLACE
";

pub fn default_grammar() -> Grammar {
    Grammar::parse(DEFAULT_GRAMMAR).expect("built-in grammar parses")
}
