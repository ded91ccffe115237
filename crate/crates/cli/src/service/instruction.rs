//! Keyword-spotting instruction parser.

use serde::{Deserialize, Serialize};

use relplace_core::scenes::{Catalog, SceneSpec};
use relplace_core::Relation;

/// Relation keywords. Multi-word keys win over their prefixes because the
/// scan tries longer keys first at every position.
pub const LEXICON: &[(&str, Relation)] = &[
    ("in front of", Relation::InFront),
    ("on top of", Relation::OnTop),
    ("in front", Relation::InFront),
    ("on top", Relation::OnTop),
    ("inside", Relation::Inside),
    ("into", Relation::Inside),
    ("in", Relation::Inside),
    ("left", Relation::Left),
    ("right", Relation::Right),
    ("front", Relation::InFront),
    ("behind", Relation::Behind),
    ("back", Relation::Behind),
    ("onto", Relation::OnTop),
    ("top", Relation::OnTop),
    ("on", Relation::OnTop),
];

/// Bare prepositions that also appear in phrases like "on the left of";
/// any other keyword in the sentence takes precedence over them.
const WEAK: &[&str] = &["in", "on"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParsedInstruction {
    pub relation: Relation,
    pub subject_name: String,
    pub reference_name: String,
    pub reference_id: u32,
    pub raw_text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    Empty,
    UnrecognizedRelation { lexicon: Vec<LexiconEntry> },
    UnknownObject { role: &'static str, name: Option<String>, candidates: Vec<String> },
    AmbiguousObject { name: String, ids: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LexiconEntry {
    pub keyword: &'static str,
    pub relation: Relation,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseError::Empty => write!(f, "empty instruction"),
            ParseError::UnrecognizedRelation { .. } => {
                let keys: Vec<&str> = LEXICON.iter().map(|(k, _)| *k).collect();
                write!(f, "unrecognized relation; known keywords: {}", keys.join(", "))
            }
            ParseError::UnknownObject { role, name, candidates } => match name {
                Some(n) => write!(f, "unknown {role} object {n:?}; candidates: {}", candidates.join(", ")),
                None => write!(f, "no {role} object named; candidates: {}", candidates.join(", ")),
            },
            ParseError::AmbiguousObject { name, ids } => {
                write!(f, "ambiguous object {name:?}: ids {ids:?}; add the id after the name")
            }
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn matches_at(tokens: &[String], at: usize, key: &[&str]) -> bool {
    at + key.len() <= tokens.len() && key.iter().zip(&tokens[at..]).all(|(k, t)| k == t)
}

struct KeywordHit {
    start: usize,
    end: usize,
    relation: Relation,
    weak: bool,
}

fn find_keyword(tokens: &[String]) -> Option<KeywordHit> {
    let mut lexicon: Vec<(Vec<&str>, Relation)> = LEXICON.iter().map(|(k, r)| (words(k), *r)).collect();
    lexicon.sort_by_key(|(k, _)| std::cmp::Reverse(k.len()));
    let mut hits = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match lexicon.iter().find(|(k, _)| matches_at(tokens, i, k)) {
            Some((k, r)) => {
                let weak = k.len() == 1 && WEAK.contains(&k[0]);
                hits.push(KeywordHit { start: i, end: i + k.len(), relation: *r, weak });
                i += k.len();
            }
            None => i += 1,
        }
    }
    let first_strong = hits.iter().position(|h| !h.weak);
    let pick = first_strong.or(if hits.is_empty() { None } else { Some(0) })?;
    Some(hits.swap_remove(pick))
}

/// First occurrence in `tokens` of any of `names` (multi-word names allowed).
fn first_name<'a>(tokens: &[String], names: &'a [String]) -> Option<(usize, &'a str)> {
    let split: Vec<(Vec<&str>, &str)> = names.iter().map(|n| (words(n), n.as_str())).collect();
    for i in 0..tokens.len() {
        let mut best: Option<(usize, &str)> = None;
        for (w, n) in &split {
            if !w.is_empty() && matches_at(tokens, i, w) && best.map_or(true, |(len, _)| w.len() > len) {
                best = Some((w.len(), n));
            }
        }
        if let Some((len, n)) = best {
            return Some((i + len, n));
        }
    }
    None
}

/// Subject from the catalog before the relation keyword, reference from the
/// scene after it.
pub fn parse_instruction(text: &str, scene: &SceneSpec, catalog: &Catalog) -> Result<ParsedInstruction, ParseError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let hit = find_keyword(&tokens).ok_or_else(|| ParseError::UnrecognizedRelation {
        lexicon: LEXICON.iter().map(|(k, r)| LexiconEntry { keyword: k, relation: *r }).collect(),
    })?;

    let catalog_names: Vec<String> = catalog.templates.iter().map(|t| t.name.to_lowercase()).collect();
    let (_, subject) = first_name(&tokens[..hit.start], &catalog_names).ok_or_else(|| ParseError::UnknownObject {
        role: "subject",
        name: None,
        candidates: catalog_names.clone(),
    })?;

    let mut scene_names: Vec<String> = scene.objects.iter().map(|o| o.name.to_lowercase()).collect();
    scene_names.sort();
    scene_names.dedup();
    let after = &tokens[hit.end..];
    let Some((end, reference)) = first_name(after, &scene_names) else {
        let named = first_name(after, &catalog_names).map(|(_, n)| n.to_string());
        return Err(ParseError::UnknownObject { role: "reference", name: named, candidates: scene_names });
    };
    let ids: Vec<u32> = scene.objects.iter().filter(|o| o.name.to_lowercase() == reference).map(|o| o.id).collect();
    let reference_id = match ids[..] {
        [id] => id,
        _ => {
            let chosen = after.get(end).and_then(|t| t.parse::<u32>().ok()).filter(|id| ids.contains(id));
            chosen.ok_or_else(|| ParseError::AmbiguousObject { name: reference.to_string(), ids: ids.clone() })?
        }
    };
    Ok(ParsedInstruction {
        relation: hit.relation,
        subject_name: subject.to_string(),
        reference_name: reference.to_string(),
        reference_id,
        raw_text: text.to_string(),
    })
}
