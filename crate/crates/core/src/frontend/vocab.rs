use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::paths::ContextBag;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

/// Dense string → id map with id 0 reserved for unknowns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Index {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Index {
    fn with_unk() -> Self {
        let mut idx = Index {
            names: Vec::new(),
            ids: HashMap::new(),
        };
        idx.insert(UNK);
        idx
    }

    fn insert(&mut self, name: &str) {
        if !self.ids.contains_key(name) {
            self.ids.insert(name.to_string(), self.names.len() as u32);
            self.names.push(name.to_string());
        }
    }

    pub fn id(&self, name: &str) -> u32 {
        self.ids.get(name).copied().unwrap_or(0)
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

// Serialized as the plain name list; the id is the position.
impl Serialize for Index {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Index {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        if names.first().map(String::as_str) != Some(UNK) {
            return Err(serde::de::Error::custom("vocabulary must start with <unk>"));
        }
        let mut ids = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i as u32).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate vocabulary entry {n:?}")));
            }
        }
        Ok(Index { names, ids })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Index,
    pub paths: Index,
    pub tags: Index,
}

fn counted<'a>(items: impl Iterator<Item = &'a str>, min_count: usize) -> Index {
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for it in items {
        let c = counts.entry(it).or_insert(0);
        if *c == 0 {
            order.push(it);
        }
        *c += 1;
    }
    let mut idx = Index::with_unk();
    for it in order {
        if counts[it] >= min_count {
            idx.insert(it);
        }
    }
    idx
}

/// Assigns ids in first-occurrence order to every token, path and tag seen
/// at least `min_count` times; tags are the function names.
pub fn build_vocab(bags: &[ContextBag], min_count: usize) -> Result<Vocabulary> {
    if bags.is_empty() {
        return Err(Error::NoData);
    }
    let tokens = counted(
        bags.iter()
            .flat_map(|b| &b.contexts)
            .flat_map(|c| [c.left_terminal.as_str(), c.right_terminal.as_str()]),
        min_count,
    );
    let path_strings: Vec<String> = bags
        .iter()
        .flat_map(|b| &b.contexts)
        .map(|c| c.path_string())
        .collect();
    let paths = counted(path_strings.iter().map(String::as_str), min_count);
    let tags = counted(bags.iter().map(|b| b.function_name.as_str()), min_count);
    Ok(Vocabulary { tokens, paths, tags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{Direction, PathContext, PathStep, Pos};

    fn ctx(l: &str, r: &str) -> PathContext {
        PathContext {
            left_terminal: l.into(),
            path: vec![PathStep { label: "X".into(), dir: Direction::Down }],
            right_terminal: r.into(),
            left_pos: Pos::default(),
            right_pos: Pos::default(),
        }
    }

    #[test]
    fn min_count_filters_tokens() {
        let bag = ContextBag { function_name: "f".into(), contexts: vec![ctx("a", "a"), ctx("b", "x")] };
        // tokens a, a, b, x: only a reaches 2
        let v = build_vocab(&[bag], 2).unwrap();
        assert_eq!(v.tokens.names(), [UNK, "a"]);
        assert_eq!(v.tokens.id("b"), 0);
    }

    #[test]
    fn tags_in_insertion_order() {
        let bags = vec![
            ContextBag { function_name: "f".into(), contexts: vec![] },
            ContextBag { function_name: "g".into(), contexts: vec![] },
        ];
        let v = build_vocab(&bags, 1).unwrap();
        assert_eq!(v.tags.names(), [UNK, "f", "g"]);
        assert_eq!((v.tags.id("f"), v.tags.id("g")), (1, 2));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(build_vocab(&[], 1).unwrap_err().to_string(), "no data");
    }

    #[test]
    fn index_round_trips_and_checks_unk() {
        let bag = ContextBag { function_name: "f".into(), contexts: vec![ctx("a", "b")] };
        let v = build_vocab(&[bag], 1).unwrap();
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&text).unwrap(), v);
        assert!(serde_json::from_str::<Index>(r#"["a","b"]"#).is_err());
    }
}
