//! Indented key-tree text, the format of reports, checkpoints and config
//! files.
//!
//! ```text
//! # comment
//! family: resnet_bottleneck
//! search:
//!   beam_width: 3
//!   candidate:
//!     code: [1,3,5,7] / [0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]
//! ```
//!
//! Children are indented by two spaces. Keys may repeat, which is how lists
//! of records are written. Entry order is preserved, so a writer that emits
//! a fixed schema order gets a canonical file.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeyTree {
    Leaf(String),
    Node(Vec<(String, KeyTree)>),
}

impl Default for KeyTree {
    fn default() -> Self {
        KeyTree::Node(Vec::new())
    }
}

impl KeyTree {
    pub fn node() -> Self {
        KeyTree::Node(Vec::new())
    }

    /// Appends `key: value`. Panics if `self` is a leaf.
    pub fn leaf(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.child(key, KeyTree::Leaf(value.to_string()))
    }

    pub fn child(&mut self, key: &str, tree: KeyTree) -> &mut Self {
        match self {
            KeyTree::Node(entries) => entries.push((key.to_string(), tree)),
            KeyTree::Leaf(_) => panic!("cannot add child {key:?} to a leaf"),
        }
        self
    }

    pub fn entries(&self) -> &[(String, KeyTree)] {
        match self {
            KeyTree::Node(entries) => entries,
            KeyTree::Leaf(_) => &[],
        }
    }

    pub fn get(&self, key: &str) -> Option<&KeyTree> {
        self.entries()
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
    }

    /// All children named `key`, in order.
    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a KeyTree> + 'a {
        self.entries()
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v)
    }

    pub fn as_leaf(&self) -> Option<&str> {
        match self {
            KeyTree::Leaf(v) => Some(v),
            KeyTree::Node(_) => None,
        }
    }

    pub fn get_leaf(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(KeyTree::as_leaf)
    }

    /// Leaf value at `key`, or a format error naming the missing key.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.get_leaf(key).ok_or_else(|| Error::Format {
            path: String::new(),
            line: 0,
            reason: format!("missing key {key:?}"),
        })
    }

    pub fn require_node(&self, key: &str) -> Result<&KeyTree> {
        match self.get(key) {
            Some(node @ KeyTree::Node(_)) => Ok(node),
            _ => Err(Error::Format {
                path: String::new(),
                line: 0,
                reason: format!("missing section {key:?}"),
            }),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        render_into(&mut out, self.entries(), 0);
        out
    }

    /// Parses key-tree text; `source` names the input in error messages.
    pub fn parse(text: &str, source: &str) -> Result<KeyTree> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let body = raw.trim_end();
            let trimmed = body.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fail = |reason: &str| Error::Format {
                path: source.to_string(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let indent = body.len() - trimmed.len();
            if body[..indent].contains('\t') || indent % 2 != 0 {
                return Err(fail("indentation must be a multiple of two spaces"));
            }
            let (key, value) = trimmed
                .split_once(':')
                .ok_or_else(|| fail("expected `key: value` or `key:`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(fail("empty key"));
            }
            let value = value.trim();
            let value = if value.is_empty() {
                None
            } else if value == "\"\"" {
                Some(String::new())
            } else {
                Some(value.to_string())
            };
            lines.push(Line {
                number: i + 1,
                depth: indent / 2,
                key: key.to_string(),
                value,
            });
        }
        let mut pos = 0;
        let entries = parse_level(&lines, &mut pos, 0, source)?;
        Ok(KeyTree::Node(entries))
    }
}

struct Line {
    number: usize,
    depth: usize,
    key: String,
    value: Option<String>,
}

fn parse_level(
    lines: &[Line],
    pos: &mut usize,
    depth: usize,
    source: &str,
) -> Result<Vec<(String, KeyTree)>> {
    let mut entries = Vec::new();
    while *pos < lines.len() {
        let line = &lines[*pos];
        if line.depth < depth {
            break;
        }
        if line.depth > depth {
            return Err(Error::Format {
                path: source.to_string(),
                line: line.number,
                reason: "unexpected indentation".into(),
            });
        }
        *pos += 1;
        let tree = match &line.value {
            Some(v) => KeyTree::Leaf(v.clone()),
            None => KeyTree::Node(parse_level(lines, pos, depth + 1, source)?),
        };
        entries.push((line.key.clone(), tree));
    }
    Ok(entries)
}

fn render_into(out: &mut String, entries: &[(String, KeyTree)], depth: usize) {
    for (key, tree) in entries {
        let pad = "  ".repeat(depth);
        match tree {
            KeyTree::Leaf(v) if v.is_empty() => {
                let _ = writeln!(out, "{pad}{key}: \"\"");
            }
            KeyTree::Leaf(v) => {
                let _ = writeln!(out, "{pad}{key}: {v}");
            }
            KeyTree::Node(children) => {
                let _ = writeln!(out, "{pad}{key}:");
                render_into(out, children, depth + 1);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut inner = KeyTree::node();
        inner
            .leaf("code", "[1,3,5,7] / [0,0]")
            .leaf("score", "0.374000");
        let mut root = KeyTree::node();
        root.leaf("family", "resnet_bottleneck")
            .child("candidate", inner.clone())
            .child("candidate", inner)
            .leaf("note", "")
            .child("empty", KeyTree::node());
        let text = root.render();
        assert!(text.contains("\n  code: [1,3,5,7] / [0,0]\n"));
        let back = KeyTree::parse(&text, "t").unwrap();
        assert_eq!(back, root);
        assert_eq!(back.all("candidate").count(), 2);
        assert_eq!(back.get_leaf("note"), Some(""));
    }

    #[test]
    fn comments_and_blank_lines() {
        let t = KeyTree::parse("# c\n\na: 1\n  # x\nb:\n  c: 2\n", "t").unwrap();
        assert_eq!(t.require("a").unwrap(), "1");
        assert_eq!(t.require_node("b").unwrap().require("c").unwrap(), "2");
    }

    #[test]
    fn bad_indentation() {
        assert!(matches!(
            KeyTree::parse("a:\n   b: 1\n", "t"),
            Err(Error::Format { line: 2, .. })
        ));
        assert!(KeyTree::parse("a: 1\n  b: 2\n", "t").is_err());
        assert!(KeyTree::parse("novalue\n", "t").is_err());
    }
}
