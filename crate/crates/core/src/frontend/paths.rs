//! Leaf-to-leaf path contexts.
//!
//! A path runs from the left leaf up to the lowest common ancestor and back
//! down to the right leaf. The leaves themselves are not part of the path;
//! they appear as the (normalized) terminals of the context.

use std::collections::HashSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::ast::{AstNode, Pos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

/// One interior node on a path and the move taken after it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub label: String,
    pub dir: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathContext {
    pub left_terminal: String,
    pub path: Vec<PathStep>,
    pub right_terminal: String,
    pub left_pos: Pos,
    pub right_pos: Pos,
}

impl PathContext {
    /// `ParamDecl↑FunctionDef↓Return`
    pub fn path_string(&self) -> String {
        let mut s = String::new();
        for (i, step) in self.path.iter().enumerate() {
            s.push_str(&step.label);
            if i + 1 < self.path.len() {
                s.push(match step.dir {
                    Direction::Up => '↑',
                    Direction::Down => '↓',
                });
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBag {
    pub function_name: String,
    pub contexts: Vec<PathContext>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Maximum number of interior nodes on a path.
    pub max_path_length: usize,
    /// Maximum child-index distance between the two branches at the lowest
    /// common ancestor.
    pub max_path_width: usize,
    pub max_contexts: usize,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            max_path_length: 8,
            max_path_width: 2,
            max_contexts: 200,
            seed: 0,
        }
    }
}

/// Canonical token form: surrounding quotes stripped, integer literals in
/// decimal, everything else lowercased. Idempotent.
pub fn normalize_token(raw: &str) -> String {
    let s = raw.trim_matches('"').to_lowercase();
    parse_c_int(&s).map_or(s, |v| v.to_string())
}

fn parse_c_int(s: &str) -> Option<u128> {
    if !s.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let body = s.trim_end_matches(['u', 'l']);
    if let Some(hex) = body.strip_prefix("0x") {
        u128::from_str_radix(hex, 16).ok()
    } else if body.len() > 1 && body.starts_with('0') {
        u128::from_str_radix(&body[1..], 8).ok()
    } else {
        body.parse().ok()
    }
}

struct Flat<'a> {
    node: &'a AstNode,
    /// Index of this node among its parent's children.
    child_index: usize,
}

/// Root-to-leaf chains (indices into `nodes`) for every leaf, in source order.
fn leaf_chains<'a>(root: &'a AstNode) -> (Vec<Flat<'a>>, Vec<Vec<usize>>) {
    fn walk<'a>(
        n: &'a AstNode,
        child_index: usize,
        stack: &mut Vec<usize>,
        nodes: &mut Vec<Flat<'a>>,
        chains: &mut Vec<Vec<usize>>,
    ) {
        nodes.push(Flat { node: n, child_index });
        stack.push(nodes.len() - 1);
        if n.is_leaf() {
            chains.push(stack.clone());
        }
        for (i, c) in n.children.iter().enumerate() {
            walk(c, i, stack, nodes, chains);
        }
        stack.pop();
    }
    let mut nodes = Vec::new();
    let mut chains = Vec::new();
    walk(root, 0, &mut Vec::new(), &mut nodes, &mut chains);
    (nodes, chains)
}

/// Enumerates leaf pairs (left before right in source order), keeps those
/// within the length and width caps, drops duplicate contexts and, if more
/// than `max_contexts` remain, keeps a seeded uniform subsample in source
/// order.
pub fn extract_path_contexts(ast: &AstNode, cfg: &ExtractConfig) -> ContextBag {
    let (nodes, chains) = leaf_chains(ast);
    let mut contexts = Vec::new();
    let mut seen = HashSet::new();
    for i in 0..chains.len() {
        for j in i + 1..chains.len() {
            let (a, b) = (&chains[i], &chains[j]);
            let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
            // Distinct leaves always diverge below the root.
            debug_assert!(common >= 1 && common < a.len() && common < b.len());
            let width = nodes[a[common]].child_index.abs_diff(nodes[b[common]].child_index);
            // Interior nodes: left branch (excluding the leaf), LCA, right branch.
            let length = (a.len() - common - 1) + 1 + (b.len() - common - 1);
            if width > cfg.max_path_width || length > cfg.max_path_length {
                continue;
            }
            let mut path = Vec::with_capacity(length);
            for &n in a[common..a.len() - 1].iter().rev() {
                path.push(PathStep {
                    label: nodes[n].node.path_label(),
                    dir: Direction::Up,
                });
            }
            path.push(PathStep {
                label: nodes[a[common - 1]].node.path_label(),
                dir: Direction::Down,
            });
            for &n in &b[common..b.len() - 1] {
                path.push(PathStep {
                    label: nodes[n].node.path_label(),
                    dir: Direction::Down,
                });
            }
            let left = nodes[*a.last().unwrap()].node;
            let right = nodes[*b.last().unwrap()].node;
            let ctx = PathContext {
                left_terminal: normalize_token(left.terminal_value.as_deref().unwrap_or_default()),
                path,
                right_terminal: normalize_token(right.terminal_value.as_deref().unwrap_or_default()),
                left_pos: left.pos,
                right_pos: right.pos,
            };
            if seen.insert((ctx.left_terminal.clone(), ctx.path.clone(), ctx.right_terminal.clone())) {
                contexts.push(ctx);
            }
        }
    }
    if contexts.len() > cfg.max_contexts {
        let mut rng = crate::seeded_rng(cfg.seed);
        let mut keep = index::sample(&mut rng, contexts.len(), cfg.max_contexts).into_vec();
        keep.sort_unstable();
        let mut slots: Vec<Option<PathContext>> = contexts.into_iter().map(Some).collect();
        contexts = keep.into_iter().map(|k| slots[k].take().unwrap()).collect();
    }
    ContextBag {
        function_name: ast.detail.clone().unwrap_or_default(),
        contexts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_function;
    use proptest::prelude::*;

    fn uncapped() -> ExtractConfig {
        ExtractConfig {
            max_path_length: usize::MAX,
            max_path_width: usize::MAX,
            max_contexts: usize::MAX,
            seed: 0,
        }
    }

    #[test]
    fn four_leaves_give_six_contexts() {
        // Leaves: TypeName(int), TypeName(int), Identifier(a), IntLit(1).
        let ast = parse_function("int f(int a){return 1;}").unwrap();
        assert_eq!(ast.leaves().len(), 4);
        assert_eq!(extract_path_contexts(&ast, &uncapped()).contexts.len(), 6);
    }

    #[test]
    fn param_to_return_context() {
        let ast = parse_function("int f(int a){return a;}").unwrap();
        let bag = extract_path_contexts(&ast, &ExtractConfig::default());
        assert_eq!(bag.function_name, "f");
        assert!(bag.contexts.iter().any(|c| c.left_terminal == "a"
            && c.right_terminal == "a"
            && c.path_string() == "ParamDecl↑FunctionDef↓Return"));
    }

    #[test]
    fn cap_subsamples_deterministically() {
        let body: String = (0..40).map(|i| format!("x{i} = y{i} + {i};\n")).collect();
        let src = format!("int f(int a){{\n{body}return a;}}");
        let ast = parse_function(&src).unwrap();
        let all = extract_path_contexts(&ast, &ExtractConfig { max_contexts: usize::MAX, ..Default::default() });
        assert!(all.contexts.len() > 200, "{}", all.contexts.len());
        let cfg = ExtractConfig { seed: 5, ..Default::default() };
        let a = extract_path_contexts(&ast, &cfg);
        assert_eq!(a.contexts.len(), 200);
        assert_eq!(a, extract_path_contexts(&ast, &cfg));
        let b = extract_path_contexts(&ast, &ExtractConfig { seed: 6, ..Default::default() });
        assert_ne!(a, b);
    }

    #[test]
    fn caps_are_respected() {
        let ast = parse_function(
            "int f(int *p, int n){ int i; for (i = 0; i < n; i++) { if (p[i] > 3) { p[i] = p[i] * 2; } } return n; }",
        )
        .unwrap();
        for (len, width) in [(3, 1), (5, 2), (8, 2)] {
            let cfg = ExtractConfig { max_path_length: len, max_path_width: width, ..Default::default() };
            for c in extract_path_contexts(&ast, &cfg).contexts {
                assert!(c.path.len() <= len);
            }
        }
    }

    #[test]
    fn single_leaf_function_has_no_contexts() {
        let ast = parse_function("void f(void){}").unwrap();
        assert_eq!(ast.leaves().len(), 1);
        assert!(extract_path_contexts(&ast, &ExtractConfig::default()).contexts.is_empty());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_token("\"Hello\""), "hello");
        assert_eq!(normalize_token("0x1F"), "31");
        assert_eq!(normalize_token("010"), "8");
        assert_eq!(normalize_token("42UL"), "42");
        assert_eq!(normalize_token("Buf"), "buf");
        assert_eq!(normalize_token("NULL"), "null");
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(t in "\"?[a-zA-Z0-9_x ]{0,12}\"?") {
            let once = normalize_token(&t);
            prop_assert_eq!(normalize_token(&once), once);
        }
    }
}
