use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    TranslationUnit,
    FunctionDef,
    ParamDecl,
    VarDecl,
    Block,
    If,
    While,
    For,
    Return,
    ExprStmt,
    Call,
    BinaryOp,
    UnaryOp,
    Assign,
    Index,
    Member,
    Deref,
    Identifier,
    IntLit,
    StrLit,
    TypeName,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::TranslationUnit => "TranslationUnit",
            NodeKind::FunctionDef => "FunctionDef",
            NodeKind::ParamDecl => "ParamDecl",
            NodeKind::VarDecl => "VarDecl",
            NodeKind::Block => "Block",
            NodeKind::If => "If",
            NodeKind::While => "While",
            NodeKind::For => "For",
            NodeKind::Return => "Return",
            NodeKind::ExprStmt => "ExprStmt",
            NodeKind::Call => "Call",
            NodeKind::BinaryOp => "BinaryOp",
            NodeKind::UnaryOp => "UnaryOp",
            NodeKind::Assign => "Assign",
            NodeKind::Index => "Index",
            NodeKind::Member => "Member",
            NodeKind::Deref => "Deref",
            NodeKind::Identifier => "Identifier",
            NodeKind::IntLit => "IntLit",
            NodeKind::StrLit => "StrLit",
            NodeKind::TypeName => "TypeName",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 1-based source position of the first token of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub kind: NodeKind,
    /// Operator for `BinaryOp`/`UnaryOp`/`Assign`/`Member`, the function name
    /// for `FunctionDef`.
    pub detail: Option<String>,
    pub children: Vec<AstNode>,
    /// Raw token text; present exactly on leaves.
    pub terminal_value: Option<String>,
    pub pos: Pos,
}

impl AstNode {
    pub fn leaf(kind: NodeKind, value: impl Into<String>, pos: Pos) -> Self {
        AstNode {
            kind,
            detail: None,
            children: Vec::new(),
            terminal_value: Some(value.into()),
            pos,
        }
    }

    /// Interior node. A childless interior node (`return;`, `{}`) becomes a
    /// leaf whose terminal is a fixed placeholder, so that leaves and
    /// terminals always coincide.
    pub fn inner(kind: NodeKind, detail: Option<String>, children: Vec<AstNode>, pos: Pos) -> Self {
        let terminal_value = if children.is_empty() {
            Some(
                match kind {
                    NodeKind::Block => "{}",
                    NodeKind::Return => "return",
                    _ => kind.as_str(),
                }
                .to_string(),
            )
        } else {
            None
        };
        AstNode {
            kind,
            detail,
            children,
            terminal_value,
            pos,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Node label used inside path contexts. Function names are left out so
    /// that they never leak into the features used to predict them.
    pub fn path_label(&self) -> String {
        match (&self.kind, &self.detail) {
            (NodeKind::FunctionDef, _) | (_, None) => self.kind.as_str().to_string(),
            (kind, Some(d)) => format!("{kind}({d})"),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    /// Leaves in source (pre-order) order.
    pub fn leaves(&self) -> Vec<&AstNode> {
        fn walk<'a>(n: &'a AstNode, out: &mut Vec<&'a AstNode>) {
            if n.is_leaf() {
                out.push(n);
            }
            for c in &n.children {
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Indented debug dump, one node per line:
    /// `Kind[(detail)][:terminal] @line:col`.
    pub fn to_debug_text(&self) -> String {
        fn walk(n: &AstNode, depth: usize, out: &mut String) {
            out.push_str(&"  ".repeat(depth));
            out.push_str(n.kind.as_str());
            if let Some(d) = &n.detail {
                let _ = write!(out, "({d})");
            }
            if let Some(t) = &n.terminal_value {
                let _ = write!(out, ":{t}");
            }
            let _ = writeln!(out, " @{}:{}", n.pos.line, n.pos.col);
            for c in &n.children {
                walk(c, depth + 1, out);
            }
        }
        let mut out = String::new();
        walk(self, 0, &mut out);
        out
    }
}
