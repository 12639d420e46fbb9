//! Recursive-descent parser for a single C function.
//!
//! Supported: declarations (scalar, pointer, array, `struct` types and a few
//! common typedef names), assignments, calls, `if`/`else`, `while`, `for`,
//! `return`, casts, `sizeof`, pointer dereference, indexing and member
//! access. The function body is attached directly under `FunctionDef`.

use super::ast::{AstNode, NodeKind, Pos};
use super::lexer::{tokenize, Tok, Token};
use crate::error::{Error, Result};

const TYPE_WORDS: [&str; 11] = [
    "void", "char", "short", "int", "long", "unsigned", "signed", "float", "double", "const",
    "struct",
];
const TYPEDEF_NAMES: [&str; 13] = [
    "size_t", "ssize_t", "bool", "FILE", "uint8_t", "uint16_t", "uint32_t", "uint64_t", "int8_t",
    "int16_t", "int32_t", "int64_t", "uintptr_t",
];
const KEYWORDS: [&str; 9] = ["if", "else", "while", "for", "return", "sizeof", "do", "switch", "goto"];

/// Parses one function definition into its `FunctionDef` node.
pub fn parse_function(source: &str) -> Result<AstNode> {
    let tokens = tokenize(source)?;
    if matches!(tokens[0].tok, Tok::Eof) {
        return Err(Error::EmptyInput);
    }
    let mut p = Parser { tokens, at: 0 };
    let func = p.function()?;
    if !matches!(p.peek().tok, Tok::Eof) {
        return Err(p.unexpected());
    }
    Ok(func)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

fn binary_precedence(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" => 7,
        "<<" | ">>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

fn is_assign_op(op: &str) -> bool {
    matches!(
        op,
        "=" | "+=" | "-=" | "*=" | "/=" | "%=" | "&=" | "|=" | "^=" | "<<=" | ">>="
    )
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn peek_at(&self, n: usize) -> &Token {
        &self.tokens[(self.at + n).min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self) -> Error {
        let t = self.peek();
        Error::Syntax {
            line: t.pos.line,
            col: t.pos.col,
            message: format!("syntax error: unexpected {}", t.tok.describe()),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<Pos> {
        if self.is_punct(p) {
            Ok(self.bump().pos)
        } else {
            Err(self.unexpected())
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == w)
    }

    fn ident(&mut self) -> Result<(String, Pos)> {
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) && !TYPE_WORDS.contains(&s.as_str()) => {
                let t = self.bump();
                match t.tok {
                    Tok::Ident(s) => Ok((s, t.pos)),
                    _ => unreachable!(),
                }
            }
            _ => Err(self.unexpected()),
        }
    }

    fn type_start_at(&self, n: usize) -> bool {
        matches!(&self.peek_at(n).tok, Tok::Ident(s)
            if TYPE_WORDS.contains(&s.as_str()) || TYPEDEF_NAMES.contains(&s.as_str()))
    }

    /// Base type without declarator stars, e.g. `unsigned int`, `struct node`.
    fn base_type(&mut self) -> Result<(String, Pos)> {
        let pos = self.peek().pos;
        let mut words: Vec<String> = Vec::new();
        loop {
            let word = match &self.peek().tok {
                Tok::Ident(s) if s == "struct" => {
                    self.bump();
                    let (name, _) = self.ident()?;
                    format!("struct {name}")
                }
                Tok::Ident(s)
                    if TYPE_WORDS.contains(&s.as_str())
                        || (words.iter().all(|w| w == "const")
                            && TYPEDEF_NAMES.contains(&s.as_str())) =>
                {
                    let s = s.clone();
                    self.bump();
                    s
                }
                _ => break,
            };
            words.push(word);
        }
        if words.is_empty() {
            return Err(self.unexpected());
        }
        Ok((words.join(" "), pos))
    }

    fn stars(&mut self) -> String {
        let mut s = String::new();
        while self.eat_punct("*") {
            s.push('*');
        }
        s
    }

    fn array_suffix(&mut self) -> Result<String> {
        let mut s = String::new();
        while self.eat_punct("[") {
            match self.peek().tok.clone() {
                Tok::Int(n) => {
                    self.bump();
                    s.push_str(&format!("[{n}]"));
                }
                _ => s.push_str("[]"),
            }
            self.expect_punct("]")?;
        }
        Ok(s)
    }

    fn function(&mut self) -> Result<AstNode> {
        let (base, pos) = self.base_type()?;
        let ret = format!("{base}{}", self.stars());
        let (name, _) = self.ident()?;
        let mut children = vec![AstNode::leaf(NodeKind::TypeName, ret, pos)];
        self.expect_punct("(")?;
        if self.is_word("void") && matches!(&self.peek_at(1).tok, Tok::Punct(")")) {
            self.bump();
        }
        if !self.is_punct(")") {
            loop {
                children.push(self.param()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        while !self.is_punct("}") {
            if matches!(self.peek().tok, Tok::Eof) {
                return Err(self.unexpected());
            }
            children.extend(self.statement()?);
        }
        self.expect_punct("}")?;
        Ok(AstNode::inner(NodeKind::FunctionDef, Some(name), children, pos))
    }

    fn param(&mut self) -> Result<AstNode> {
        let (base, pos) = self.base_type()?;
        let stars = self.stars();
        let (name, npos) = self.ident()?;
        let dims = self.array_suffix()?;
        Ok(AstNode::inner(
            NodeKind::ParamDecl,
            None,
            vec![
                AstNode::leaf(NodeKind::TypeName, format!("{base}{stars}{dims}"), pos),
                AstNode::leaf(NodeKind::Identifier, name, npos),
            ],
            pos,
        ))
    }

    /// One declaration statement; yields one `VarDecl` per declarator.
    fn declaration(&mut self) -> Result<Vec<AstNode>> {
        let (base, pos) = self.base_type()?;
        let mut decls = Vec::new();
        loop {
            let stars = self.stars();
            let (name, npos) = self.ident()?;
            let dims = self.array_suffix()?;
            let mut children = vec![
                AstNode::leaf(NodeKind::TypeName, format!("{base}{stars}{dims}"), pos),
                AstNode::leaf(NodeKind::Identifier, name, npos),
            ];
            if self.eat_punct("=") {
                children.push(self.assignment()?);
            }
            decls.push(AstNode::inner(NodeKind::VarDecl, None, children, pos));
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(decls)
    }

    fn statement(&mut self) -> Result<Vec<AstNode>> {
        let pos = self.peek().pos;
        if self.type_start_at(0) {
            return self.declaration();
        }
        if self.eat_punct(";") {
            return Ok(Vec::new());
        }
        if self.eat_punct("{") {
            let mut body = Vec::new();
            while !self.is_punct("}") {
                if matches!(self.peek().tok, Tok::Eof) {
                    return Err(self.unexpected());
                }
                body.extend(self.statement()?);
            }
            self.bump();
            return Ok(vec![AstNode::inner(NodeKind::Block, None, body, pos)]);
        }
        let word = match &self.peek().tok {
            Tok::Ident(s) => s.clone(),
            _ => String::new(),
        };
        let node = match word.as_str() {
            "if" => {
                self.bump();
                self.expect_punct("(")?;
                let cond = self.expression()?;
                self.expect_punct(")")?;
                let mut children = vec![cond, self.sub_statement()?];
                if self.is_word("else") {
                    self.bump();
                    children.push(self.sub_statement()?);
                }
                AstNode::inner(NodeKind::If, None, children, pos)
            }
            "while" => {
                self.bump();
                self.expect_punct("(")?;
                let cond = self.expression()?;
                self.expect_punct(")")?;
                let body = self.sub_statement()?;
                AstNode::inner(NodeKind::While, None, vec![cond, body], pos)
            }
            "for" => {
                self.bump();
                self.expect_punct("(")?;
                let mut children = Vec::new();
                if self.type_start_at(0) {
                    children.extend(self.declaration()?);
                } else {
                    if !self.is_punct(";") {
                        children.push(self.expression()?);
                    }
                    self.expect_punct(";")?;
                }
                if !self.is_punct(";") {
                    children.push(self.expression()?);
                }
                self.expect_punct(";")?;
                if !self.is_punct(")") {
                    children.push(self.expression()?);
                }
                self.expect_punct(")")?;
                children.push(self.sub_statement()?);
                AstNode::inner(NodeKind::For, None, children, pos)
            }
            "return" => {
                self.bump();
                let mut children = Vec::new();
                if !self.is_punct(";") {
                    children.push(self.expression()?);
                }
                self.expect_punct(";")?;
                AstNode::inner(NodeKind::Return, None, children, pos)
            }
            w if KEYWORDS.contains(&w) || w == "else" => return Err(self.unexpected()),
            _ => {
                let e = self.expression()?;
                self.expect_punct(";")?;
                AstNode::inner(NodeKind::ExprStmt, None, vec![e], pos)
            }
        };
        Ok(vec![node])
    }

    /// Body of `if`/`while`/`for`: exactly one node, declarations wrapped in
    /// a block, an empty statement becomes an empty block.
    fn sub_statement(&mut self) -> Result<AstNode> {
        let pos = self.peek().pos;
        let mut nodes = self.statement()?;
        Ok(if nodes.len() == 1 {
            nodes.pop().unwrap()
        } else {
            AstNode::inner(NodeKind::Block, None, nodes, pos)
        })
    }

    fn expression(&mut self) -> Result<AstNode> {
        self.assignment()
    }

    fn assignment(&mut self) -> Result<AstNode> {
        let lhs = self.binary(1)?;
        if let Tok::Punct(op) = self.peek().tok {
            if is_assign_op(op) {
                self.bump();
                let rhs = self.assignment()?;
                let pos = lhs.pos;
                return Ok(AstNode::inner(NodeKind::Assign, Some(op.to_string()), vec![lhs, rhs], pos));
            }
        }
        Ok(lhs)
    }

    fn binary(&mut self, min_prec: u8) -> Result<AstNode> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Punct(op) => op,
                _ => break,
            };
            let prec = match binary_precedence(op) {
                Some(p) if p >= min_prec => p,
                _ => break,
            };
            self.bump();
            let rhs = self.binary(prec + 1)?;
            let pos = lhs.pos;
            lhs = AstNode::inner(NodeKind::BinaryOp, Some(op.to_string()), vec![lhs, rhs], pos);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<AstNode> {
        let pos = self.peek().pos;
        if let Tok::Punct(op) = self.peek().tok {
            let (kind, detail) = match op {
                "*" => (NodeKind::Deref, None),
                "-" | "!" | "~" | "&" | "+" => (NodeKind::UnaryOp, Some(op.to_string())),
                "++" => (NodeKind::UnaryOp, Some("pre++".to_string())),
                "--" => (NodeKind::UnaryOp, Some("pre--".to_string())),
                "(" if self.type_start_at(1) => {
                    self.bump();
                    let (base, tpos) = self.base_type()?;
                    let ty = format!("{base}{}", self.stars());
                    self.expect_punct(")")?;
                    let operand = self.unary()?;
                    return Ok(AstNode::inner(
                        NodeKind::UnaryOp,
                        Some("cast".into()),
                        vec![AstNode::leaf(NodeKind::TypeName, ty, tpos), operand],
                        pos,
                    ));
                }
                _ => return self.postfix(),
            };
            self.bump();
            let operand = self.unary()?;
            return Ok(AstNode::inner(kind, detail, vec![operand], pos));
        }
        if self.is_word("sizeof") {
            self.bump();
            let operand = if self.is_punct("(") && self.type_start_at(1) {
                self.bump();
                let (base, tpos) = self.base_type()?;
                let ty = format!("{base}{}", self.stars());
                self.expect_punct(")")?;
                AstNode::leaf(NodeKind::TypeName, ty, tpos)
            } else {
                self.unary()?
            };
            return Ok(AstNode::inner(
                NodeKind::UnaryOp,
                Some("sizeof".into()),
                vec![operand],
                pos,
            ));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<AstNode> {
        let mut e = self.primary()?;
        loop {
            let pos = e.pos;
            if self.eat_punct("(") {
                let mut children = vec![e];
                if !self.is_punct(")") {
                    loop {
                        children.push(self.assignment()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect_punct(")")?;
                e = AstNode::inner(NodeKind::Call, None, children, pos);
            } else if self.eat_punct("[") {
                let idx = self.expression()?;
                self.expect_punct("]")?;
                e = AstNode::inner(NodeKind::Index, None, vec![e, idx], pos);
            } else if self.is_punct(".") || self.is_punct("->") {
                let op = match self.bump().tok {
                    Tok::Punct(p) => p,
                    _ => unreachable!(),
                };
                let (field, fpos) = self.ident()?;
                e = AstNode::inner(
                    NodeKind::Member,
                    Some(op.to_string()),
                    vec![e, AstNode::leaf(NodeKind::Identifier, field, fpos)],
                    pos,
                );
            } else if self.is_punct("++") || self.is_punct("--") {
                let op = if self.is_punct("++") { "post++" } else { "post--" };
                self.bump();
                e = AstNode::inner(NodeKind::UnaryOp, Some(op.into()), vec![e], pos);
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<AstNode> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Int(text) => {
                self.bump();
                Ok(AstNode::leaf(NodeKind::IntLit, text, t.pos))
            }
            Tok::Str(text) => {
                self.bump();
                Ok(AstNode::leaf(NodeKind::StrLit, text, t.pos))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expression()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let (name, pos) = self.ident()?;
                Ok(AstNode::leaf(NodeKind::Identifier, name, pos))
            }
            _ => Err(self.unexpected()),
        }
    }
}
