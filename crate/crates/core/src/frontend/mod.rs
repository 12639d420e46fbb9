//! C-subset frontend: lexer, recursive-descent parser, leaf-to-leaf path
//! contexts and the vocabularies that index them.

mod ast;
mod lexer;
mod parser;
mod paths;
mod vocab;

pub use ast::{AstNode, NodeKind, Pos};
pub use parser::parse_function;
pub use paths::{extract_path_contexts, normalize_token, ContextBag, Direction, ExtractConfig, PathContext, PathStep};
pub use vocab::{build_vocab, Vocabulary, UNK};
