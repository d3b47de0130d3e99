//! Names a unit declares at its top level, and names an ES module exports.
//!
//! Works on the token stream with a stack of bracket frames. Each `{` is
//! classified as a block, a function body, a class body or an object
//! literal from the tokens before it; `var` declarations hoist through
//! blocks and loop heads but stop at function and class bodies.

use std::collections::BTreeSet;

use crate::lexer::{tokenize, LexError, TemplatePart, Token, TokenKind};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModuleNames {
    /// Names bound by `var` anywhere outside function and class bodies.
    pub var_names: BTreeSet<String>,
    /// Names bound at depth zero by `let`, `const`, `function`, `class`
    /// and `import`.
    pub lexical_names: BTreeSet<String>,
    /// Export names, `default` included.
    pub exports: BTreeSet<String>,
    /// Sources of `export * from "..."`.
    pub star_sources: Vec<String>,
}

impl ModuleNames {
    pub fn top_level(&self) -> BTreeSet<String> {
        self.var_names.union(&self.lexical_names).cloned().collect()
    }
}

/// Names introduced at the top level of an ES module.
pub fn scan_top_level_names(source: &str) -> Result<BTreeSet<String>, LexError> {
    Ok(scan_module_names(source)?.top_level())
}

pub fn scan_module_names(source: &str) -> Result<ModuleNames, LexError> {
    let tokens = tokenize(source)?;
    let mut scanner = Scanner {
        toks: &tokens,
        stack: Vec::new(),
        pending_class: None,
        last_paren_control: false,
        decl: None,
        out: ModuleNames::default(),
    };
    scanner.run();
    Ok(scanner.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    Block,
    Function,
    Class,
    Object,
    Paren { control: bool },
    Bracket,
}

#[derive(Debug, Clone, Copy)]
struct Decl {
    depth: usize,
    var: bool,
    exported: bool,
}

const NON_TERMINAL_KEYWORDS: &[&str] = &[
    "return",
    "typeof",
    "instanceof",
    "in",
    "of",
    "new",
    "delete",
    "void",
    "throw",
    "case",
    "do",
    "else",
    "yield",
    "await",
    "extends",
    "export",
    "default",
    "async",
    "let",
    "const",
    "var",
    "import",
];

fn ends_expression(t: &Token<'_>) -> bool {
    match t.kind {
        TokenKind::Ident => !NON_TERMINAL_KEYWORDS.contains(&t.text),
        TokenKind::Punct => matches!(t.text, ")" | "]" | "}" | "++" | "--"),
        TokenKind::Template(p) => matches!(p, TemplatePart::NoSubst | TemplatePart::Tail),
        _ => true,
    }
}

struct Scanner<'t, 'a> {
    toks: &'t [Token<'a>],
    stack: Vec<Frame>,
    pending_class: Option<usize>,
    last_paren_control: bool,
    decl: Option<Decl>,
    out: ModuleNames,
}

impl<'t, 'a> Scanner<'t, 'a> {
    fn tok(&self, i: usize) -> Option<&Token<'a>> {
        self.toks.get(i)
    }

    fn punct(&self, i: usize, p: &str) -> bool {
        self.tok(i).is_some_and(|t| t.is_punct(p))
    }

    fn ident(&self, i: usize, name: &str) -> bool {
        self.tok(i).is_some_and(|t| t.is_ident(name))
    }

    fn name_at(&self, i: usize) -> Option<String> {
        self.tok(i).and_then(|t| t.ident()).map(|c| c.into_owned())
    }

    fn is_member(&self, i: usize) -> bool {
        i > 0 && (self.punct(i - 1, ".") || self.punct(i - 1, "?."))
    }

    fn stmt_start(&self, i: usize) -> bool {
        if i == 0 {
            return true;
        }
        let prev = &self.toks[i - 1];
        if prev.is_punct(";") || prev.is_punct("}") || prev.is_ident("export") {
            return true;
        }
        if prev.is_ident("default") && i >= 2 && self.ident(i - 2, "export") {
            return true;
        }
        self.toks[i].newline_before && ends_expression(prev)
    }

    fn hoistable(&self) -> bool {
        !self.stack.iter().any(|f| matches!(f, Frame::Function | Frame::Class))
    }

    fn classify_brace(&mut self, i: usize) -> Frame {
        if self.pending_class == Some(self.stack.len()) {
            self.pending_class = None;
            return Frame::Class;
        }
        let Some(prev) = i.checked_sub(1).map(|p| &self.toks[p]) else { return Frame::Block };
        if prev.is_punct("=>") {
            return Frame::Function;
        }
        if prev.is_punct(")") {
            return if self.last_paren_control { Frame::Block } else { Frame::Function };
        }
        if prev.is_punct(";") || prev.is_punct("}") || prev.is_punct("{") {
            return Frame::Block;
        }
        if prev.kind == TokenKind::Ident && !self.is_member(i - 1) {
            match prev.text {
                "else" | "try" | "finally" | "do" | "catch" => return Frame::Block,
                "static" if self.stack.last() == Some(&Frame::Class) => return Frame::Function,
                _ => {}
            }
        }
        if prev.is_punct(":") && i >= 2 {
            let statement_context = matches!(self.stack.last(), None | Some(Frame::Block | Frame::Function));
            let label = self.toks[i - 2].kind == TokenKind::Ident && (i < 3 || self.stmt_start(i - 2));
            let case = i >= 3 && (self.ident(i - 3, "case") || self.ident(i - 2, "default"));
            if statement_context && (label || case) {
                return Frame::Block;
            }
        }
        Frame::Object
    }

    fn run(&mut self) {
        let mut i = 0;
        while i < self.toks.len() {
            i = self.step(i);
        }
    }

    fn step(&mut self, i: usize) -> usize {
        let tok = self.toks[i];
        if let Some(d) = self.decl {
            if d.depth == self.stack.len() && i > 0 && tok.newline_before && ends_expression(&self.toks[i - 1]) {
                let continues = match tok.kind {
                    TokenKind::Ident => matches!(tok.text, "in" | "of" | "instanceof"),
                    TokenKind::Punct => true,
                    TokenKind::Template(_) => true,
                    _ => false,
                };
                if !continues {
                    self.decl = None;
                }
            }
        }
        match tok.kind {
            TokenKind::Punct => self.punct_step(i),
            TokenKind::Ident if !self.is_member(i) => self.ident_step(i),
            _ => i + 1,
        }
    }

    fn punct_step(&mut self, i: usize) -> usize {
        let tok = self.toks[i];
        match tok.text {
            "(" => {
                let control = i > 0
                    && (["if", "while", "for", "with", "switch", "catch"].iter().any(|k| self.ident(i - 1, k))
                        || (self.ident(i - 1, "await") && i > 1 && self.ident(i - 2, "for")));
                self.stack.push(Frame::Paren { control });
            }
            ")" => {
                if let Some(Frame::Paren { control }) = self.stack.last().copied() {
                    self.stack.pop();
                    self.last_paren_control = control;
                }
                self.clear_decl_above();
            }
            "[" => self.stack.push(Frame::Bracket),
            "]" => {
                if self.stack.last() == Some(&Frame::Bracket) {
                    self.stack.pop();
                }
                self.clear_decl_above();
            }
            "{" => {
                let frame = self.classify_brace(i);
                self.stack.push(frame);
            }
            "}" => {
                self.stack.pop();
                self.clear_decl_above();
            }
            ";" => {
                if self.decl.is_some_and(|d| d.depth == self.stack.len()) {
                    self.decl = None;
                }
            }
            "," => {
                if let Some(d) = self.decl.filter(|d| d.depth == self.stack.len()) {
                    let mut names = Vec::new();
                    let end = self.pattern(i + 1, &mut names);
                    self.record(d, names);
                    return end.max(i + 1);
                }
            }
            _ => {}
        }
        i + 1
    }

    fn clear_decl_above(&mut self) {
        if self.decl.is_some_and(|d| d.depth > self.stack.len()) {
            self.decl = None;
        }
    }

    fn record(&mut self, d: Decl, names: Vec<String>) {
        for name in names {
            if d.exported {
                self.out.exports.insert(name.clone());
            }
            if d.var {
                self.out.var_names.insert(name);
            } else {
                self.out.lexical_names.insert(name);
            }
        }
    }

    fn ident_step(&mut self, i: usize) -> usize {
        let tok = self.toks[i];
        let depth0 = self.stack.is_empty();
        match tok.text {
            "in" | "of" => {
                if self.decl.is_some_and(|d| d.depth == self.stack.len()) {
                    self.decl = None;
                }
            }
            "var" | "let" | "const" => {
                let next_ok = self.tok(i + 1).is_some_and(|t| {
                    (t.kind == TokenKind::Ident && !matches!(t.text, "in" | "of" | "instanceof"))
                        || t.is_punct("[")
                        || t.is_punct("{")
                });
                let var = tok.text == "var";
                if next_ok && ((var && self.hoistable()) || (!var && depth0)) {
                    let d =
                        Decl { depth: self.stack.len(), var, exported: depth0 && i > 0 && self.ident(i - 1, "export") };
                    let mut names = Vec::new();
                    let end = self.pattern(i + 1, &mut names);
                    self.record(d, names);
                    self.decl = Some(d);
                    return end.max(i + 1);
                }
            }
            "function" => {
                let start = if i > 0 && self.ident(i - 1, "async") { i - 1 } else { i };
                if depth0 && self.stmt_start(start) {
                    let j = if self.punct(i + 1, "*") { i + 2 } else { i + 1 };
                    if let Some(name) = self.name_at(j) {
                        self.declare_named(start, name);
                    } else if self.default_export(start) {
                        self.out.exports.insert("default".into());
                    }
                }
            }
            "class" => {
                self.pending_class = Some(self.stack.len());
                if depth0 && self.stmt_start(i) {
                    match self.name_at(i + 1).filter(|n| n != "extends") {
                        Some(name) => self.declare_named(i, name),
                        None if self.default_export(i) => {
                            self.out.exports.insert("default".into());
                        }
                        None => {}
                    }
                }
            }
            "import" if depth0 && self.stmt_start(i) && !self.punct(i + 1, "(") && !self.punct(i + 1, ".") => {
                return self.import_clause(i + 1);
            }
            "export" if depth0 && self.stmt_start(i) => return self.export_clause(i),
            _ => {}
        }
        i + 1
    }

    fn default_export(&self, start: usize) -> bool {
        start >= 2 && self.ident(start - 1, "default") && self.ident(start - 2, "export")
    }

    fn declare_named(&mut self, start: usize, name: String) {
        if self.default_export(start) {
            self.out.exports.insert("default".into());
        } else if start >= 1 && self.ident(start - 1, "export") {
            self.out.exports.insert(name.clone());
        }
        self.out.lexical_names.insert(name);
    }

    /// Binding names of the pattern starting at `j`; returns the index past it.
    fn pattern(&self, j: usize, names: &mut Vec<String>) -> usize {
        let Some(tok) = self.tok(j) else { return j };
        if tok.kind == TokenKind::Ident {
            names.push(tok.ident().unwrap().into_owned());
            return j + 1;
        }
        if tok.is_punct("[") {
            let mut j = j + 1;
            while let Some(t) = self.tok(j) {
                if t.is_punct("]") {
                    return j + 1;
                }
                let before = j;
                if t.is_punct(",") {
                    j += 1;
                } else if t.is_punct("...") {
                    j = self.pattern(j + 1, names);
                } else {
                    j = self.pattern(j, names);
                    j = self.skip_default(j);
                }
                if j == before {
                    j += 1;
                }
            }
            return j;
        }
        if tok.is_punct("{") {
            let mut j = j + 1;
            while let Some(t) = self.tok(j) {
                if t.is_punct("}") {
                    return j + 1;
                }
                let before = j;
                if t.is_punct(",") {
                    j += 1;
                } else if t.is_punct("...") {
                    j = self.pattern(j + 1, names);
                } else if t.is_punct("[") {
                    j = self.skip_balanced(j);
                    if self.punct(j, ":") {
                        j = self.pattern(j + 1, names);
                    }
                    j = self.skip_default(j);
                } else if self.punct(j + 1, ":") {
                    j = self.pattern(j + 2, names);
                    j = self.skip_default(j);
                } else {
                    if t.kind == TokenKind::Ident {
                        names.push(t.ident().unwrap().into_owned());
                    }
                    j = self.skip_default(j + 1);
                }
                if j == before {
                    j += 1;
                }
            }
            return j;
        }
        j
    }

    fn skip_default(&self, j: usize) -> usize {
        if !self.punct(j, "=") {
            return j;
        }
        let mut depth = 0usize;
        let mut j = j + 1;
        while let Some(t) = self.tok(j) {
            if t.kind == TokenKind::Punct {
                match t.text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" if depth == 0 => return j,
                    ")" | "]" | "}" => depth -= 1,
                    "," if depth == 0 => return j,
                    _ => {}
                }
            }
            j += 1;
        }
        j
    }

    fn skip_balanced(&self, j: usize) -> usize {
        let mut depth = 0usize;
        let mut j = j;
        while let Some(t) = self.tok(j) {
            if t.kind == TokenKind::Punct {
                match t.text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        depth = depth.saturating_sub(1);
                        if depth == 0 {
                            return j + 1;
                        }
                    }
                    _ => {}
                }
            }
            j += 1;
        }
        j
    }

    fn import_clause(&mut self, mut j: usize) -> usize {
        loop {
            let Some(t) = self.tok(j) else { return j };
            if t.kind == TokenKind::String {
                return j + 1;
            }
            if t.is_ident("from") && self.tok(j + 1).is_some_and(|n| n.kind == TokenKind::String) {
                return j + 2;
            }
            if t.kind == TokenKind::Ident {
                self.out.lexical_names.insert(t.ident().unwrap().into_owned());
                j += 1;
            } else if t.is_punct(",") {
                j += 1;
            } else if t.is_punct("*") && self.ident(j + 1, "as") {
                if let Some(name) = self.name_at(j + 2) {
                    self.out.lexical_names.insert(name);
                }
                j += 3;
            } else if t.is_punct("{") {
                j += 1;
                while let Some(t) = self.tok(j) {
                    if t.is_punct("}") {
                        j += 1;
                        break;
                    }
                    if t.is_punct(",") {
                        j += 1;
                        continue;
                    }
                    if self.ident(j + 1, "as") {
                        if let Some(name) = self.name_at(j + 2) {
                            self.out.lexical_names.insert(name);
                        }
                        j += 3;
                    } else {
                        if let Some(name) = self.name_at(j) {
                            self.out.lexical_names.insert(name);
                        }
                        j += 1;
                    }
                }
            } else {
                return j;
            }
        }
    }

    fn export_name(&self, j: usize) -> Option<String> {
        let t = self.tok(j)?;
        t.ident().map(|c| c.into_owned()).or_else(|| t.string_value())
    }

    /// Handles `export *`, `export { ... }` and `export default`; other
    /// forms fall through to the declaration they prefix.
    fn export_clause(&mut self, i: usize) -> usize {
        let j = i + 1;
        if self.ident(j, "default") {
            let next_declares = ["function", "class", "async"].iter().any(|k| self.ident(j + 1, k));
            if !next_declares {
                self.out.exports.insert("default".into());
            }
            return j + 1;
        }
        if self.punct(j, "*") {
            if self.ident(j + 1, "as") {
                if let Some(name) = self.export_name(j + 2) {
                    self.out.exports.insert(name);
                }
                return j + 3;
            }
            if self.ident(j + 1, "from") {
                if let Some(src) = self.tok(j + 2).and_then(|t| t.string_value()) {
                    self.out.star_sources.push(src);
                }
                return j + 3;
            }
            return j + 1;
        }
        if self.punct(j, "{") {
            let mut k = j + 1;
            while let Some(t) = self.tok(k) {
                if t.is_punct("}") {
                    return k + 1;
                }
                if t.is_punct(",") {
                    k += 1;
                    continue;
                }
                if self.ident(k + 1, "as") {
                    if let Some(name) = self.export_name(k + 2) {
                        self.out.exports.insert(name);
                    }
                    k += 3;
                } else {
                    if let Some(name) = self.export_name(k) {
                        self.out.exports.insert(name);
                    }
                    k += 1;
                }
            }
            return k;
        }
        i + 1
    }
}
