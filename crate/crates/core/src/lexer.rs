//! A tolerant JavaScript tokenizer.
//!
//! It understands enough of the lexical grammar to never confuse code with
//! the contents of comments, strings, template literals (with arbitrarily
//! nested substitutions) and regular-expression literals. Regex versus
//! division is decided from the previous significant token. Anything it
//! does not recognise becomes a one-character punctuator rather than an
//! error; only unterminated literals and comments fail.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplatePart {
    /// `` `...` `` with no substitutions.
    NoSubst,
    /// `` `...${ ``
    Head,
    /// `}...${`
    Middle,
    /// `` }...` ``
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    PrivateName,
    Punct,
    String,
    Template(TemplatePart),
    Regex,
    Number,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub start: usize,
    /// A line terminator occurs between the previous token and this one.
    pub newline_before: bool,
}

impl<'a> Token<'a> {
    pub fn end(&self) -> usize {
        self.start + self.text.len()
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == p
    }

    /// Identifier name with `\u` escapes decoded.
    pub fn ident(&self) -> Option<std::borrow::Cow<'a, str>> {
        if self.kind != TokenKind::Ident {
            return None;
        }
        if !self.text.contains('\\') {
            return Some(std::borrow::Cow::Borrowed(self.text));
        }
        Some(std::borrow::Cow::Owned(cook(self.text)))
    }

    pub fn is_ident(&self, name: &str) -> bool {
        match self.kind {
            TokenKind::Ident if !self.text.contains('\\') => self.text == name,
            TokenKind::Ident => self.ident().is_some_and(|n| n == name),
            _ => false,
        }
    }

    /// Cooked value of a string literal or a substitution-free template.
    pub fn string_value(&self) -> Option<String> {
        match self.kind {
            TokenKind::String => Some(cook(&self.text[1..self.text.len() - 1])),
            TokenKind::Template(TemplatePart::NoSubst) => Some(cook(&self.text[1..self.text.len() - 1])),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at line {line}, column {column}")]
pub struct LexError {
    pub message: &'static str,
    pub line: usize,
    pub column: usize,
}

/// Line and column (both 1-based, column in characters) of a byte offset.
pub fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[line_start..].chars().count() + 1)
}

fn is_line_terminator(c: char) -> bool {
    matches!(c, '\n' | '\r' | '\u{2028}' | '\u{2029}')
}

fn is_id_start(c: char) -> bool {
    c == '$' || c == '_' || c.is_ascii_alphabetic() || (!c.is_ascii() && c.is_alphabetic())
}

fn is_id_continue(c: char) -> bool {
    is_id_start(c) || c.is_ascii_digit() || c == '\u{200c}' || c == '\u{200d}' || (!c.is_ascii() && c.is_alphanumeric())
}

/// Keywords after which a `/` starts a regular expression.
const REGEX_PREFIX_KEYWORDS: &[&str] = &[
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
];

const CONTROL_KEYWORDS: &[&str] = &["if", "while", "for", "with"];

const PUNCTUATORS: &[&str] = &[
    ">>>=", "...", "===", "!==", "**=", "<<=", ">>=", ">>>", "&&=", "||=", "??=", "=>", "==", "!=", "<=", ">=", "&&",
    "||", "??", "?.", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "**", "<<", ">>",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Brace {
    Block,
    /// An object literal or other brace in expression position.
    Expression,
    Template,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    tokens: Vec<Token<'a>>,
    braces: Vec<Brace>,
    /// For each open parenthesis: was it opened right after a control keyword?
    parens: Vec<bool>,
    last_paren_control: bool,
    last_brace_expression: bool,
}

pub fn tokenize(src: &str) -> Result<Vec<Token<'_>>, LexError> {
    let mut lexer = Lexer {
        src,
        pos: 0,
        tokens: Vec::new(),
        braces: Vec::new(),
        parens: Vec::new(),
        last_paren_control: false,
        last_brace_expression: false,
    };
    lexer.run()?;
    Ok(lexer.tokens)
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn error(&self, message: &'static str, at: usize) -> LexError {
        let (line, column) = line_column(self.src, at);
        LexError { message, line, column }
    }

    fn push(&mut self, kind: TokenKind, start: usize, newline_before: bool) {
        self.tokens.push(Token { kind, text: &self.src[start..self.pos], start, newline_before });
    }

    fn regex_allowed(&self) -> bool {
        let Some(prev) = self.tokens.last() else { return true };
        match prev.kind {
            TokenKind::Punct => match prev.text {
                ")" => self.last_paren_control,
                "}" => !self.last_brace_expression,
                "]" | "++" | "--" => false,
                _ => true,
            },
            TokenKind::Ident => REGEX_PREFIX_KEYWORDS.contains(&prev.text),
            TokenKind::Template(TemplatePart::Head | TemplatePart::Middle) => true,
            _ => false,
        }
    }

    /// Whether a `{` about to be pushed opens an expression rather than a
    /// block or body.
    fn brace_in_expression(&self) -> bool {
        let Some(prev) = self.tokens.last() else { return false };
        match prev.kind {
            TokenKind::Punct => !matches!(prev.text, ")" | ";" | "}" | "{" | "=>"),
            TokenKind::Ident => REGEX_PREFIX_KEYWORDS.contains(&prev.text) && !matches!(prev.text, "do" | "else"),
            TokenKind::Template(TemplatePart::Head | TemplatePart::Middle) => true,
            _ => false,
        }
    }

    /// Skips whitespace and comments; reports whether a line break was seen.
    fn skip_trivia(&mut self) -> Result<bool, LexError> {
        let mut newline = false;
        if self.pos == 0 && self.src.starts_with("#!") {
            self.pos = self.src.find(is_line_terminator).unwrap_or(self.src.len());
        }
        while let Some(c) = self.peek() {
            if is_line_terminator(c) {
                newline = true;
                self.pos += c.len_utf8();
            } else if c.is_whitespace() || c == '\u{feff}' {
                self.pos += c.len_utf8();
            } else if self.src[self.pos..].starts_with("//") {
                let rest = &self.src[self.pos..];
                self.pos += rest.find(is_line_terminator).unwrap_or(rest.len());
            } else if self.src[self.pos..].starts_with("/*") {
                let start = self.pos;
                let end =
                    self.src[self.pos + 2..].find("*/").ok_or_else(|| self.error("unterminated comment", start))?;
                let body = &self.src[self.pos + 2..self.pos + 2 + end];
                newline |= body.contains(is_line_terminator);
                self.pos += end + 4;
            } else {
                break;
            }
        }
        Ok(newline)
    }

    fn run(&mut self) -> Result<(), LexError> {
        loop {
            let newline = self.skip_trivia()?;
            let Some(c) = self.peek() else { return Ok(()) };
            let start = self.pos;
            match c {
                '\'' | '"' => self.string(c, start, newline)?,
                '`' => {
                    self.pos += 1;
                    self.template(start, newline, true)?;
                }
                '}' if self.braces.last() == Some(&Brace::Template) => {
                    self.braces.pop();
                    self.pos += 1;
                    self.template(start, newline, false)?;
                }
                '/' if self.regex_allowed() => self.regex(start, newline)?,
                '#' if self.peek_at(1).is_some_and(|n| is_id_start(n) || n == '\\') => {
                    self.pos += 1;
                    self.identifier_tail();
                    self.push(TokenKind::PrivateName, start, newline);
                }
                c if c.is_ascii_digit() || (c == '.' && self.peek_at(1).is_some_and(|n| n.is_ascii_digit())) => {
                    self.number();
                    self.push(TokenKind::Number, start, newline);
                }
                c if is_id_start(c) || c == '\\' => {
                    self.identifier_tail();
                    self.push(TokenKind::Ident, start, newline);
                }
                _ => self.punct(start, newline),
            }
        }
    }

    fn identifier_tail(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\\' {
                // \uXXXX or \u{...}
                self.pos += 1;
                if self.peek() == Some('u') {
                    self.pos += 1;
                    if self.peek() == Some('{') {
                        let rest = &self.src[self.pos..];
                        self.pos += rest.find('}').map_or(rest.len(), |i| i + 1);
                    } else {
                        for _ in 0..4 {
                            match self.peek() {
                                Some(h) if h.is_ascii_hexdigit() => self.pos += 1,
                                _ => break,
                            }
                        }
                    }
                }
            } else if is_id_continue(c) {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn number(&mut self) {
        let start = self.pos;
        let mut seen_dot = false;
        let mut prev = '\0';
        while let Some(c) = self.peek() {
            let take = c.is_ascii_alphanumeric()
                || c == '_'
                || (c == '.' && !seen_dot && !self.src[self.pos..].starts_with("..."))
                || ((c == '+' || c == '-')
                    && matches!(prev, 'e' | 'E')
                    && !self.src[start..self.pos].contains(['x', 'X']));
            if !take {
                break;
            }
            seen_dot |= c == '.';
            prev = c;
            self.pos += 1;
        }
    }

    fn string(&mut self, quote: char, start: usize, newline: bool) -> Result<(), LexError> {
        self.pos += 1;
        loop {
            let c = self.peek().ok_or_else(|| self.error("unterminated string literal", start))?;
            self.pos += c.len_utf8();
            match c {
                '\\' => {
                    if let Some(n) = self.peek() {
                        self.pos += n.len_utf8();
                        if n == '\r' && self.peek() == Some('\n') {
                            self.pos += 1;
                        }
                    }
                }
                '\n' | '\r' => return Err(self.error("unterminated string literal", start)),
                c if c == quote => break,
                _ => {}
            }
        }
        self.push(TokenKind::String, start, newline);
        Ok(())
    }

    /// Scans template characters; `self.pos` is just past the opening
    /// backtick or the closing `}` of a substitution.
    fn template(&mut self, start: usize, newline: bool, opening: bool) -> Result<(), LexError> {
        loop {
            let c = self.peek().ok_or_else(|| self.error("unterminated template literal", start))?;
            self.pos += c.len_utf8();
            match c {
                '\\' => {
                    if let Some(n) = self.peek() {
                        self.pos += n.len_utf8();
                    }
                }
                '`' => {
                    let part = if opening { TemplatePart::NoSubst } else { TemplatePart::Tail };
                    self.push(TokenKind::Template(part), start, newline);
                    return Ok(());
                }
                '$' if self.peek() == Some('{') => {
                    self.pos += 1;
                    self.braces.push(Brace::Template);
                    let part = if opening { TemplatePart::Head } else { TemplatePart::Middle };
                    self.push(TokenKind::Template(part), start, newline);
                    return Ok(());
                }
                _ => {}
            }
        }
    }

    fn regex(&mut self, start: usize, newline: bool) -> Result<(), LexError> {
        self.pos += 1;
        let mut in_class = false;
        loop {
            let c = self.peek().ok_or_else(|| self.error("unterminated regular expression", start))?;
            if is_line_terminator(c) {
                return Err(self.error("unterminated regular expression", start));
            }
            self.pos += c.len_utf8();
            match c {
                '\\' => match self.peek() {
                    Some(n) if !is_line_terminator(n) => self.pos += n.len_utf8(),
                    _ => return Err(self.error("unterminated regular expression", start)),
                },
                '[' => in_class = true,
                ']' => in_class = false,
                '/' if !in_class => break,
                _ => {}
            }
        }
        while let Some(c) = self.peek().filter(|&c| is_id_continue(c)) {
            self.pos += c.len_utf8();
        }
        self.push(TokenKind::Regex, start, newline);
        Ok(())
    }

    fn punct(&mut self, start: usize, newline: bool) {
        let rest = &self.src[self.pos..];
        let len = PUNCTUATORS
            .iter()
            .find(|p| rest.starts_with(**p) && !(**p == "?." && rest[2..].starts_with(|c: char| c.is_ascii_digit())))
            .map_or_else(|| rest.chars().next().map_or(1, char::len_utf8), |p| p.len());
        let prev_keyword_control =
            self.tokens.last().is_some_and(|t| t.kind == TokenKind::Ident && CONTROL_KEYWORDS.contains(&t.text));
        self.pos += len;
        match &rest[..len] {
            "{" => {
                let brace = if self.brace_in_expression() { Brace::Expression } else { Brace::Block };
                self.braces.push(brace);
            }
            "}" => {
                self.last_brace_expression = self.braces.pop() == Some(Brace::Expression);
            }
            "(" => self.parens.push(prev_keyword_control),
            ")" => self.last_paren_control = self.parens.pop().unwrap_or(false),
            _ => {}
        }
        self.push(TokenKind::Punct, start, newline);
    }
}

/// Decodes escape sequences in string, template and identifier text.
fn cook(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        let Some(e) = chars.next() else { break };
        match e {
            'n' => out.push('\n'),
            't' => out.push('\t'),
            'r' => out.push('\r'),
            'b' => out.push('\u{8}'),
            'f' => out.push('\u{c}'),
            'v' => out.push('\u{b}'),
            '0' if !chars.peek().is_some_and(|c| c.is_ascii_digit()) => out.push('\0'),
            'x' => {
                let hex: String = chars.by_ref().take(2).collect();
                if let Some(ch) = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                    out.push(ch);
                }
            }
            'u' => {
                let hex: String = if chars.peek() == Some(&'{') {
                    chars.next();
                    chars.by_ref().take_while(|&c| c != '}').collect()
                } else {
                    chars.by_ref().take(4).collect()
                };
                if let Some(ch) = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                    out.push(ch);
                }
            }
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
            }
            '\n' | '\u{2028}' | '\u{2029}' => {}
            other => out.push(other),
        }
    }
    out
}
