//! A forgiving C tokenizer.
//!
//! Comments and preprocessor lines are skipped, string and character literals
//! are kept whole. Every byte sequence tokenizes; unterminated literals and
//! comments simply run to the end of the line or input.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub line: u32,
    pub column: u32,
}

impl Token<'_> {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }

    pub fn is_ident(&self, text: &str) -> bool {
        self.kind == TokenKind::Ident && self.text == text
    }

    /// Decoded contents of a string literal, without quotes or prefix.
    pub fn string_value(&self) -> Option<String> {
        if self.kind != TokenKind::Str {
            return None;
        }
        let start = self.text.find('"')? + 1;
        let body = &self.text[start..];
        let body = body.strip_suffix('"').unwrap_or(body);
        let mut out = String::with_capacity(body.len());
        let mut chars = body.chars();
        while let Some(c) = chars.next() {
            if c != '\\' {
                out.push(c);
                continue;
            }
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('\n') | None => {}
                Some(other) => out.push(other),
            }
        }
        Some(out)
    }
}

const PUNCT3: [&str; 3] = ["<<=", ">>=", "..."];
const PUNCT2: [&str; 19] = [
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=",
];

pub fn tokenize(src: &str) -> Vec<Token<'_>> {
    Lexer::new(src).run()
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: u32,
    line_start: usize,
    at_line_start: bool,
    tokens: Vec<Token<'a>>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            line: 1,
            line_start: 0,
            at_line_start: true,
            tokens: Vec::new(),
        }
    }

    fn peek(&self, offset: usize) -> Option<u8> {
        self.bytes.get(self.pos + offset).copied()
    }

    fn newline(&mut self) {
        self.line += 1;
        self.line_start = self.pos;
        self.at_line_start = true;
    }

    // Advances one byte, keeping line bookkeeping.
    fn bump(&mut self) {
        let b = self.bytes[self.pos];
        self.pos += 1;
        if b == b'\n' {
            self.newline();
        }
    }

    fn push(&mut self, kind: TokenKind, start: usize, line: u32, column: u32) {
        self.tokens.push(Token {
            kind,
            text: &self.src[start..self.pos],
            line,
            column,
        });
        self.at_line_start = false;
    }

    fn run(mut self) -> Vec<Token<'a>> {
        while let Some(b) = self.peek(0) {
            match b {
                b'\n' => self.bump(),
                b' ' | b'\t' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'/' if self.peek(1) == Some(b'/') => self.skip_line(),
                b'/' if self.peek(1) == Some(b'*') => self.skip_block_comment(),
                b'#' if self.at_line_start => self.skip_line(),
                b'\\' if self.peek(1) == Some(b'\n') => {
                    self.pos += 1;
                    self.bump();
                    self.at_line_start = false;
                }
                _ => self.token(),
            }
        }
        self.tokens
    }

    // Skips to the end of the line, honoring backslash continuations.
    fn skip_line(&mut self) {
        while let Some(b) = self.peek(0) {
            match b {
                b'\n' => return,
                b'\\' if self.peek(1) == Some(b'\n') => {
                    self.pos += 1;
                    self.bump();
                }
                _ => self.pos += 1,
            }
        }
    }

    fn skip_block_comment(&mut self) {
        self.pos += 2;
        while let Some(b) = self.peek(0) {
            if b == b'*' && self.peek(1) == Some(b'/') {
                self.pos += 2;
                return;
            }
            self.bump();
        }
    }

    fn token(&mut self) {
        let start = self.pos;
        let line = self.line;
        let column = (start - self.line_start) as u32 + 1;
        let b = self.bytes[start];

        let kind = if b == b'"' {
            self.quoted(b'"');
            TokenKind::Str
        } else if b == b'\'' {
            self.quoted(b'\'');
            TokenKind::Char
        } else if b.is_ascii_alphabetic() || b == b'_' {
            while self
                .peek(0)
                .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
            {
                self.pos += 1;
            }
            // L"..", u8"..", u"..", U".." prefixes
            let ident = &self.src[start..self.pos];
            if matches!(ident, "L" | "u" | "U" | "u8") && matches!(self.peek(0), Some(b'"')) {
                self.quoted(b'"');
                TokenKind::Str
            } else {
                TokenKind::Ident
            }
        } else if b.is_ascii_digit() || (b == b'.' && self.peek(1).is_some_and(|c| c.is_ascii_digit())) {
            while self
                .peek(0)
                .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'.' || c == b'_')
            {
                self.pos += 1;
            }
            TokenKind::Number
        } else if b.is_ascii() {
            let rest = &self.src[start..];
            let len = PUNCT3
                .iter()
                .chain(PUNCT2.iter())
                .find(|p| rest.starts_with(**p))
                .map_or(1, |p| p.len());
            self.pos += len;
            TokenKind::Punct
        } else {
            // Non-ASCII: consume the whole UTF-8 scalar.
            let len = self.src[start..].chars().next().map_or(1, char::len_utf8);
            self.pos += len;
            TokenKind::Punct
        };
        self.push(kind, start, line, column);
    }

    fn quoted(&mut self, quote: u8) {
        self.pos += 1;
        while let Some(b) = self.peek(0) {
            match b {
                b'\\' => {
                    self.pos += 1;
                    if self.peek(0).is_some() {
                        self.bump();
                    }
                }
                b'\n' => return,
                _ if b == quote => {
                    self.pos += 1;
                    return;
                }
                _ => self.pos += 1,
            }
        }
    }
}
