//! Minimal canonical XML element writer and a strict, whitespace-tolerant reader.
//!
//! Only the subset needed on the wire: elements, attributes, text, the five
//! named entities and numeric character references. Comments, processing
//! instructions, CDATA and declarations are rejected.

use alloc::string::String;
use alloc::vec::Vec;

use super::{ParseError, ParseErrorKind};

/// A parsed or to-be-written element. Mixed content is not representable:
/// an element carries text or children, never both.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub text: String,
    pub children: Vec<Element>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Self {
        Element {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn with_text(name: impl Into<String>, text: impl Into<String>) -> Self {
        Element {
            name: name.into(),
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.push((key.into(), value.into()));
        self
    }

    pub fn child(mut self, child: Element) -> Self {
        self.children.push(child);
        self
    }

    pub fn get_attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write(&self, out: &mut String) {
        out.push('<');
        out.push_str(&self.name);
        for (k, v) in &self.attrs {
            out.push(' ');
            out.push_str(k);
            out.push_str("=\"");
            escape_attr(v, out);
            out.push('"');
        }
        out.push('>');
        escape_text(&self.text, out);
        for c in &self.children {
            c.write(out);
        }
        out.push_str("</");
        out.push_str(&self.name);
        out.push('>');
    }

    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        self.write(&mut s);
        s
    }
}

pub fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

pub fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '"' => out.push_str("&quot;"),
            '\t' => out.push_str("&#9;"),
            c => escape_text(c.encode_utf8(&mut [0u8; 4]), out),
        }
    }
}

/// Parses exactly one root element from `input`, allowing surrounding
/// whitespace. `max_depth` counts the root as depth 1.
pub fn parse_element(input: &str, max_depth: usize) -> Result<Element, ParseError> {
    let mut r = Reader { src: input, pos: 0 };
    r.skip_ws();
    let el = r.element(1, max_depth)?;
    r.skip_ws();
    if r.pos != input.len() {
        return Err(r.err(ParseErrorKind::TrailingContent));
    }
    Ok(el)
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(_) => Err(self.err(ParseErrorKind::Malformed)),
            None => Err(self.err(ParseErrorKind::UnexpectedEof)),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if matches!(c, ' ' | '\t' | '\n' | '\r') {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn name(&mut self) -> Result<&'a str, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let n = &self.src[start..self.pos];
        if is_name(n) {
            Ok(n)
        } else if self.pos >= self.src.len() {
            Err(self.err(ParseErrorKind::UnexpectedEof))
        } else {
            self.pos = start;
            Err(self.err(ParseErrorKind::Malformed))
        }
    }

    fn element(&mut self, depth: usize, max_depth: usize) -> Result<Element, ParseError> {
        if depth > max_depth {
            return Err(self.err(ParseErrorKind::TooDeep));
        }
        self.expect('<')?;
        if matches!(self.peek(), Some('!' | '?' | '/')) {
            return Err(self.err(ParseErrorKind::Malformed));
        }
        let name = self.name()?;
        let mut el = Element::new(name);
        loop {
            let had_ws = matches!(self.peek(), Some(' ' | '\t' | '\n' | '\r'));
            self.skip_ws();
            match self.peek() {
                None => return Err(self.err(ParseErrorKind::UnexpectedEof)),
                Some('/') => {
                    self.pos += 1;
                    self.expect('>')?;
                    return Ok(el);
                }
                Some('>') => {
                    self.pos += 1;
                    break;
                }
                Some(_) if !had_ws => return Err(self.err(ParseErrorKind::Malformed)),
                Some(_) => {
                    let at = self.pos;
                    let key = self.name()?;
                    self.skip_ws();
                    self.expect('=')?;
                    self.skip_ws();
                    let value = self.quoted()?;
                    if el.attrs.iter().any(|(k, _)| k == key) {
                        return Err(ParseError {
                            offset: at,
                            kind: ParseErrorKind::DuplicateAttribute,
                        });
                    }
                    el.attrs.push((key.into(), value));
                }
            }
        }
        // content
        let mut text = String::new();
        let mut text_start = None;
        loop {
            match self.peek() {
                None => return Err(self.err(ParseErrorKind::UnexpectedEof)),
                Some('<') => {
                    if self.rest().starts_with("</") {
                        self.pos += 2;
                        let close = self.name()?;
                        if close != el.name {
                            return Err(self.err(ParseErrorKind::MismatchedTag));
                        }
                        self.skip_ws();
                        self.expect('>')?;
                        break;
                    }
                    let child = self.element(depth + 1, max_depth)?;
                    el.children.push(child);
                }
                Some('&') => {
                    text_start.get_or_insert(self.pos);
                    let c = self.entity()?;
                    text.push(c);
                }
                Some('>') => return Err(self.err(ParseErrorKind::Malformed)),
                Some(c) => {
                    text_start.get_or_insert(self.pos);
                    self.pos += c.len_utf8();
                    text.push(c);
                }
            }
        }
        if !el.children.is_empty() {
            if !text.chars().all(|c| matches!(c, ' ' | '\t' | '\n' | '\r')) {
                return Err(ParseError {
                    offset: text_start.unwrap_or(self.pos),
                    kind: ParseErrorKind::MixedContent,
                });
            }
        } else {
            el.text = text;
        }
        Ok(el)
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        let q = match self.bump() {
            Some(q @ ('"' | '\'')) => q,
            Some(_) => {
                self.pos -= 1;
                return Err(self.err(ParseErrorKind::Malformed));
            }
            None => return Err(self.err(ParseErrorKind::UnexpectedEof)),
        };
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err(ParseErrorKind::UnexpectedEof)),
                Some(c) if c == q => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('<') => return Err(self.err(ParseErrorKind::Malformed)),
                Some('&') => out.push(self.entity()?),
                Some(c) => {
                    self.pos += c.len_utf8();
                    out.push(c);
                }
            }
        }
    }

    fn entity(&mut self) -> Result<char, ParseError> {
        let start = self.pos;
        let bad = ParseError {
            offset: start,
            kind: ParseErrorKind::BadEntity,
        };
        let rest = self.rest();
        let end = match rest.bytes().take(12).position(|b| b == b';') {
            Some(e) if e > 0 => e,
            _ => return Err(bad),
        };
        let body = &rest[1..end];
        let c = match body {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                // only plain digit runs; from_str_radix would accept a sign
                let code = if let Some(hex) = body.strip_prefix("#x") {
                    (!hex.is_empty() && hex.bytes().all(|b| b.is_ascii_hexdigit()))
                        .then(|| u32::from_str_radix(hex, 16).ok())
                        .flatten()
                } else if let Some(dec) = body.strip_prefix('#') {
                    (!dec.is_empty() && dec.bytes().all(|b| b.is_ascii_digit()))
                        .then(|| dec.parse::<u32>().ok())
                        .flatten()
                } else {
                    None
                };
                match code.and_then(char::from_u32) {
                    Some(c) => c,
                    None => return Err(bad),
                }
            }
        };
        self.pos += end + 1;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_canonical_escapes() {
        let el = Element::with_text("t", "a<b>&\n").attr("k", "\"q\"\t");
        assert_eq!(el.to_xml(), "<t k=\"&quot;q&quot;&#9;\">a&lt;b&gt;&amp;&#10;</t>");
    }

    #[test]
    fn reads_tolerant_forms() {
        let el = parse_element("  <a  x = 'one'\n y=\"two\" >\n <b>hi &#x41;&#66;</b>\n <c/> </a>\n", 2).unwrap();
        assert_eq!(el.attrs.len(), 2);
        assert_eq!(el.children[0].text, "hi AB");
        assert_eq!(el.children[1].text, "");
        assert_eq!(el.text, "");
    }

    #[test]
    fn rejects_mixed_content_and_depth() {
        assert_eq!(
            parse_element("<a>x<b/></a>", 2).unwrap_err().kind,
            ParseErrorKind::MixedContent
        );
        assert_eq!(
            parse_element("<a><b><c/></b></a>", 2).unwrap_err().kind,
            ParseErrorKind::TooDeep
        );
    }

    #[test]
    fn reports_offsets() {
        let e = parse_element("<a></b>", 2).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::MismatchedTag);
        assert_eq!(e.offset, 6);
        let e = parse_element("<a>&bogus;</a>", 2).unwrap_err();
        assert_eq!((e.kind, e.offset), (ParseErrorKind::BadEntity, 3));
        let e = parse_element("<a x=\"1\" x=\"2\"/>", 2).unwrap_err();
        assert_eq!((e.kind, e.offset), (ParseErrorKind::DuplicateAttribute, 9));
    }

    #[test]
    fn rejects_signed_char_refs() {
        assert!(parse_element("<a>&#+65;</a>", 1).is_err());
        assert!(parse_element("<a>&#;</a>", 1).is_err());
        assert!(parse_element("<a>&#xD800;</a>", 1).is_err());
    }

    #[test]
    fn odd_entities_fail_cleanly() {
        for text in ["<a>&中;</a>", "<a>&#中;</a>", "<a>&;</a>", "<a>&#x;</a>", "<a>&é</a>"] {
            let e = parse_element(text, 1).unwrap_err();
            assert_eq!(e.kind, ParseErrorKind::BadEntity, "{text}");
        }
    }
}
