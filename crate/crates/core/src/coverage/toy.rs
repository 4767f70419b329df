//! Bundled instrumented HTML parser used as a deterministic coverage target.
//!
//! The parser is a simplified HTML5 tokenizer plus tree builder with manually
//! placed probes. Every probe is a fixed integer reported as
//! `BasicBlockId { module_id: 0, offset: probe }`. Probe ranges:
//!
//! | range     | meaning                                                   |
//! |-----------|-----------------------------------------------------------|
//! | 0–7       | startup and epilogue, hit by every execution              |
//! | 8–63      | tokenizer states and tokenizer parse errors               |
//! | 64–127    | tree-builder insertion modes and error recovery           |
//! | 128–159   | character references and text handling                    |
//! | 160–199   | attribute value classification                            |
//! | 200–399   | element handlers: `200 + 2i` start tag, `201 + 2i` end tag for [`ELEMENTS`]`[i]` |
//! | 400–479   | attribute-name handlers for [`ATTRIBUTES`]`[i]`           |
//! | 480–511   | element-specific behaviour (input types, media flags, …)  |

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{BasicBlockId, CoverageSet, HarnessDescriptor, ModuleEntry, TargetHarness};
use crate::error::Result;

pub const NUM_PROBES: usize = 512;

/// Module id under which probes are reported.
pub const TOY_MODULE_ID: u16 = 0;

pub mod probe {
    // lifecycle
    pub const PARSER_INIT: u32 = 0;
    pub const DECODE: u32 = 1;
    pub const TOKENIZER_INIT: u32 = 2;
    pub const TREE_INIT: u32 = 3;
    pub const EOF_TOKEN: u32 = 4;
    pub const TREE_FINISH: u32 = 5;
    pub const STACK_UNWIND: u32 = 6;
    pub const EPILOGUE: u32 = 7;

    // tokenizer
    pub const TEXT: u32 = 8;
    pub const TAG_OPEN: u32 = 9;
    pub const END_TAG_OPEN: u32 = 10;
    pub const TAG_NAME: u32 = 11;
    pub const BEFORE_ATTR_NAME: u32 = 12;
    pub const ATTR_NAME: u32 = 13;
    pub const AFTER_ATTR_NAME: u32 = 14;
    pub const BEFORE_ATTR_VALUE: u32 = 15;
    pub const ATTR_VALUE_DQ: u32 = 16;
    pub const ATTR_VALUE_SQ: u32 = 17;
    pub const ATTR_VALUE_UNQUOTED: u32 = 18;
    pub const AFTER_ATTR_VALUE_QUOTED: u32 = 19;
    pub const SELF_CLOSING: u32 = 20;
    pub const MARKUP_DECLARATION: u32 = 21;
    pub const COMMENT_START: u32 = 22;
    pub const COMMENT: u32 = 23;
    pub const COMMENT_END: u32 = 24;
    pub const DOCTYPE: u32 = 25;
    pub const DOCTYPE_NAME: u32 = 26;
    pub const BOGUS_COMMENT: u32 = 27;
    pub const UPPERCASE_TAG_NAME: u32 = 28;
    pub const EMIT_START_TAG: u32 = 29;
    pub const EMIT_END_TAG: u32 = 30;
    pub const EMIT_COMMENT: u32 = 31;
    pub const EMIT_DOCTYPE: u32 = 32;
    pub const ERR_EOF_BEFORE_TAG_NAME: u32 = 33;
    pub const ERR_INVALID_FIRST_CHAR: u32 = 34;
    pub const ERR_MISSING_END_TAG_NAME: u32 = 35;
    pub const ERR_EOF_IN_TAG: u32 = 36;
    pub const ERR_EQUALS_BEFORE_ATTR_NAME: u32 = 37;
    pub const ERR_CHAR_IN_ATTR_NAME: u32 = 38;
    pub const ERR_MISSING_ATTR_VALUE: u32 = 39;
    pub const ERR_CHAR_IN_UNQUOTED_VALUE: u32 = 40;
    pub const ERR_MISSING_WHITESPACE_BETWEEN_ATTRS: u32 = 41;
    pub const ERR_UNEXPECTED_SOLIDUS: u32 = 42;
    pub const ERR_DUPLICATE_ATTR: u32 = 43;
    pub const ERR_END_TAG_WITH_ATTRS: u32 = 44;
    pub const ERR_END_TAG_SELF_CLOSING: u32 = 45;
    pub const ERR_EOF_IN_COMMENT: u32 = 46;
    pub const ERR_ABRUPT_COMMENT: u32 = 47;
    pub const ERR_NESTED_COMMENT: u32 = 48;
    pub const ERR_INCORRECT_COMMENT: u32 = 49;
    pub const ERR_EOF_IN_DOCTYPE: u32 = 50;
    pub const ERR_MISSING_DOCTYPE_NAME: u32 = 51;
    pub const ERR_QUESTION_MARK_TAG: u32 = 52;
    pub const ERR_NULL_CHAR: u32 = 53;
    pub const ERR_CONTROL_CHAR: u32 = 54;
    pub const ERR_NONCHARACTER: u32 = 55;
    pub const ERR_INVALID_UTF8: u32 = 56;
    pub const RAWTEXT: u32 = 57;
    pub const ERR_EOF_IN_RAWTEXT: u32 = 58;
    pub const RAWTEXT_END: u32 = 59;
    pub const ERR_LONG_TAG_NAME: u32 = 60;
    pub const ERR_CDATA_IN_HTML: u32 = 61;
    pub const NON_ASCII_TEXT: u32 = 62;
    pub const WHITESPACE_TEXT: u32 = 63;

    // tree builder
    pub const MODE_INITIAL_DOCTYPE: u32 = 64;
    pub const DOCTYPE_HTML: u32 = 65;
    pub const DOCTYPE_LEGACY: u32 = 66;
    pub const QUIRKS_NO_DOCTYPE: u32 = 67;
    pub const MODE_BEFORE_HTML: u32 = 68;
    pub const EXPLICIT_HTML: u32 = 69;
    pub const IMPLIED_HTML: u32 = 70;
    pub const MODE_BEFORE_HEAD: u32 = 71;
    pub const EXPLICIT_HEAD: u32 = 72;
    pub const IMPLIED_HEAD: u32 = 73;
    pub const MODE_IN_HEAD: u32 = 74;
    pub const MODE_AFTER_HEAD: u32 = 75;
    pub const EXPLICIT_BODY: u32 = 76;
    pub const IMPLIED_BODY: u32 = 77;
    pub const MODE_IN_BODY: u32 = 78;
    pub const MODE_TEXT: u32 = 79;
    pub const MODE_IN_TABLE: u32 = 80;
    pub const MODE_IN_TABLE_BODY: u32 = 81;
    pub const MODE_IN_ROW: u32 = 82;
    pub const MODE_IN_CELL: u32 = 83;
    pub const MODE_IN_SELECT: u32 = 84;
    pub const MODE_AFTER_BODY: u32 = 85;
    pub const MODE_AFTER_AFTER_BODY: u32 = 86;
    pub const MODE_IN_CAPTION: u32 = 87;
    pub const MODE_IN_COLGROUP: u32 = 88;
    pub const RESET_INSERTION_MODE: u32 = 89;
    pub const STRAY_END_TAG: u32 = 90;
    pub const IMPLICIT_P_CLOSE: u32 = 91;
    pub const MISNESTED_FORMATTING: u32 = 92;
    pub const UNCLOSED_AT_EOF: u32 = 93;
    pub const FOSTER_PARENT: u32 = 94;
    pub const NESTED_FORM: u32 = 95;
    pub const NESTED_ANCHOR: u32 = 96;
    pub const LI_CLOSES_LI: u32 = 97;
    pub const OPTION_CLOSES_OPTION: u32 = 98;
    pub const DD_DT_CLOSE: u32 = 99;
    pub const HEADING_IN_HEADING: u32 = 100;
    pub const DEPTH_LIMIT: u32 = 101;
    pub const SECOND_HTML: u32 = 102;
    pub const SECOND_BODY: u32 = 103;
    pub const DOCTYPE_IN_BODY: u32 = 104;
    pub const TABLE_IN_TABLE: u32 = 105;
    pub const IMPLIED_TBODY: u32 = 106;
    pub const IMPLIED_TR: u32 = 107;
    pub const TABLE_PART_OUTSIDE_TABLE: u32 = 108;
    pub const SELECT_IN_SELECT: u32 = 109;
    pub const END_TAG_CLOSES_ANCESTORS: u32 = 110;
    pub const END_P_WITHOUT_P: u32 = 111;
    pub const END_BR: u32 = 112;
    pub const VOID_END_TAG: u32 = 113;
    pub const SELF_CLOSING_NON_VOID: u32 = 114;
    pub const UNKNOWN_ELEMENT: u32 = 115;
    pub const FORMATTING_LIMIT: u32 = 116;
    pub const RECONSTRUCT_FORMATTING: u32 = 117;
    pub const CONTENT_AFTER_BODY: u32 = 118;
    pub const COMMENT_INSERTED: u32 = 119;
    pub const COMMENT_AFTER_BODY: u32 = 120;
    pub const HEAD_ELEMENT_IN_BODY: u32 = 121;
    pub const HIDDEN_INPUT_IN_TABLE: u32 = 122;
    pub const FORM_IN_TABLE: u32 = 123;
    pub const BUTTON_IN_BUTTON: u32 = 124;
    pub const IGNORED_IN_SELECT: u32 = 125;
    pub const IMAGE_RENAMED: u32 = 126;
    pub const IGNORED_IN_TABLE: u32 = 127;

    // character references and text
    pub const CHARREF: u32 = 128;
    pub const CHARREF_NAMED: u32 = 129;
    pub const CHARREF_UNKNOWN_NAMED: u32 = 130;
    pub const CHARREF_MISSING_SEMICOLON: u32 = 131;
    pub const CHARREF_DECIMAL: u32 = 132;
    pub const CHARREF_HEX: u32 = 133;
    pub const CHARREF_NO_DIGITS: u32 = 134;
    pub const CHARREF_NULL: u32 = 135;
    pub const CHARREF_OUT_OF_RANGE: u32 = 136;
    pub const CHARREF_SURROGATE: u32 = 137;
    pub const CHARREF_CONTROL: u32 = 138;
    pub const CHARREF_IN_ATTRIBUTE: u32 = 139;
    /// `140 + i` for the i-th entry of the named reference table.
    pub const CHARREF_NAMED_BASE: u32 = 140;
    pub const TEXT_IN_BODY: u32 = 147;
    pub const TEXT_IN_TABLE: u32 = 148;
    pub const TEXT_IN_SELECT: u32 = 149;
    pub const TEXT_IN_HEAD: u32 = 150;
    pub const LONG_TEXT_RUN: u32 = 151;
    pub const TEXT_IN_RAWTEXT_ELEMENT: u32 = 152;
    pub const WHITESPACE_IN_TABLE: u32 = 153;
    pub const TEXT_IN_CELL: u32 = 154;
    pub const TEXT_IN_CAPTION: u32 = 155;
    pub const TEXT_IN_FORMATTING: u32 = 156;
    pub const TEXT_IN_LIST_ITEM: u32 = 157;
    pub const TEXT_IN_HEADING: u32 = 158;
    pub const TEXT_IN_BUTTON: u32 = 159;

    // attribute values
    pub const ATTR: u32 = 160;
    pub const ATTR_EMPTY: u32 = 161;
    pub const ATTR_NUMERIC: u32 = 162;
    pub const ATTR_NEGATIVE: u32 = 163;
    pub const ATTR_INT_OVERFLOW: u32 = 164;
    pub const ATTR_URL: u32 = 165;
    pub const ATTR_JAVASCRIPT_URL: u32 = 166;
    pub const ATTR_DATA_URL: u32 = 167;
    pub const ATTR_FILE_URL: u32 = 168;
    pub const ATTR_OVERLONG: u32 = 169;
    pub const ATTR_NON_ASCII: u32 = 170;
    pub const ATTR_PERCENT: u32 = 171;
    pub const ATTR_EVENT_HANDLER: u32 = 172;
    pub const ATTR_UNKNOWN_NAME: u32 = 173;
    pub const ATTR_STYLE_DECLARATION: u32 = 174;
    pub const ATTR_BOOLEAN: u32 = 175;
    pub const ATTR_WHITESPACE: u32 = 176;
    pub const ATTR_URL_QUERY: u32 = 177;
    pub const ATTR_FTP_URL: u32 = 178;
    pub const ATTR_HTTPS_URL: u32 = 179;
    pub const ATTR_MANY: u32 = 180;
    pub const ATTR_NUMERIC_NOT_NUMBER: u32 = 181;
    pub const ATTR_ZERO: u32 = 182;
    pub const ATTR_SPAN_CLAMPED: u32 = 183;
    pub const ATTR_STYLE_HIDDEN: u32 = 184;
    pub const ATTR_STYLE_POSITIONED: u32 = 185;
    pub const ATTR_DIR_RTL: u32 = 186;
    pub const ATTR_TABINDEX_NEGATIVE: u32 = 187;
    pub const ATTR_CONTENTEDITABLE: u32 = 188;
    pub const ATTR_HIDDEN: u32 = 189;
    pub const ATTR_ID_DUPLICATE: u32 = 190;
    pub const ATTR_CLASS_LIST: u32 = 191;
    pub const ATTR_LANG: u32 = 192;
    pub const ATTR_SPECIAL_CHARS: u32 = 193;
    pub const ATTR_VALUE_ON_END_TAG: u32 = 194;
    pub const ATTR_NAME_UPPERCASE: u32 = 195;
    pub const ATTR_HTTP_URL: u32 = 196;
    pub const ATTR_RELATIVE_URL: u32 = 197;
    pub const ATTR_DRAGGABLE: u32 = 198;
    pub const ATTR_SIZE_HUGE: u32 = 199;

    pub const ELEMENT_BASE: u32 = 200;
    pub const ATTRIBUTE_BASE: u32 = 400;
    /// `480 + i` for the i-th input type in the input type table.
    pub const INPUT_TYPE_BASE: u32 = 480;
    pub const INPUT_UNKNOWN_TYPE: u32 = 496;
    pub const IMG_SRCSET: u32 = 497;
    pub const IMG_USEMAP: u32 = 498;
    pub const IFRAME_SRCDOC: u32 = 499;
    pub const IFRAME_SANDBOX: u32 = 500;
    pub const FORM_POST: u32 = 501;
    pub const ANCHOR_DOWNLOAD: u32 = 502;
    pub const ANCHOR_TARGET_BLANK: u32 = 503;
    pub const TABLE_BORDER: u32 = 504;
    pub const METER_OUT_OF_RANGE: u32 = 505;
    pub const PROGRESS_OVER_MAX: u32 = 506;
    pub const OL_REVERSED: u32 = 507;
    pub const SELECT_MULTIPLE: u32 = 508;
    pub const MEDIA_AUTOPLAY: u32 = 509;
    pub const TEXTAREA_HARD_WRAP: u32 = 510;
    pub const DETAILS_OPEN: u32 = 511;
}

/// Probes every execution reaches, including the empty input.
pub const STARTUP_PROBES: [u32; 8] = [
    probe::PARSER_INIT,
    probe::DECODE,
    probe::TOKENIZER_INIT,
    probe::TREE_INIT,
    probe::EOF_TOKEN,
    probe::TREE_FINISH,
    probe::STACK_UNWIND,
    probe::EPILOGUE,
];

/// Elements with dedicated start/end handlers.
pub const ELEMENTS: [&str; 100] = [
    "html", "head", "body", "title", "meta", "link", "style", "script", "noscript", "base",
    "template", "a", "abbr", "address", "area", "article", "aside", "audio", "b", "bdi",
    "bdo", "blockquote", "br", "button", "canvas", "caption", "cite", "code", "col", "colgroup",
    "data", "datalist", "dd", "del", "details", "dfn", "dialog", "div", "dl", "dt",
    "em", "embed", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3",
    "h4", "h5", "h6", "header", "hr", "i", "iframe", "img", "input", "ins",
    "kbd", "label", "legend", "li", "main", "map", "mark", "meter", "nav", "object",
    "ol", "optgroup", "option", "output", "p", "param", "picture", "pre", "progress", "q",
    "s", "samp", "section", "select", "small", "source", "span", "strong", "sub", "summary",
    "sup", "table", "tbody", "td", "textarea", "tfoot", "th", "thead", "time", "tr",
];

/// Attribute names with dedicated handlers.
pub const ATTRIBUTES: [&str; 80] = [
    "id", "class", "style", "title", "lang", "dir", "hidden", "tabindex", "contenteditable", "draggable",
    "onclick", "onload", "onerror", "onmouseover", "href", "target", "rel", "download", "shape", "coords",
    "alt", "src", "autoplay", "controls", "loop", "preload", "width", "height", "cite", "clear",
    "name", "value", "disabled", "type", "formaction", "align", "span", "datetime", "open", "action",
    "method", "enctype", "novalidate", "size", "noshade", "srcdoc", "sandbox", "srcset", "usemap", "loading",
    "checked", "maxlength", "min", "max", "step", "placeholder", "pattern", "for", "low", "high",
    "optimum", "data", "reversed", "start", "label", "selected", "multiple", "required", "media", "border",
    "cellpadding", "cellspacing", "summary", "colspan", "rowspan", "headers", "scope", "rows", "cols", "wrap",
];

const INPUT_TYPES: [&str; 16] = [
    "text", "password", "checkbox", "radio", "submit", "reset", "file", "hidden", "number", "range",
    "date", "color", "email", "image", "button", "search",
];

const NAMED_REFS: [(&str, char); 7] = [
    ("amp", '&'),
    ("lt", '<'),
    ("gt", '>'),
    ("quot", '"'),
    ("nbsp", '\u{a0}'),
    ("copy", '©'),
    ("apos", '\''),
];

const VOID_ELEMENTS: [&str; 14] = [
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

const RAWTEXT_ELEMENTS: [&str; 5] = ["script", "style", "title", "textarea", "noscript"];

const FORMATTING: [&str; 12] = [
    "a", "b", "big", "code", "em", "font", "i", "s", "small", "strike", "strong", "u",
];

const BLOCK_CLOSES_P: [&str; 26] = [
    "address", "article", "aside", "blockquote", "details", "dialog", "div", "dl", "fieldset",
    "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "hr", "main", "nav", "ol", "pre", "section",
];

const HEAD_ELEMENTS: [&str; 8] = ["base", "link", "meta", "noscript", "script", "style", "template", "title"];

const TABLE_PARTS: [&str; 8] = ["caption", "col", "colgroup", "tbody", "td", "tfoot", "th", "thead"];

const NUMERIC_ATTRS: [&str; 17] = [
    "width", "height", "tabindex", "span", "size", "maxlength", "min", "max", "step", "low", "high",
    "optimum", "start", "border", "cellpadding", "cellspacing", "rows",
];

const MAX_DEPTH: usize = 256;
const MAX_TAG_NAME: usize = 32;
const LONG_TEXT: usize = 256;
const OVERLONG_VALUE: usize = 255;

fn element_index(name: &str) -> Option<usize> {
    static MAP: OnceLock<HashMap<&'static str, usize>> = OnceLock::new();
    MAP.get_or_init(|| ELEMENTS.iter().enumerate().map(|(i, n)| (*n, i)).collect())
        .get(name)
        .copied()
}

fn attribute_index(name: &str) -> Option<usize> {
    static MAP: OnceLock<HashMap<&'static str, usize>> = OnceLock::new();
    MAP.get_or_init(|| ATTRIBUTES.iter().enumerate().map(|(i, n)| (*n, i)).collect())
        .get(name)
        .copied()
}

struct Probes {
    bits: [u64; NUM_PROBES / 64],
}

impl Probes {
    fn new() -> Self {
        Self {
            bits: [0; NUM_PROBES / 64],
        }
    }

    #[inline]
    fn hit(&mut self, id: u32) {
        let id = id as usize;
        debug_assert!(id < NUM_PROBES);
        self.bits[id / 64] |= 1 << (id % 64);
    }

    fn into_set(self) -> CoverageSet {
        let mut set = CoverageSet::new();
        for (word_idx, word) in self.bits.iter().enumerate() {
            let mut w = *word;
            while w != 0 {
                let bit = w.trailing_zeros() as usize;
                set.insert(BasicBlockId::new(TOY_MODULE_ID, (word_idx * 64 + bit) as u64));
                w &= w - 1;
            }
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Tag {
    name: String,
    attrs: Vec<(String, String)>,
    self_closing: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Start(Tag),
    End(Tag),
    Text(String),
    Comment,
    Doctype(Option<String>),
}

struct Tokenizer<'a> {
    input: &'a [char],
    pos: usize,
    probes: &'a mut Probes,
    tokens: Vec<Token>,
    text: String,
}

fn is_ws(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r' | '\x0c')
}

impl<'a> Tokenizer<'a> {
    fn run(input: &'a [char], probes: &'a mut Probes) -> Vec<Token> {
        probes.hit(probe::TOKENIZER_INIT);
        let mut t = Tokenizer {
            input,
            pos: 0,
            probes,
            tokens: Vec::new(),
            text: String::new(),
        };
        t.data();
        t.flush_text();
        t.tokens
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.input.get(self.pos + off).copied()
    }

    fn starts_with_ci(&self, s: &str) -> bool {
        let n = s.chars().count();
        self.pos + n <= self.input.len()
            && self.input[self.pos..self.pos + n]
                .iter()
                .zip(s.chars())
                .all(|(a, b)| a.to_ascii_lowercase() == b)
    }

    fn flush_text(&mut self) {
        if self.text.is_empty() {
            return;
        }
        self.probes.hit(probe::TEXT);
        if self.text.chars().all(is_ws) {
            self.probes.hit(probe::WHITESPACE_TEXT);
        }
        if !self.text.is_ascii() {
            self.probes.hit(probe::NON_ASCII_TEXT);
        }
        if self.text.chars().count() > LONG_TEXT {
            self.probes.hit(probe::LONG_TEXT_RUN);
        }
        self.tokens.push(Token::Text(std::mem::take(&mut self.text)));
    }

    fn emit(&mut self, token: Token) {
        self.flush_text();
        self.tokens.push(token);
    }

    fn text_char(&mut self, c: char) {
        match c {
            '\0' => {
                self.probes.hit(probe::ERR_NULL_CHAR);
                self.text.push('\u{fffd}');
            }
            '\u{fdd0}'..='\u{fdef}' | '\u{fffe}' | '\u{ffff}' => {
                self.probes.hit(probe::ERR_NONCHARACTER);
                self.text.push(c);
            }
            c if (c < ' ' && !is_ws(c)) || c == '\x7f' => {
                self.probes.hit(probe::ERR_CONTROL_CHAR);
                self.text.push(c);
            }
            c => self.text.push(c),
        }
    }

    fn data(&mut self) {
        while let Some(c) = self.peek(0) {
            match c {
                '<' => self.tag_open(),
                '&' => {
                    self.pos += 1;
                    let s = self.char_ref(false);
                    self.text.push_str(&s);
                }
                c => {
                    self.pos += 1;
                    self.text_char(c);
                }
            }
        }
    }

    fn tag_open(&mut self) {
        self.probes.hit(probe::TAG_OPEN);
        self.pos += 1;
        match self.peek(0) {
            None => {
                self.probes.hit(probe::ERR_EOF_BEFORE_TAG_NAME);
                self.text.push('<');
            }
            Some('!') => {
                self.probes.hit(probe::MARKUP_DECLARATION);
                self.pos += 1;
                if self.starts_with_ci("--") {
                    self.pos += 2;
                    self.comment();
                } else if self.starts_with_ci("doctype") {
                    self.pos += 7;
                    self.doctype();
                } else {
                    if self.starts_with_ci("[cdata[") {
                        self.probes.hit(probe::ERR_CDATA_IN_HTML);
                    }
                    self.probes.hit(probe::ERR_INCORRECT_COMMENT);
                    self.bogus_comment();
                }
            }
            Some('/') => {
                self.probes.hit(probe::END_TAG_OPEN);
                self.pos += 1;
                match self.peek(0) {
                    None => {
                        self.probes.hit(probe::ERR_EOF_BEFORE_TAG_NAME);
                        self.text.push_str("</");
                    }
                    Some('>') => {
                        self.probes.hit(probe::ERR_MISSING_END_TAG_NAME);
                        self.pos += 1;
                    }
                    Some(c) if c.is_ascii_alphabetic() => self.tag(true),
                    Some(_) => {
                        self.probes.hit(probe::ERR_INVALID_FIRST_CHAR);
                        self.bogus_comment();
                    }
                }
            }
            Some(c) if c.is_ascii_alphabetic() => self.tag(false),
            Some('?') => {
                self.probes.hit(probe::ERR_QUESTION_MARK_TAG);
                self.bogus_comment();
            }
            Some(_) => {
                self.probes.hit(probe::ERR_INVALID_FIRST_CHAR);
                self.text.push('<');
            }
        }
    }

    fn bogus_comment(&mut self) {
        self.probes.hit(probe::BOGUS_COMMENT);
        while let Some(c) = self.peek(0) {
            self.pos += 1;
            if c == '>' {
                break;
            }
        }
        self.probes.hit(probe::EMIT_COMMENT);
        self.emit(Token::Comment);
    }

    fn comment(&mut self) {
        self.probes.hit(probe::COMMENT_START);
        if self.peek(0) == Some('>') || (self.peek(0) == Some('-') && self.peek(1) == Some('>')) {
            self.probes.hit(probe::ERR_ABRUPT_COMMENT);
            self.pos += if self.peek(0) == Some('>') { 1 } else { 2 };
            self.probes.hit(probe::EMIT_COMMENT);
            self.emit(Token::Comment);
            return;
        }
        let mut saw_content = false;
        loop {
            if self.starts_with_ci("-->") {
                self.pos += 3;
                self.probes.hit(probe::COMMENT_END);
                break;
            }
            if self.starts_with_ci("--!>") {
                self.pos += 4;
                self.probes.hit(probe::COMMENT_END);
                break;
            }
            if self.starts_with_ci("<!--") {
                self.probes.hit(probe::ERR_NESTED_COMMENT);
            }
            match self.peek(0) {
                None => {
                    self.probes.hit(probe::ERR_EOF_IN_COMMENT);
                    break;
                }
                Some(_) => {
                    saw_content = true;
                    self.pos += 1;
                }
            }
        }
        if saw_content {
            self.probes.hit(probe::COMMENT);
        }
        self.probes.hit(probe::EMIT_COMMENT);
        self.emit(Token::Comment);
    }

    fn doctype(&mut self) {
        self.probes.hit(probe::DOCTYPE);
        while self.peek(0).is_some_and(is_ws) {
            self.pos += 1;
        }
        let mut name = String::new();
        while let Some(c) = self.peek(0) {
            if is_ws(c) || c == '>' {
                break;
            }
            name.push(c.to_ascii_lowercase());
            self.pos += 1;
        }
        if name.is_empty() {
            self.probes.hit(probe::ERR_MISSING_DOCTYPE_NAME);
        } else {
            self.probes.hit(probe::DOCTYPE_NAME);
        }
        loop {
            match self.peek(0) {
                None => {
                    self.probes.hit(probe::ERR_EOF_IN_DOCTYPE);
                    break;
                }
                Some('>') => {
                    self.pos += 1;
                    break;
                }
                Some(_) => self.pos += 1,
            }
        }
        self.probes.hit(probe::EMIT_DOCTYPE);
        self.emit(Token::Doctype((!name.is_empty()).then_some(name)));
    }

    fn char_ref(&mut self, in_attr: bool) -> String {
        self.probes.hit(probe::CHARREF);
        if in_attr {
            self.probes.hit(probe::CHARREF_IN_ATTRIBUTE);
        }
        match self.peek(0) {
            Some('#') => {
                self.pos += 1;
                let hex = matches!(self.peek(0), Some('x' | 'X'));
                if hex {
                    self.pos += 1;
                }
                let radix = if hex { 16 } else { 10 };
                let mut value: u64 = 0;
                let mut digits = 0;
                while let Some(d) = self.peek(0).and_then(|c| c.to_digit(radix)) {
                    value = (value * u64::from(radix) + u64::from(d)).min(0x1_0000_0000);
                    digits += 1;
                    self.pos += 1;
                }
                if digits == 0 {
                    self.probes.hit(probe::CHARREF_NO_DIGITS);
                    return if hex { "&#x".into() } else { "&#".into() };
                }
                self.probes.hit(if hex { probe::CHARREF_HEX } else { probe::CHARREF_DECIMAL });
                if self.peek(0) == Some(';') {
                    self.pos += 1;
                } else {
                    self.probes.hit(probe::CHARREF_MISSING_SEMICOLON);
                }
                let c = match value {
                    0 => {
                        self.probes.hit(probe::CHARREF_NULL);
                        '\u{fffd}'
                    }
                    v if v > 0x10ffff => {
                        self.probes.hit(probe::CHARREF_OUT_OF_RANGE);
                        '\u{fffd}'
                    }
                    0xd800..=0xdfff => {
                        self.probes.hit(probe::CHARREF_SURROGATE);
                        '\u{fffd}'
                    }
                    v => {
                        if v < 0x20 && !matches!(v, 0x09 | 0x0a | 0x0c | 0x0d) || (0x7f..=0x9f).contains(&v) {
                            self.probes.hit(probe::CHARREF_CONTROL);
                        }
                        char::from_u32(v as u32).unwrap_or('\u{fffd}')
                    }
                };
                c.to_string()
            }
            Some(c) if c.is_ascii_alphanumeric() => {
                let start = self.pos;
                while self.peek(0).is_some_and(|c| c.is_ascii_alphanumeric()) && self.pos - start < 32 {
                    self.pos += 1;
                }
                let name: String = self.input[start..self.pos].iter().collect();
                if let Some(i) = NAMED_REFS.iter().position(|(n, _)| *n == name) {
                    self.probes.hit(probe::CHARREF_NAMED);
                    self.probes.hit(probe::CHARREF_NAMED_BASE + i as u32);
                    if self.peek(0) == Some(';') {
                        self.pos += 1;
                    } else {
                        self.probes.hit(probe::CHARREF_MISSING_SEMICOLON);
                    }
                    NAMED_REFS[i].1.to_string()
                } else {
                    self.probes.hit(probe::CHARREF_UNKNOWN_NAMED);
                    format!("&{name}")
                }
            }
            _ => "&".into(),
        }
    }

    fn tag(&mut self, end: bool) {
        self.probes.hit(probe::TAG_NAME);
        let mut name = String::new();
        loop {
            match self.peek(0) {
                None => {
                    self.probes.hit(probe::ERR_EOF_IN_TAG);
                    return;
                }
                Some(c) if is_ws(c) || c == '/' || c == '>' => break,
                Some(c) => {
                    if c.is_ascii_uppercase() {
                        self.probes.hit(probe::UPPERCASE_TAG_NAME);
                    }
                    if c == '\0' {
                        self.probes.hit(probe::ERR_NULL_CHAR);
                    }
                    name.push(c.to_ascii_lowercase());
                    self.pos += 1;
                }
            }
        }
        if name.chars().count() > MAX_TAG_NAME {
            self.probes.hit(probe::ERR_LONG_TAG_NAME);
        }
        let mut tag = Tag {
            name,
            attrs: Vec::new(),
            self_closing: false,
        };
        if !self.attributes(&mut tag) {
            return;
        }
        if end {
            self.probes.hit(probe::EMIT_END_TAG);
            if !tag.attrs.is_empty() {
                self.probes.hit(probe::ERR_END_TAG_WITH_ATTRS);
            }
            if tag.self_closing {
                self.probes.hit(probe::ERR_END_TAG_SELF_CLOSING);
            }
            self.emit(Token::End(tag));
        } else {
            self.probes.hit(probe::EMIT_START_TAG);
            let raw = !tag.self_closing && RAWTEXT_ELEMENTS.contains(&tag.name.as_str());
            let name = tag.name.clone();
            self.emit(Token::Start(tag));
            if raw {
                self.rawtext(&name);
            }
        }
    }

    /// Attribute states up to the closing `>`. Returns false on EOF.
    fn attributes(&mut self, tag: &mut Tag) -> bool {
        loop {
            // before attribute name
            self.probes.hit(probe::BEFORE_ATTR_NAME);
            while self.peek(0).is_some_and(is_ws) {
                self.pos += 1;
            }
            match self.peek(0) {
                None => {
                    self.probes.hit(probe::ERR_EOF_IN_TAG);
                    return false;
                }
                Some('>') => {
                    self.pos += 1;
                    return true;
                }
                Some('/') => {
                    self.pos += 1;
                    if self.peek(0) == Some('>') {
                        self.probes.hit(probe::SELF_CLOSING);
                        self.pos += 1;
                        tag.self_closing = true;
                        return true;
                    }
                    self.probes.hit(probe::ERR_UNEXPECTED_SOLIDUS);
                    continue;
                }
                _ => {}
            }

            self.probes.hit(probe::ATTR_NAME);
            let mut name = String::new();
            if self.peek(0) == Some('=') {
                self.probes.hit(probe::ERR_EQUALS_BEFORE_ATTR_NAME);
                name.push('=');
                self.pos += 1;
            }
            while let Some(c) = self.peek(0) {
                if is_ws(c) || matches!(c, '/' | '>' | '=') {
                    break;
                }
                if matches!(c, '"' | '\'' | '<') {
                    self.probes.hit(probe::ERR_CHAR_IN_ATTR_NAME);
                }
                if c.is_ascii_uppercase() {
                    self.probes.hit(probe::ATTR_NAME_UPPERCASE);
                }
                name.push(c.to_ascii_lowercase());
                self.pos += 1;
            }

            // after attribute name
            while self.peek(0).is_some_and(is_ws) {
                self.pos += 1;
            }
            let mut value = String::new();
            let mut emit_after = false;
            if self.peek(0) == Some('=') {
                self.pos += 1;
                self.probes.hit(probe::BEFORE_ATTR_VALUE);
                while self.peek(0).is_some_and(is_ws) {
                    self.pos += 1;
                }
                match self.peek(0) {
                    Some(q @ ('"' | '\'')) => {
                        self.probes.hit(if q == '"' { probe::ATTR_VALUE_DQ } else { probe::ATTR_VALUE_SQ });
                        self.pos += 1;
                        loop {
                            match self.peek(0) {
                                None => {
                                    self.probes.hit(probe::ERR_EOF_IN_TAG);
                                    return false;
                                }
                                Some(c) if c == q => {
                                    self.pos += 1;
                                    break;
                                }
                                Some('&') => {
                                    self.pos += 1;
                                    let s = self.char_ref(true);
                                    value.push_str(&s);
                                }
                                Some(c) => {
                                    if c == '\0' {
                                        self.probes.hit(probe::ERR_NULL_CHAR);
                                    }
                                    value.push(c);
                                    self.pos += 1;
                                }
                            }
                        }
                        self.probes.hit(probe::AFTER_ATTR_VALUE_QUOTED);
                        match self.peek(0) {
                            Some(c) if is_ws(c) || c == '/' || c == '>' => {}
                            None => {}
                            Some(_) => self.probes.hit(probe::ERR_MISSING_WHITESPACE_BETWEEN_ATTRS),
                        }
                    }
                    Some('>') => {
                        self.probes.hit(probe::ERR_MISSING_ATTR_VALUE);
                        emit_after = true;
                    }
                    None => {
                        self.probes.hit(probe::ERR_EOF_IN_TAG);
                        return false;
                    }
                    Some(_) => {
                        self.probes.hit(probe::ATTR_VALUE_UNQUOTED);
                        while let Some(c) = self.peek(0) {
                            if is_ws(c) || c == '>' {
                                break;
                            }
                            if matches!(c, '"' | '\'' | '<' | '=' | '`') {
                                self.probes.hit(probe::ERR_CHAR_IN_UNQUOTED_VALUE);
                            }
                            if c == '&' {
                                self.pos += 1;
                                let s = self.char_ref(true);
                                value.push_str(&s);
                                continue;
                            }
                            value.push(c);
                            self.pos += 1;
                        }
                    }
                }
            } else {
                self.probes.hit(probe::AFTER_ATTR_NAME);
            }

            if tag.attrs.iter().any(|(n, _)| *n == name) {
                self.probes.hit(probe::ERR_DUPLICATE_ATTR);
            } else {
                tag.attrs.push((name, value));
            }
            if emit_after {
                self.pos += 1;
                return true;
            }
        }
    }

    fn rawtext(&mut self, name: &str) {
        self.probes.hit(probe::RAWTEXT);
        let close = format!("</{name}");
        let start = self.pos;
        loop {
            if self.pos >= self.input.len() {
                self.probes.hit(probe::ERR_EOF_IN_RAWTEXT);
                break;
            }
            if self.input[self.pos] == '<' && self.starts_with_ci(&close) {
                let after = self.input.get(self.pos + close.chars().count()).copied();
                if after.is_none_or(|c| is_ws(c) || c == '/' || c == '>') {
                    self.probes.hit(probe::RAWTEXT_END);
                    break;
                }
            }
            self.pos += 1;
        }
        if self.pos > start {
            let text: String = self.input[start..self.pos].iter().collect();
            self.emit(Token::Text(text));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Initial,
    BeforeHtml,
    BeforeHead,
    InHead,
    AfterHead,
    InBody,
    Text,
    InTable,
    InCaption,
    InColgroup,
    InTableBody,
    InRow,
    InCell,
    InSelect,
    AfterBody,
    AfterAfterBody,
}

struct TreeBuilder<'a> {
    probes: &'a mut Probes,
    mode: Mode,
    original_mode: Mode,
    stack: Vec<String>,
    formatting: Vec<String>,
    form_open: bool,
    seen_ids: Vec<String>,
    nodes: usize,
}

fn elem_probe(name: &str, end: bool) -> Option<u32> {
    element_index(name).map(|i| probe::ELEMENT_BASE + 2 * i as u32 + u32::from(end))
}

impl<'a> TreeBuilder<'a> {
    fn new(probes: &'a mut Probes) -> Self {
        probes.hit(probe::TREE_INIT);
        Self {
            probes,
            mode: Mode::Initial,
            original_mode: Mode::InBody,
            stack: Vec::new(),
            formatting: Vec::new(),
            form_open: false,
            seen_ids: Vec::new(),
            nodes: 0,
        }
    }

    fn hit(&mut self, id: u32) {
        self.probes.hit(id);
    }

    fn current(&self) -> &str {
        self.stack.last().map_or("", String::as_str)
    }

    fn in_scope(&self, name: &str, button_scope: bool) -> bool {
        for el in self.stack.iter().rev() {
            if el == name {
                return true;
            }
            if matches!(el.as_str(), "html" | "table" | "td" | "th" | "caption" | "template" | "object")
                || (button_scope && el == "button")
            {
                return false;
            }
        }
        false
    }

    fn in_table_scope(&self, name: &str) -> bool {
        for el in self.stack.iter().rev() {
            if el == name {
                return true;
            }
            if matches!(el.as_str(), "html" | "table" | "template") {
                return false;
            }
        }
        false
    }

    fn pop_until(&mut self, name: &str) {
        while let Some(top) = self.stack.pop() {
            if top == name {
                break;
            }
        }
    }

    fn push(&mut self, tag: &Tag) {
        if self.stack.len() >= MAX_DEPTH {
            self.hit(probe::DEPTH_LIMIT);
            return;
        }
        self.stack.push(tag.name.clone());
    }

    /// Creates an element node and runs its start handler.
    fn create(&mut self, tag: &Tag) {
        self.nodes += 1;
        match elem_probe(&tag.name, false) {
            Some(p) => self.hit(p),
            None => self.hit(probe::UNKNOWN_ELEMENT),
        }
        if tag.self_closing && !VOID_ELEMENTS.contains(&tag.name.as_str()) {
            self.hit(probe::SELF_CLOSING_NON_VOID);
        }
        self.attributes(tag);
        self.element_specific(tag);
    }

    fn insert(&mut self, tag: &Tag) {
        self.create(tag);
        if !VOID_ELEMENTS.contains(&tag.name.as_str()) {
            self.push(tag);
        }
    }

    fn end_handler(&mut self, name: &str) {
        if let Some(p) = elem_probe(name, true) {
            self.hit(p);
        }
    }

    fn attributes(&mut self, tag: &Tag) {
        if tag.attrs.len() > 4 {
            self.hit(probe::ATTR_MANY);
        }
        for (name, value) in &tag.attrs {
            self.hit(probe::ATTR);
            match attribute_index(name) {
                Some(i) => self.hit(probe::ATTRIBUTE_BASE + i as u32),
                None => self.hit(probe::ATTR_UNKNOWN_NAME),
            }
            if name.starts_with("on") && name.len() > 2 {
                self.hit(probe::ATTR_EVENT_HANDLER);
            }
            self.classify_value(name, value);
        }
    }

    fn classify_value(&mut self, name: &str, value: &str) {
        let v = value.trim();
        if value.is_empty() {
            self.hit(probe::ATTR_EMPTY);
        } else if v.is_empty() {
            self.hit(probe::ATTR_WHITESPACE);
        }
        if value.chars().count() > OVERLONG_VALUE {
            self.hit(probe::ATTR_OVERLONG);
        }
        if !value.is_ascii() {
            self.hit(probe::ATTR_NON_ASCII);
        }
        if value.contains(['<', '>', '\'', '`']) {
            self.hit(probe::ATTR_SPECIAL_CHARS);
        }
        if v.ends_with('%') && v[..v.len() - 1].parse::<f64>().is_ok() {
            self.hit(probe::ATTR_PERCENT);
        }
        let numeric = NUMERIC_ATTRS.contains(&name) || matches!(name, "colspan" | "rowspan" | "cols" | "value");
        match v.parse::<i128>() {
            Ok(n) => {
                self.hit(probe::ATTR_NUMERIC);
                if n < 0 {
                    self.hit(probe::ATTR_NEGATIVE);
                }
                if n == 0 {
                    self.hit(probe::ATTR_ZERO);
                }
                if n > i128::from(i32::MAX) || n < i128::from(i32::MIN) {
                    self.hit(probe::ATTR_INT_OVERFLOW);
                }
                if (name == "colspan" && n > 1000) || (name == "rowspan" && n > 65534) {
                    self.hit(probe::ATTR_SPAN_CLAMPED);
                }
                if name == "size" && n > 1000 {
                    self.hit(probe::ATTR_SIZE_HUGE);
                }
                if name == "tabindex" && n < 0 {
                    self.hit(probe::ATTR_TABINDEX_NEGATIVE);
                }
            }
            Err(_) if numeric && !v.is_empty() && name != "value" => self.hit(probe::ATTR_NUMERIC_NOT_NUMBER),
            Err(_) => {}
        }
        let lower = v.to_ascii_lowercase();
        if lower.starts_with("javascript:") {
            self.hit(probe::ATTR_JAVASCRIPT_URL);
        } else if lower.starts_with("data:") {
            self.hit(probe::ATTR_DATA_URL);
        } else if lower.starts_with("file:") {
            self.hit(probe::ATTR_FILE_URL);
        } else if lower.starts_with("ftp://") {
            self.hit(probe::ATTR_URL);
            self.hit(probe::ATTR_FTP_URL);
        } else if lower.starts_with("https://") {
            self.hit(probe::ATTR_URL);
            self.hit(probe::ATTR_HTTPS_URL);
        } else if lower.starts_with("http://") {
            self.hit(probe::ATTR_URL);
            self.hit(probe::ATTR_HTTP_URL);
        } else if matches!(name, "href" | "src" | "action" | "cite" | "poster" | "formaction" | "data")
            && !v.is_empty()
        {
            self.hit(probe::ATTR_RELATIVE_URL);
        }
        if lower.contains('?') && lower.contains('=') && lower.contains("://") {
            self.hit(probe::ATTR_URL_QUERY);
        }
        match name {
            "style" => {
                if v.contains(':') {
                    self.hit(probe::ATTR_STYLE_DECLARATION);
                }
                if lower.contains("display:none") {
                    self.hit(probe::ATTR_STYLE_HIDDEN);
                }
                if lower.contains("position:") || lower.contains("float:") {
                    self.hit(probe::ATTR_STYLE_POSITIONED);
                }
            }
            "dir" if lower == "rtl" => self.hit(probe::ATTR_DIR_RTL),
            "contenteditable" if lower != "false" => self.hit(probe::ATTR_CONTENTEDITABLE),
            "hidden" => self.hit(probe::ATTR_HIDDEN),
            "draggable" if lower == "true" => self.hit(probe::ATTR_DRAGGABLE),
            "lang" if !v.is_empty() => self.hit(probe::ATTR_LANG),
            "class" if v.split_ascii_whitespace().count() > 1 => self.hit(probe::ATTR_CLASS_LIST),
            "id" if !v.is_empty() => {
                if self.seen_ids.iter().any(|s| s == v) {
                    self.hit(probe::ATTR_ID_DUPLICATE);
                } else if self.seen_ids.len() < 1024 {
                    self.seen_ids.push(v.to_owned());
                }
            }
            "checked" | "disabled" | "selected" | "multiple" | "required" | "open" | "reversed" | "novalidate"
            | "autoplay" | "controls" | "loop" | "noshade"
                if value.is_empty() || lower == name =>
            {
                self.hit(probe::ATTR_BOOLEAN)
            }
            _ => {}
        }
    }

    fn element_specific(&mut self, tag: &Tag) {
        let attr = |n: &str| tag.attrs.iter().find(|(k, _)| k == n).map(|(_, v)| v.as_str());
        let num = |n: &str| attr(n).and_then(|v| v.trim().parse::<f64>().ok());
        match tag.name.as_str() {
            "input" => {
                let ty = attr("type").unwrap_or("text").trim().to_ascii_lowercase();
                match INPUT_TYPES.iter().position(|t| *t == ty) {
                    Some(i) => self.hit(probe::INPUT_TYPE_BASE + i as u32),
                    None => self.hit(probe::INPUT_UNKNOWN_TYPE),
                }
            }
            "img" => {
                if attr("srcset").is_some() {
                    self.hit(probe::IMG_SRCSET);
                }
                if attr("usemap").is_some() {
                    self.hit(probe::IMG_USEMAP);
                }
            }
            "iframe" => {
                if attr("srcdoc").is_some() {
                    self.hit(probe::IFRAME_SRCDOC);
                }
                if attr("sandbox").is_some() {
                    self.hit(probe::IFRAME_SANDBOX);
                }
            }
            "form" if attr("method").is_some_and(|m| m.eq_ignore_ascii_case("post")) => self.hit(probe::FORM_POST),
            "a" => {
                if attr("download").is_some() {
                    self.hit(probe::ANCHOR_DOWNLOAD);
                }
                if attr("target") == Some("_blank") {
                    self.hit(probe::ANCHOR_TARGET_BLANK);
                }
            }
            "table" if num("border").is_some_and(|b| b > 0.0) => self.hit(probe::TABLE_BORDER),
            "meter" => {
                let value = num("value").unwrap_or(0.0);
                if value < num("min").unwrap_or(0.0) || value > num("max").unwrap_or(1.0) {
                    self.hit(probe::METER_OUT_OF_RANGE);
                }
            }
            "progress" if num("value").unwrap_or(0.0) > num("max").unwrap_or(1.0) => {
                self.hit(probe::PROGRESS_OVER_MAX)
            }
            "ol" if attr("reversed").is_some() => self.hit(probe::OL_REVERSED),
            "select" if attr("multiple").is_some() => self.hit(probe::SELECT_MULTIPLE),
            "audio" | "video" if attr("autoplay").is_some() => self.hit(probe::MEDIA_AUTOPLAY),
            "textarea" if attr("wrap") == Some("hard") => self.hit(probe::TEXTAREA_HARD_WRAP),
            "details" if attr("open").is_some() => self.hit(probe::DETAILS_OPEN),
            _ => {}
        }
    }

    fn reset_mode(&mut self) {
        self.hit(probe::RESET_INSERTION_MODE);
        self.mode = Mode::InBody;
        for el in self.stack.iter().rev() {
            let mode = match el.as_str() {
                "select" => Mode::InSelect,
                "td" | "th" => Mode::InCell,
                "tr" => Mode::InRow,
                "tbody" | "thead" | "tfoot" => Mode::InTableBody,
                "caption" => Mode::InCaption,
                "colgroup" => Mode::InColgroup,
                "table" => Mode::InTable,
                "body" | "html" => Mode::InBody,
                _ => continue,
            };
            self.mode = mode;
            return;
        }
    }

    fn process(&mut self, token: &Token) {
        // Bounded reprocessing loop; each mode switch that reprocesses returns true.
        for _ in 0..8 {
            if !self.step(token) {
                return;
            }
        }
    }

    /// Handles `token` in the current mode; returns true to reprocess.
    fn step(&mut self, token: &Token) -> bool {
        match self.mode {
            Mode::Initial => match token {
                Token::Doctype(name) => {
                    self.hit(probe::MODE_INITIAL_DOCTYPE);
                    self.hit(if name.as_deref() == Some("html") { probe::DOCTYPE_HTML } else { probe::DOCTYPE_LEGACY });
                    self.mode = Mode::BeforeHtml;
                    false
                }
                Token::Comment => {
                    self.hit(probe::COMMENT_INSERTED);
                    false
                }
                Token::Text(t) if t.chars().all(is_ws) => false,
                _ => {
                    self.hit(probe::QUIRKS_NO_DOCTYPE);
                    self.mode = Mode::BeforeHtml;
                    true
                }
            },
            Mode::BeforeHtml => {
                self.hit(probe::MODE_BEFORE_HTML);
                match token {
                    Token::Doctype(_) => {
                        self.hit(probe::DOCTYPE_IN_BODY);
                        false
                    }
                    Token::Comment => {
                        self.hit(probe::COMMENT_INSERTED);
                        false
                    }
                    Token::Text(t) if t.chars().all(is_ws) => false,
                    Token::Start(tag) if tag.name == "html" => {
                        self.hit(probe::EXPLICIT_HTML);
                        self.insert(tag);
                        self.mode = Mode::BeforeHead;
                        false
                    }
                    Token::End(tag) if !matches!(tag.name.as_str(), "head" | "body" | "html" | "br") => {
                        self.hit(probe::STRAY_END_TAG);
                        false
                    }
                    _ => {
                        self.hit(probe::IMPLIED_HTML);
                        self.stack.push("html".into());
                        self.mode = Mode::BeforeHead;
                        true
                    }
                }
            }
            Mode::BeforeHead => {
                self.hit(probe::MODE_BEFORE_HEAD);
                match token {
                    Token::Text(t) if t.chars().all(is_ws) => false,
                    Token::Comment => {
                        self.hit(probe::COMMENT_INSERTED);
                        false
                    }
                    Token::Start(tag) if tag.name == "head" => {
                        self.hit(probe::EXPLICIT_HEAD);
                        self.insert(tag);
                        self.mode = Mode::InHead;
                        false
                    }
                    Token::Start(tag) if tag.name == "html" => {
                        self.hit(probe::SECOND_HTML);
                        self.attributes(tag);
                        false
                    }
                    Token::End(tag) if !matches!(tag.name.as_str(), "head" | "body" | "html" | "br") => {
                        self.hit(probe::STRAY_END_TAG);
                        false
                    }
                    _ => {
                        self.hit(probe::IMPLIED_HEAD);
                        self.stack.push("head".into());
                        self.mode = Mode::InHead;
                        true
                    }
                }
            }
            Mode::InHead => {
                self.hit(probe::MODE_IN_HEAD);
                match token {
                    Token::Text(t) if t.chars().all(is_ws) => false,
                    Token::Comment => {
                        self.hit(probe::COMMENT_INSERTED);
                        false
                    }
                    Token::Start(tag) if HEAD_ELEMENTS.contains(&tag.name.as_str()) => {
                        self.insert(tag);
                        if RAWTEXT_ELEMENTS.contains(&tag.name.as_str()) && !tag.self_closing {
                            self.original_mode = self.mode;
                            self.mode = Mode::Text;
                        }
                        false
                    }
                    Token::End(tag) if tag.name == "head" => {
                        self.end_handler("head");
                        self.pop_until("head");
                        self.mode = Mode::AfterHead;
                        false
                    }
                    Token::Start(tag) if tag.name == "head" => {
                        self.hit(probe::STRAY_END_TAG);
                        false
                    }
                    Token::End(tag) if !matches!(tag.name.as_str(), "body" | "html" | "br") => {
                        self.hit(probe::STRAY_END_TAG);
                        false
                    }
                    _ => {
                        self.pop_until("head");
                        self.mode = Mode::AfterHead;
                        true
                    }
                }
            }
            Mode::AfterHead => {
                self.hit(probe::MODE_AFTER_HEAD);
                match token {
                    Token::Text(t) if t.chars().all(is_ws) => false,
                    Token::Comment => {
                        self.hit(probe::COMMENT_INSERTED);
                        false
                    }
                    Token::Start(tag) if tag.name == "body" => {
                        self.hit(probe::EXPLICIT_BODY);
                        self.insert(tag);
                        self.mode = Mode::InBody;
                        false
                    }
                    Token::Start(tag) if HEAD_ELEMENTS.contains(&tag.name.as_str()) => {
                        self.hit(probe::HEAD_ELEMENT_IN_BODY);
                        self.mode = Mode::InHead;
                        self.stack.push("head".into());
                        true
                    }
                    Token::End(tag) if !matches!(tag.name.as_str(), "body" | "html" | "br") => {
                        self.hit(probe::STRAY_END_TAG);
                        false
                    }
                    _ => {
                        self.hit(probe::IMPLIED_BODY);
                        self.stack.push("body".into());
                        self.mode = Mode::InBody;
                        true
                    }
                }
            }
            Mode::InBody => self.in_body(token),
            Mode::Text => {
                self.hit(probe::MODE_TEXT);
                match token {
                    Token::Text(_) => {
                        self.hit(probe::TEXT_IN_RAWTEXT_ELEMENT);
                        false
                    }
                    Token::End(tag) => {
                        let name = self.current().to_owned();
                        if tag.name != name {
                            self.hit(probe::STRAY_END_TAG);
                        }
                        self.end_handler(&name);
                        self.stack.pop();
                        self.mode = self.original_mode;
                        false
                    }
                    _ => {
                        self.stack.pop();
                        self.mode = self.original_mode;
                        true
                    }
                }
            }
            Mode::InTable => self.in_table(token),
            Mode::InCaption => {
                self.hit(probe::MODE_IN_CAPTION);
                match token {
                    Token::End(tag) if tag.name == "caption" => {
                        self.end_handler("caption");
                        self.pop_until("caption");
                        self.mode = Mode::InTable;
                        false
                    }
                    Token::Start(tag) if TABLE_PARTS.contains(&tag.name.as_str()) || tag.name == "tr" => {
                        self.pop_until("caption");
                        self.mode = Mode::InTable;
                        true
                    }
                    Token::End(tag) if tag.name == "table" => {
                        self.pop_until("caption");
                        self.mode = Mode::InTable;
                        true
                    }
                    Token::Text(_) => {
                        self.hit(probe::TEXT_IN_CAPTION);
                        self.in_body(token)
                    }
                    _ => self.in_body(token),
                }
            }
            Mode::InColgroup => {
                self.hit(probe::MODE_IN_COLGROUP);
                match token {
                    Token::Start(tag) if tag.name == "col" => {
                        self.insert(tag);
                        false
                    }
                    Token::End(tag) if tag.name == "colgroup" => {
                        self.end_handler("colgroup");
                        self.pop_until("colgroup");
                        self.mode = Mode::InTable;
                        false
                    }
                    Token::Text(t) if t.chars().all(is_ws) => false,
                    _ => {
                        self.pop_until("colgroup");
                        self.mode = Mode::InTable;
                        true
                    }
                }
            }
            Mode::InTableBody => {
                self.hit(probe::MODE_IN_TABLE_BODY);
                match token {
                    Token::Start(tag) if tag.name == "tr" => {
                        self.insert(tag);
                        self.mode = Mode::InRow;
                        false
                    }
                    Token::Start(tag) if matches!(tag.name.as_str(), "td" | "th") => {
                        self.hit(probe::IMPLIED_TR);
                        self.stack.push("tr".into());
                        self.mode = Mode::InRow;
                        true
                    }
                    Token::End(tag) if matches!(tag.name.as_str(), "tbody" | "thead" | "tfoot") => {
                        if self.in_table_scope(&tag.name) {
                            self.end_handler(&tag.name);
                            self.pop_until(&tag.name);
                            self.mode = Mode::InTable;
                        } else {
                            self.hit(probe::STRAY_END_TAG);
                        }
                        false
                    }
                    Token::Start(tag)
                        if matches!(tag.name.as_str(), "caption" | "col" | "colgroup" | "tbody" | "tfoot" | "thead") =>
                    {
                        self.close_table_section();
                        true
                    }
                    Token::End(tag) if tag.name == "table" => {
                        self.close_table_section();
                        true
                    }
                    _ => self.in_table(token),
                }
            }
            Mode::InRow => {
                self.hit(probe::MODE_IN_ROW);
                match token {
                    Token::Start(tag) if matches!(tag.name.as_str(), "td" | "th") => {
                        self.insert(tag);
                        self.formatting.push(String::new());
                        self.mode = Mode::InCell;
                        false
                    }
                    Token::End(tag) if tag.name == "tr" => {
                        self.end_handler("tr");
                        self.pop_until("tr");
                        self.mode = Mode::InTableBody;
                        false
                    }
                    Token::Start(tag) if TABLE_PARTS.contains(&tag.name.as_str()) || tag.name == "tr" => {
                        self.pop_until("tr");
                        self.mode = Mode::InTableBody;
                        true
                    }
                    Token::End(tag) if matches!(tag.name.as_str(), "table" | "tbody" | "thead" | "tfoot") => {
                        self.pop_until("tr");
                        self.mode = Mode::InTableBody;
                        true
                    }
                    _ => self.in_table(token),
                }
            }
            Mode::InCell => {
                self.hit(probe::MODE_IN_CELL);
                match token {
                    Token::End(tag) if matches!(tag.name.as_str(), "td" | "th") => {
                        if self.in_table_scope(&tag.name) {
                            self.end_handler(&tag.name);
                            self.close_cell();
                        } else {
                            self.hit(probe::STRAY_END_TAG);
                        }
                        false
                    }
                    Token::Start(tag) if TABLE_PARTS.contains(&tag.name.as_str()) || tag.name == "tr" => {
                        self.close_cell();
                        true
                    }
                    Token::End(tag) if matches!(tag.name.as_str(), "table" | "tbody" | "thead" | "tfoot" | "tr") => {
                        self.close_cell();
                        true
                    }
                    Token::Text(_) => {
                        self.hit(probe::TEXT_IN_CELL);
                        self.in_body(token)
                    }
                    _ => self.in_body(token),
                }
            }
            Mode::InSelect => self.in_select(token),
            Mode::AfterBody | Mode::AfterAfterBody => {
                self.hit(if self.mode == Mode::AfterBody { probe::MODE_AFTER_BODY } else { probe::MODE_AFTER_AFTER_BODY });
                match token {
                    Token::Text(t) if t.chars().all(is_ws) => false,
                    Token::Comment => {
                        self.hit(probe::COMMENT_AFTER_BODY);
                        false
                    }
                    Token::End(tag) if tag.name == "html" => {
                        self.end_handler("html");
                        self.mode = Mode::AfterAfterBody;
                        false
                    }
                    Token::Doctype(_) => {
                        self.hit(probe::DOCTYPE_IN_BODY);
                        false
                    }
                    _ => {
                        self.hit(probe::CONTENT_AFTER_BODY);
                        self.mode = Mode::InBody;
                        true
                    }
                }
            }
        }
    }

    fn close_table_section(&mut self) {
        while let Some(top) = self.stack.last() {
            if matches!(top.as_str(), "tbody" | "thead" | "tfoot" | "table" | "html") {
                break;
            }
            self.stack.pop();
        }
        if matches!(self.current(), "tbody" | "thead" | "tfoot") {
            self.stack.pop();
        }
        self.mode = Mode::InTable;
    }

    fn close_cell(&mut self) {
        while let Some(top) = self.stack.pop() {
            if top == "td" || top == "th" {
                break;
            }
        }
        // drop the cell's formatting marker and everything after it
        if let Some(pos) = self.formatting.iter().rposition(String::is_empty) {
            self.formatting.truncate(pos);
        }
        self.mode = Mode::InRow;
    }

    fn close_p(&mut self) {
        if self.in_scope("p", true) {
            self.hit(probe::IMPLICIT_P_CLOSE);
            self.end_handler("p");
            self.pop_until("p");
        }
    }

    fn reconstruct_formatting(&mut self) {
        let missing: Vec<String> = self
            .formatting
            .iter()
            .rev()
            .take_while(|f| !f.is_empty())
            .filter(|f| !self.stack.contains(f))
            .cloned()
            .collect();
        if !missing.is_empty() {
            self.hit(probe::RECONSTRUCT_FORMATTING);
            for name in missing.into_iter().rev() {
                if self.stack.len() < MAX_DEPTH {
                    self.stack.push(name);
                }
            }
        }
    }

    fn in_body(&mut self, token: &Token) -> bool {
        self.hit(probe::MODE_IN_BODY);
        match token {
            Token::Text(t) => {
                if !t.chars().all(is_ws) {
                    self.reconstruct_formatting();
                    self.hit(probe::TEXT_IN_BODY);
                    let cur = self.current().to_owned();
                    if FORMATTING.contains(&cur.as_str()) {
                        self.hit(probe::TEXT_IN_FORMATTING);
                    }
                    match cur.as_str() {
                        "li" | "dd" | "dt" => self.hit(probe::TEXT_IN_LIST_ITEM),
                        "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => self.hit(probe::TEXT_IN_HEADING),
                        "button" => self.hit(probe::TEXT_IN_BUTTON),
                        _ => {}
                    }
                }
                false
            }
            Token::Comment => {
                self.hit(probe::COMMENT_INSERTED);
                false
            }
            Token::Doctype(_) => {
                self.hit(probe::DOCTYPE_IN_BODY);
                false
            }
            Token::Start(tag) => {
                self.in_body_start(tag);
                false
            }
            Token::End(tag) => self.in_body_end(tag),
        }
    }

    fn in_body_start(&mut self, tag: &Tag) {
        let name = tag.name.as_str();
        match name {
            "html" => {
                self.hit(probe::SECOND_HTML);
                self.attributes(tag);
            }
            "body" => {
                self.hit(probe::SECOND_BODY);
                self.attributes(tag);
            }
            "head" => self.hit(probe::STRAY_END_TAG),
            _ if HEAD_ELEMENTS.contains(&name) => {
                self.hit(probe::HEAD_ELEMENT_IN_BODY);
                self.insert(tag);
                if RAWTEXT_ELEMENTS.contains(&name) && !tag.self_closing {
                    self.original_mode = self.mode;
                    self.mode = Mode::Text;
                }
            }
            "textarea" => {
                self.close_p();
                self.insert(tag);
                if !tag.self_closing {
                    self.original_mode = self.mode;
                    self.mode = Mode::Text;
                }
            }
            "form" => {
                if self.form_open {
                    self.hit(probe::NESTED_FORM);
                } else {
                    self.close_p();
                    self.insert(tag);
                    self.form_open = true;
                }
            }
            "li" | "dd" | "dt" => {
                let closes: &[&str] = if name == "li" { &["li"] } else { &["dd", "dt"] };
                for el in self.stack.clone().iter().rev() {
                    if closes.contains(&el.as_str()) {
                        self.hit(if name == "li" { probe::LI_CLOSES_LI } else { probe::DD_DT_CLOSE });
                        self.end_handler(el);
                        self.pop_until(el);
                        break;
                    }
                    if !matches!(el.as_str(), "address" | "div" | "p" | "span" | "b" | "i" | "em" | "strong") {
                        break;
                    }
                }
                self.close_p();
                self.insert(tag);
            }
            "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => {
                self.close_p();
                if matches!(self.current(), "h1" | "h2" | "h3" | "h4" | "h5" | "h6") {
                    self.hit(probe::HEADING_IN_HEADING);
                    self.stack.pop();
                }
                self.insert(tag);
            }
            "a" => {
                let open_a = self
                    .formatting
                    .iter()
                    .rev()
                    .take_while(|f| !f.is_empty())
                    .any(|f| f == "a");
                if open_a {
                    self.hit(probe::NESTED_ANCHOR);
                    self.adoption("a");
                }
                self.reconstruct_formatting();
                self.insert(tag);
                self.push_formatting(name);
            }
            _ if FORMATTING.contains(&name) => {
                self.reconstruct_formatting();
                self.insert(tag);
                self.push_formatting(name);
            }
            "button" => {
                if self.in_scope("button", false) {
                    self.hit(probe::BUTTON_IN_BUTTON);
                    self.end_handler("button");
                    self.pop_until("button");
                }
                self.reconstruct_formatting();
                self.insert(tag);
            }
            "table" => {
                self.close_p();
                self.insert(tag);
                self.mode = Mode::InTable;
            }
            "select" => {
                self.reconstruct_formatting();
                self.insert(tag);
                self.mode = if matches!(self.mode, Mode::InTable | Mode::InCaption | Mode::InTableBody | Mode::InRow | Mode::InCell) {
                    self.hit(probe::FOSTER_PARENT);
                    Mode::InSelect
                } else {
                    Mode::InSelect
                };
            }
            "image" => {
                self.hit(probe::IMAGE_RENAMED);
                let renamed = Tag {
                    name: "img".into(),
                    ..tag.clone()
                };
                self.insert(&renamed);
            }
            "option" | "optgroup" => {
                if self.current() == "option" {
                    self.hit(probe::OPTION_CLOSES_OPTION);
                    self.stack.pop();
                }
                self.reconstruct_formatting();
                self.insert(tag);
            }
            _ if TABLE_PARTS.contains(&name) || name == "tr" => {
                self.hit(probe::TABLE_PART_OUTSIDE_TABLE);
            }
            _ => {
                if BLOCK_CLOSES_P.contains(&name) || name == "p" {
                    self.close_p();
                } else {
                    self.reconstruct_formatting();
                }
                self.insert(tag);
            }
        }
    }

    fn push_formatting(&mut self, name: &str) {
        let same = self
            .formatting
            .iter()
            .rev()
            .take_while(|f| !f.is_empty())
            .filter(|f| *f == name)
            .count();
        if same >= 3 {
            self.hit(probe::FORMATTING_LIMIT);
            if let Some(pos) = self.formatting.iter().position(|f| f == name) {
                self.formatting.remove(pos);
            }
        }
        self.formatting.push(name.to_owned());
    }

    /// Simplified adoption agency: closes the formatting element and forgets it.
    fn adoption(&mut self, name: &str) {
        if let Some(pos) = self.formatting.iter().rposition(|f| f == name) {
            self.formatting.remove(pos);
        }
        if self.stack.iter().any(|e| e == name) {
            if self.current() != name {
                self.hit(probe::MISNESTED_FORMATTING);
            }
            self.end_handler(name);
            self.pop_until(name);
        } else {
            self.hit(probe::MISNESTED_FORMATTING);
        }
    }

    fn in_body_end(&mut self, tag: &Tag) -> bool {
        let name = tag.name.as_str();
        match name {
            "body" | "html" => {
                if self.in_scope("body", false) {
                    self.end_handler("body");
                    self.mode = Mode::AfterBody;
                    return name == "html";
                }
                self.hit(probe::STRAY_END_TAG);
                false
            }
            "p" => {
                if !self.in_scope("p", true) {
                    self.hit(probe::END_P_WITHOUT_P);
                    self.create(&Tag {
                        name: "p".into(),
                        attrs: Vec::new(),
                        self_closing: false,
                    });
                } else {
                    if self.current() != "p" {
                        self.hit(probe::END_TAG_CLOSES_ANCESTORS);
                    }
                    self.pop_until("p");
                }
                self.end_handler("p");
                false
            }
            "br" => {
                self.hit(probe::END_BR);
                self.insert(&Tag {
                    name: "br".into(),
                    attrs: Vec::new(),
                    self_closing: false,
                });
                false
            }
            "form" => {
                if self.form_open && self.in_scope("form", false) {
                    self.form_open = false;
                    self.end_handler("form");
                    if self.current() != "form" {
                        self.hit(probe::END_TAG_CLOSES_ANCESTORS);
                    }
                    self.pop_until("form");
                } else {
                    self.hit(probe::STRAY_END_TAG);
                }
                false
            }
            _ if VOID_ELEMENTS.contains(&name) => {
                self.hit(probe::VOID_END_TAG);
                false
            }
            _ if FORMATTING.contains(&name) => {
                let listed = self
                    .formatting
                    .iter()
                    .rev()
                    .take_while(|f| !f.is_empty())
                    .any(|f| f == name);
                if listed {
                    self.adoption(name);
                } else {
                    self.generic_end(name);
                }
                false
            }
            _ => {
                self.generic_end(name);
                false
            }
        }
    }

    fn generic_end(&mut self, name: &str) {
        for (depth, el) in self.stack.iter().enumerate().rev() {
            if el == name {
                if depth + 1 != self.stack.len() {
                    self.hit(probe::END_TAG_CLOSES_ANCESTORS);
                }
                self.end_handler(name);
                self.stack.truncate(depth);
                return;
            }
            if matches!(
                el.as_str(),
                "html" | "body" | "table" | "td" | "th" | "caption" | "select" | "button" | "form" | "li" | "p"
                    | "div" | "section" | "article" | "ul" | "ol"
            ) {
                break;
            }
        }
        self.hit(probe::STRAY_END_TAG);
    }

    fn in_table(&mut self, token: &Token) -> bool {
        self.hit(probe::MODE_IN_TABLE);
        match token {
            Token::Text(t) if t.chars().all(is_ws) => {
                self.hit(probe::WHITESPACE_IN_TABLE);
                false
            }
            Token::Text(_) => {
                self.hit(probe::TEXT_IN_TABLE);
                self.hit(probe::FOSTER_PARENT);
                self.in_body(token)
            }
            Token::Comment => {
                self.hit(probe::COMMENT_INSERTED);
                false
            }
            Token::Start(tag) => match tag.name.as_str() {
                "caption" => {
                    self.clear_to_table();
                    self.insert(tag);
                    self.formatting.push(String::new());
                    self.mode = Mode::InCaption;
                    false
                }
                "colgroup" => {
                    self.clear_to_table();
                    self.insert(tag);
                    self.mode = Mode::InColgroup;
                    false
                }
                "col" => {
                    self.clear_to_table();
                    self.stack.push("colgroup".into());
                    self.mode = Mode::InColgroup;
                    true
                }
                "tbody" | "thead" | "tfoot" => {
                    self.clear_to_table();
                    self.insert(tag);
                    self.mode = Mode::InTableBody;
                    false
                }
                "td" | "th" | "tr" => {
                    self.hit(probe::IMPLIED_TBODY);
                    self.clear_to_table();
                    self.stack.push("tbody".into());
                    self.mode = Mode::InTableBody;
                    true
                }
                "table" => {
                    self.hit(probe::TABLE_IN_TABLE);
                    if self.in_table_scope("table") {
                        self.end_handler("table");
                        self.pop_until("table");
                        self.reset_mode();
                        true
                    } else {
                        false
                    }
                }
                "style" | "script" | "template" => {
                    self.insert(tag);
                    if !tag.self_closing && tag.name != "template" {
                        self.original_mode = self.mode;
                        self.mode = Mode::Text;
                    }
                    false
                }
                "input" if tag
                    .attrs
                    .iter()
                    .any(|(k, v)| k == "type" && v.eq_ignore_ascii_case("hidden")) =>
                {
                    self.hit(probe::HIDDEN_INPUT_IN_TABLE);
                    self.insert(tag);
                    false
                }
                "form" => {
                    self.hit(probe::FORM_IN_TABLE);
                    if !self.form_open {
                        self.create(tag);
                    }
                    false
                }
                _ => {
                    self.hit(probe::FOSTER_PARENT);
                    self.in_body(token)
                }
            },
            Token::End(tag) => match tag.name.as_str() {
                "table" => {
                    if self.in_table_scope("table") {
                        self.end_handler("table");
                        self.pop_until("table");
                        self.reset_mode();
                    } else {
                        self.hit(probe::STRAY_END_TAG);
                    }
                    false
                }
                "body" | "caption" | "col" | "colgroup" | "html" | "tbody" | "td" | "tfoot" | "th" | "thead" | "tr" => {
                    self.hit(probe::IGNORED_IN_TABLE);
                    false
                }
                _ => {
                    self.hit(probe::FOSTER_PARENT);
                    self.in_body(token)
                }
            },
            Token::Doctype(_) => {
                self.hit(probe::DOCTYPE_IN_BODY);
                false
            }
        }
    }

    fn clear_to_table(&mut self) {
        while let Some(top) = self.stack.last() {
            if matches!(top.as_str(), "table" | "html" | "template") {
                break;
            }
            self.stack.pop();
        }
    }

    fn in_select(&mut self, token: &Token) -> bool {
        self.hit(probe::MODE_IN_SELECT);
        match token {
            Token::Text(_) => {
                self.hit(probe::TEXT_IN_SELECT);
                false
            }
            Token::Comment => {
                self.hit(probe::COMMENT_INSERTED);
                false
            }
            Token::Start(tag) => match tag.name.as_str() {
                "option" => {
                    if self.current() == "option" {
                        self.hit(probe::OPTION_CLOSES_OPTION);
                        self.end_handler("option");
                        self.stack.pop();
                    }
                    self.insert(tag);
                    false
                }
                "optgroup" => {
                    if self.current() == "option" {
                        self.hit(probe::OPTION_CLOSES_OPTION);
                        self.stack.pop();
                    }
                    if self.current() == "optgroup" {
                        self.stack.pop();
                    }
                    self.insert(tag);
                    false
                }
                "select" => {
                    self.hit(probe::SELECT_IN_SELECT);
                    self.pop_until("select");
                    self.reset_mode();
                    false
                }
                "input" | "textarea" | "keygen" => {
                    self.hit(probe::SELECT_IN_SELECT);
                    self.pop_until("select");
                    self.reset_mode();
                    true
                }
                "script" | "template" => {
                    self.insert(tag);
                    if !tag.self_closing && tag.name == "script" {
                        self.original_mode = self.mode;
                        self.mode = Mode::Text;
                    }
                    false
                }
                _ => {
                    self.hit(probe::IGNORED_IN_SELECT);
                    false
                }
            },
            Token::End(tag) => match tag.name.as_str() {
                "option" | "optgroup" => {
                    if self.current() == tag.name {
                        self.end_handler(&tag.name);
                        self.stack.pop();
                    } else {
                        self.hit(probe::STRAY_END_TAG);
                    }
                    false
                }
                "select" => {
                    self.end_handler("select");
                    self.pop_until("select");
                    self.reset_mode();
                    false
                }
                _ => {
                    self.hit(probe::IGNORED_IN_SELECT);
                    false
                }
            },
            Token::Doctype(_) => {
                self.hit(probe::DOCTYPE_IN_BODY);
                false
            }
        }
    }

    fn finish(self) {
        let user_elements = self
            .stack
            .iter()
            .any(|e| !matches!(e.as_str(), "html" | "head" | "body"));
        if user_elements {
            self.probes.hit(probe::UNCLOSED_AT_EOF);
        }
        self.probes.hit(probe::STACK_UNWIND);
        self.probes.hit(probe::TREE_FINISH);
    }
}

/// Runs the bundled parser over `html` and returns the probes it reached.
pub fn toy_target_execute(html: &[u8]) -> CoverageSet {
    let mut probes = Probes::new();
    probes.hit(probe::PARSER_INIT);
    probes.hit(probe::DECODE);
    let text = match std::str::from_utf8(html) {
        Ok(s) => std::borrow::Cow::Borrowed(s),
        Err(_) => {
            probes.hit(probe::ERR_INVALID_UTF8);
            String::from_utf8_lossy(html)
        }
    };
    let chars: Vec<char> = text.chars().collect();
    let tokens = Tokenizer::run(&chars, &mut probes);
    probes.hit(probe::EOF_TOKEN);
    let mut tree = TreeBuilder::new(&mut probes);
    for token in &tokens {
        tree.process(token);
    }
    tree.finish();
    probes.hit(probe::EPILOGUE);
    probes.into_set()
}

/// The bundled parser as a [`TargetHarness`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyTarget;

impl ToyTarget {
    pub const NAME: &'static str = "toy-html";
}

impl TargetHarness for ToyTarget {
    fn descriptor(&self) -> HarnessDescriptor {
        HarnessDescriptor {
            name: Self::NAME.into(),
            modules: vec![ModuleEntry {
                id: TOY_MODULE_ID,
                base: 0,
                end: NUM_PROBES as u64,
                path: "toy_html_parser".into(),
            }],
        }
    }

    fn execute(&self, test_case: &[u8]) -> Result<CoverageSet> {
        Ok(toy_target_execute(test_case))
    }
}
