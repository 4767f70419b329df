//! Grammar-based HTML tag generator.
//!
//! Every tag is produced from a [`TagSpec`]: a lowercase tag name, a list of
//! attribute generators and a content model. Attribute values occasionally
//! break the rules on purpose (over-long strings, out-of-range integers) at the
//! rate configured in [`GrammarConfig::error_rate`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Insertion marker used by templates.
pub const MARKER: &str = "|";

/// Template every grammar and generated test case is placed into.
pub const DEFAULT_TEMPLATE: &str = "<!DOCTYPE html><html><head></head><body>|</body></html>";

/// Non-ASCII characters the random string generators draw from in addition to
/// printable ASCII.
pub const EXTRA_CHARS: [char; 11] = ['ä', 'ö', 'ü', 'ß', 'é', 'è', 'ç', 'ñ', '€', '©', 'µ'];

const OVERLONG_MIN: usize = 256;
const OVERLONG_MAX: usize = 1024;

fn attr_alphabet() -> Vec<char> {
    (' '..='~').filter(|&c| c != '"').chain(EXTRA_CHARS).collect()
}

fn text_alphabet() -> Vec<char> {
    (' '..='~')
        .filter(|&c| c != '<' && c != '>')
        .chain(EXTRA_CHARS)
        .collect()
}

/// How an attribute value is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueGen {
    FixedSet(Vec<String>),
    IntRange { min: i64, max: i64 },
    RandomString { max_len: usize },
    UrlLike,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrSpec {
    pub name: String,
    pub value: ValueGen,
}

impl AttrSpec {
    pub fn new(name: &str, value: ValueGen) -> Self {
        Self {
            name: name.to_owned(),
            value,
        }
    }

    pub fn fixed(name: &str, values: &[&str]) -> Self {
        Self::new(
            name,
            ValueGen::FixedSet(values.iter().map(|v| (*v).to_owned()).collect()),
        )
    }

    pub fn int(name: &str, min: i64, max: i64) -> Self {
        Self::new(name, ValueGen::IntRange { min, max })
    }

    pub fn string(name: &str, max_len: usize) -> Self {
        Self::new(name, ValueGen::RandomString { max_len })
    }

    pub fn url(name: &str) -> Self {
        Self::new(name, ValueGen::UrlLike)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentModel {
    Void,
    Text,
    Nestable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagSpec {
    pub name: String,
    pub attributes: Vec<AttrSpec>,
    pub content_model: ContentModel,
}

impl TagSpec {
    pub fn new(name: &str, content_model: ContentModel, attributes: Vec<AttrSpec>) -> Result<Self> {
        let spec = Self {
            name: name.to_owned(),
            attributes,
            content_model,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
            || !self.name.as_bytes()[0].is_ascii_lowercase()
        {
            return Err(Error::InvalidConfig(format!(
                "tag name {:?} must be nonempty ASCII lowercase",
                self.name
            )));
        }
        let mut seen = BTreeSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate attribute {:?} on <{}>",
                    attr.name, self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrammarConfig {
    pub tags: Vec<TagSpec>,
    pub max_attrs_per_tag: usize,
    /// Probability that an attribute value deliberately violates its generator.
    pub error_rate: f64,
    pub rng_seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            tags: default_tags(),
            max_attrs_per_tag: 4,
            error_rate: 0.05,
            rng_seed: 0,
        }
    }
}

impl GrammarConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..Self::default()
        }
    }

    /// Restricts the inventory to the named tags, keeping the given order.
    pub fn restricted(&self, names: &[&str]) -> Result<Self> {
        let tags = names
            .iter()
            .map(|n| {
                self.tag(n)
                    .cloned()
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown tag {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tags, ..self.clone() })
    }

    pub fn tag(&self, name: &str) -> Option<&TagSpec> {
        self.tags.iter().find(|t| t.name == name)
    }

    pub fn tag_names(&self) -> Vec<String> {
        self.tags.iter().map(|t| t.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tags.is_empty() {
            return Err(Error::InvalidConfig("grammar has no tags".into()));
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::InvalidConfig(format!(
                "error_rate {} outside [0, 1]",
                self.error_rate
            )));
        }
        let mut names = BTreeSet::new();
        for tag in &self.tags {
            tag.validate()?;
            if !names.insert(tag.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate tag {:?}", tag.name)));
            }
        }
        Ok(())
    }
}

/// Generates one tag with the default options (4 attributes max, 5% rule breaking).
pub fn generate_tag<R: Rng + ?Sized>(rng: &mut R, spec: &TagSpec) -> String {
    TagGenerator::new(4, 0.05).generate(rng, spec)
}

/// Tag generator with explicit attribute and error-injection settings.
#[derive(Debug, Clone)]
pub struct TagGenerator {
    max_attrs: usize,
    error_rate: f64,
    attr_chars: Vec<char>,
    text_chars: Vec<char>,
}

impl TagGenerator {
    pub fn new(max_attrs: usize, error_rate: f64) -> Self {
        Self {
            max_attrs,
            error_rate,
            attr_chars: attr_alphabet(),
            text_chars: text_alphabet(),
        }
    }

    pub fn from_config(config: &GrammarConfig) -> Self {
        Self::new(config.max_attrs_per_tag, config.error_rate)
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R, spec: &TagSpec) -> String {
        let mut out = String::with_capacity(64);
        out.push('<');
        out.push_str(&spec.name);

        let limit = self.max_attrs.min(spec.attributes.len());
        if limit > 0 {
            let count = rng.gen_range(0..=limit);
            for attr in spec.attributes.choose_multiple(rng, count) {
                let value = self.attr_value(rng, &attr.value);
                let _ = write!(out, " {}=\"{}\"", attr.name, value);
            }
        }
        out.push('>');

        match spec.content_model {
            ContentModel::Void => {}
            ContentModel::Text => {
                let len = rng.gen_range(1..=24);
                self.push_random(rng, &mut out, len, false);
            }
            ContentModel::Nestable => {
                let len = rng.gen_range(0..=16);
                self.push_random(rng, &mut out, len, false);
            }
        }
        if spec.content_model != ContentModel::Void {
            out.push_str("</");
            out.push_str(&spec.name);
            out.push('>');
        }
        out
    }

    fn push_random<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut String, len: usize, attr: bool) {
        let alphabet = if attr { &self.attr_chars } else { &self.text_chars };
        out.extend((0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]));
    }

    fn attr_value<R: Rng + ?Sized>(&self, rng: &mut R, gen: &ValueGen) -> String {
        let broken = self.error_rate > 0.0 && rng.gen_bool(self.error_rate);
        let mut out = String::new();
        match gen {
            ValueGen::IntRange { min, max } => {
                let v = if broken {
                    match rng.gen_range(0..4) {
                        0 => min.saturating_sub(rng.gen_range(1..1_000_000)),
                        1 => max.saturating_add(rng.gen_range(1..1_000_000)),
                        2 => i64::from(i32::MAX) + rng.gen_range(1..1_000),
                        _ => i64::MIN + rng.gen_range(0..1_000),
                    }
                } else {
                    rng.gen_range(*min..=*max)
                };
                let _ = write!(out, "{v}");
            }
            _ if broken => {
                let len = rng.gen_range(OVERLONG_MIN..=OVERLONG_MAX);
                self.push_random(rng, &mut out, len, true);
            }
            ValueGen::FixedSet(values) => {
                if let Some(v) = values.choose(rng) {
                    out.push_str(v);
                }
            }
            ValueGen::RandomString { max_len } => {
                let len = rng.gen_range(0..=*max_len);
                self.push_random(rng, &mut out, len, true);
            }
            ValueGen::UrlLike => self.url(rng, &mut out),
        }
        out
    }

    fn url<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut String) {
        const SCHEMES: [&str; 6] = ["http://", "https://", "ftp://", "file:///", "data:", "javascript:"];
        const TLDS: [&str; 4] = ["com", "org", "net", "de"];
        let scheme = SCHEMES.choose(rng).copied().unwrap_or("http://");
        out.push_str(scheme);
        match scheme {
            "javascript:" => out.push_str("void(0)"),
            "data:" => {
                out.push_str("text/html,");
                let len = rng.gen_range(1..=12);
                self.push_random(rng, out, len, true);
            }
            _ => {
                let host_len = rng.gen_range(3..=10);
                out.extend((0..host_len).map(|_| char::from(rng.gen_range(b'a'..=b'z'))));
                out.push('.');
                out.push_str(TLDS.choose(rng).copied().unwrap_or("com"));
                for _ in 0..rng.gen_range(0..=3) {
                    out.push('/');
                    let seg_len = rng.gen_range(1..=8);
                    out.extend((0..seg_len).map(|_| char::from(rng.gen_range(b'a'..=b'z'))));
                }
                if rng.gen_bool(0.3) {
                    out.push_str("?q=");
                    out.extend((0..rng.gen_range(1..=6)).map(|_| char::from(rng.gen_range(b'0'..=b'9'))));
                    out.push_str("&p=");
                    out.extend((0..rng.gen_range(1..=6)).map(|_| char::from(rng.gen_range(b'a'..=b'z'))));
                }
            }
        }
    }
}

/// Where a test case came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Grammar,
    Tcn,
    Ddqn,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Grammar => "grammar",
            Source::Tcn => "tcn",
            Source::Ddqn => "ddqn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub content: Vec<u8>,
    pub source: Source,
    pub tag_count: usize,
    /// Seed or checkpoint identifier the case was derived from.
    pub origin: String,
}

impl TestCase {
    pub fn new(content: Vec<u8>, source: Source, tag_count: usize, origin: impl Into<String>) -> Result<Self> {
        if content.is_empty() {
            return Err(Error::Template("test case content is empty".into()));
        }
        Ok(Self {
            content,
            source,
            tag_count,
            origin: origin.into(),
        })
    }

    /// Hex SHA-256 of the content, used as the on-disk file stem.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(&self.content))
    }

    /// Writes the content to `dir/<content hash>.html` and returns the path.
    pub fn write_html(&self, dir: &std::path::Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.html", self.content_hash()));
        std::fs::write(&path, &self.content)?;
        Ok(path)
    }
}

/// A template split at its single insertion marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub prefix: String,
    pub suffix: String,
}

impl Template {
    pub fn parse(template: &str) -> Result<Self> {
        let mut parts = template.split(MARKER);
        let prefix = parts.next().unwrap_or_default();
        let suffix = parts
            .next()
            .ok_or_else(|| Error::Template("missing insertion marker".into()))?;
        if parts.next().is_some() {
            return Err(Error::Template("more than one insertion marker".into()));
        }
        Ok(Self {
            prefix: prefix.to_owned(),
            suffix: suffix.to_owned(),
        })
    }

    pub fn fill(&self, body: &str) -> String {
        let mut out = String::with_capacity(self.prefix.len() + body.len() + self.suffix.len());
        out.push_str(&self.prefix);
        out.push_str(body);
        out.push_str(&self.suffix);
        out
    }
}

impl Default for Template {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("default template has one marker")
    }
}

/// Places `tags` at the template's insertion marker.
pub fn build_test_case<S: AsRef<str>>(tags: &[S], template: &str) -> Result<TestCase> {
    let template = Template::parse(template)?;
    let body: String = tags.iter().map(AsRef::as_ref).collect();
    TestCase::new(
        template.fill(&body).into_bytes(),
        Source::Grammar,
        tags.len(),
        String::new(),
    )
}

/// Per-run statistics of a generated corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub seed: u64,
    pub n_tags: usize,
    pub counts: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn to_kv(&self) -> String {
        let mut out = format!("seed={}\nn_tags={}\n", self.seed, self.n_tags);
        for (name, count) in &self.counts {
            let _ = writeln!(out, "tag.{name}={count}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub tags: Vec<String>,
    pub manifest: Manifest,
}

impl Corpus {
    /// One tag per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tags.iter().map(|t| t.len() + 1).sum());
        for tag in &self.tags {
            out.push_str(tag);
            out.push('\n');
        }
        out
    }
}

/// Streams `n_tags` tags drawn uniformly from the configured inventory.
pub fn generate_corpus(config: &GrammarConfig, n_tags: usize) -> Result<Corpus> {
    if n_tags == 0 {
        return Err(Error::InvalidConfig("n_tags must be positive".into()));
    }
    config.validate()?;
    let gen = TagGenerator::from_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut counts = BTreeMap::new();
    let mut tags = Vec::with_capacity(n_tags);
    for _ in 0..n_tags {
        let spec = &config.tags[rng.gen_range(0..config.tags.len())];
        *counts.entry(spec.name.clone()).or_insert(0) += 1;
        tags.push(gen.generate(&mut rng, spec));
    }
    Ok(Corpus {
        tags,
        manifest: Manifest {
            seed: config.rng_seed,
            n_tags,
            counts,
        },
    })
}

/// Grammar baseline: `n_sets` sets of `cases_per_set` test cases with
/// `tags_per_case` tags each.
pub fn baseline_sets(
    config: &GrammarConfig,
    n_sets: usize,
    cases_per_set: usize,
    tags_per_case: usize,
) -> Result<Vec<Vec<TestCase>>> {
    config.validate()?;
    let gen = TagGenerator::from_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let template = Template::default();
    let mut sets = Vec::with_capacity(n_sets);
    for set in 0..n_sets {
        let mut cases = Vec::with_capacity(cases_per_set);
        for case in 0..cases_per_set {
            let body: String = (0..tags_per_case)
                .map(|_| {
                    let spec = &config.tags[rng.gen_range(0..config.tags.len())];
                    gen.generate(&mut rng, spec)
                })
                .collect();
            cases.push(TestCase::new(
                template.fill(&body).into_bytes(),
                Source::Grammar,
                tags_per_case,
                format!("seed={} set={set} case={case}", config.rng_seed),
            )?);
        }
        sets.push(cases);
    }
    Ok(sets)
}

fn global_attrs() -> Vec<AttrSpec> {
    vec![
        AttrSpec::string("id", 12),
        AttrSpec::string("class", 16),
        AttrSpec::fixed("style", &["color:red", "display:none", "float:left", "position:absolute", "width:100%"]),
        AttrSpec::string("title", 20),
        AttrSpec::fixed("lang", &["en", "de", "fr", "ja", "ar"]),
        AttrSpec::fixed("dir", &["ltr", "rtl", "auto"]),
        AttrSpec::fixed("hidden", &["", "hidden"]),
        AttrSpec::int("tabindex", -1, 32767),
        AttrSpec::fixed("contenteditable", &["true", "false", ""]),
        AttrSpec::fixed("draggable", &["true", "false"]),
        AttrSpec::fixed("onclick", &["alert(1)", "void(0)", "this.remove()"]),
        AttrSpec::fixed("onload", &["alert(1)", "void(0)"]),
        AttrSpec::fixed("onerror", &["alert(1)", "void(0)"]),
        AttrSpec::fixed("onmouseover", &["void(0)", "this.focus()"]),
    ]
}

fn with_globals(mut specific: Vec<AttrSpec>) -> Vec<AttrSpec> {
    for attr in global_attrs() {
        if !specific.iter().any(|a| a.name == attr.name) {
            specific.push(attr);
        }
    }
    specific
}

/// The shipped tag inventory (HTML5 elements with hand-written attributes).
pub fn default_tags() -> Vec<TagSpec> {
    use ContentModel::{Nestable, Text, Void};
    let align = || AttrSpec::fixed("align", &["left", "right", "center", "justify"]);
    let width = || AttrSpec::int("width", 0, 4096);
    let height = || AttrSpec::int("height", 0, 4096);
    let src = || AttrSpec::url("src");
    let href = || AttrSpec::url("href");
    let name = || AttrSpec::string("name", 10);
    let value = || AttrSpec::string("value", 16);
    let disabled = || AttrSpec::fixed("disabled", &["", "disabled"]);
    let media = || {
        vec![
            src(),
            AttrSpec::fixed("autoplay", &["", "autoplay"]),
            AttrSpec::fixed("controls", &["", "controls"]),
            AttrSpec::fixed("loop", &["", "loop"]),
            AttrSpec::fixed("preload", &["none", "metadata", "auto"]),
            width(),
            height(),
        ]
    };
    let cell = || {
        vec![
            AttrSpec::int("colspan", 0, 1000),
            AttrSpec::int("rowspan", 0, 65534),
            align(),
            AttrSpec::string("headers", 8),
        ]
    };

    let table: Vec<(&str, ContentModel, Vec<AttrSpec>)> = vec![
        ("a", Text, vec![href(), AttrSpec::fixed("target", &["_blank", "_self", "_parent", "_top"]), AttrSpec::fixed("rel", &["nofollow", "noopener", "stylesheet"]), AttrSpec::string("download", 8)]),
        ("abbr", Text, vec![]),
        ("address", Nestable, vec![]),
        ("area", Void, vec![href(), AttrSpec::fixed("shape", &["rect", "circle", "poly", "default"]), AttrSpec::string("coords", 16), AttrSpec::string("alt", 10)]),
        ("article", Nestable, vec![]),
        ("aside", Nestable, vec![]),
        ("audio", Nestable, media()),
        ("b", Text, vec![]),
        ("bdi", Text, vec![]),
        ("bdo", Text, vec![AttrSpec::fixed("dir", &["ltr", "rtl"])]),
        ("blockquote", Nestable, vec![AttrSpec::url("cite")]),
        ("br", Void, vec![AttrSpec::fixed("clear", &["left", "right", "all", "none"])]),
        ("button", Text, vec![name(), value(), disabled(), AttrSpec::fixed("type", &["submit", "reset", "button"]), AttrSpec::url("formaction")]),
        ("canvas", Nestable, vec![width(), height()]),
        ("caption", Text, vec![align()]),
        ("cite", Text, vec![]),
        ("code", Text, vec![]),
        ("col", Void, vec![AttrSpec::int("span", 0, 1000), width()]),
        ("colgroup", Nestable, vec![AttrSpec::int("span", 0, 1000)]),
        ("data", Text, vec![value()]),
        ("datalist", Nestable, vec![]),
        ("dd", Text, vec![]),
        ("del", Text, vec![AttrSpec::url("cite"), AttrSpec::string("datetime", 12)]),
        ("details", Nestable, vec![AttrSpec::fixed("open", &["", "open"])]),
        ("dfn", Text, vec![]),
        ("dialog", Nestable, vec![AttrSpec::fixed("open", &["", "open"])]),
        ("div", Nestable, vec![align()]),
        ("dl", Nestable, vec![]),
        ("dt", Text, vec![]),
        ("em", Text, vec![]),
        ("embed", Void, vec![src(), AttrSpec::fixed("type", &["video/mp4", "application/pdf", "image/svg+xml"]), width(), height()]),
        ("fieldset", Nestable, vec![name(), disabled()]),
        ("figcaption", Text, vec![]),
        ("figure", Nestable, vec![]),
        ("footer", Nestable, vec![]),
        ("form", Nestable, vec![AttrSpec::url("action"), AttrSpec::fixed("method", &["get", "post", "dialog"]), AttrSpec::fixed("enctype", &["multipart/form-data", "text/plain"]), name(), AttrSpec::fixed("novalidate", &["", "novalidate"])]),
        ("h1", Text, vec![align()]),
        ("h2", Text, vec![align()]),
        ("h3", Text, vec![align()]),
        ("h4", Text, vec![align()]),
        ("h5", Text, vec![align()]),
        ("h6", Text, vec![align()]),
        ("header", Nestable, vec![]),
        ("hr", Void, vec![align(), AttrSpec::int("size", 0, 100), width(), AttrSpec::fixed("noshade", &["", "noshade"])]),
        ("i", Text, vec![]),
        ("iframe", Nestable, vec![src(), AttrSpec::string("srcdoc", 20), name(), width(), height(), AttrSpec::fixed("sandbox", &["", "allow-scripts", "allow-forms"])]),
        ("img", Void, vec![src(), AttrSpec::string("alt", 12), width(), height(), AttrSpec::string("srcset", 20), AttrSpec::string("usemap", 8), AttrSpec::fixed("loading", &["lazy", "eager"])]),
        ("input", Void, vec![AttrSpec::fixed("type", &["text", "password", "checkbox", "radio", "submit", "file", "hidden", "number", "range", "date", "color", "email", "image"]), name(), value(), AttrSpec::fixed("checked", &["", "checked"]), disabled(), AttrSpec::int("maxlength", -1, 524288), AttrSpec::int("min", -100, 100), AttrSpec::int("max", -100, 100), AttrSpec::int("step", 1, 10), AttrSpec::string("placeholder", 12), AttrSpec::int("size", 0, 100), AttrSpec::string("pattern", 10)]),
        ("ins", Text, vec![AttrSpec::url("cite"), AttrSpec::string("datetime", 12)]),
        ("kbd", Text, vec![]),
        ("label", Text, vec![AttrSpec::string("for", 8)]),
        ("legend", Text, vec![align()]),
        ("li", Text, vec![value(), AttrSpec::fixed("type", &["1", "a", "A", "i", "I", "disc", "square"])]),
        ("main", Nestable, vec![]),
        ("map", Nestable, vec![name()]),
        ("mark", Text, vec![]),
        ("meter", Text, vec![AttrSpec::int("value", -10, 110), AttrSpec::int("min", -10, 10), AttrSpec::int("max", 50, 200), AttrSpec::int("low", 0, 50), AttrSpec::int("high", 50, 100), AttrSpec::int("optimum", 0, 100)]),
        ("nav", Nestable, vec![]),
        ("object", Nestable, vec![AttrSpec::url("data"), AttrSpec::fixed("type", &["application/pdf", "image/png", "text/html"]), width(), height(), name()]),
        ("ol", Nestable, vec![AttrSpec::fixed("reversed", &["", "reversed"]), AttrSpec::int("start", -1000, 1000), AttrSpec::fixed("type", &["1", "a", "A", "i", "I"])]),
        ("optgroup", Nestable, vec![AttrSpec::string("label", 10), disabled()]),
        ("option", Text, vec![value(), AttrSpec::fixed("selected", &["", "selected"]), disabled(), AttrSpec::string("label", 10)]),
        ("output", Text, vec![AttrSpec::string("for", 8), name()]),
        ("p", Text, vec![align()]),
        ("param", Void, vec![name(), value()]),
        ("picture", Nestable, vec![]),
        ("pre", Text, vec![width()]),
        ("progress", Text, vec![AttrSpec::int("value", -10, 110), AttrSpec::int("max", 0, 1000)]),
        ("q", Text, vec![AttrSpec::url("cite")]),
        ("s", Text, vec![]),
        ("samp", Text, vec![]),
        ("section", Nestable, vec![]),
        ("select", Nestable, vec![name(), AttrSpec::fixed("multiple", &["", "multiple"]), AttrSpec::int("size", 0, 100), disabled(), AttrSpec::fixed("required", &["", "required"])]),
        ("small", Text, vec![]),
        ("source", Void, vec![src(), AttrSpec::fixed("type", &["video/mp4", "audio/ogg", "image/webp"]), AttrSpec::string("media", 16), AttrSpec::string("srcset", 20)]),
        ("span", Text, vec![]),
        ("strong", Text, vec![]),
        ("sub", Text, vec![]),
        ("summary", Text, vec![]),
        ("sup", Text, vec![]),
        ("table", Nestable, vec![AttrSpec::int("border", 0, 100), AttrSpec::int("cellpadding", 0, 100), AttrSpec::int("cellspacing", 0, 100), width(), align(), AttrSpec::string("summary", 12)]),
        ("tbody", Nestable, vec![align()]),
        ("td", Text, cell()),
        ("textarea", Text, vec![name(), AttrSpec::int("rows", 0, 1000), AttrSpec::int("cols", 0, 1000), disabled(), AttrSpec::int("maxlength", -1, 524288), AttrSpec::fixed("wrap", &["soft", "hard", "off"])]),
        ("tfoot", Nestable, vec![align()]),
        ("th", Text, { let mut c = cell(); c.push(AttrSpec::fixed("scope", &["row", "col", "rowgroup", "colgroup"])); c }),
        ("thead", Nestable, vec![align()]),
        ("time", Text, vec![AttrSpec::string("datetime", 12)]),
        ("tr", Nestable, vec![align()]),
        ("track", Void, vec![src(), AttrSpec::fixed("kind", &["subtitles", "captions", "chapters", "metadata"]), AttrSpec::string("srclang", 4), AttrSpec::string("label", 8)]),
        ("u", Text, vec![]),
        ("ul", Nestable, vec![AttrSpec::fixed("type", &["disc", "circle", "square"])]),
        ("var", Text, vec![]),
        ("video", Nestable, { let mut m = media(); m.push(AttrSpec::url("poster")); m }),
        ("wbr", Void, vec![]),
    ];

    table
        .into_iter()
        .map(|(name, model, attrs)| {
            TagSpec::new(name, model, with_globals(attrs)).expect("built-in tag inventory is valid")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn void_tag_without_attributes() {
        let spec = TagSpec::new("br", ContentModel::Void, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(generate_tag(&mut rng, &spec), "<br>");
    }

    #[test]
    fn anchor_golden() {
        let spec = TagSpec::new("a", ContentModel::Text, vec![AttrSpec::url("href")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let tag = generate_tag(&mut rng, &spec);
        assert_eq!(tag, GOLDEN_ANCHOR);
    }

    const GOLDEN_ANCHOR: &str =
        "<a href=\"ftp://thqdiieu.de/njxpy/pxsiezo/fl?q=3266&p=j\">3EZjW{?$$n</a>";

    #[test]
    fn identical_rng_state_identical_tag() {
        for spec in default_tags() {
            let a = generate_tag(&mut ChaCha8Rng::seed_from_u64(3), &spec);
            let b = generate_tag(&mut ChaCha8Rng::seed_from_u64(3), &spec);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(TagSpec::new("", ContentModel::Void, vec![]).is_err());
        assert!(TagSpec::new("Div", ContentModel::Void, vec![]).is_err());
        assert!(TagSpec::new(
            "a",
            ContentModel::Text,
            vec![AttrSpec::url("href"), AttrSpec::url("href")]
        )
        .is_err());
    }

    #[test]
    fn inventory_size_and_uniqueness() {
        let config = GrammarConfig::default();
        config.validate().unwrap();
        assert!(config.tags.len() >= 60);
    }

    #[test]
    fn non_void_tags_are_closed() {
        let config = GrammarConfig::default();
        let gen = TagGenerator::from_config(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in &config.tags {
            for _ in 0..20 {
                let tag = gen.generate(&mut rng, spec);
                let open = format!("<{}", spec.name);
                assert!(tag.starts_with(&open), "{tag}");
                let close = format!("</{}>", spec.name);
                assert_eq!(
                    tag.ends_with(&close),
                    spec.content_model != ContentModel::Void,
                    "{tag}"
                );
                assert!(!tag.contains('\n'));
            }
        }
    }

    #[test]
    fn test_case_from_tags() {
        let case = build_test_case(&["<br>"], "<html><body>|</body></html>").unwrap();
        assert_eq!(case.content, b"<html><body><br></body></html>");
        assert_eq!(case.tag_count, 1);

        let empty: [&str; 0] = [];
        let case = build_test_case(&empty, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(case.tag_count, 0);
        assert_eq!(
            case.content,
            b"<!DOCTYPE html><html><head></head><body></body></html>"
        );
    }

    #[test]
    fn template_marker_errors() {
        assert!(matches!(build_test_case(&["<br>"], "<html></html>"), Err(Error::Template(_))));
        assert!(matches!(build_test_case(&["<br>"], "<p>|</p>|"), Err(Error::Template(_))));
    }

    #[test]
    fn grammar_case_with_128_tags() {
        let config = GrammarConfig::with_seed(5);
        let corpus = generate_corpus(&config, 128).unwrap();
        let case = build_test_case(&corpus.tags, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(case.tag_count, 128);
        let expected_len = DEFAULT_TEMPLATE.len() - MARKER.len()
            + corpus.tags.iter().map(String::len).sum::<usize>();
        assert_eq!(case.content.len(), expected_len);
    }

    #[test]
    fn corpus_manifest_conserves_counts() {
        let config = GrammarConfig::with_seed(9);
        let corpus = generate_corpus(&config, 1).unwrap();
        assert_eq!(corpus.tags.len(), 1);

        let corpus = generate_corpus(&config, 5000).unwrap();
        assert_eq!(corpus.manifest.counts.values().sum::<usize>(), 5000);
        assert!(generate_corpus(&config, 0).is_err());
    }

    #[test]
    fn corpus_is_byte_identical_under_same_seed() {
        let config = GrammarConfig::with_seed(123);
        let a = generate_corpus(&config, 2000).unwrap();
        let b = generate_corpus(&config, 2000).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.manifest.to_kv(), b.manifest.to_kv());
        let c = generate_corpus(&GrammarConfig::with_seed(124), 2000).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn error_injection_produces_overlong_values() {
        let spec = TagSpec::new("x", ContentModel::Void, vec![AttrSpec::string("v", 4)]).unwrap();
        let gen = TagGenerator::new(1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw = false;
        for _ in 0..50 {
            let tag = gen.generate(&mut rng, &spec);
            if tag.len() > OVERLONG_MIN {
                saw = true;
            }
        }
        assert!(saw);

        let gen = TagGenerator::new(1, 0.0);
        for _ in 0..200 {
            assert!(gen.generate(&mut rng, &spec).chars().count() <= "<x v=\"\">".len() + 4);
        }
    }

    #[test]
    fn baseline_shape() {
        let sets = baseline_sets(&GrammarConfig::with_seed(1), 2, 3, 128).unwrap();
        assert_eq!(sets.len(), 2);
        assert!(sets.iter().all(|s| s.len() == 3));
        assert!(sets.iter().flatten().all(|c| c.tag_count == 128));
    }
}
