//! Per-language gendered templates.
//!
//! Sentences are wrapped twice in the pipeline: before translation, in a
//! sentence-initial English template (`The man said "S"`) so that the
//! translator has to commit to a grammatical gender for the speaker; and
//! before scoring, in a sentence-final target-language template
//! (`"S," he said`) so that a neutral sentence becomes a minimal pair.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder marking where the wrapped sentence goes.
pub const SLOT: &str = "{S}";

const BUILTIN_REGISTRY: &str = include_str!("../data/templates.json");

/// Quote glyph pairs tried after a profile's own conventions.
pub const UNIVERSAL_QUOTES: [(&str, &str); 6] = [
    ("«", "»"),
    ("„", "“"),
    ("“", "”"),
    ("\"", "\""),
    ("‘", "’"),
    ("'", "'"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Masculine,
    Feminine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateMode {
    Noun,
    Pronoun,
}

/// A wrapper string with exactly one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    prefix: String,
    suffix: String,
}

impl Template {
    pub fn parse(raw: &str) -> Result<Self> {
        let mut parts = raw.split(SLOT);
        let prefix = parts.next().unwrap_or_default();
        let suffix = parts
            .next()
            .ok_or_else(|| Error::Config(format!("template `{raw}` has no {SLOT} slot")))?;
        if parts.next().is_some() {
            return Err(Error::Config(format!("template `{raw}` has more than one slot")));
        }
        Ok(Template {
            prefix: prefix.to_string(),
            suffix: suffix.to_string(),
        })
    }

    pub fn fill(&self, text: &str) -> String {
        let mut out = String::with_capacity(self.prefix.len() + text.len() + self.suffix.len());
        out.push_str(&self.prefix);
        out.push_str(text);
        out.push_str(&self.suffix);
        out
    }

    /// The slot content if `filled` has this template's fixed text around it.
    pub fn match_region<'a>(&self, filled: &'a str) -> Option<&'a str> {
        let rest = filled.strip_prefix(self.prefix.as_str())?;
        rest.strip_suffix(self.suffix.as_str())
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{SLOT}{}", self.prefix, self.suffix)
    }
}

impl Serialize for Template {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Template::parse(&raw).map_err(serde::de::Error::custom)
    }
}

fn default_initial_masc() -> Template {
    Template::parse("The man said \"{S}\"").expect("valid default")
}

fn default_initial_fem() -> Template {
    Template::parse("The woman said \"{S}\"").expect("valid default")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    #[serde(default = "default_initial_masc")]
    pub initial_masc: Template,
    #[serde(default = "default_initial_fem")]
    pub initial_fem: Template,
    pub final_noun_masc: Template,
    pub final_noun_fem: Template,
    #[serde(default)]
    pub final_pron_masc: Option<Template>,
    #[serde(default)]
    pub final_pron_fem: Option<Template>,
    pub quote_pairs: Vec<(String, String)>,
    /// Known target-language renderings of the initial templates, used when
    /// a translation drops the quotation marks.
    #[serde(default)]
    pub translated_initial: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    #[serde(default)]
    pub code: String,
    pub gendered_morphology: bool,
    pub pronoun_templates_available: bool,
    pub templates: TemplateSet,
    #[serde(default)]
    pub notes: String,
    /// Caveats surfaced in reports for this language.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl LanguageProfile {
    pub fn validate(&self) -> Result<()> {
        let t = &self.templates;
        let bad = |msg: &str| Err(Error::Config(format!("profile `{}`: {msg}", self.code)));
        if self.code.is_empty() {
            return bad("empty language code");
        }
        if t.initial_masc == t.initial_fem {
            return bad("initial templates do not differ by gender");
        }
        if t.final_noun_masc == t.final_noun_fem {
            return bad("noun templates do not differ by gender");
        }
        match (&t.final_pron_masc, &t.final_pron_fem, self.pronoun_templates_available) {
            (Some(m), Some(f), true) if m != f => {}
            (Some(_), Some(_), true) => return bad("pronoun templates do not differ by gender"),
            (None, None, false) => {}
            (_, _, true) => return bad("pronoun templates declared available but missing"),
            (_, _, false) => return bad("pronoun templates present but declared unavailable"),
        }
        if t.quote_pairs.is_empty() {
            return bad("no quote pairs");
        }
        if t.quote_pairs.iter().any(|(o, c)| o.is_empty() || c.is_empty()) {
            return bad("empty quote glyph");
        }
        Ok(())
    }

    /// The quote pair the profile lists first.
    pub fn primary_quotes(&self) -> (&str, &str) {
        let (o, c) = &self.templates.quote_pairs[0];
        (o, c)
    }
}

/// Language profiles keyed by language code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    profiles: BTreeMap<String, LanguageProfile>,
}

impl TemplateRegistry {
    /// Profiles for the thirty built-in European languages.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_REGISTRY).expect("built-in template registry is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let mut profiles: BTreeMap<String, LanguageProfile> = serde_json::from_str(raw)?;
        for (code, p) in profiles.iter_mut() {
            p.code = code.clone();
            p.validate()?;
        }
        Ok(TemplateRegistry { profiles })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    /// Replaces or adds the profiles of `other`.
    pub fn merge(&mut self, other: TemplateRegistry) {
        self.profiles.extend(other.profiles);
    }

    pub fn get(&self, code: &str) -> Result<&LanguageProfile> {
        self.profiles
            .get(code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn insert(&mut self, profile: LanguageProfile) -> Result<()> {
        profile.validate()?;
        self.profiles.insert(profile.code.clone(), profile);
        Ok(())
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &LanguageProfile> {
        self.profiles.values()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.profiles)?)
    }
}

fn non_empty(text: &str) -> Result<()> {
    if text.is_empty() {
        Err(Error::Precondition("cannot wrap an empty sentence".into()))
    } else {
        Ok(())
    }
}

/// Wraps `text` in the sentence-initial template used for translation.
pub fn wrap_initial(text: &str, gender: Gender, profile: &LanguageProfile) -> Result<String> {
    non_empty(text)?;
    let t = &profile.templates;
    Ok(match gender {
        Gender::Masculine => t.initial_masc.fill(text),
        Gender::Feminine => t.initial_fem.fill(text),
    })
}

/// Wraps `text` in the sentence-final evaluation template.
pub fn wrap_final(
    text: &str,
    gender: Gender,
    mode: TemplateMode,
    profile: &LanguageProfile,
) -> Result<String> {
    non_empty(text)?;
    let t = &profile.templates;
    let template = match (mode, gender) {
        (TemplateMode::Noun, Gender::Masculine) => &t.final_noun_masc,
        (TemplateMode::Noun, Gender::Feminine) => &t.final_noun_fem,
        (TemplateMode::Pronoun, g) => {
            let pron = match g {
                Gender::Masculine => t.final_pron_masc.as_ref(),
                Gender::Feminine => t.final_pron_fem.as_ref(),
            };
            match pron {
                Some(p) if profile.pronoun_templates_available => p,
                _ => return Err(Error::NoPronounTemplates(profile.code.clone())),
            }
        }
    };
    Ok(template.fill(text))
}

pub fn select_template_mode(profile: &LanguageProfile) -> TemplateMode {
    if profile.pronoun_templates_available {
        TemplateMode::Pronoun
    } else {
        TemplateMode::Noun
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractFailure {
    NoQuotedSpan,
}

impl ExtractFailure {
    pub fn code(self) -> &'static str {
        match self {
            ExtractFailure::NoQuotedSpan => "no-quoted-span",
        }
    }
}

impl fmt::Display for ExtractFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

fn quoted_span<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let rest = &text[start..];
    if open == close {
        return rest.find(close).map(|end| &rest[..end]);
    }
    let mut depth = 1usize;
    let mut i = 0;
    while i < rest.len() {
        let tail = &rest[i..];
        if tail.starts_with(close) {
            depth -= 1;
            if depth == 0 {
                return Some(&rest[..i]);
            }
            i += close.len();
        } else if tail.starts_with(open) {
            depth += 1;
            i += open.len();
        } else {
            i += tail.chars().next().map_or(1, char::len_utf8);
        }
    }
    None
}

/// Recovers the inner sentence of a translated templated sentence.
///
/// Tries the profile's quote pairs, then [`UNIVERSAL_QUOTES`], returning the
/// first balanced, non-blank span. Failing that, a single matching
/// translated skeleton from the profile is accepted.
pub fn extract_quoted(
    translated: &str,
    profile: &LanguageProfile,
) -> std::result::Result<String, ExtractFailure> {
    let pairs = profile
        .templates
        .quote_pairs
        .iter()
        .map(|(o, c)| (o.as_str(), c.as_str()))
        .chain(UNIVERSAL_QUOTES);
    for (open, close) in pairs {
        if let Some(span) = quoted_span(translated, open, close) {
            let span = span.trim();
            if !span.is_empty() {
                return Ok(span.to_string());
            }
        }
    }
    let mut regions = profile
        .templates
        .translated_initial
        .iter()
        .filter_map(|t| t.match_region(translated))
        .map(str::trim)
        .filter(|r| !r.is_empty());
    match (regions.next(), regions.next()) {
        (Some(r), None) => Ok(r.to_string()),
        _ => Err(ExtractFailure::NoQuotedSpan),
    }
}
