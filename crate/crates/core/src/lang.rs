//! The fixed registry of supported languages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of registered languages.
pub const LANGUAGE_COUNT: usize = 28;

// Sorted by code, so index order equals lexicographic code order.
const REGISTRY: [(&str, &str); LANGUAGE_COUNT] = [
    ("ar", "Arabic"),
    ("cs", "Czech"),
    ("da", "Danish"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fi", "Finnish"),
    ("fr", "French"),
    ("hr", "Croatian"),
    ("hu", "Hungarian"),
    ("id", "Indonesian"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("ms", "Malay"),
    ("nb", "Norwegian Bokmal"),
    ("nl", "Dutch"),
    ("no", "Norwegian"),
    ("pl", "Polish"),
    ("pt", "Portuguese"),
    ("ro", "Romanian"),
    ("ru", "Russian"),
    ("sv", "Swedish"),
    ("th", "Thai"),
    ("tr", "Turkish"),
    ("uk", "Ukrainian"),
    ("vi", "Vietnamese"),
    ("zh", "Chinese"),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown language: {0:?}")]
pub struct UnknownLanguage(pub String);

/// A registered language. Ordering follows the two-letter code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lang(u8);

impl Lang {
    pub const AR: Lang = Lang(0);
    pub const DE: Lang = Lang(3);
    pub const EN: Lang = Lang(4);
    pub const ES: Lang = Lang(5);
    pub const FR: Lang = Lang(7);
    pub const IT: Lang = Lang(11);
    pub const JA: Lang = Lang(12);
    pub const PT: Lang = Lang(19);
    pub const RU: Lang = Lang(21);
    pub const TH: Lang = Lang(23);
    pub const ZH: Lang = Lang(27);

    /// Lowercase two-letter code.
    pub fn code(self) -> &'static str {
        REGISTRY[self.0 as usize].0
    }

    /// English display name.
    pub fn name(self) -> &'static str {
        REGISTRY[self.0 as usize].1
    }

    pub fn all() -> impl ExactSizeIterator<Item = Lang> + Clone {
        (0..LANGUAGE_COUNT as u8).map(Lang)
    }

    /// Every ordered pair of distinct languages.
    pub fn directions() -> impl Iterator<Item = (Lang, Lang)> {
        Lang::all().flat_map(|s| Lang::all().filter(move |&t| t != s).map(move |t| (s, t)))
    }

    /// Languages written without spaces between words.
    pub fn is_unsegmented(self) -> bool {
        matches!(self, Lang::ZH | Lang::JA | Lang::TH)
    }
}

/// Resolves a code (case-insensitive) or display name (case-insensitive).
pub fn registry_lookup(code_or_name: &str) -> Result<Lang, UnknownLanguage> {
    let key = code_or_name.trim();
    if key.is_empty() {
        return Err(UnknownLanguage(code_or_name.to_string()));
    }
    REGISTRY
        .iter()
        .position(|(code, name)| code.eq_ignore_ascii_case(key) || name.eq_ignore_ascii_case(key))
        .map(|i| Lang(i as u8))
        .ok_or_else(|| UnknownLanguage(code_or_name.to_string()))
}

impl FromStr for Lang {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        registry_lookup(s)
    }
}

impl fmt::Debug for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for Lang {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Lang {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        registry_lookup(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn lookup_by_code_and_name() {
        let zh = registry_lookup("zh").unwrap();
        assert_eq!((zh.code(), zh.name()), ("zh", "Chinese"));
        assert_eq!(registry_lookup("ZH").unwrap(), zh);
        assert_eq!(registry_lookup("chinese").unwrap(), zh);
        assert_eq!(registry_lookup("eo"), Err(UnknownLanguage("eo".into())));
        assert!(registry_lookup("").is_err());
    }

    #[test]
    fn norwegian_variants_are_distinct() {
        let nb = registry_lookup("nb").unwrap();
        let no = registry_lookup("no").unwrap();
        assert_ne!(nb, no);
        assert_eq!(registry_lookup("Norwegian Bokmal").unwrap(), nb);
        assert_eq!(registry_lookup("Norwegian").unwrap(), no);
    }

    #[test]
    fn registry_is_sorted_unique_and_total() {
        let codes: Vec<_> = Lang::all().map(Lang::code).collect();
        let mut sorted = codes.clone();
        sorted.sort();
        assert_eq!(codes, sorted);
        assert_eq!(codes.iter().collect::<HashSet<_>>().len(), LANGUAGE_COUNT);
        for lang in Lang::all() {
            assert_eq!(registry_lookup(lang.code()).unwrap(), lang);
            assert_eq!(registry_lookup(lang.name()).unwrap(), lang);
        }
    }

    #[test]
    fn named_constants_match_registry() {
        for (lang, code) in [
            (Lang::AR, "ar"),
            (Lang::DE, "de"),
            (Lang::EN, "en"),
            (Lang::ES, "es"),
            (Lang::FR, "fr"),
            (Lang::IT, "it"),
            (Lang::JA, "ja"),
            (Lang::PT, "pt"),
            (Lang::RU, "ru"),
            (Lang::TH, "th"),
            (Lang::ZH, "zh"),
        ] {
            assert_eq!(lang.code(), code);
        }
    }

    #[test]
    fn direction_count() {
        assert_eq!(Lang::directions().count(), 756);
    }
}
