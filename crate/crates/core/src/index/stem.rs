use std::borrow::Cow;

use serde::{Deserialize, Serialize};

/// Maps a token to the form stored in the index.
pub trait Stemmer: Send + Sync {
    fn stem<'a>(&self, token: &'a str) -> Cow<'a, str>;
}

/// Built-in stemmers. `Identity` is the default; `Plural` strips common
/// English plural endings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemmerKind {
    #[default]
    Identity,
    Plural,
}

impl Stemmer for StemmerKind {
    fn stem<'a>(&self, token: &'a str) -> Cow<'a, str> {
        match self {
            StemmerKind::Identity => Cow::Borrowed(token),
            StemmerKind::Plural => plural_stem(token),
        }
    }
}

fn plural_stem(token: &str) -> Cow<'_, str> {
    if token.len() < 4 || !token.is_ascii() {
        return Cow::Borrowed(token);
    }
    if let Some(stem) = token.strip_suffix("ies") {
        return Cow::Owned(format!("{stem}y"));
    }
    for suffix in ["sses", "shes", "ches", "xes"] {
        if token.ends_with(suffix) {
            return Cow::Borrowed(&token[..token.len() - 2]);
        }
    }
    if token.ends_with('s')
        && !token.ends_with("ss")
        && !token.ends_with("us")
        && !token.ends_with("is")
    {
        return Cow::Borrowed(&token[..token.len() - 1]);
    }
    Cow::Borrowed(token)
}
