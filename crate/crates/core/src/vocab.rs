//! Token identifiers, vocabularies and decode prefixes.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of a token in the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered, duplicate-free list of token strings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::validation(format!(
                "vocabulary needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId::from(i)).is_some() {
                return Err(Error::validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Vocabulary of placeholder strings `t0..t{n-1}`.
    pub fn anonymous(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| format!("t{i}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    /// Resolves either a token string or a decimal token id.
    pub fn resolve(&self, s: &str) -> Option<TokenId> {
        self.id(s).or_else(|| {
            s.parse::<u32>()
                .ok()
                .map(TokenId)
                .filter(|id| self.contains(*id))
        })
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "token id {id} out of range for vocabulary of size {}",
                self.len()
            )))
        }
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::new(tokens).map_err(serde::de::Error::custom)
    }
}

/// The prompt plus the tokens generated so far.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeContext {
    pub prompt: Vec<TokenId>,
    pub generated: Vec<TokenId>,
}

impl DecodeContext {
    pub fn new(prompt: Vec<TokenId>) -> Self {
        Self {
            prompt,
            generated: Vec::new(),
        }
    }

    pub fn with_generated(&self, generated: Vec<TokenId>) -> Self {
        Self {
            prompt: self.prompt.clone(),
            generated,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self
            .prompt
            .iter()
            .chain(&self.generated)
            .find(|t| t.index() >= vocab_size)
        {
            Some(t) => Err(Error::validation(format!(
                "token id {t} out of range for vocabulary of size {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_tiny_vocabularies() {
        assert!(Vocabulary::new(["a", "b", "a"]).is_err());
        assert!(Vocabulary::new(["a"]).is_err());
        let v = Vocabulary::new(["yes", "no"]).unwrap();
        assert_eq!(v.id("no"), Some(TokenId(1)));
        assert_eq!(v.token(TokenId(0)), Some("yes"));
        assert_eq!(v.resolve("1"), Some(TokenId(1)));
        assert_eq!(v.resolve("2"), None);
    }

    #[test]
    fn context_validation() {
        let ctx = DecodeContext {
            prompt: vec![TokenId(0)],
            generated: vec![TokenId(3)],
        };
        assert!(ctx.validate(4).is_ok());
        assert!(ctx.validate(3).is_err());
    }
}
