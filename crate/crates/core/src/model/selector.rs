use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Glob-style predicate over parameter names, alternatives separated by `|`.
///
/// `*` matches any run of characters (dots included) and `?` exactly one.
/// Only 2-D parameters are ever selected.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TargetSelector {
    patterns: Vec<String>,
}

impl TargetSelector {
    pub fn new(spec: &str) -> Result<Self> {
        let patterns: Vec<String> = spec
            .split('|')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect();
        if patterns.is_empty() {
            return Err(Error::Config(format!("empty target selector {spec:?}")));
        }
        Ok(Self { patterns })
    }

    /// Every attention projection in encoder and decoder.
    pub fn attention() -> Self {
        Self::new("*.attn.q|*.attn.k|*.attn.v|*.attn.o|*.cross.q|*.cross.k|*.cross.v|*.cross.o")
            .expect("static selector")
    }

    /// Decoder attention projections only.
    pub fn decoder_attention() -> Self {
        Self::new("dec.*.attn.?|dec.*.cross.?").expect("static selector")
    }

    pub fn all() -> Self {
        Self::new("*").expect("static selector")
    }

    pub fn matches(&self, name: &str) -> bool {
        self.patterns.iter().any(|p| glob(p.as_bytes(), name.as_bytes()))
    }

    /// `name` matches and the parameter is a matrix.
    pub fn selects(&self, name: &str, shape: &[usize]) -> bool {
        shape.len() == 2 && self.matches(name)
    }
}

fn glob(p: &[u8], s: &[u8]) -> bool {
    let (mut pi, mut si) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && (p[pi] == b'?' || p[pi] == s[si]) {
            pi += 1;
            si += 1;
        } else if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, si));
            pi += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == b'*' {
        pi += 1;
    }
    pi == p.len()
}

impl fmt::Display for TargetSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.patterns.join("|"))
    }
}

impl FromStr for TargetSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

impl TryFrom<String> for TargetSelector {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<TargetSelector> for String {
    fn from(s: TargetSelector) -> String {
        s.to_string()
    }
}
