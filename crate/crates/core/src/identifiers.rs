//! Object-identifier lexicon: `<OBJkkk>` token formatting, order assignment,
//! parsing IDs out of model text, and token-cost accounting.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

pub const DEFAULT_ID_WIDTH: usize = 3;

/// Identifier format, collapsed to its token-count behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdKind {
    /// No identifiers; objects are represented by feature tokens only.
    None,
    /// Plain-text ids such as `Obj001`, costing 4 tokens each.
    PlainText,
    /// A dedicated vocabulary token per id.
    SingleToken,
}

impl std::str::FromStr for IdKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(IdKind::None),
            "plain_text" => Ok(IdKind::PlainText),
            "single_token" => Ok(IdKind::SingleToken),
            other => Err(Error::input(format!(
                "unknown id scheme `{other}` (expected none, plain_text, or single_token)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdScheme {
    pub kind: IdKind,
    pub width: usize,
    pub tokens_per_object_feature: usize,
}

impl Default for IdScheme {
    fn default() -> Self {
        Self {
            kind: IdKind::SingleToken,
            width: DEFAULT_ID_WIDTH,
            tokens_per_object_feature: 2,
        }
    }
}

impl IdScheme {
    pub fn with_kind(kind: IdKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Total tokens needed to represent `n` objects, identifiers included.
pub fn token_cost(n: usize, scheme: &IdScheme) -> usize {
    let id_tokens = match scheme.kind {
        IdKind::None => 0,
        IdKind::PlainText => 4,
        IdKind::SingleToken => 1,
    };
    n * (id_tokens + scheme.tokens_per_object_feature)
}

/// Renders the 1-based `position` as `<OBJkkk>` with zero padding.
pub fn make_id_token(position: usize, width: usize) -> Result<String> {
    if width == 0 {
        return Err(Error::input("id width must be >= 1"));
    }
    let max = 10usize.pow(width as u32) - 1;
    if position == 0 || position > max {
        return Err(Error::input(format!(
            "id position {position} out of range 1..={max} for width {width}"
        )));
    }
    Ok(format!("<OBJ{position:0width$}>"))
}

/// How sequence positions map to proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    Fixed,
    Random,
}

impl std::str::FromStr for OrderPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(OrderPolicy::Fixed),
            "random" => Ok(OrderPolicy::Random),
            other => Err(Error::input(format!(
                "unknown id order `{other}` (expected fixed or random)"
            ))),
        }
    }
}

/// Bijection between sequence positions and proposal indices.
///
/// `permutation[k]` is the proposal shown at sequence position `k` (0-based);
/// ID tokens are 1-based, so proposal `permutation[k]` carries `<OBJ{k+1}>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdAssignment {
    permutation: Vec<u32>,
    seed: Option<u64>,
    #[serde(skip)]
    inverse: Vec<u32>,
}

impl IdAssignment {
    pub fn fixed(n: usize) -> Result<Self> {
        Self::from_permutation((0..n as u32).collect(), None)
    }

    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut perm: Vec<u32> = (0..n as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        Self::from_permutation(perm, Some(seed))
    }

    pub fn from_permutation(permutation: Vec<u32>, seed: Option<u64>) -> Result<Self> {
        let n = permutation.len();
        if n == 0 {
            return Err(Error::input("id assignment needs at least one object"));
        }
        let mut inverse = vec![u32::MAX; n];
        for (pos, &prop) in permutation.iter().enumerate() {
            let slot = inverse
                .get_mut(prop as usize)
                .ok_or_else(|| Error::input(format!("permutation entry {prop} out of range 0..{n}")))?;
            if *slot != u32::MAX {
                return Err(Error::input(format!("permutation repeats proposal {prop}")));
            }
            *slot = pos as u32;
        }
        Ok(Self {
            permutation,
            seed,
            inverse,
        })
    }

    /// Rebuilds the inverse table after deserialization.
    pub fn rehydrate(self) -> Result<Self> {
        Self::from_permutation(self.permutation, self.seed)
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn permutation(&self) -> &[u32] {
        &self.permutation
    }

    /// Proposal shown at the 1-based token position.
    pub fn proposal_at(&self, position: usize) -> Option<u32> {
        if position == 0 {
            return None;
        }
        self.permutation.get(position - 1).copied()
    }

    /// 1-based token position of a proposal.
    pub fn position_of(&self, proposal: u32) -> Option<usize> {
        self.inverse.get(proposal as usize).map(|&p| p as usize + 1)
    }

    /// The proposal's `<OBJkkk>` token.
    pub fn token_for(&self, proposal: u32, width: usize) -> Result<String> {
        let pos = self
            .position_of(proposal)
            .ok_or_else(|| Error::input(format!("proposal {proposal} not covered by assignment")))?;
        make_id_token(pos, width)
    }
}

/// Fixed or seeded-random position-to-proposal assignment for `n` objects.
pub fn assign_ids(n: usize, policy: OrderPolicy, seed: u64) -> Result<IdAssignment> {
    if n == 0 {
        return Err(Error::input("cannot assign ids to zero objects"));
    }
    match policy {
        OrderPolicy::Fixed => IdAssignment::fixed(n),
        OrderPolicy::Random => IdAssignment::random(n, seed),
    }
}

/// Canonical per-scene assignment derivation: the base seed is folded with
/// the scene id so corpus-level runs use one flag while scenes still differ.
pub fn scene_assignment(scene_id: &str, n: usize, policy: OrderPolicy, seed: u64) -> Result<IdAssignment> {
    assign_ids(n, policy, seed ^ fnv1a64(scene_id.as_bytes()))
}

/// One parsed `<OBJkkk>` occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdToken {
    pub position: usize,
    pub span: Range<usize>,
}

/// Parse result with near-miss diagnostics (`<OBJ13>` under width 3 etc.).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdScan {
    pub tokens: Vec<IdToken>,
    pub near_misses: Vec<Range<usize>>,
}

/// Scans for exact-grammar tokens and reports malformed near-misses.
pub fn scan_id_tokens(text: &str, width: usize) -> IdScan {
    let bytes = text.as_bytes();
    let mut scan = IdScan::default();
    let mut i = 0;
    while i < bytes.len() {
        let Some(off) = find_sub(&bytes[i..], b"<OBJ") else {
            break;
        };
        let start = i + off;
        let digits_start = start + 4;
        let mut j = digits_start;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        let n_digits = j - digits_start;
        let closed = j < bytes.len() && bytes[j] == b'>';
        if closed && n_digits == width {
            let position: usize = text[digits_start..j].parse().unwrap_or(0);
            scan.tokens.push(IdToken {
                position,
                span: start..j + 1,
            });
            i = j + 1;
        } else {
            // near miss: "<OBJ" with wrong digit count or no closing '>'
            let end = if closed { j + 1 } else { j };
            if n_digits > 0 || closed {
                scan.near_misses.push(start..end.max(digits_start));
            }
            i = digits_start;
        }
    }
    scan
}

fn find_sub(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

/// All exact-grammar token matches in textual order, duplicates preserved.
pub fn parse_id_tokens(text: &str, width: usize) -> Vec<IdToken> {
    scan_id_tokens(text, width).tokens
}

/// Positions only, in textual order.
pub fn parse_id_positions(text: &str, width: usize) -> Vec<usize> {
    parse_id_tokens(text, width).into_iter().map(|t| t.position).collect()
}
