//! Service-group classification against a shared domain taxonomy.
//!
//! A description is reduced to a set of tokens; each group scores the
//! fraction of its terms present in that set. No training data is involved
//! and groups can be added at runtime, so a navigator learns the groups it
//! creates.
//!
//! Taxonomy file, one group per line, `#` starts a comment (`<TAB>` is a
//! tab character):
//!
//! ```text
//! @threshold<TAB>0.3
//! hospital<TAB>health<TAB>doctor,rating,hospital,floor,map
//! ```
//!
//! Fields are TAB-separated: group id, domain, comma-separated terms. The
//! optional `@threshold` line sets the minimum score for a match (decimal
//! or `num/den`, default 0.3).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::stanza::is_token;

/// Words ignored by [`tokenize`]. Shorter words are dropped by length anyway.
pub const STOPWORDS: [&str; 30] = [
    "the", "and", "for", "are", "but", "not", "you", "all", "any", "can", "was", "our", "has",
    "its", "who", "with", "this", "that", "from", "into", "than", "then", "them", "they", "there",
    "these", "those", "what", "when", "where",
];

pub const MIN_TOKEN_CHARS: usize = 3;

/// Exact non-negative ratio used for scores and thresholds.
#[derive(Clone, Copy, Debug)]
pub struct Score {
    num: u32,
    den: u32,
}

impl Score {
    pub const ZERO: Score = Score { num: 0, den: 1 };
    pub const ONE: Score = Score { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Option<Score> {
        (den != 0).then_some(Score { num, den })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    /// Parses `0.3`, `1`, or `3/10`.
    pub fn parse(s: &str) -> Option<Score> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            return Score::new(n.trim().parse().ok()?, d.trim().parse().ok()?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 6 {
            return None;
        }
        let den = 10u32.pow(frac.len() as u32);
        let int: u32 = if int.is_empty() { 0 } else { int.parse().ok()? };
        let frac: u32 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        Score::new(int.checked_mul(den)?.checked_add(frac)?, den)
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u64 * other.den as u64).cmp(&(other.num as u64 * self.den as u64))
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupTerms {
    pub domain: String,
    pub terms: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ClassifyError {
    #[error("taxonomy line {line}: {reason}")]
    Taxonomy { line: usize, reason: &'static str },
    #[error("description has no usable tokens")]
    EmptyDescription,
    #[error("invalid group: {0}")]
    InvalidGroup(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainTaxonomy {
    groups: BTreeMap<String, GroupTerms>,
    threshold: Score,
}

impl Default for DomainTaxonomy {
    fn default() -> Self {
        DomainTaxonomy {
            groups: BTreeMap::new(),
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }
}

impl DomainTaxonomy {
    pub const DEFAULT_THRESHOLD: Score = Score { num: 3, den: 10 };

    pub fn new(threshold: Score) -> Result<Self, ClassifyError> {
        if threshold > Score::ONE {
            return Err(ClassifyError::InvalidGroup("threshold above 1"));
        }
        Ok(DomainTaxonomy {
            groups: BTreeMap::new(),
            threshold,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ClassifyError> {
        let mut tax = DomainTaxonomy::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |reason| ClassifyError::Taxonomy { line, reason };
            let content = raw.split('#').next().unwrap_or("").trim_end_matches('\r');
            if content.trim().is_empty() {
                continue;
            }
            if let Some(rest) = content.trim().strip_prefix("@threshold") {
                let th = Score::parse(rest).ok_or(err("bad threshold"))?;
                if th > Score::ONE {
                    return Err(err("threshold must be within [0,1]"));
                }
                tax.threshold = th;
                continue;
            }
            let fields: Vec<&str> = content.split('\t').collect();
            let [id, domain, terms] = fields[..] else {
                return Err(err("expected three TAB-separated fields"));
            };
            let id = id.trim().to_ascii_lowercase();
            if !is_token(&id) || id.starts_with('_') {
                return Err(err("group id is not a valid token"));
            }
            if tax.groups.contains_key(&id) {
                return Err(err("duplicate group id"));
            }
            let terms = terms
                .split(',')
                .map(|t| t.trim().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect::<BTreeSet<_>>();
            if terms.is_empty() {
                return Err(err("empty term set"));
            }
            if terms.iter().any(|t| !t.chars().all(char::is_alphanumeric)) {
                return Err(err("terms must be alphanumeric words"));
            }
            tax.groups.insert(
                id,
                GroupTerms {
                    domain: domain.trim().into(),
                    terms,
                },
            );
        }
        Ok(tax)
    }

    pub fn threshold(&self) -> Score {
        self.threshold
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &GroupTerms)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, group_id: &str) -> Option<&GroupTerms> {
        self.groups.get(group_id)
    }

    pub fn contains(&self, group_id: &str) -> bool {
        self.groups.contains_key(group_id)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Adds or replaces a group.
    pub fn insert(
        &mut self,
        group_id: &str,
        domain: &str,
        terms: impl IntoIterator<Item = String>,
    ) -> Result<(), ClassifyError> {
        let terms: BTreeSet<String> = terms.into_iter().filter(|t| !t.is_empty()).collect();
        if terms.is_empty() {
            return Err(ClassifyError::InvalidGroup("empty term set"));
        }
        if !is_token(group_id) {
            return Err(ClassifyError::InvalidGroup("group id is not a token"));
        }
        self.groups.insert(
            group_id.into(),
            GroupTerms {
                domain: domain.into(),
                terms,
            },
        );
        Ok(())
    }

    pub fn remove(&mut self, group_id: &str) -> bool {
        self.groups.remove(group_id).is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    pub best_group: Option<String>,
    /// Top score, zero for an empty taxonomy.
    pub score: Score,
    /// Every group, score descending then group id ascending.
    pub ranked: Vec<(String, Score)>,
}

impl MatchResult {
    /// Highest-ranked group with any overlap at all, ignoring the threshold.
    pub fn best_positive(&self) -> Option<&str> {
        self.ranked
            .first()
            .filter(|(_, s)| !s.is_zero())
            .map(|(g, _)| g.as_str())
    }
}

/// Lowercased alphanumeric runs of at least three characters, minus stopwords,
/// in order of appearance (duplicates kept).
pub fn tokenize(description: &str) -> Vec<String> {
    description
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .filter(|w| w.chars().count() >= MIN_TOKEN_CHARS && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

pub fn match_group(taxonomy: &DomainTaxonomy, description: &str) -> MatchResult {
    let tokens: BTreeSet<String> = tokenize(description).into_iter().collect();
    let mut ranked: Vec<(String, Score)> = taxonomy
        .groups
        .iter()
        .map(|(id, g)| {
            let hits = g.terms.iter().filter(|t| tokens.contains(*t)).count();
            (id.clone(), Score { num: hits as u32, den: g.terms.len() as u32 })
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let score = ranked.first().map_or(Score::ZERO, |(_, s)| *s);
    let best_group = ranked
        .first()
        .filter(|(_, s)| *s >= taxonomy.threshold)
        .map(|(g, _)| g.clone());
    MatchResult {
        best_group,
        score,
        ranked,
    }
}

/// Id for a new group built from the description: of the two most frequent
/// tokens (earlier first occurrence wins frequency ties), the lexicographically
/// smaller one, reduced to the identifier alphabet. Collisions with
/// `taken` get `-2`, `-3`, ... appended.
pub fn propose_group_id(
    description: &str,
    taken: impl Fn(&str) -> bool,
) -> Result<String, ClassifyError> {
    let tokens = tokenize(description);
    if tokens.is_empty() {
        return Err(ClassifyError::EmptyDescription);
    }
    // (token, count, first index)
    let mut freq: Vec<(&str, usize, usize)> = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        match freq.iter_mut().find(|(w, _, _)| *w == t.as_str()) {
            Some(f) => f.1 += 1,
            None => freq.push((t.as_str(), 1, i)),
        }
    }
    freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let pick = freq.iter().take(2).map(|f| f.0).min().unwrap_or("group");
    let mut base: String = pick
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        .collect();
    if base.is_empty() {
        base = "group".to_string();
    }
    if !taken(&base) {
        return Ok(base);
    }
    let mut n = 2u32;
    loop {
        let candidate = alloc::format!("{base}-{n}");
        if !taken(&candidate) {
            return Ok(candidate);
        }
        n += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn hospital() -> DomainTaxonomy {
        DomainTaxonomy::parse("hospital\thealth\tdoctor,rating,hospital,floor,map\n").unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Traffic Information of Main street"),
            vec!["traffic", "information", "main", "street"]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize("a an of to").is_empty());
        assert_eq!(tokenize("Doctor's rating"), vec!["doctor", "rating"]);
        assert_eq!(tokenize("the THE with Pizza"), vec!["pizza"]);
    }

    #[test]
    fn stopword_list_is_well_formed() {
        let set: BTreeSet<_> = STOPWORDS.iter().collect();
        assert_eq!(set.len(), 30);
        assert!(STOPWORDS.iter().all(|w| w.len() >= MIN_TOKEN_CHARS && *w == w.to_lowercase()));
    }

    #[test]
    fn hospital_match() {
        let m = match_group(&hospital(), "Doctor's rating");
        assert_eq!(m.score, Score::new(2, 5).unwrap());
        assert_eq!(m.score.as_f64(), 0.4);
        assert_eq!(m.best_group.as_deref(), Some("hospital"));
    }

    #[test]
    fn pizza_needs_new_group() {
        let m = match_group(&hospital(), "contact information of pizza outlets");
        assert!(m.score.is_zero());
        assert!(m.ranked.iter().all(|(_, s)| s.is_zero()));
        assert_eq!(m.best_group, None);
        assert_eq!(m.best_positive(), None);
    }

    #[test]
    fn full_overlap_scores_one() {
        let m = match_group(&hospital(), "map floor hospital rating doctor and more");
        assert_eq!(m.score, Score::ONE);
    }

    #[test]
    fn threshold_is_inclusive_and_configurable() {
        let mut t = DomainTaxonomy::parse("@threshold 2/5\nhospital\thealth\tdoctor,rating,hospital,floor,map").unwrap();
        assert_eq!(t.threshold(), Score::new(4, 10).unwrap());
        assert!(match_group(&t, "doctor rating").best_group.is_some());
        t = DomainTaxonomy::parse("@threshold\t0.41\nhospital\thealth\tdoctor,rating,hospital,floor,map").unwrap();
        assert!(match_group(&t, "doctor rating").best_group.is_none());
    }

    #[test]
    fn ranking_ties_by_group_id() {
        let t = DomainTaxonomy::parse("b\td\tbus,train\na\td\ttrain,tram\nc\td\tcar\n").unwrap();
        let m = match_group(&t, "train");
        let ids: Vec<_> = m.ranked.iter().map(|(g, _)| g.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(m.best_group.as_deref(), Some("a"));
    }

    #[test]
    fn empty_taxonomy_matches_nothing() {
        let m = match_group(&DomainTaxonomy::default(), "anything");
        assert_eq!((m.best_group, m.score, m.ranked.len()), (None, Score::ZERO, 0));
    }

    #[test]
    fn parse_errors() {
        let bad = |s: &str| DomainTaxonomy::parse(s).unwrap_err();
        assert!(matches!(bad("x\ty"), ClassifyError::Taxonomy { line: 1, .. }));
        assert!(matches!(bad("# c\nx\td\t , "), ClassifyError::Taxonomy { line: 2, .. }));
        assert!(matches!(bad("x\td\ta\nx\td\tb"), ClassifyError::Taxonomy { line: 2, .. }));
        assert!(matches!(bad("@threshold 1.5"), ClassifyError::Taxonomy { .. }));
        assert!(matches!(bad("_x\td\ta"), ClassifyError::Taxonomy { .. }));
        assert!(matches!(bad("x\td\tfloor map"), ClassifyError::Taxonomy { .. }));
        let ok = DomainTaxonomy::parse("# comment only\n\nHospital\thealth\tDoctor, rating # trailing\n").unwrap();
        assert_eq!(ok.get("hospital").unwrap().terms.len(), 2);
    }

    #[test]
    fn propose_examples() {
        let none = |_: &str| false;
        assert_eq!(propose_group_id("Traffic Information of Main street", none).unwrap(), "information");
        assert_eq!(propose_group_id("", none), Err(ClassifyError::EmptyDescription));
        assert_eq!(propose_group_id("of a to", none), Err(ClassifyError::EmptyDescription));
        assert_eq!(propose_group_id("traffic traffic jams", |g| g == "traffic").unwrap(), "jams");
        assert_eq!(
            propose_group_id("traffic traffic traffic", |g| g == "traffic" || g == "traffic-2").unwrap(),
            "traffic-3"
        );
        assert_eq!(propose_group_id("zeta zeta alpha beta", none).unwrap(), "alpha");
        assert_eq!(propose_group_id("Café menus", none).unwrap(), "caf");
        assert_eq!(propose_group_id("東京都", none).unwrap(), "group");
    }

    #[test]
    fn score_parse_and_order() {
        assert_eq!(Score::parse("0.3"), Score::new(3, 10));
        assert_eq!(Score::parse("1"), Some(Score::ONE));
        assert_eq!(Score::parse(".5"), Score::new(1, 2));
        assert_eq!(Score::parse("x"), None);
        assert_eq!(Score::parse("1/0"), None);
        assert!(Score::new(2, 5).unwrap() > Score::new(3, 10).unwrap());
        assert_eq!(Score::new(2, 4), Score::new(1, 2));
    }
}
