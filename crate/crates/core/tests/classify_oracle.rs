use std::collections::BTreeSet;

use mobreg_core::classify::{match_group, propose_group_id, DomainTaxonomy, Score};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POOL: &[&str] = &[
    "doctor", "hospital", "nurse", "clinic", "bus", "train", "taxi", "ticket", "pizza", "menu", "cafe", "map",
    "floor", "rating", "route", "weather", "rain", "news", "sport", "music", "the", "and", "with", "of", "a",
    "Doctor's", "TRAIN", "café", "x1", "ab",
];

const STOP: &[&str] = &[
    "the", "and", "for", "are", "but", "not", "you", "all", "any", "can", "was", "our", "has", "its", "who", "with",
    "this", "that", "from", "into", "than", "then", "them", "they", "there", "these", "those", "what", "when", "where",
];

/// Character-by-character tokenizer written independently of the library.
fn words(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            if cur.chars().count() >= 3 && !STOP.contains(&cur.as_str()) {
                out.insert(cur.clone());
            }
            cur.clear();
        }
    }
    out
}

/// Scores every group by |terms ∩ words| / |terms| in f64 and picks the max,
/// smallest id on ties.
fn brute(groups: &[(String, Vec<String>)], desc: &str, threshold: f64) -> (Option<String>, f64) {
    let w = words(desc);
    let mut best: Option<(String, f64, usize, usize)> = None;
    for (id, terms) in groups {
        let hits = terms.iter().filter(|t| w.contains(*t)).count();
        let s = hits as f64 / terms.len() as f64;
        let better = match &best {
            None => true,
            // compare exactly via cross-multiplication, then id
            Some((bid, _, bh, bn)) => {
                let l = hits * bn;
                let r = bh * terms.len();
                l > r || (l == r && id < bid)
            }
        };
        if better {
            best = Some((id.clone(), s, hits, terms.len()));
        }
    }
    match best {
        Some((id, s, ..)) if s >= threshold - 1e-12 => (Some(id), s),
        Some((_, s, ..)) => (None, s),
        None => (None, 0.0),
    }
}

#[test]
fn match_group_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let vocab = ["doctor", "hospital", "nurse", "clinic", "bus", "train", "taxi", "ticket", "pizza", "menu", "cafe", "map", "floor", "rating", "route", "weather"];
    for _ in 0..1000 {
        let n = rng.gen_range(1..6);
        let mut groups = Vec::new();
        let mut text = String::new();
        for g in 0..n {
            let k = rng.gen_range(1..6);
            let mut v = vocab;
            v.shuffle(&mut rng);
            let terms: BTreeSet<String> = v[..k].iter().map(|s| s.to_string()).collect();
            let terms: Vec<String> = terms.into_iter().collect();
            text.push_str(&format!("g{g}\tdomain\t{}\n", terms.join(",")));
            groups.push((format!("g{g}"), terms));
        }
        let tax = DomainTaxonomy::parse(&text).unwrap();
        let len = rng.gen_range(0..8);
        let desc: Vec<&str> = (0..len).map(|_| *POOL.choose(&mut rng).unwrap()).collect();
        let desc = desc.join(if rng.gen() { " " } else { ", " });
        let m = match_group(&tax, &desc);
        let (want, score) = brute(&groups, &desc, 0.3);
        assert_eq!(m.best_group, want, "{desc:?} vs {text}");
        assert!((m.score.as_f64() - score).abs() < 1e-12);
        // ranked is sorted and covers every group
        assert_eq!(m.ranked.len(), groups.len());
        assert!(m.ranked.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }
}

#[test]
fn worked_examples() {
    let tax = DomainTaxonomy::parse("hospital\thealth\tdoctor,rating,hospital,floor,map\n").unwrap();
    let m = match_group(&tax, "Doctor's rating");
    assert_eq!(m.score, Score::new(2, 5).unwrap());
    assert_eq!(m.best_group.as_deref(), Some("hospital"));
    let m = match_group(&tax, "contact information of pizza outlets");
    assert!(m.score.is_zero());
    assert_eq!(m.best_group, None);
    let id = propose_group_id("contact information of pizza outlets", |g| tax.contains(g)).unwrap();
    assert_eq!(id, "contact");
}

#[test]
fn threshold_is_inclusive() {
    let tax = DomainTaxonomy::parse("@threshold 1/2\nbus\ttravel\tbus,ticket\n").unwrap();
    assert_eq!(match_group(&tax, "bus stop").best_group.as_deref(), Some("bus"));
    let tax = DomainTaxonomy::parse("@threshold 0.6\nbus\ttravel\tbus,ticket\n").unwrap();
    assert_eq!(match_group(&tax, "bus stop").best_group, None);
}
