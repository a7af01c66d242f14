use mobreg_core::stanza::{decode, encode, parse_identifier, Child, Identifier, Stanza, StanzaKind, MAX_STANZA_BYTES};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn token() -> impl Strategy<Value = String> {
    "[a-z0-9][a-z0-9._-]{0,8}"
}

fn ident() -> impl Strategy<Value = Identifier> {
    (token(), token(), proptest::option::of(token()))
        .prop_map(|(g, n, s)| Identifier::new(&g, &n, s.as_deref()).unwrap())
}

fn name() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_.-]{0,8}"
}

fn child() -> impl Strategy<Value = Child> {
    (name(), "[^\u{0}-\u{8}\u{b}\u{c}\u{e}-\u{1f}]{0,24}", proptest::collection::btree_map(name(), "\\PC{0,12}", 0..3))
        .prop_map(|(n, t, attrs)| Child { name: n, attrs, text: t })
}

fn stanza() -> impl Strategy<Value = Stanza> {
    (0..3usize, "[A-Za-z0-9.]{1,12}", ident(), ident(), proptest::collection::vec(child(), 0..5), any::<prop::sample::Index>())
        .prop_map(|(k, id, to, from, payload, ty)| {
            let kind = [StanzaKind::Message, StanzaKind::Presence, StanzaKind::Iq][k];
            let types = kind.legal_types();
            let mut s = Stanza::new(kind, id, types[ty.index(types.len())], to, from);
            s.payload = payload;
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(s in stanza()) {
        let bytes = encode(&s).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), s.clone());
        // canonical: encoding the decoded stanza gives the same bytes
        prop_assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn identifier_round_trip(i in ident()) {
        prop_assert_eq!(parse_identifier(&i.to_string()).unwrap(), i);
    }

    #[test]
    fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode(&bytes);
    }
}

/// Seeded mutations of valid encodings: every input either fails cleanly
/// or decodes to something that re-encodes and decodes to itself.
#[test]
fn mutation_fuzz_is_clean() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let base = Stanza::new(
        StanzaKind::Iq,
        "p1.42",
        "set",
        parse_identifier("hospital@local").unwrap(),
        parse_identifier("_device@local/p1").unwrap(),
    )
    .with(Child::new("register", "").attr("token", "p1.svc.1"))
    .with(Child::new("name", "Doctor's <rating> & \"more\"\n"))
    .with(Child::new("info", "x").attr("key", "k"));
    let seed = encode(&base).unwrap();
    let mut ok = 0;
    for _ in 0..10_000 {
        let mut b = seed.clone();
        for _ in 0..rng.gen_range(1..6) {
            let i = rng.gen_range(0..b.len().max(1));
            match rng.gen_range(0..4) {
                0 if !b.is_empty() => {
                    let j = i % b.len();
                    b[j] = rng.gen();
                }
                1 if !b.is_empty() => {
                    b.remove(i % b.len());
                }
                2 => b.insert(i.min(b.len()), *b"<>&\"'/=;# ".get(rng.gen_range(0..10)).unwrap()),
                _ => b.truncate(i),
            }
        }
        if let Ok(s) = decode(&b) {
            ok += 1;
            let again = encode(&s).expect("decoded stanzas re-encode");
            assert_eq!(decode(&again).unwrap(), s);
        }
    }
    assert!(ok > 0, "mutations should sometimes stay valid");
}

#[test]
fn oversized_is_rejected_both_ways() {
    let s = Stanza::new(
        StanzaKind::Message,
        "x",
        "push",
        parse_identifier("g@local").unwrap(),
        parse_identifier("g@local").unwrap(),
    )
    .with(Child::new("blob", "a".repeat(MAX_STANZA_BYTES)));
    assert!(encode(&s).is_err());
    let raw = format!(
        "<message id=\"x\" type=\"push\" to=\"g@local\" from=\"g@local\"><b>{}</b></message>",
        "a".repeat(MAX_STANZA_BYTES)
    );
    assert!(decode(raw.as_bytes()).is_err());
}
