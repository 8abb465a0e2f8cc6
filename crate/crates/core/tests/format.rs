mod common;

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use repaudit::embedding_format::{
    self, decode, encode, manifest_path, read_embedding_set, validate_pair, write_embedding_set,
    FormatError, HEADER_LEN,
};
use repaudit::{EmbeddingSet, Manifest, SetRole};
use sha2::{Digest, Sha256};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn two_by_three() -> EmbeddingSet {
    EmbeddingSet::from_rows(
        "pair",
        SetRole::Real,
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        vec!["a".into(), "b".into()],
    )
    .unwrap()
}

/// Byte layout written out by hand: magic, version, count, dim, dtype,
/// six little-endian floats, SHA-256 of those 24 bytes.
const TWO_BY_THREE_HEX: &str = concat!(
    "52455041",
    "01000000",
    "02000000",
    "03000000",
    "00",
    "0000803f",
    "00000000",
    "00000000",
    "00000000",
    "0000803f",
    "00000000",
    "ab43fbd0c2e97ddd3c5c378b47c725170aea81b0b572a646a0d083a55b5068ad",
);

#[test]
fn encoding_matches_hand_built_bytes() {
    let bytes = encode(&two_by_three()).unwrap();
    assert_eq!(bytes.len(), 73);
    assert_eq!(hex::encode(&bytes), TWO_BY_THREE_HEX);
}

#[test]
fn payload_digest_matches_independent_hash() {
    let bytes = hex::decode(TWO_BY_THREE_HEX).unwrap();
    let payload = &bytes[HEADER_LEN..HEADER_LEN + 24];
    assert_eq!(
        sha_hex(payload),
        "ab43fbd0c2e97ddd3c5c378b47c725170aea81b0b572a646a0d083a55b5068ad"
    );
    let mut flipped = payload.to_vec();
    flipped[5] ^= 0xff;
    assert_eq!(
        sha_hex(&flipped),
        "6f7c06ef69f3df54585c6f7aa787c308d93754b39a0e3fdba64176b47047c642"
    );
}

#[test]
fn committed_fixture_reads_back() {
    let path = fixture("format/two_by_three.repa");
    assert_eq!(hex::encode(fs::read(&path).unwrap()), TWO_BY_THREE_HEX);
    let file = read_embedding_set(&path).unwrap();
    assert_eq!(file.set.as_flat(), two_by_three().as_flat());
    assert_eq!(file.set.ids(), ["a", "b"]);
    assert_eq!(file.manifest.extractor, "sscd-sheet");
    assert_eq!(
        file.manifest.checksum,
        "ab43fbd0c2e97ddd3c5c378b47c725170aea81b0b572a646a0d083a55b5068ad"
    );
}

#[test]
fn pinned_fixture_hashes() {
    let pinned = [
        (
            "audit/real.repa",
            "ded98d1276d9ec5ec3faed981b3d9cc7e29042b86347087ac65d459a1f2d7aae",
        ),
        (
            "audit/gen.repa",
            "545e453e7b7c9f5d1ee7eaa9d4f1bf9ec6be402818b1e20714c1b73283da7b26",
        ),
        (
            "audit/real.manifest.json",
            "0b6d50bff252af6c922ce065d37740fe0616d7438d3c6d6bd498443b17232107",
        ),
        (
            "audit/gen.manifest.json",
            "d76d56c9c5f79137a345ec3ba317b8d9305c36ef62ba486b64eed5b77191d182",
        ),
    ];
    for (rel, want) in pinned {
        assert_eq!(sha_hex(&fs::read(fixture(rel)).unwrap()), want, "{rel}");
    }
}

#[test]
fn every_single_byte_corruption_is_rejected() {
    let good = hex::decode(TWO_BY_THREE_HEX).unwrap();
    for i in 0..good.len() {
        for mask in [0x01u8, 0x80, 0xff] {
            let mut bad = good.clone();
            bad[i] ^= mask;
            assert!(decode(&bad).is_err(), "byte {i} mask {mask:#x} accepted");
        }
    }
}

#[test]
fn corrupted_payload_reports_checksum() {
    let mut bad = hex::decode(TWO_BY_THREE_HEX).unwrap();
    bad[HEADER_LEN + 5] ^= 0xff;
    assert_eq!(decode(&bad).unwrap_err().code(), "checksum-mismatch");
}

#[test]
fn truncation_and_trailing_bytes() {
    let good = hex::decode(TWO_BY_THREE_HEX).unwrap();
    for len in 0..good.len() {
        assert!(decode(&good[..len]).is_err(), "length {len} accepted");
    }
    let mut long = good.clone();
    long.push(0);
    assert_eq!(decode(&long).unwrap_err().code(), "trailing-data");
}

#[test]
fn header_fields_are_checked() {
    let good = hex::decode(TWO_BY_THREE_HEX).unwrap();
    let mut b = good.clone();
    b[0] = b'X';
    assert_eq!(decode(&b).unwrap_err().code(), "bad-magic");
    let mut b = good.clone();
    b[4] = 2;
    assert_eq!(decode(&b).unwrap_err().code(), "version-mismatch");
    let mut b = good.clone();
    b[16] = 1;
    assert_eq!(decode(&b).unwrap_err().code(), "unsupported-dtype");
}

#[test]
fn non_finite_payload_is_rejected() {
    let mut bytes = hex::decode(TWO_BY_THREE_HEX).unwrap();
    bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    let digest = embedding_format::payload_digest(&bytes[HEADER_LEN..HEADER_LEN + 24]);
    bytes[HEADER_LEN + 24..].copy_from_slice(&digest);
    assert_eq!(decode(&bytes).unwrap_err().code(), "non-finite");
}

#[test]
fn write_then_read_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.repa");
    let written = write_embedding_set(
        &two_by_three(),
        &Manifest::new("sscd-sheet", 1, "uniform"),
        &path,
    )
    .unwrap();
    assert_eq!(fs::read(&path).unwrap().len(), 73);
    assert!(manifest_path(&path).exists());
    let back = read_embedding_set(&path).unwrap();
    assert_eq!(back.set, two_by_three());
    assert_eq!(back.manifest, written);
}

#[test]
fn empty_set_is_not_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.repa");
    let empty = EmbeddingSet::new("e", SetRole::Real, 3, vec![], vec![]).unwrap();
    let err = write_embedding_set(&empty, &Manifest::new("x", 1, "uniform"), &path).unwrap_err();
    assert_eq!(err.code(), "empty-set");
    assert!(!path.exists());
    assert!(!manifest_path(&path).exists());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_embedding_set(&fixture("format/nope.repa")).unwrap_err();
    assert!(err.is_io());
}

#[test]
fn manifest_checksum_must_match_binary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.repa");
    write_embedding_set(
        &two_by_three(),
        &Manifest::new("sscd-sheet", 1, "uniform"),
        &path,
    )
    .unwrap();
    let side = manifest_path(&path);
    let text = fs::read_to_string(&side)
        .unwrap()
        .replace("ab43fb", "000000");
    fs::write(&side, text).unwrap();
    assert_eq!(
        read_embedding_set(&path).unwrap_err().code(),
        "manifest-checksum-mismatch"
    );
}

#[test]
fn pair_validation() {
    let real = read_embedding_set(&fixture("audit/real.repa")).unwrap();
    let gen = read_embedding_set(&fixture("audit/gen.repa")).unwrap();
    validate_pair(&real, &gen).unwrap();
    let other = read_embedding_set(&fixture("format/two_by_three.repa")).unwrap();
    assert_eq!(
        validate_pair(&real, &other).unwrap_err().code(),
        "dim-mismatch"
    );
    let mut relabelled = gen.clone();
    relabelled.manifest.extractor = "i3d".into();
    assert_eq!(
        validate_pair(&real, &relabelled).unwrap_err().code(),
        "extractor-mismatch"
    );
}

#[test]
fn invariants_enforced_on_construction() {
    let e = |r: Result<EmbeddingSet, FormatError>| r.unwrap_err().code();
    assert_eq!(
        e(EmbeddingSet::new("x", SetRole::Real, 0, vec![], vec![])),
        "zero-dim"
    );
    assert_eq!(
        e(EmbeddingSet::new(
            "x",
            SetRole::Real,
            2,
            vec![1.0; 3],
            vec!["a".into()]
        )),
        "shape-mismatch"
    );
    assert_eq!(
        e(EmbeddingSet::new(
            "x",
            SetRole::Real,
            2,
            vec![1.0; 4],
            vec!["a".into()]
        )),
        "id-count-mismatch"
    );
    assert_eq!(
        e(EmbeddingSet::new(
            "x",
            SetRole::Real,
            1,
            vec![1.0; 2],
            vec!["a".into(), "a".into()]
        )),
        "duplicate-id"
    );
    assert_eq!(
        e(EmbeddingSet::new(
            "x",
            SetRole::Real,
            1,
            vec![f32::INFINITY],
            vec!["a".into()]
        )),
        "non-finite"
    );
}

fn arb_set() -> impl Strategy<Value = EmbeddingSet> {
    (1usize..8, 1usize..12).prop_flat_map(|(count, dim)| {
        prop::collection::vec(-1.0e6f32..1.0e6, count * dim).prop_map(move |values| {
            let ids = (0..count).map(|i| format!("v{i}")).collect();
            EmbeddingSet::new("p", SetRole::Generated, dim, values, ids).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(set in arb_set()) {
        let bytes = encode(&set).unwrap();
        prop_assert_eq!(bytes.len(), HEADER_LEN + set.count() * set.dim() * 4 + 32);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.count, set.count());
        prop_assert_eq!(back.dim, set.dim());
        let same = back.values.iter().zip(set.as_flat()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn any_single_byte_flip_is_rejected(set in arb_set(), pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
        let mut bytes = encode(&set).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= mask;
        prop_assert!(decode(&bytes).is_err());
    }
}
