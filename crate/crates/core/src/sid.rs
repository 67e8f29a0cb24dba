//! Semantic IDs: n-grams of codeword digits packed into one `u64`, and the
//! table-free SID embedding (SIDE) that recovers the digits.
//!
//! A gram of centered digits `c_1..c_n` packs to
//! `s = Σ_{k=1..n} L^k · (offset + c_k)`. Because `k` starts at 1 every SID is
//! a multiple of `L`; `s / L` is the plain base-`L` value of the gram.

use std::fmt::Write as _;
use std::path::Path;

use crate::io::{read_file, write_atomic, FormatError};
use crate::quant::CodewordVector;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SidError {
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error("base {base} with {ngram}-grams overflows 64 bits")]
    Overflow { base: u32, ngram: usize },
    #[error("digit {value} at position {position} is outside the scheme range [{min}, {max}]")]
    DigitOutOfRange {
        position: usize,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("expected {expected} digits, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("SID {sid} exceeds the scheme maximum {max}")]
    ExceedsMax { sid: u64, max: u64 },
    #[error("SID {sid} is not a multiple of base {base}")]
    NotAligned { sid: u64, base: u32 },
    #[error("code base {code} does not match scheme base {scheme}")]
    BaseMismatch { code: u32, scheme: u32 },
    #[error("gram index {index} out of range for {grams} grams")]
    GramIndex { index: usize, grams: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SidScheme {
    base: u32,
    ngram: usize,
    offset: u32,
}

impl SidScheme {
    /// Base-`base` scheme over `ngram` digits with centering offset 1.
    pub fn new(base: u32, ngram: usize) -> Result<Self, SidError> {
        if base < 2 {
            return Err(SidError::InvalidScheme(format!("base must be at least 2, got {base}")));
        }
        if ngram == 0 {
            return Err(SidError::InvalidScheme("n-gram length must be at least 1".into()));
        }
        // L^(n+1) ≤ 2^64 keeps the largest SID, L^(n+1) − L, inside a u64.
        let mut p: u128 = 1;
        for _ in 0..=ngram {
            p = p.saturating_mul(base as u128);
            if p > 1u128 << 64 {
                return Err(SidError::Overflow { base, ngram });
            }
        }
        Ok(Self { base, ngram, offset: 1 })
    }

    pub fn ternary(ngram: usize) -> Result<Self, SidError> {
        Self::new(3, ngram)
    }

    pub fn with_offset(mut self, offset: u32) -> Result<Self, SidError> {
        if offset >= self.base {
            return Err(SidError::InvalidScheme(format!(
                "offset {offset} must be below base {}",
                self.base
            )));
        }
        self.offset = offset;
        Ok(self)
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn ngram(&self) -> usize {
        self.ngram
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    /// Largest valid SID, `L^(n+1) − L`.
    pub fn max_sid(&self) -> u64 {
        let l = self.base as u128;
        (l.pow(self.ngram as u32 + 1) - l) as u64
    }

    /// Number of distinct SIDs, `L^n`.
    pub fn cardinality(&self) -> u64 {
        (self.base as u64).pow(self.ngram as u32)
    }

    /// Number of grams needed for a code of `len` digits.
    pub fn grams_for(&self, len: usize) -> usize {
        len.div_ceil(self.ngram)
    }

    fn centered_range(&self) -> (i64, i64) {
        let lo = -(self.offset as i64);
        (lo, lo + self.base as i64 - 1)
    }
}

/// Packs one gram of centered digits.
pub fn pack(scheme: &SidScheme, centered: &[i32]) -> Result<u64, SidError> {
    let (min, max) = scheme.centered_range();
    let levels = centered
        .iter()
        .enumerate()
        .map(|(position, &c)| {
            let value = c as i64;
            if value < min || value > max {
                Err(SidError::DigitOutOfRange { position, value, min, max })
            } else {
                Ok((value - min) as u32)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    pack_levels(scheme, &levels)
}

/// Packs one gram of level indices (`offset + c`).
pub fn pack_levels(scheme: &SidScheme, levels: &[u32]) -> Result<u64, SidError> {
    if levels.len() != scheme.ngram {
        return Err(SidError::WrongLength {
            expected: scheme.ngram,
            actual: levels.len(),
        });
    }
    let l = scheme.base as u64;
    let mut s = 0u64;
    let mut power = l;
    for (position, &level) in levels.iter().enumerate() {
        if level >= scheme.base {
            let (min, max) = scheme.centered_range();
            return Err(SidError::DigitOutOfRange {
                position,
                value: level as i64 - scheme.offset as i64,
                min,
                max,
            });
        }
        s += power * level as u64;
        // The final multiply may reach exactly 2^64 for tight schemes.
        power = power.wrapping_mul(l);
    }
    Ok(s)
}

/// Level indices of one gram.
pub fn unpack_levels(scheme: &SidScheme, sid: u64) -> Result<Vec<u32>, SidError> {
    let max = scheme.max_sid();
    if sid > max {
        return Err(SidError::ExceedsMax { sid, max });
    }
    let l = scheme.base as u64;
    if sid % l != 0 {
        return Err(SidError::NotAligned { sid, base: scheme.base });
    }
    let mut v = sid / l;
    let mut out = Vec::with_capacity(scheme.ngram);
    for _ in 0..scheme.ngram {
        out.push((v % l) as u32);
        v /= l;
    }
    Ok(out)
}

/// Centered digits of one gram; inverse of [`pack`].
pub fn unpack(scheme: &SidScheme, sid: u64) -> Result<Vec<i32>, SidError> {
    let off = scheme.offset as i32;
    Ok(unpack_levels(scheme, sid)?.into_iter().map(|l| l as i32 - off).collect())
}

/// Splits a code into `⌈len / n⌉` grams and packs each. The last gram is
/// padded with the centered-zero digit.
pub fn pack_code(scheme: &SidScheme, code: &CodewordVector) -> Result<Vec<u64>, SidError> {
    if code.base() != scheme.base {
        return Err(SidError::BaseMismatch {
            code: code.base(),
            scheme: scheme.base,
        });
    }
    code.levels()
        .chunks(scheme.ngram)
        .map(|gram| {
            if gram.len() == scheme.ngram {
                pack_levels(scheme, gram)
            } else {
                let mut padded = gram.to_vec();
                padded.resize(scheme.ngram, scheme.offset);
                pack_levels(scheme, &padded)
            }
        })
        .collect()
}

/// Inverse of [`pack_code`] for a code of `len` digits.
pub fn unpack_code(scheme: &SidScheme, sids: &[u64], len: usize) -> Result<CodewordVector, SidError> {
    let grams = scheme.grams_for(len);
    if sids.len() != grams {
        return Err(SidError::WrongLength {
            expected: grams,
            actual: sids.len(),
        });
    }
    let mut levels = Vec::with_capacity(grams * scheme.ngram);
    for &s in sids {
        levels.extend(unpack_levels(scheme, s)?);
    }
    levels.truncate(len);
    CodewordVector::new(levels, scheme.base).map_err(|e| SidError::InvalidScheme(e.to_string()))
}

/// SIDE: the concatenated centered digits of `sids[i]` under `schemes[i]`,
/// as floats. Takes no model or table — the embedding is a pure function of
/// the IDs, so its memory cost does not depend on SID cardinality.
pub fn side_embed(schemes: &[SidScheme], sids: &[u64]) -> Result<Vec<f32>, SidError> {
    if schemes.len() != sids.len() {
        return Err(SidError::WrongLength {
            expected: schemes.len(),
            actual: sids.len(),
        });
    }
    let mut out = Vec::with_capacity(schemes.iter().map(|s| s.ngram).sum());
    for (scheme, &sid) in schemes.iter().zip(sids) {
        out.extend(unpack(scheme, sid)?.into_iter().map(|c| c as f32));
    }
    Ok(out)
}

/// Table index for the sparse-ID baseline: `s mod table_size`.
///
/// Panics if `table_size` is zero.
pub fn sid_hash(sid: u64, table_size: usize) -> usize {
    assert!(table_size > 0, "hash table size must be positive");
    (sid % table_size as u64) as usize
}

/// Picks a subset of grams, in the given order.
pub fn select_grams(sids: &[u64], indices: &[usize]) -> Result<Vec<u64>, SidError> {
    indices
        .iter()
        .map(|&i| {
            sids.get(i).copied().ok_or(SidError::GramIndex {
                index: i,
                grams: sids.len(),
            })
        })
        .collect()
}

/// A file of SID records, one record (a list of grams) per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidFile {
    pub scheme: SidScheme,
    pub grams: usize,
    pub records: Vec<Vec<u64>>,
}

impl SidFile {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#SIDv1 base={} ngram={} grams={}",
            self.scheme.base, self.scheme.ngram, self.grams
        );
        if self.scheme.offset != 1 {
            let _ = write!(out, " offset={}", self.scheme.offset);
        }
        out.push('\n');
        for rec in &self.records {
            let mut first = true;
            for s in rec {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{s}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(FormatError::Line {
            line: 1,
            detail: "missing header".into(),
        })?;
        let bad = |line: usize, detail: String| FormatError::Line { line, detail };
        let rest = header
            .strip_prefix("#SIDv1")
            .ok_or_else(|| bad(1, format!("expected '#SIDv1' header, found {header:?}")))?;
        let (mut base, mut ngram, mut grams, mut offset) = (None, None, None, 1u32);
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad(1, format!("header field {field:?} is not key=value")))?;
            let num: u64 = value
                .parse()
                .map_err(|_| bad(1, format!("header field {key} has non-integer value {value:?}")))?;
            match key {
                "base" => base = Some(num as u32),
                "ngram" => ngram = Some(num as usize),
                "grams" => grams = Some(num as usize),
                "offset" => offset = num as u32,
                _ => return Err(bad(1, format!("unknown header field {key:?}"))),
            }
        }
        let (Some(base), Some(ngram), Some(grams)) = (base, ngram, grams) else {
            return Err(bad(1, "header needs base, ngram and grams".into()));
        };
        let scheme = SidScheme::new(base, ngram)
            .and_then(|s| s.with_offset(offset))
            .map_err(|e| bad(1, e.to_string()))?;
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let rec = line
                .split_whitespace()
                .map(|t| {
                    let s: u64 = t.parse().map_err(|_| bad(i + 1, format!("invalid SID {t:?}")))?;
                    unpack_levels(&scheme, s).map_err(|e| bad(i + 1, e.to_string()))?;
                    Ok(s)
                })
                .collect::<Result<Vec<u64>, FormatError>>()?;
            if rec.len() != grams {
                return Err(bad(i + 1, format!("expected {grams} SIDs, found {}", rec.len())));
            }
            records.push(rec);
        }
        Ok(Self { scheme, grams, records })
    }
}

pub fn write_sid_file(file: &SidFile, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, file.to_text().as_bytes())
}

pub fn read_sid_file(path: &Path) -> Result<SidFile, FormatError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| FormatError::Malformed {
        offset: e.utf8_error().valid_up_to(),
        detail: "SID file is not UTF-8".into(),
    })?;
    SidFile::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(n: usize) -> SidScheme {
        SidScheme::ternary(n).unwrap()
    }

    #[test]
    fn pack_examples() {
        assert_eq!(pack(&t(2), &[-1, -1]).unwrap(), 0);
        assert_eq!(pack(&t(2), &[1, 1]).unwrap(), 3 * 2 + 9 * 2);
        assert_eq!(pack(&t(3), &[0, 1, -1]).unwrap(), 3 + 9 * 2);
    }

    #[test]
    fn unpack_examples() {
        assert_eq!(unpack(&t(2), 0).unwrap(), vec![-1, -1]);
        assert_eq!(unpack(&t(2), 24).unwrap(), vec![1, 1]);
        assert_eq!(unpack(&t(3), 21).unwrap(), vec![0, 1, -1]);
    }

    #[test]
    fn pack_rejects_bad_digits_and_lengths() {
        assert!(matches!(pack(&t(2), &[2, 0]), Err(SidError::DigitOutOfRange { position: 0, .. })));
        assert!(matches!(pack(&t(2), &[0, -2]), Err(SidError::DigitOutOfRange { position: 1, .. })));
        assert!(matches!(pack(&t(2), &[0]), Err(SidError::WrongLength { .. })));
    }

    #[test]
    fn unpack_rejects_invalid_sids() {
        assert_eq!(t(2).max_sid(), 24);
        assert_eq!(unpack(&t(2), 27), Err(SidError::ExceedsMax { sid: 27, max: 24 }));
        assert_eq!(unpack(&t(2), 4), Err(SidError::NotAligned { sid: 4, base: 3 }));
    }

    #[test]
    fn overflow_guard() {
        // 3^40 < 2^64 < 3^41.
        assert!(SidScheme::ternary(39).is_ok());
        assert!(matches!(SidScheme::ternary(40), Err(SidError::Overflow { .. })));
        // 2^64 itself is allowed: the largest SID is 2^64 − 2.
        let s = SidScheme::new(2, 63).unwrap();
        assert_eq!(s.max_sid(), u64::MAX - 1);
        assert_eq!(pack_levels(&s, &[1; 63]).unwrap(), u64::MAX - 1);
        assert!(SidScheme::new(2, 64).is_err());
        assert!(SidScheme::new(1, 2).is_err());
        assert!(SidScheme::new(3, 0).is_err());
    }

    #[test]
    fn exhaustive_ternary_roundtrip_and_injectivity() {
        for n in 1..=6 {
            let scheme = t(n);
            let total = 3usize.pow(n as u32);
            let mut seen = std::collections::HashSet::new();
            for idx in 0..total {
                let mut v = idx;
                let digits: Vec<i32> = (0..n)
                    .map(|_| {
                        let d = (v % 3) as i32 - 1;
                        v /= 3;
                        d
                    })
                    .collect();
                let s = pack(&scheme, &digits).unwrap();
                assert_eq!(s % 3, 0);
                assert!(seen.insert(s));
                assert_eq!(unpack(&scheme, s).unwrap(), digits);
            }
        }
    }

    #[test]
    fn hash_examples() {
        assert_eq!(sid_hash(12345, 1), 0);
        let scheme = t(3);
        let table = scheme.max_sid() as usize + 1;
        let mut seen = std::collections::HashSet::new();
        for s in (0..=scheme.max_sid()).step_by(3) {
            assert!(seen.insert(sid_hash(s, table)));
        }
        // 64 levels, 3-grams: L^3 distinct SIDs.
        assert_eq!(SidScheme::new(64, 3).unwrap().cardinality(), 262_144);
    }

    #[test]
    fn side_embed_is_unpacked_digits() {
        assert_eq!(side_embed(&[t(3)], &[0]).unwrap(), vec![-1.0, -1.0, -1.0]);
        let schemes = [t(2), t(3)];
        let out = side_embed(&schemes, &[24, 21]).unwrap();
        assert_eq!(out, vec![1.0, 1.0, 0.0, 1.0, -1.0]);
        assert!(side_embed(&[t(2)], &[4]).is_err());
    }

    #[test]
    fn code_padding_and_roundtrip() {
        let code = CodewordVector::from_centered(&[1, -1, 0, 1, 1], 3, 1).unwrap();
        let scheme = t(2);
        let sids = pack_code(&scheme, &code).unwrap();
        assert_eq!(sids.len(), 3);
        assert_eq!(unpack(&scheme, sids[2]).unwrap(), vec![1, 0]);
        assert_eq!(unpack_code(&scheme, &sids, 5).unwrap(), code);
        let wrong = CodewordVector::new(vec![0, 1], 4).unwrap();
        assert!(matches!(pack_code(&scheme, &wrong), Err(SidError::BaseMismatch { .. })));
    }

    #[test]
    fn dpca_codes_survive_side() {
        use crate::quant::{dpca_encode, DpcaStack};
        let stack = DpcaStack::new(
            2,
            3,
            vec![vec![1.0, 0.0], vec![0.0, 0.5], vec![0.25, 0.25], vec![0.0, 1.0], vec![0.7, 0.0], vec![0.1, 0.1]],
            vec![vec![0.0; 2]; 6],
        )
        .unwrap();
        let enc = dpca_encode(&stack, &[0.9, -0.6, -0.2, 1.3]).unwrap();
        let scheme = t(3);
        let sids = pack_code(&scheme, &enc.codes).unwrap();
        let embedded = side_embed(&[scheme; 2], &sids).unwrap();
        let direct: Vec<f32> = enc.codes.centered(1).into_iter().map(|c| c as f32).collect();
        assert_eq!(embedded, direct);
    }

    #[test]
    fn gram_selection() {
        assert_eq!(select_grams(&[3, 6, 9], &[2, 0]).unwrap(), vec![9, 3]);
        assert!(select_grams(&[3], &[1]).is_err());
    }

    #[test]
    fn sid_file_roundtrip() {
        let file = SidFile {
            scheme: t(2),
            grams: 2,
            records: vec![vec![0, 24], vec![3, 9]],
        };
        let text = file.to_text();
        assert!(text.starts_with("#SIDv1 base=3 ngram=2 grams=2\n0 24\n"));
        assert_eq!(SidFile::parse(&text).unwrap(), file);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("codes.sid");
        write_sid_file(&file, &p).unwrap();
        assert_eq!(read_sid_file(&p).unwrap(), file);
    }

    #[test]
    fn sid_file_errors_name_the_line() {
        let err = SidFile::parse("#SIDv1 base=3 ngram=2 grams=1\n3\n4\n").unwrap_err();
        assert!(matches!(err, FormatError::Line { line: 3, .. }), "{err}");
        let err = SidFile::parse("#SIDv1 base=3 ngram=2 grams=2\n3\n").unwrap_err();
        assert!(matches!(err, FormatError::Line { line: 2, .. }));
        assert!(SidFile::parse("SID base=3").is_err());
        assert!(SidFile::parse("#SIDv1 base=3 grams=2").is_err());
    }

    proptest! {
        #[test]
        fn random_roundtrip(base in 2u32..=64, n in 1usize..=4, seed in any::<u64>()) {
            let scheme = SidScheme::new(base, n).unwrap();
            let mut v = seed;
            let levels: Vec<u32> = (0..n).map(|_| { let d = (v % base as u64) as u32; v /= base as u64; d }).collect();
            let s = pack_levels(&scheme, &levels).unwrap();
            prop_assert!(s <= scheme.max_sid());
            prop_assert_eq!(unpack_levels(&scheme, s).unwrap(), levels);
        }

        #[test]
        fn packed_value_over_base_is_plain_radix(n in 1usize..=8, seed in any::<u64>()) {
            let scheme = t(n);
            let mut v = seed;
            let levels: Vec<u32> = (0..n).map(|_| { let d = (v % 3) as u32; v /= 3; d }).collect();
            let plain = levels.iter().rev().fold(0u64, |acc, &d| acc * 3 + d as u64);
            prop_assert_eq!(pack_levels(&scheme, &levels).unwrap() / 3, plain);
        }
    }
}
