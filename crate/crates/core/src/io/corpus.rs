//! Embedding corpora and their binary file format.
//!
//! ```text
//! "SIDE" | version: u32 = 1 | rows: u32 | dim: u32 | rows·dim × f32   (little-endian)
//! ```

use std::path::Path;

use super::{read_file, write_atomic, ByteReader, FormatError};
use crate::nn::Tensor2;

pub const CORPUS_MAGIC: &[u8; 4] = b"SIDE";
pub const CORPUS_VERSION: u32 = 1;

/// Row-major matrix of embedding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCorpus {
    vectors: Tensor2,
}

impl EmbeddingCorpus {
    pub fn new(vectors: Tensor2) -> Self {
        Self { vectors }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, crate::nn::NnError> {
        Tensor2::from_rows(rows).map(Self::new)
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(Tensor2::zeros(0, dim))
    }

    pub fn rows(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Tensor2 {
        &self.vectors
    }

    pub fn into_tensor(self) -> Tensor2 {
        self.vectors
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.iter_rows()
    }

    /// Copy with every non-zero row scaled to unit L2 norm.
    pub fn normalized(&self) -> Self {
        let mut v = self.vectors.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        Self::new(v)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self::new(self.vectors.select_rows(indices))
    }
}

pub fn corpus_to_bytes(corpus: &EmbeddingCorpus) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + corpus.vectors.len() * 4);
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    out.extend_from_slice(&(corpus.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(corpus.dim() as u32).to_le_bytes());
    for v in corpus.vectors.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn corpus_from_bytes(bytes: &[u8]) -> Result<EmbeddingCorpus, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(CORPUS_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != CORPUS_VERSION {
        return Err(FormatError::BadVersion {
            offset: at,
            expected: CORPUS_VERSION,
            found: version,
        });
    }
    let rows = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let expected = rows * dim * 4;
    if r.remaining() != expected {
        return Err(FormatError::Truncated {
            offset: r.offset(),
            expected,
            actual: r.remaining(),
        });
    }
    let data = r.f32s(rows * dim)?;
    Ok(EmbeddingCorpus::new(
        Tensor2::new(rows, dim, data).expect("length validated"),
    ))
}

pub fn corpus_write(corpus: &EmbeddingCorpus, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &corpus_to_bytes(corpus))
}

pub fn corpus_read(path: &Path) -> Result<EmbeddingCorpus, FormatError> {
    corpus_from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.side");
        let c = EmbeddingCorpus::from_rows(&[[1.0f32, -0.0, 3.25], [f32::MIN_POSITIVE, 1e30, -2.5]]).unwrap();
        corpus_write(&c, &path).unwrap();
        let back = corpus_read(&path).unwrap();
        let bits = |c: &EmbeddingCorpus| c.vectors().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&c));
        assert_eq!(back.dim(), 3);
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let c = EmbeddingCorpus::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
        let bytes = corpus_to_bytes(&c);
        let err = corpus_from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        match err {
            FormatError::Truncated { offset, expected, actual } => {
                assert_eq!((offset, expected, actual), (16, 16, 11));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_corpus_is_valid() {
        let c = EmbeddingCorpus::empty(7);
        let back = corpus_from_bytes(&corpus_to_bytes(&c)).unwrap();
        assert_eq!((back.rows(), back.dim()), (0, 7));
    }

    #[test]
    fn rejects_header_problems() {
        let c = EmbeddingCorpus::from_rows(&[[1.0f32]]).unwrap();
        let mut bytes = corpus_to_bytes(&c);
        bytes[6] = 1;
        assert!(matches!(corpus_from_bytes(&bytes), Err(FormatError::BadVersion { offset: 4, .. })));
        assert!(matches!(corpus_from_bytes(b"SID"), Err(FormatError::BadMagic { .. })));
        assert!(matches!(corpus_from_bytes(b"SIDK\x01\0\0\0"), Err(FormatError::BadMagic { .. })));
    }
}
