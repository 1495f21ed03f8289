//! Checkpoint file format: header line `QAGCF-CKPT v1 M N O d`, then the
//! embedding table and both Adam moment tensors as raw little-endian f32,
//! row-major. The Adam step counter is not part of the format; resumed
//! training restarts bias correction.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::graphs::NodeLayout;
use crate::linalg::DenseMatrix;

use super::{AdamState, EmbeddingTable};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
    #[error("checkpoint truncated: expected {expected} floats, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trained table plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub table: EmbeddingTable,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn fresh(table: EmbeddingTable) -> Self {
        let (rows, cols) = (table.matrix().rows(), table.matrix().cols());
        Self {
            table,
            adam: AdamState::new(rows, cols),
        }
    }
}

fn write_matrix_f32<W: Write>(w: &mut W, m: &DenseMatrix) -> std::io::Result<()> {
    for &v in m.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix_f32<R: Read>(
    r: &mut R,
    rows: usize,
    cols: usize,
) -> Result<DenseMatrix, CheckpointError> {
    let count = rows * cols;
    let mut bytes = vec![0u8; count * 4];
    let mut filled = 0;
    while filled < bytes.len() {
        let n = r.read(&mut bytes[filled..])?;
        if n == 0 {
            return Err(CheckpointError::Truncated {
                expected: count,
                got: filled / 4,
            });
        }
        filled += n;
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(DenseMatrix::from_vec(rows, cols, data))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let layout = ckpt.table.layout();
    writeln!(
        w,
        "QAGCF-CKPT v1 {} {} {} {}",
        layout.users,
        layout.questions,
        layout.answers,
        ckpt.table.dim()
    )?;
    write_matrix_f32(&mut w, ckpt.table.matrix())?;
    write_matrix_f32(&mut w, &ckpt.adam.m)?;
    write_matrix_f32(&mut w, &ckpt.adam.v)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let dims: Vec<usize> = match tokens.as_slice() {
        ["QAGCF-CKPT", "v1", m, n, o, d] => [m, n, o, d]
            .iter()
            .map(|t| {
                t.parse()
                    .map_err(|_| CheckpointError::BadHeader(header.trim().to_owned()))
            })
            .collect::<Result<_, _>>()?,
        _ => return Err(CheckpointError::BadHeader(header.trim().to_owned())),
    };
    let layout = NodeLayout {
        users: dims[0],
        questions: dims[1],
        answers: dims[2],
    };
    let (rows, cols) = (layout.total(), dims[3]);
    let matrix = read_matrix_f32(&mut r, rows, cols)?;
    let m = read_matrix_f32(&mut r, rows, cols)?;
    let v = read_matrix_f32(&mut r, rows, cols)?;
    Ok(Checkpoint {
        table: EmbeddingTable::new(matrix, layout),
        adam: AdamState { m, v, step: 0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_embeddings;

    #[test]
    fn round_trip_preserves_f32_values() {
        let layout = NodeLayout {
            users: 2,
            questions: 3,
            answers: 4,
        };
        let table = init_embeddings(layout, 5, 9);
        let mut ckpt = Checkpoint::fresh(table);
        ckpt.adam.m.set(0, 0, 0.25);
        ckpt.adam.v.set(8, 4, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.table.layout(), ckpt.table.layout());
        // Values survive exactly when they are f32-representable.
        for (a, b) in loaded
            .table
            .matrix()
            .data()
            .iter()
            .zip(ckpt.table.matrix().data())
        {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(loaded.adam.m.get(0, 0), 0.25);
        assert_eq!(loaded.adam.v.get(8, 4), 0.5);
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOT-A-CKPT\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadHeader(_))
        ));
    }

    #[test]
    fn truncation_detected() {
        let layout = NodeLayout {
            users: 1,
            questions: 1,
            answers: 1,
        };
        let ckpt = Checkpoint::fresh(init_embeddings(layout, 4, 0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.bin");
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Truncated { .. })
        ));
    }
}
