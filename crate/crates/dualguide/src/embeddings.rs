//! Embedding file format.
//!
//! Binary columnar layout, little-endian:
//!
//! ```text
//! u32 dimension | u32 count | count x (u32 class_index, dimension x f32)
//! ```
//!
//! A sidecar text file lists class names, one per line, index-ordered. The
//! similarity stage ingests this format so it stays testable without any
//! vision model; an external encoder (e.g. a ViT-B/16-class CLIP image
//! tower) can emit the same layout.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::similarity::EmbeddingTable;

pub fn write_embedding_file(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (vector, &label) in table.vectors().iter().zip(table.labels()) {
        buf.extend_from_slice(&(label as u32).to_le_bytes());
        for &v in vector {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_class_names(path: &Path, class_names: &[String]) -> Result<()> {
    let mut text = class_names.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if names.is_empty() {
        return Err(Error::parse(path, "class-name list is empty"));
    }
    Ok(names)
}

pub fn read_embedding_file(path: &Path, class_names_path: &Path) -> Result<EmbeddingTable> {
    let class_names = read_class_names(class_names_path)?;
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    let mut cursor = 0usize;
    let dim = read_u32(path, &bytes, &mut cursor, "dimension")? as usize;
    let count = read_u32(path, &bytes, &mut cursor, "count")? as usize;
    if dim == 0 {
        return Err(Error::parse(path, "embedding dimension is zero"));
    }
    if count == 0 {
        return Err(Error::parse(path, "embedding count is zero"));
    }
    let expected = 8 + count * (4 + 4 * dim);
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!(
                "file has {} bytes but header (dim {dim}, count {count}) implies {expected}",
                bytes.len()
            ),
        ));
    }

    let mut vectors = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for row in 0..count {
        let label = read_u32(path, &bytes, &mut cursor, "class_index")? as usize;
        if label >= class_names.len() {
            return Err(Error::parse(
                path,
                format!(
                    "row {row}: class index {label} out of range for {} class names",
                    class_names.len()
                ),
            ));
        }
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let raw: [u8; 4] = bytes[cursor..cursor + 4].try_into().unwrap();
            cursor += 4;
            vector.push(f32::from_le_bytes(raw) as f64);
        }
        vectors.push(vector);
        labels.push(label);
    }
    EmbeddingTable::new(vectors, labels, class_names)
}

fn read_u32(path: &Path, bytes: &[u8], cursor: &mut usize, field: &str) -> Result<u32> {
    let end = *cursor + 4;
    if end > bytes.len() {
        return Err(Error::parse(
            path,
            format!("truncated file while reading {field} at offset {cursor}"),
        ));
    }
    let raw: [u8; 4] = bytes[*cursor..end].try_into().unwrap();
    *cursor = end;
    Ok(u32::from_le_bytes(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> EmbeddingTable {
        EmbeddingTable::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
            vec![0, 1, 1],
            vec!["cat".into(), "dog".into()],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_table_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("emb.bin");
        let names = dir.path().join("emb.classes.txt");
        let table = sample_table();
        write_embedding_file(&emb, &table).unwrap();
        write_class_names(&names, table.class_names()).unwrap();
        let loaded = read_embedding_file(&emb, &names).unwrap();
        assert_eq!(loaded.labels(), table.labels());
        assert_eq!(loaded.class_names(), table.class_names());
        for (a, b) in loaded.vectors().iter().zip(table.vectors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn truncated_file_gives_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("emb.bin");
        let names = dir.path().join("emb.classes.txt");
        let table = sample_table();
        write_embedding_file(&emb, &table).unwrap();
        write_class_names(&names, table.class_names()).unwrap();
        let bytes = fs::read(&emb).unwrap();
        fs::write(&emb, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_embedding_file(&emb, &names),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn out_of_range_class_index_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("emb.bin");
        let names = dir.path().join("emb.classes.txt");
        write_embedding_file(&emb, &sample_table()).unwrap();
        write_class_names(&names, &["only".to_string()]).unwrap();
        assert!(matches!(
            read_embedding_file(&emb, &names),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("absent.bin");
        let names = dir.path().join("absent.txt");
        assert!(matches!(
            read_embedding_file(&emb, &names),
            Err(Error::Io { .. })
        ));
    }
}
