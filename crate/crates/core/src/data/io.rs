//! File ingestion: IDX (big-endian, bit-exact) and labeled CSV.

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use byteorder::{BigEndian, ReadBytesExt};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label file pair (the MNIST layout) into a dataset
/// with a stratified 70/15/15 split. Pixel bytes are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path, seed: u64) -> Result<Dataset> {
    let (features, n) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::dim(format!(
            "{} labels for {n} images",
            labels.len()
        )));
    }
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::from_parts(features, labels, name, seed)
}

fn read_idx_images(path: &Path) -> Result<(Matrix, usize)> {
    let ctx = || format!("IDX image file {}", path.display());
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated(ctx()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            context: ctx(),
        });
    }
    let n = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let rows = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let cols = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let mut bytes = vec![0u8; n * rows * cols];
    r.read_exact(&mut bytes).map_err(|_| Error::Truncated(ctx()))?;
    let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((Matrix::from_vec(n, rows * cols, data)?, n))
}

fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let ctx = || format!("IDX label file {}", path.display());
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated(ctx()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            context: ctx(),
        });
    }
    let n = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes).map_err(|_| Error::Truncated(ctx()))?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

/// Load a labeled CSV with mandatory header `label,f0,f1,...` into a
/// dataset with a stratified 70/15/15 split.
pub fn load_csv(path: &Path, seed: u64) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::Truncated(format!("CSV {} has no header", path.display()))),
    };
    if !header.starts_with("label") {
        return Err(Error::InvalidArgument(format!(
            "CSV header must start with 'label', got {header:?}"
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_text = fields.next().unwrap_or("");
        let label: usize = label_text.trim().parse().map_err(|_| Error::NonNumeric {
            line: lineno + 2,
            value: label_text.to_string(),
        })?;
        let mut row = Vec::new();
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::NonNumeric {
                line: lineno + 2,
                value: f.to_string(),
            })?;
            row.push(v);
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "CSV {} has a header but no rows",
            path.display()
        )));
    }
    let features = Matrix::from_rows(&rows)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::from_parts(features, labels, name, seed)
}

/// Write features and labels as `label,f0,f1,...` with shortest
/// round-trip float formatting.
pub fn write_csv(features: &Matrix, labels: &[usize], path: &Path) -> Result<()> {
    if labels.len() != features.rows() {
        return Err(Error::dim(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "label")?;
    for j in 0..features.cols() {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for i in 0..features.rows() {
        write!(w, "{}", labels[i])?;
        for &v in features.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
