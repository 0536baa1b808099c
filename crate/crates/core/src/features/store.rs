//! Row-addressable feature storage.
//!
//! Learners read features through [`FeatureSource`] so that the same training
//! code runs over an in-memory [`FeatureMatrix`], a file-backed
//! [`DiskFeatures`], or a [`RowSubset`] view of either.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::split_json_header;

/// Where a feature column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnMeaning {
    /// Band value of the neighbor at offset `(dy, dx)`.
    Frame { dy: i32, dx: i32, band: u32 },
    /// Orientation `bin` of cell `cell` (row-major within the block).
    Hog { cell: u32, bin: u32 },
}

/// Dense row-major `f32` features, one row per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    col_meaning: Vec<ColumnMeaning>,
}

impl FeatureMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f32>,
        col_meaning: Vec<ColumnMeaning>,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} values", rows * cols),
                data.len(),
            ));
        }
        if col_meaning.len() != cols {
            return Err(Error::shape(
                format!("{cols} column descriptors"),
                col_meaning.len(),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            rows,
            cols,
            data,
            col_meaning,
        })
    }

    /// Matrix with anonymous frame columns; convenient for synthetic data.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape(format!("rows of width {cols}"), "ragged rows"));
        }
        let meaning = (0..cols)
            .map(|b| ColumnMeaning::Frame {
                dy: 0,
                dx: 0,
                band: b as u32,
            })
            .collect();
        Self::new(rows.len(), cols, rows.concat(), meaning)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn col_meaning(&self) -> &[ColumnMeaning] {
        &self.col_meaning
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `[self | other]`, row by row.
    pub fn hconcat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!("{} rows", self.rows), other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        let mut meaning = self.col_meaning.clone();
        meaning.extend_from_slice(&other.col_meaning);
        Ok(FeatureMatrix {
            rows: self.rows,
            cols,
            data,
            col_meaning: meaning,
        })
    }
}

pub trait FeatureSource: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;

    /// Copies the given rows, in order, into `out` (`rows.len() * n_cols()` values).
    fn read_rows(&self, rows: &[usize], out: &mut [f32]) -> Result<()>;

    /// Copies column `col` of the given rows into `out`.
    fn read_column(&self, col: usize, rows: &[usize], out: &mut [f32]) -> Result<()>;
}

impl FeatureSource for FeatureMatrix {
    fn n_rows(&self) -> usize {
        self.rows
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    fn read_rows(&self, rows: &[usize], out: &mut [f32]) -> Result<()> {
        for (dst, &r) in out.chunks_exact_mut(self.cols).zip(rows) {
            dst.copy_from_slice(self.row(r));
        }
        Ok(())
    }

    fn read_column(&self, col: usize, rows: &[usize], out: &mut [f32]) -> Result<()> {
        for (dst, &r) in out.iter_mut().zip(rows) {
            *dst = self.data[r * self.cols + col];
        }
        Ok(())
    }
}

/// A view exposing `rows` of `inner` as rows `0..rows.len()`.
pub struct RowSubset<'a, S: FeatureSource + ?Sized> {
    inner: &'a S,
    rows: Vec<usize>,
}

impl<'a, S: FeatureSource + ?Sized> RowSubset<'a, S> {
    pub fn new(inner: &'a S, rows: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= inner.n_rows()) {
            return Err(Error::shape(format!("row index < {}", inner.n_rows()), bad));
        }
        Ok(Self { inner, rows })
    }

    pub fn indices(&self) -> &[usize] {
        &self.rows
    }

    fn map(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.rows[r]).collect()
    }
}

impl<S: FeatureSource + ?Sized> FeatureSource for RowSubset<'_, S> {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    fn read_rows(&self, rows: &[usize], out: &mut [f32]) -> Result<()> {
        self.inner.read_rows(&self.map(rows), out)
    }

    fn read_column(&self, col: usize, rows: &[usize], out: &mut [f32]) -> Result<()> {
        self.inner.read_column(col, &self.map(rows), out)
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const FEATURES_DTYPE: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    rows: usize,
    cols: usize,
    dtype: String,
    col_meaning: Vec<ColumnMeaning>,
}

/// Streams a feature file: header first, then rows appended in order.
pub struct FeatureWriter {
    path: PathBuf,
    out: BufWriter<File>,
    rows: usize,
    cols: usize,
    written: usize,
}

impl FeatureWriter {
    pub fn create(
        path: impl AsRef<Path>,
        rows: usize,
        col_meaning: Vec<ColumnMeaning>,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let cols = col_meaning.len();
        let header = FeatureHeader {
            rows,
            cols,
            dtype: FEATURES_DTYPE.into(),
            col_meaning,
        };
        let mut bytes = serde_json::to_vec(&header).expect("header serializes");
        bytes.push(b'\n');
        out.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out,
            rows,
            cols,
            written: 0,
        })
    }

    /// Appends whole rows (`values.len()` must be a multiple of the width).
    pub fn append(&mut self, values: &[f32]) -> Result<()> {
        debug_assert_eq!(values.len() % self.cols.max(1), 0);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: self.written * self.cols + i,
            });
        }
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out
            .write_all(&buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.written += values.len() / self.cols.max(1);
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        if self.written != self.rows {
            return Err(Error::shape(format!("{} rows", self.rows), self.written));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

pub fn save_features(x: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = FeatureWriter::create(path, x.rows, x.col_meaning.clone())?;
    w.append(&x.data)?;
    w.finish().map(|_| ())
}

fn parse_feature_header(bytes: &[u8]) -> Result<(FeatureHeader, usize)> {
    let (header, offset, _) = split_json_header(bytes, "feature")?;
    let header: FeatureHeader =
        serde_json::from_value(header).map_err(|e| Error::format("header", e.to_string()))?;
    if header.dtype != FEATURES_DTYPE {
        return Err(Error::format(
            "dtype",
            format!("expected {FEATURES_DTYPE:?}"),
        ));
    }
    if header.col_meaning.len() != header.cols {
        return Err(Error::format("col_meaning", "length differs from cols"));
    }
    Ok((header, offset))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, offset) = parse_feature_header(&bytes)?;
    let payload = &bytes[offset..];
    let expected = h.rows * h.cols * 4;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMatrix::new(h.rows, h.cols, data, h.col_meaning)
}

/// Features read on demand from a feature file with positional reads.
pub struct DiskFeatures {
    path: PathBuf,
    file: File,
    offset: u64,
    rows: usize,
    cols: usize,
    col_meaning: Vec<ColumnMeaning>,
}

impl DiskFeatures {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        use std::io::Read;
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        // The header is a single line; read until the newline.
        let mut head = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = file.read(&mut byte).map_err(|e| Error::io(&path, e))?;
            if n == 0 {
                break;
            }
            head.push(byte[0]);
            if byte[0] == b'\n' {
                break;
            }
        }
        let (h, offset) = parse_feature_header(&head)?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let expected = (h.rows * h.cols * 4) as u64;
        if len - offset as u64 != expected {
            return Err(Error::SizeMismatch {
                expected: expected as usize,
                actual: (len - offset as u64) as usize,
            });
        }
        Ok(Self {
            path,
            file,
            offset: offset as u64,
            rows: h.rows,
            cols: h.cols,
            col_meaning: h.col_meaning,
        })
    }

    pub fn col_meaning(&self) -> &[ColumnMeaning] {
        &self.col_meaning
    }

    fn read_at(&self, pos: u64, buf: &mut [u8]) -> Result<()> {
        #[cfg(unix)]
        {
            use std::os::unix::fs::FileExt;
            self.file
                .read_exact_at(buf, pos)
                .map_err(|e| Error::io(&self.path, e))
        }
        #[cfg(windows)]
        {
            use std::os::windows::fs::FileExt;
            let mut done = 0;
            while done < buf.len() {
                let n = self
                    .file
                    .seek_read(&mut buf[done..], pos + done as u64)
                    .map_err(|e| Error::io(&self.path, e))?;
                if n == 0 {
                    return Err(Error::io(
                        &self.path,
                        std::io::ErrorKind::UnexpectedEof.into(),
                    ));
                }
                done += n;
            }
            Ok(())
        }
    }
}

impl FeatureSource for DiskFeatures {
    fn n_rows(&self) -> usize {
        self.rows
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    fn read_rows(&self, rows: &[usize], out: &mut [f32]) -> Result<()> {
        let mut buf = vec![0u8; self.cols * 4];
        for (dst, &r) in out.chunks_exact_mut(self.cols).zip(rows) {
            self.read_at(self.offset + (r * self.cols * 4) as u64, &mut buf)?;
            for (d, c) in dst.iter_mut().zip(buf.chunks_exact(4)) {
                *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        Ok(())
    }

    fn read_column(&self, col: usize, rows: &[usize], out: &mut [f32]) -> Result<()> {
        let mut buf = [0u8; 4];
        for (dst, &r) in out.iter_mut().zip(rows) {
            self.read_at(self.offset + ((r * self.cols + col) * 4) as u64, &mut buf)?;
            *dst = f32::from_le_bytes(buf);
        }
        Ok(())
    }
}
