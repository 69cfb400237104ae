//! Readers and writers for the supported image formats.
//!
//! * IDX: the classic big-endian binary container for byte image stacks
//!   (magic `0x00000803`, dims `n, rows, cols`) and label vectors
//!   (magic `0x00000801`, dim `n`).
//! * PGM: P2 (ascii) and P5 (binary) grayscale, maxval up to 65535
//!   (two-byte big-endian samples above 255, per the format).
//! * CSV grids: one row of comma-separated intensities per pixel row.
//!
//! Readers normalize intensities to probability weights. Writers for CSV
//! round-trip weights at full precision; the PGM writer rescales to the
//! requested maxval for viewing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::histogram::ImageHistogram;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated {what}: {e}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load every image of an IDX byte stack as a normalized histogram.
/// All-zero frames are rejected: they carry no mass to transport.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<ImageHistogram>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut r, "idx header")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad idx image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(&mut r, "idx header")? as usize;
    let rows = read_u32_be(&mut r, "idx header")? as usize;
    let cols = read_u32_be(&mut r, "idx header")? as usize;
    let grid = PixelGrid::new(rows, cols)?;
    let mut out = Vec::with_capacity(n);
    let mut frame = vec![0u8; rows * cols];
    for i in 0..n {
        r.read_exact(&mut frame)
            .map_err(|e| Error::Format(format!("truncated idx payload at image {i}: {e}")))?;
        let vals: Vec<f64> = frame.iter().map(|&b| b as f64).collect();
        let h = ImageHistogram::from_intensities(grid, &vals)
            .map_err(|e| Error::Format(format!("idx image {i}: {e}")))?;
        out.push(h);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format(
            "idx file has trailing bytes after the declared payload".to_string(),
        ));
    }
    Ok(out)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let magic = read_u32_be(&mut r, "idx header")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad idx label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(&mut r, "idx header")? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)
        .map_err(|e| Error::Format(format!("truncated idx labels: {e}")))?;
    Ok(labels)
}

/// Write raw byte frames as an IDX image stack.
pub fn write_idx_images(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    frames: &[Vec<u8>],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&IDX_IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(frames.len() as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    for (i, f) in frames.iter().enumerate() {
        if f.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "frame {i} has {} bytes, expected {}",
                f.len(),
                rows * cols
            )));
        }
        w.write_all(f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&IDX_LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// One whitespace-delimited token from a PGM header, skipping `#` comments.
fn pgm_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            if tok.is_empty() {
                return Err(Error::Format("truncated pgm header".to_string()));
            }
            return Ok(tok);
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut line = String::new();
            r.read_line(&mut line)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}

/// Load a P2 or P5 grayscale image as a normalized histogram.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<ImageHistogram> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let kind = pgm_token(&mut r)?;
    if kind != "P2" && kind != "P5" {
        return Err(Error::Format(format!(
            "unsupported pgm type {kind:?}, expected P2 or P5"
        )));
    }
    let parse = |tok: String, what: &str| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad pgm {what}: {tok:?}")))
    };
    let width = parse(pgm_token(&mut r)?, "width")?;
    let height = parse(pgm_token(&mut r)?, "height")?;
    let maxval = parse(pgm_token(&mut r)?, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("pgm maxval {maxval} out of 1..=65535")));
    }
    let grid = PixelGrid::new(height, width)?;
    let n = grid.len();
    let mut vals = Vec::with_capacity(n);
    if kind == "P2" {
        for _ in 0..n {
            let v = parse(pgm_token(&mut r)?, "sample")?;
            if v > maxval {
                return Err(Error::Format(format!("pgm sample {v} exceeds maxval {maxval}")));
            }
            vals.push(v as f64);
        }
    } else if maxval < 256 {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated pgm payload: {e}")))?;
        vals.extend(buf.iter().map(|&b| b as f64));
    } else {
        let mut buf = vec![0u8; 2 * n];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated pgm payload: {e}")))?;
        for ch in buf.chunks_exact(2) {
            vals.push(u16::from_be_bytes([ch[0], ch[1]]) as f64);
        }
    }
    ImageHistogram::from_intensities(grid, &vals)
}

/// Write weights rescaled to `0..=255` as a binary P5 image.
pub fn write_pgm(path: impl AsRef<Path>, image: &ImageHistogram) -> Result<()> {
    let grid = image.grid();
    let peak = image
        .weights()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(w, "P5\n{} {}\n255\n", grid.width(), grid.height())?;
    let bytes: Vec<u8> = image
        .weights()
        .iter()
        .map(|&v| (255.0 * v / peak).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Load a CSV grid of intensities: one text row per pixel row.
pub fn load_csv_grid(path: impl AsRef<Path>) -> Result<ImageHistogram> {
    let r = BufReader::new(File::open(path.as_ref())?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad number {cell:?}", ln + 1)))?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "line {}: {} columns, expected {}",
                    ln + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.len());
    if height == 0 || width == 0 {
        return Err(Error::Format("csv grid is empty".to_string()));
    }
    let grid = PixelGrid::new(height, width)?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    ImageHistogram::from_intensities(grid, &flat)
}

/// Write weights as a CSV grid at full round-trip precision.
pub fn write_csv_grid(path: impl AsRef<Path>, image: &ImageHistogram) -> Result<()> {
    let grid = image.grid();
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for r in 0..grid.height() {
        let row: Vec<String> = (0..grid.width())
            .map(|c| format!("{:?}", image.weights()[grid.index(r, c)]))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Grid file formats understood by [`load_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Pgm,
    Csv,
}

pub fn load_grid(path: impl AsRef<Path>, format: GridFormat) -> Result<ImageHistogram> {
    match format {
        GridFormat::Pgm => load_pgm(path),
        GridFormat::Csv => load_csv_grid(path),
    }
}

/// Load a dataset from a path: an `.idx` stack, a single grid file, or a
/// directory of `.pgm`/`.csv`/`.idx` files read in lexicographic name order.
pub fn load_images(path: impl AsRef<Path>) -> Result<Vec<ImageHistogram>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(path)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm" | "csv" | "idx")
                )
            })
            .collect();
        names.sort();
        let mut out = Vec::new();
        for p in names {
            out.extend(load_images(&p)?);
        }
        if out.is_empty() {
            return Err(Error::Format(format!(
                "no .pgm/.csv/.idx files under {}",
                path.display()
            )));
        }
        return Ok(out);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("idx") => load_idx_images(path),
        Some("pgm") => Ok(vec![load_pgm(path)?]),
        Some("csv") => Ok(vec![load_csv_grid(path)?]),
        other => Err(Error::Format(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}
