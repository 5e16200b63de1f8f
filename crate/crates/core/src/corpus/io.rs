//! Shape pack (`SHPB`) and binary PGM readers/writers.
//!
//! Pack layout: magic `SHPB`, then little-endian `u32` count, `u32` H, `u32` W,
//! then `count * H * W` bytes, row-major, each 0 or 1.

use super::{BinaryShape, CorpusError};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const PACK_MAGIC: &[u8; 4] = b"SHPB";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_pack(path: &Path, shapes: &[BinaryShape]) -> Result<(), CorpusError> {
    let first = shapes.first().ok_or(CorpusError::Empty)?;
    let (h, w) = (first.height(), first.width());
    let mut buf = Vec::with_capacity(16 + shapes.len() * h * w);
    buf.extend_from_slice(PACK_MAGIC);
    buf.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for s in shapes {
        if s.height() != h || s.width() != w {
            return Err(CorpusError::DimensionMismatch {
                id: s.id,
                height: s.height(),
                width: s.width(),
                expected_h: h,
                expected_w: w,
            });
        }
        buf.extend_from_slice(s.cells());
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn read_pack(path: &Path) -> Result<Vec<BinaryShape>, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 {
        return Err(CorpusError::Truncated {
            expected: 16,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != PACK_MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (count, h, w) = (word(4), word(8), word(12));
    let body = &bytes[16..];
    let expected = count * h * w;
    if body.len() != expected {
        return Err(CorpusError::Truncated {
            expected,
            found: body.len(),
        });
    }
    if count == 0 {
        return Err(CorpusError::Empty);
    }
    body.chunks_exact(h * w)
        .enumerate()
        .map(|(i, chunk)| BinaryShape::new(i, h, w, chunk.to_vec()))
        .collect()
}

/// Writes a binary PGM (P5) with solid cells black-on-white inverted: solid = 255.
pub fn write_pgm(path: &Path, shape: &BinaryShape) -> Result<(), CorpusError> {
    let mut buf = format!("P5\n{} {}\n255\n", shape.width(), shape.height()).into_bytes();
    buf.extend(
        shape
            .cells()
            .iter()
            .map(|&v| if v == 1 { 255u8 } else { 0 }),
    );
    fs::write(path, buf).map_err(io_err(path))
}

/// Reads one binary PGM, thresholding at 128 (`>= 128` is solid).
pub fn read_pgm(path: &Path, id: usize) -> Result<BinaryShape, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |reason: &str| CorpusError::BadPgm {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // single whitespace byte separates header from raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("not a binary (P5) PGM"));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad("non-numeric header field"))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval > 255 {
        return Err(bad("16-bit PGM not supported"));
    }
    let raster = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| bad("truncated raster"))?;
    BinaryShape::new(
        id,
        h,
        w,
        raster.iter().map(|&v| u8::from(v >= 128)).collect(),
    )
}

/// Reads every `*.pgm` file of a directory in lexicographic file-name order.
pub fn read_pgm_dir(dir: &Path) -> Result<Vec<BinaryShape>, CorpusError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CorpusError::Empty);
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| read_pgm(p, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<BinaryShape> {
        (0..3)
            .map(|i| BinaryShape::from_fn(i, 5, 7, move |r, c| (r + c + i) % 3 == 0))
            .collect()
    }

    #[test]
    fn pack_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.shpb");
        write_pack(&p, &sample()).unwrap();
        let raw = fs::read(&p).unwrap();
        assert_eq!(&raw[..4], b"SHPB");
        assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(raw[12..16].try_into().unwrap()), 7);
        assert_eq!(raw.len(), 16 + 3 * 35);
        assert_eq!(read_pack(&p).unwrap(), sample());
    }

    #[test]
    fn pack_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.shpb");
        fs::write(&p, b"NOPE\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_pack(&p), Err(CorpusError::BadMagic)));
        let mut raw = b"SHPB".to_vec();
        raw.extend_from_slice(&2u32.to_le_bytes());
        raw.extend_from_slice(&2u32.to_le_bytes());
        raw.extend_from_slice(&2u32.to_le_bytes());
        raw.extend_from_slice(&[0, 1, 0]);
        fs::write(&p, &raw).unwrap();
        assert!(matches!(
            read_pack(&p),
            Err(CorpusError::Truncated {
                expected: 8,
                found: 3
            })
        ));
        assert!(matches!(
            read_pack(&dir.path().join("missing")),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn pgm_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for s in sample() {
            write_pgm(&dir.path().join(format!("s{:03}.pgm", s.id)), &s).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        assert_eq!(read_pgm_dir(dir.path()).unwrap(), sample());
    }

    #[test]
    fn pgm_threshold_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut raw = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        raw.extend_from_slice(&[0, 127, 128, 255]);
        fs::write(&p, raw).unwrap();
        assert_eq!(read_pgm(&p, 0).unwrap().cells(), &[0, 0, 1, 1]);
    }
}
