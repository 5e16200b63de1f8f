//! Shape-only libraries: binary unit-cell rasters, their signed distance
//! fields and volume fractions.

mod io;
mod lattice;
mod sdf;

pub use io::{read_pack, read_pgm, read_pgm_dir, write_pack, write_pgm, PACK_MAGIC};
pub use lattice::{generate_corpus, generate_corpus_with_params, generate_lattice, LatticeParams};
pub use sdf::{sdf_from_binary, Degenerate, SdfShape};

use crate::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad shape pack magic (expected \"SHPB\")")]
    BadMagic,
    #[error("shape pack truncated: expected {expected} raster bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("raster cell {index} has value {value}, expected 0 or 1")]
    InvalidCell { index: usize, value: u8 },
    #[error("raster must be at least 2x2, got {height}x{width}")]
    TooSmall { height: usize, width: usize },
    #[error("shape {id} is {height}x{width}, library is {expected_h}x{expected_w}")]
    DimensionMismatch {
        id: usize,
        height: usize,
        width: usize,
        expected_h: usize,
        expected_w: usize,
    },
    #[error("malformed PGM file {path}: {reason}")]
    BadPgm { path: String, reason: String },
    #[error("no shapes found")]
    Empty,
    #[error("lattice resolution must be >= 10, got {0}")]
    Resolution(usize),
}

/// Binary unit cell raster, row-major, `1` = solid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryShape {
    pub id: usize,
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl BinaryShape {
    pub fn new(
        id: usize,
        height: usize,
        width: usize,
        cells: Vec<u8>,
    ) -> Result<Self, CorpusError> {
        if height < 2 || width < 2 {
            return Err(CorpusError::TooSmall { height, width });
        }
        if cells.len() != height * width {
            return Err(CorpusError::Truncated {
                expected: height * width,
                found: cells.len(),
            });
        }
        if let Some((index, &value)) = cells.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(CorpusError::InvalidCell { index, value });
        }
        Ok(Self {
            id,
            height,
            width,
            cells,
        })
    }

    pub fn from_fn(
        id: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let mut cells = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                cells.push(u8::from(f(r, c)));
            }
        }
        Self::new(id, height, width, cells).expect("raster built from closure is well formed")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn is_solid(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col] == 1
    }

    pub fn solid_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_degenerate(&self) -> bool {
        let s = self.solid_count();
        s == 0 || s == self.cells.len()
    }

    /// Raster rotated by 90 degrees counter-clockwise.
    pub fn rotated90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        Self::from_fn(self.id, w, h, |r, c| self.is_solid(c, w - 1 - r))
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }
}

/// Fraction of solid cells.
pub fn volume_fraction<T: Real>(shape: &BinaryShape) -> T {
    T::count(shape.solid_count()) / T::count(shape.cells.len())
}

/// Indexed shapes with their SDFs and volume fractions, immutable after construction.
#[derive(Debug, Clone)]
pub struct ShapeLibrary<T: Real> {
    shapes: Vec<BinaryShape>,
    sdfs: Vec<SdfShape<T>>,
    vf: Vec<T>,
}

impl<T: Real> ShapeLibrary<T> {
    /// Builds the library, renumbering shape ids to their index.
    pub fn from_shapes(shapes: Vec<BinaryShape>) -> Result<Self, CorpusError> {
        let first = shapes.first().ok_or(CorpusError::Empty)?;
        let (h, w) = (first.height, first.width);
        let mut out = Vec::with_capacity(shapes.len());
        for (i, s) in shapes.into_iter().enumerate() {
            if s.height != h || s.width != w {
                return Err(CorpusError::DimensionMismatch {
                    id: i,
                    height: s.height,
                    width: s.width,
                    expected_h: h,
                    expected_w: w,
                });
            }
            out.push(s.with_id(i));
        }
        let sdfs = out.iter().map(sdf_from_binary).collect();
        let vf = out.iter().map(volume_fraction).collect();
        Ok(Self {
            shapes: out,
            sdfs,
            vf,
        })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn height(&self) -> usize {
        self.shapes[0].height
    }

    pub fn width(&self) -> usize {
        self.shapes[0].width
    }

    pub fn shapes(&self) -> &[BinaryShape] {
        &self.shapes
    }

    pub fn sdfs(&self) -> &[SdfShape<T>] {
        &self.sdfs
    }

    pub fn volume_fractions(&self) -> &[T] {
        &self.vf
    }

    pub fn shape(&self, i: usize) -> &BinaryShape {
        &self.shapes[i]
    }

    /// Indices of shapes whose SDF is flagged degenerate (all solid or all void).
    pub fn degenerate_indices(&self) -> Vec<usize> {
        self.sdfs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.degenerate.is_some())
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_fraction_counts() {
        let solid = BinaryShape::from_fn(0, 50, 50, |_, _| true);
        let void = BinaryShape::from_fn(0, 50, 50, |_, _| false);
        let half = BinaryShape::from_fn(0, 50, 50, |r, _| r < 25);
        assert_eq!(volume_fraction::<f64>(&solid), 1.0);
        assert_eq!(volume_fraction::<f64>(&void), 0.0);
        assert_eq!(volume_fraction::<f64>(&half), 0.5);
        assert_eq!(volume_fraction::<f32>(&half), 0.5);
    }

    #[test]
    fn rejects_bad_rasters() {
        assert!(matches!(
            BinaryShape::new(0, 1, 5, vec![0; 5]),
            Err(CorpusError::TooSmall { .. })
        ));
        assert!(matches!(
            BinaryShape::new(0, 2, 2, vec![0, 1, 2, 0]),
            Err(CorpusError::InvalidCell { index: 2, value: 2 })
        ));
        assert!(matches!(
            BinaryShape::new(0, 2, 2, vec![0, 1, 1]),
            Err(CorpusError::Truncated { .. })
        ));
    }

    #[test]
    fn rotation_round_trip() {
        let s = BinaryShape::from_fn(3, 4, 6, |r, c| (r * 7 + c * 3) % 5 == 0);
        let r4 = s.rotated90().rotated90().rotated90().rotated90();
        assert_eq!(s, r4);
        assert_eq!(s.rotated90().height(), 6);
    }

    #[test]
    fn library_flags_degenerate_shapes() {
        let lib = ShapeLibrary::<f64>::from_shapes(vec![
            BinaryShape::from_fn(9, 8, 8, |_, _| true),
            BinaryShape::from_fn(9, 8, 8, |r, _| r < 3),
        ])
        .unwrap();
        assert_eq!(lib.degenerate_indices(), vec![0]);
        assert_eq!(lib.shape(1).id, 1);
        assert_eq!(lib.volume_fractions()[0], 1.0);
    }
}
