//! Effective elastic properties of a periodic binary unit cell.
//!
//! One bilinear plane-stress quadrilateral per pixel; void pixels carry a
//! modulus floor instead of being removed. Opposite cell edges share nodes,
//! so the fluctuation field is periodic by construction, and the node at the
//! origin is pinned to remove rigid translations. For each unit macro strain
//! (ε11, ε22, γ12) the fluctuation solves `K χ = F`, and the effective tensor
//! follows from the mutual strain energies of `u0 - χ`.

mod sparse;

pub use sparse::{nested_dissection_torus, CscPattern, Factor, Symbolic};

use crate::corpus::BinaryShape;
use crate::Real;
use nalgebra::{Matrix3, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HomogenizeError {
    #[error("global stiffness matrix is singular (pivot {column})")]
    SolverSingular { column: usize },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("shape {index} of batch failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<HomogenizeError>,
    },
    #[error("property CSV: {0}")]
    Csv(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec<T: Real> {
    pub e_solid: T,
    pub e_void: T,
    pub nu: T,
}

impl<T: Real> Default for MaterialSpec<T> {
    fn default() -> Self {
        Self {
            e_solid: T::one(),
            e_void: T::lit(1e-9),
            nu: T::lit(0.3),
        }
    }
}

impl<T: Real> MaterialSpec<T> {
    pub fn validate(&self) -> Result<(), HomogenizeError> {
        if !(self.e_solid > T::zero())
            || !(self.e_void > T::zero())
            || !(self.e_void < self.e_solid)
        {
            return Err(HomogenizeError::InvalidMaterial(format!(
                "need 0 < E_void < E_solid, got E_void = {}, E_solid = {}",
                self.e_void, self.e_solid
            )));
        }
        if !(self.nu > -T::one()) || !(self.nu < T::lit(0.5)) {
            return Err(HomogenizeError::InvalidMaterial(format!(
                "Poisson ratio {} outside (-1, 0.5)",
                self.nu
            )));
        }
        Ok(())
    }

    /// Plane-stress constitutive matrix for unit Young's modulus.
    pub fn unit_constitutive(&self) -> Matrix3<T> {
        let nu = self.nu;
        let f = T::one() / (T::one() - nu * nu);
        Matrix3::new(
            f,
            f * nu,
            T::zero(),
            f * nu,
            f,
            T::zero(),
            T::zero(),
            T::zero(),
            f * (T::one() - nu) / T::lit(2.0),
        )
    }

    pub fn to_f64(&self) -> MaterialSpec<f64> {
        MaterialSpec {
            e_solid: self.e_solid.as_f64(),
            e_void: self.e_void.as_f64(),
            nu: self.nu.as_f64(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            e_solid: self.e_solid * s,
            e_void: self.e_void * s,
            nu: self.nu,
        }
    }
}

/// Effective stiffness in Voigt notation `[11, 22, 12]`, engineering shear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyVector<T: Real> {
    pub c11: T,
    pub c12: T,
    pub c22: T,
    pub c33: T,
    pub full: Matrix3<T>,
}

impl<T: Real> PropertyVector<T> {
    pub fn from_full(full: Matrix3<T>) -> Self {
        Self {
            c11: full[(0, 0)],
            c12: full[(0, 1)],
            c22: full[(1, 1)],
            c33: full[(2, 2)],
            full,
        }
    }

    /// The `{C11, C12, C22}` response vector used by the surrogate.
    pub fn response(&self) -> [T; 3] {
        [self.c11, self.c12, self.c22]
    }
}

type Mat8<T> = SMatrix<T, 8, 8>;
type Vec8<T> = SVector<T, 8>;

/// Unit-square element stiffness and unit-strain load vectors (E = 1), 2x2 Gauss.
fn element_matrices<T: Real>(d: &Matrix3<T>) -> (Mat8<T>, [Vec8<T>; 3]) {
    let g = T::lit(0.5 / 3f64.sqrt());
    let half = T::lit(0.5);
    let pts = [half - g, half + g];
    let w = T::lit(0.25);
    let mut ke = Mat8::zeros();
    let mut fe = [Vec8::zeros(); 3];
    let one = T::one();
    for &xi in &pts {
        for &eta in &pts {
            // node order: (0,0), (1,0), (1,1), (0,1)
            let dndx = [-(one - eta), one - eta, eta, -eta];
            let dndy = [-(one - xi), -xi, xi, one - xi];
            let mut b = SMatrix::<T, 3, 8>::zeros();
            for a in 0..4 {
                b[(0, 2 * a)] = dndx[a];
                b[(1, 2 * a + 1)] = dndy[a];
                b[(2, 2 * a)] = dndy[a];
                b[(2, 2 * a + 1)] = dndx[a];
            }
            let db = d * b;
            ke += b.transpose() * db * w;
            for (i, f) in fe.iter_mut().enumerate() {
                *f += db.row(i).transpose() * w;
            }
        }
    }
    (ke, fe)
}

/// Nodal values of the three unit macro displacement fields on the unit element.
fn unit_strain_displacements<T: Real>() -> [Vec8<T>; 3] {
    let (o, h, z) = (T::one(), T::lit(0.5), T::zero());
    [
        Vec8::from_column_slice(&[z, z, o, z, o, z, z, z]),
        Vec8::from_column_slice(&[z, z, z, z, z, o, z, o]),
        Vec8::from_column_slice(&[z, z, z, h, h, h, h, z]),
    ]
}

/// Reusable homogenization setup for one raster size: element matrices,
/// ordering, stiffness pattern and symbolic factorization.
///
/// Assembly and solve always run in `f64`: the default solid/void contrast
/// of 1e9 is below `f32` resolution and the factorization would break down.
#[derive(Debug, Clone)]
pub struct Homogenizer<T: Real> {
    height: usize,
    width: usize,
    material: MaterialSpec<T>,
    ke: Mat8<f64>,
    u0: [Vec8<f64>; 3],
    pattern: CscPattern,
    symbolic: Symbolic,
    /// Per element, per local dof: permuted global equation or `None` for the pinned node.
    element_eqs: Vec<[Option<usize>; 8]>,
    /// Per element, 8x8 positions into the pattern value array.
    element_pos: Vec<[[Option<usize>; 8]; 8]>,
}

impl<T: Real> Homogenizer<T> {
    pub fn new(
        height: usize,
        width: usize,
        material: MaterialSpec<T>,
    ) -> Result<Self, HomogenizeError> {
        material.validate()?;
        let (ke, _) = element_matrices(&material.to_f64().unit_constitutive());
        let (h, w) = (height, width);
        let order = nested_dissection_torus(h, w);
        let mut rank = vec![0usize; h * w];
        for (pos, &node) in order.iter().enumerate() {
            rank[node] = pos;
        }
        // node 0 is pinned; every other node gets two consecutive equations
        let pinned_rank = rank[0];
        let eq_of = |node: usize, comp: usize| -> Option<usize> {
            let r = rank[node];
            match r.cmp(&pinned_rank) {
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Less => Some(2 * r + comp),
                std::cmp::Ordering::Greater => Some(2 * (r - 1) + comp),
            }
        };
        let n_eq = 2 * (h * w - 1);
        let mut element_eqs = Vec::with_capacity(h * w);
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n_eq];
        for r in 0..h {
            for c in 0..w {
                let nodes = [
                    r * w + c,
                    r * w + (c + 1) % w,
                    ((r + 1) % h) * w + (c + 1) % w,
                    ((r + 1) % h) * w + c,
                ];
                let mut eqs = [None; 8];
                for (a, &node) in nodes.iter().enumerate() {
                    eqs[2 * a] = eq_of(node, 0);
                    eqs[2 * a + 1] = eq_of(node, 1);
                }
                for &i in eqs.iter().flatten() {
                    for &j in eqs.iter().flatten() {
                        cols[j].push(i);
                    }
                }
                element_eqs.push(eqs);
            }
        }
        let pattern = CscPattern::from_columns(cols);
        let symbolic = Symbolic::analyze(&pattern);
        let element_pos = element_eqs
            .iter()
            .map(|eqs| {
                let mut pos = [[None; 8]; 8];
                for a in 0..8 {
                    for b in 0..8 {
                        if let (Some(i), Some(j)) = (eqs[a], eqs[b]) {
                            pos[a][b] = pattern.position(i, j);
                        }
                    }
                }
                pos
            })
            .collect();
        Ok(Self {
            height,
            width,
            material,
            ke,
            u0: unit_strain_displacements(),
            pattern,
            symbolic,
            element_eqs,
            element_pos,
        })
    }

    pub fn equations(&self) -> usize {
        self.pattern.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.symbolic.l_nnz()
    }

    pub fn homogenize(&self, shape: &BinaryShape) -> Result<PropertyVector<T>, HomogenizeError> {
        assert_eq!(
            (shape.height(), shape.width()),
            (self.height, self.width),
            "homogenizer built for a different raster size"
        );
        let material = self.material.to_f64();
        let moduli: Vec<f64> = shape
            .cells()
            .iter()
            .map(|&v| {
                if v == 1 {
                    material.e_solid
                } else {
                    material.e_void
                }
            })
            .collect();

        let mut values = vec![0.0; self.pattern.nnz()];
        let mut loads = vec![vec![0.0; self.pattern.n]; 3];
        let ke_u0: [Vec8<f64>; 3] = std::array::from_fn(|i| self.ke * self.u0[i]);
        for (e, &modulus) in moduli.iter().enumerate() {
            let pos = &self.element_pos[e];
            for a in 0..8 {
                for b in 0..8 {
                    if let Some(p) = pos[a][b] {
                        values[p] += modulus * self.ke[(a, b)];
                    }
                }
            }
            for (i, load) in loads.iter_mut().enumerate() {
                for (a, eq) in self.element_eqs[e].iter().enumerate() {
                    if let Some(eq) = *eq {
                        load[eq] += modulus * ke_u0[i][a];
                    }
                }
            }
        }
        let factor = Factor::factorize(&self.pattern, &values, &self.symbolic)
            .map_err(|e| HomogenizeError::SolverSingular { column: e.column })?;
        for load in loads.iter_mut() {
            factor.solve_in_place(load);
        }

        let mut c = Matrix3::<f64>::zeros();
        for (e, &modulus) in moduli.iter().enumerate() {
            let eqs = &self.element_eqs[e];
            let local: [Vec8<f64>; 3] = std::array::from_fn(|i| {
                let mut u = self.u0[i];
                for a in 0..8 {
                    if let Some(eq) = eqs[a] {
                        u[a] -= loads[i][eq];
                    }
                }
                u
            });
            let k_local: [Vec8<f64>; 3] = std::array::from_fn(|j| self.ke * local[j]);
            for i in 0..3 {
                for j in i..3 {
                    c[(i, j)] += modulus * local[i].dot(&k_local[j]);
                }
            }
        }
        let area = (self.height * self.width) as f64;
        for i in 0..3 {
            for j in i..3 {
                c[(i, j)] /= area;
                c[(j, i)] = c[(i, j)];
            }
        }
        Ok(PropertyVector::from_full(c.map(T::lit)))
    }
}

/// Effective properties of one shape.
pub fn homogenize<T: Real>(
    shape: &BinaryShape,
    material: &MaterialSpec<T>,
) -> Result<PropertyVector<T>, HomogenizeError> {
    Homogenizer::new(shape.height(), shape.width(), *material)?.homogenize(shape)
}

/// Effective properties of many shapes, in input order. Shapes are solved in
/// parallel; each solve is sequential, so results do not depend on threading.
pub fn homogenize_batch<T: Real>(
    shapes: &[&BinaryShape],
    material: &MaterialSpec<T>,
) -> Result<Vec<PropertyVector<T>>, HomogenizeError> {
    let mut cache: Vec<Homogenizer<T>> = Vec::new();
    for s in shapes {
        if !cache
            .iter()
            .any(|h| h.height == s.height() && h.width == s.width())
        {
            cache.push(Homogenizer::new(s.height(), s.width(), *material)?);
        }
    }
    shapes
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let h = cache
                .iter()
                .find(|h| h.height == s.height() && h.width == s.width())
                .expect("homogenizer cached for every size");
            h.homogenize(s).map_err(|e| HomogenizeError::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Writes the property CSV `id,C11,C12,C22,C33`.
pub fn write_properties<T: Real>(
    path: &Path,
    ids: &[usize],
    props: &[PropertyVector<T>],
) -> Result<(), HomogenizeError> {
    let mut out = String::from("id,C11,C12,C22,C33\n");
    for (id, p) in ids.iter().zip(props) {
        let _ = writeln!(out, "{id},{},{},{},{}", p.c11, p.c12, p.c22, p.c33);
    }
    std::fs::write(path, out).map_err(|source| HomogenizeError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a property CSV. Only the four stored entries are recovered; the
/// coupling terms of `full` are zero.
pub fn read_properties<T: Real>(
    path: &Path,
) -> Result<Vec<(usize, PropertyVector<T>)>, HomogenizeError> {
    let text = std::fs::read_to_string(path).map_err(|source| HomogenizeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().unwrap_or_default().trim();
    if header != "id,C11,C12,C22,C33" {
        return Err(HomogenizeError::Csv(format!("bad header {header:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 5 {
                return Err(HomogenizeError::Csv(format!(
                    "row {}: expected 5 fields",
                    i + 1
                )));
            }
            let id = f[0]
                .parse::<usize>()
                .map_err(|_| HomogenizeError::Csv(format!("row {}: bad id", i + 1)))?;
            let mut v = [T::zero(); 4];
            for (k, s) in f[1..].iter().enumerate() {
                v[k] = T::lit(s.parse::<f64>().map_err(|_| {
                    HomogenizeError::Csv(format!("row {}: bad number {s:?}", i + 1))
                })?);
            }
            let full = Matrix3::new(
                v[0],
                v[1],
                T::zero(),
                v[1],
                v[2],
                T::zero(),
                T::zero(),
                T::zero(),
                v[3],
            );
            Ok((id, PropertyVector::from_full(full)))
        })
        .collect()
}
