//! Structured triangulation of the square domain and nodal fields on it.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least 2 nodes per axis, got {nx} x {ny}")]
    TooFewNodes { nx: usize, ny: usize },
    #[error("domain length must be positive, got {0}")]
    BadLength(f64),
    #[error("field has {got} values but the mesh has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
}

/// How each grid cell is cut into two triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalSplit {
    /// Every cell along its lower-left to upper-right diagonal.
    #[default]
    Uniform,
    /// Alternate the diagonal direction in a checkerboard pattern.
    Alternating,
}

/// Uniform triangle mesh of `[0, L]²`, nodes numbered `iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTriMesh {
    nx: usize,
    ny: usize,
    length: f64,
    elements: Vec<[usize; 3]>,
}

impl StructuredTriMesh {
    pub fn new(nx: usize, ny: usize, length: f64) -> Result<Self, MeshError> {
        Self::with_split(nx, ny, length, DiagonalSplit::Uniform)
    }

    pub fn with_split(nx: usize, ny: usize, length: f64, split: DiagonalSplit) -> Result<Self, MeshError> {
        if nx < 2 || ny < 2 {
            return Err(MeshError::TooFewNodes { nx, ny });
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(MeshError::BadLength(length));
        }
        let mut elements = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for iy in 0..ny - 1 {
            for ix in 0..nx - 1 {
                let n00 = iy * nx + ix;
                let n10 = n00 + 1;
                let n01 = n00 + nx;
                let n11 = n01 + 1;
                let rising = match split {
                    DiagonalSplit::Uniform => true,
                    DiagonalSplit::Alternating => (ix + iy) % 2 == 0,
                };
                if rising {
                    elements.push([n00, n10, n11]);
                    elements.push([n00, n11, n01]);
                } else {
                    elements.push([n00, n10, n01]);
                    elements.push([n10, n11, n01]);
                }
            }
        }
        Ok(Self { nx, ny, length, elements })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn spacing(&self) -> [f64; 2] {
        [self.length / (self.nx - 1) as f64, self.length / (self.ny - 1) as f64]
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn node_grid_position(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let (ix, iy) = self.node_grid_position(node);
        let [hx, hy] = self.spacing();
        // Pin the far edge exactly to L.
        let x = if ix + 1 == self.nx { self.length } else { ix as f64 * hx };
        let y = if iy + 1 == self.ny { self.length } else { iy as f64 * hy };
        [x, y]
    }

    pub fn element_coords(&self, element: usize) -> [[f64; 2]; 3] {
        let e = self.elements[element];
        [self.node_coords(e[0]), self.node_coords(e[1]), self.node_coords(e[2])]
    }

    /// Signed area (positive for counterclockwise node order).
    pub fn element_area(&self, element: usize) -> f64 {
        signed_area(&self.element_coords(element))
    }

    pub fn element_centroid(&self, element: usize) -> [f64; 2] {
        let c = self.element_coords(element);
        [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0]
    }

    /// Node index of the point reflection `(L - x, L - y)`.
    pub fn reflected_node(&self, node: usize) -> usize {
        let (ix, iy) = self.node_grid_position(node);
        self.node_index(self.nx - 1 - ix, self.ny - 1 - iy)
    }

    pub fn field_from_fn(&self, f: impl Fn([f64; 2]) -> f64) -> ScalarField {
        ScalarField::new((0..self.node_count()).map(|n| f(self.node_coords(n))).collect())
    }

    pub fn check_field(&self, values: &[f64]) -> Result<(), MeshError> {
        if values.len() == self.node_count() {
            Ok(())
        } else {
            Err(MeshError::LengthMismatch { expected: self.node_count(), got: values.len() })
        }
    }
}

pub(crate) fn signed_area(c: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]))
}

/// Nodal values of one quantity, in mesh node order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn zeros(len: usize) -> Self {
        Self::constant(len, 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl From<Vec<f64>> for ScalarField {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}
