//! Linear-triangle assembly of the backward Euler invariant equations.
//!
//! Each step solves `K c' = b` (subject to `c' ≥ 0`) with
//! `K = M / dt + S` and `b = M c / dt + M f`. Zero-flux boundaries add
//! nothing to `b`.

use thiserror::Error;

use crate::flowfield::{dispersion_tensor, DispersionConfig, FlowConfig, Tensor2x2};
use crate::mesh::{MeshError, StructuredTriMesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("dispersion tensor is not positive definite in element {element}: {tensor:?}")]
    IndefiniteDispersion { element: usize, tensor: Tensor2x2 },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Mass matrix flavour used in both `K` and the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassKind {
    #[default]
    Consistent,
    /// Row-sum lumped (diagonal) mass.
    Lumped,
}

/// Sparsity pattern of the node-to-node coupling of `mesh`.
pub fn node_pattern(mesh: &StructuredTriMesh) -> CsrMatrix {
    let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(7); mesh.node_count()];
    for e in mesh.elements() {
        for &a in e {
            rows[a].extend_from_slice(e);
        }
    }
    CsrMatrix::from_pattern(mesh.node_count(), rows)
}

fn scatter(target: &mut CsrMatrix, nodes: &[usize; 3], local: &[[f64; 3]; 3]) {
    for (a, &na) in nodes.iter().enumerate() {
        for (b, &nb) in nodes.iter().enumerate() {
            target.add_to(na, nb, local[a][b]);
        }
    }
}

pub fn assemble_mass(mesh: &StructuredTriMesh) -> CsrMatrix {
    let mut m = node_pattern(mesh);
    for (e, nodes) in mesh.elements().iter().enumerate() {
        let w = mesh.element_area(e) / 12.0;
        let local = [[2.0 * w, w, w], [w, 2.0 * w, w], [w, w, 2.0 * w]];
        scatter(&mut m, nodes, &local);
    }
    m
}

/// Diagonal mass with each node carrying a third of its adjacent element areas.
pub fn assemble_lumped_mass(mesh: &StructuredTriMesh) -> CsrMatrix {
    let mut m = node_pattern(mesh);
    for (e, nodes) in mesh.elements().iter().enumerate() {
        let w = mesh.element_area(e) / 3.0;
        for &n in nodes {
            m.add_to(n, n, w);
        }
    }
    m
}

pub fn assemble_mass_kind(mesh: &StructuredTriMesh, kind: MassKind) -> CsrMatrix {
    match kind {
        MassKind::Consistent => assemble_mass(mesh),
        MassKind::Lumped => assemble_lumped_mass(mesh),
    }
}

/// Element stiffness `A ∇φ_a · D ∇φ_b` for a linear triangle.
pub fn element_stiffness(coords: &[[f64; 2]; 3], d: &Tensor2x2) -> [[f64; 3]; 3] {
    let area = crate::mesh::signed_area(coords);
    let inv = 1.0 / (2.0 * area);
    let mut grads = [[0.0; 2]; 3];
    for a in 0..3 {
        let j = coords[(a + 1) % 3];
        let k = coords[(a + 2) % 3];
        grads[a] = [(j[1] - k[1]) * inv, (k[0] - j[0]) * inv];
    }
    let mut local = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let v = area * d.bilinear(grads[a], grads[b]);
            local[a][b] = v;
            local[b][a] = v;
        }
    }
    local
}

/// Stiffness with `D` supplied per element centroid.
pub fn assemble_stiffness_with(
    mesh: &StructuredTriMesh,
    mut dispersion: impl FnMut([f64; 2]) -> Tensor2x2,
) -> Result<CsrMatrix, FemError> {
    let mut s = node_pattern(mesh);
    for (e, nodes) in mesh.elements().iter().enumerate() {
        let d = dispersion(mesh.element_centroid(e));
        if !(d.xx > 0.0 && d.xx * d.yy - d.xy * d.xy > 0.0) {
            return Err(FemError::IndefiniteDispersion { element: e, tensor: d });
        }
        scatter(&mut s, nodes, &element_stiffness(&mesh.element_coords(e), &d));
    }
    Ok(s)
}

/// Stiffness with the flow-induced dispersion evaluated at each element
/// centroid at time `t_eval`.
pub fn assemble_stiffness(
    mesh: &StructuredTriMesh,
    t_eval: f64,
    fcfg: &FlowConfig,
    dcfg: &DispersionConfig,
) -> Result<CsrMatrix, FemError> {
    assemble_stiffness_with(mesh, |p| dispersion_tensor(p, t_eval, fcfg, dcfg))
}

/// `K = M / dt + S` from already assembled parts.
pub fn system_from_parts(mass: &CsrMatrix, stiffness: &CsrMatrix, dt: f64) -> Result<CsrMatrix, FemError> {
    if !(dt > 0.0) {
        return Err(FemError::BadTimeStep(dt));
    }
    Ok(mass.linear_combination(1.0 / dt, stiffness, 1.0))
}

pub fn assemble_system(
    mesh: &StructuredTriMesh,
    dt: f64,
    t_eval: f64,
    fcfg: &FlowConfig,
    dcfg: &DispersionConfig,
) -> Result<CsrMatrix, FemError> {
    let mass = assemble_mass(mesh);
    let stiffness = assemble_stiffness(mesh, t_eval, fcfg, dcfg)?;
    system_from_parts(&mass, &stiffness, dt)
}

/// `b = M c_prev / dt + M f`.
pub fn assemble_rhs(
    mesh: &StructuredTriMesh,
    mass: &CsrMatrix,
    c_prev: &[f64],
    dt: f64,
    source: &[f64],
) -> Result<Vec<f64>, FemError> {
    mesh.check_field(c_prev)?;
    mesh.check_field(source)?;
    if !(dt > 0.0) {
        return Err(FemError::BadTimeStep(dt));
    }
    let mut b = mass.mul_vec(c_prev);
    let inv_dt = 1.0 / dt;
    b.iter_mut().for_each(|v| *v *= inv_dt);
    if source.iter().any(|&s| s != 0.0) {
        let ms = mass.mul_vec(source);
        b.iter_mut().zip(ms).for_each(|(v, m)| *v += m);
    }
    Ok(b)
}

/// `1ᵀ M c`, the discrete total amount of a nodal field.
pub fn total_mass(mass: &CsrMatrix, c: &[f64]) -> f64 {
    mass.mul_vec(c).iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> StructuredTriMesh {
        StructuredTriMesh::new(2, 2, 1.0).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mass_entries_sum_to_area() {
        for (nx, ny) in [(2, 2), (5, 3), (9, 9)] {
            let m = assemble_mass(&StructuredTriMesh::new(nx, ny, 1.0).unwrap());
            let total: f64 = m.values().iter().sum();
            assert!(close(total, 1.0, 1e-13));
        }
    }

    #[test]
    fn mass_of_two_triangle_square() {
        // Nodes 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1); triangles (0,1,3) and (0,3,2),
        // each of area 1/2, so the element kernel is (1/24)[[2,1,1],[1,2,1],[1,1,2]].
        let w = 1.0 / 24.0;
        let expected = [
            [4.0 * w, w, w, 2.0 * w],
            [w, 2.0 * w, 0.0, w],
            [w, 0.0, 2.0 * w, w],
            [2.0 * w, w, w, 4.0 * w],
        ];
        let m = assemble_mass(&unit_square()).to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert!(close(m[i][j], expected[i][j], 1e-16), "({i},{j})");
            }
        }
    }

    #[test]
    fn mass_row_sums_are_nodal_areas() {
        let mesh = StructuredTriMesh::new(5, 4, 1.0).unwrap();
        let m = assemble_mass(&mesh);
        let mut touching = vec![0.0; mesh.node_count()];
        for (e, nodes) in mesh.elements().iter().enumerate() {
            for &n in nodes {
                touching[n] += mesh.element_area(e);
            }
        }
        let row_sums = m.mul_vec(&vec![1.0; mesh.node_count()]);
        for (rs, area) in row_sums.iter().zip(&touching) {
            assert!(close(*rs, area / 3.0, 1e-15));
        }
        let lumped = assemble_lumped_mass(&mesh);
        for (i, area) in touching.iter().enumerate() {
            assert!(close(lumped.get(i, i), area / 3.0, 1e-15));
        }
    }

    #[test]
    fn stiffness_of_two_triangle_square_with_identity() {
        // Triangle (0,1,3): grads (-1,0), (1,-1), (0,1); triangle (0,3,2):
        // grads (0,-1), (1,0), (-1,1); both of area 1/2.
        let expected = [
            [1.0, -0.5, -0.5, 0.0],
            [-0.5, 1.0, 0.0, -0.5],
            [-0.5, 0.0, 1.0, -0.5],
            [0.0, -0.5, -0.5, 1.0],
        ];
        let s = assemble_stiffness_with(&unit_square(), |_| Tensor2x2::isotropic(1.0)).unwrap().to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert!(close(s[i][j], expected[i][j], 1e-15), "({i},{j}) {}", s[i][j]);
            }
        }
    }

    #[test]
    fn system_hand_value() {
        let mesh = unit_square();
        let mass = assemble_mass(&mesh);
        let stiff = assemble_stiffness_with(&mesh, |_| Tensor2x2::isotropic(1.0)).unwrap();
        let k = system_from_parts(&mass, &stiff, 1.0).unwrap();
        let w = 1.0 / 24.0;
        assert!(close(k.get(0, 0), 1.0 + 4.0 * w, 1e-15));
        assert!(close(k.get(0, 1), -0.5 + w, 1e-15));
        assert!(close(k.get(0, 3), 2.0 * w, 1e-15));
        assert!(close(k.get(1, 2), 0.0, 1e-15));
    }

    #[test]
    fn constants_in_stiffness_kernel() {
        let mesh = StructuredTriMesh::new(9, 7, 1.0).unwrap();
        let fcfg = FlowConfig::reaction_tank(3.0);
        let s = assemble_stiffness(&mesh, 0.0, &fcfg, &DispersionConfig::default()).unwrap();
        let y = s.mul_vec(&vec![1.0; mesh.node_count()]);
        assert!(crate::sparse::norm_inf(&y) <= 1e-12);
        assert_eq!(s.asymmetry(), 0.0);
    }

    #[test]
    fn stiffness_is_positive_semidefinite() {
        for kfl in [2.0, 5.0] {
            let mesh = StructuredTriMesh::new(6, 6, 1.0).unwrap();
            let s = assemble_stiffness(&mesh, 0.0, &FlowConfig::reaction_tank(kfl), &DispersionConfig::default())
                .unwrap()
                .to_dense();
            let n = s.len();
            let dense = DMatrix::from_fn(n, n, |i, j| s[i][j]);
            let min = dense.symmetric_eigen().eigenvalues.min();
            assert!(min >= -1e-12, "min eigenvalue {min}");
        }
    }

    #[test]
    fn stiffness_is_linear_in_dispersion() {
        let mesh = StructuredTriMesh::new(7, 7, 1.0).unwrap();
        let f = FlowConfig::reaction_tank(2.0);
        let d = DispersionConfig::default();
        let s1 = assemble_stiffness_with(&mesh, |p| dispersion_tensor(p, 0.0, &f, &d)).unwrap();
        let s2 = assemble_stiffness_with(&mesh, |p| dispersion_tensor(p, 0.0, &f, &d).scaled(2.0)).unwrap();
        for (a, b) in s1.values().iter().zip(s2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn large_time_step_leaves_stiffness() {
        let mesh = StructuredTriMesh::new(5, 5, 1.0).unwrap();
        let f = FlowConfig::default();
        let d = DispersionConfig::default();
        let k = assemble_system(&mesh, 1e12, 0.0, &f, &d).unwrap();
        let s = assemble_stiffness(&mesh, 0.0, &f, &d).unwrap();
        let scale = crate::sparse::norm_inf(s.values());
        for (a, b) in k.values().iter().zip(s.values()) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn system_is_linear_combination() {
        let mesh = StructuredTriMesh::new(4, 5, 1.0).unwrap();
        let f = FlowConfig::default();
        let d = DispersionConfig::default();
        let dt = 1e-3;
        let k = assemble_system(&mesh, dt, 0.0, &f, &d).unwrap();
        let m = assemble_mass(&mesh);
        let s = assemble_stiffness(&mesh, 0.0, &f, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..mesh.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let kx = k.mul_vec(&x);
            let mx = m.mul_vec(&x);
            let sx = s.mul_vec(&x);
            for i in 0..x.len() {
                let want = mx[i] / dt + sx[i];
                assert!((kx[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
        assert!(system_from_parts(&m, &s, 0.0).is_err());
    }

    #[test]
    fn rhs_cases() {
        let mesh = StructuredTriMesh::new(6, 4, 1.0).unwrap();
        let n = mesh.node_count();
        let m = assemble_mass(&mesh);
        let zero = vec![0.0; n];
        assert_eq!(assemble_rhs(&mesh, &m, &zero, 0.1, &zero).unwrap(), zero);

        let b = assemble_rhs(&mesh, &m, &vec![1.0; n], 0.1, &zero).unwrap();
        let lumped = assemble_lumped_mass(&mesh);
        for i in 0..n {
            assert!((b[i] - lumped.get(i, i) / 0.1).abs() < 1e-13);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let b = assemble_rhs(&mesh, &m, &c, 0.5, &f).unwrap();
        let dense = m.to_dense();
        for i in 0..n {
            let want: f64 = (0..n).map(|j| dense[i][j] * (c[j] / 0.5 + f[j])).sum();
            assert!((b[i] - want).abs() < 1e-13);
        }

        assert!(matches!(
            assemble_rhs(&mesh, &m, &c[1..], 0.5, &f),
            Err(FemError::Mesh(MeshError::LengthMismatch { .. }))
        ));
    }

    #[test]
    fn indefinite_dispersion_is_rejected() {
        let mesh = unit_square();
        let err = assemble_stiffness_with(&mesh, |_| Tensor2x2 { xx: 1.0, xy: 2.0, yy: 1.0 }).unwrap_err();
        assert!(matches!(err, FemError::IndefiniteDispersion { element: 0, .. }));
    }
}
