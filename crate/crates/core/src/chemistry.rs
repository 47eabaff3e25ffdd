//! Reaction invariants for `n_A A + n_B B → n_C C` under instantaneous reaction.

use thiserror::Error;

use crate::mesh::ScalarField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemistryError {
    #[error("stoichiometric coefficient `{name}` must be positive, got {value}")]
    BadCoefficient { name: &'static str, value: f64 },
    #[error("negative concentration {value:e} in `{field}` at node {node}")]
    Negative { field: &'static str, node: usize, value: f64 },
    #[error("field lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stoichiometry {
    pub n_a: f64,
    pub n_b: f64,
    pub n_c: f64,
}

impl Stoichiometry {
    pub fn new(n_a: f64, n_b: f64, n_c: f64) -> Result<Self, ChemistryError> {
        let st = Self { n_a, n_b, n_c };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<(), ChemistryError> {
        for (name, value) in [("n_a", self.n_a), ("n_b", self.n_b), ("n_c", self.n_c)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ChemistryError::BadCoefficient { name, value });
            }
        }
        Ok(())
    }
}

impl Default for Stoichiometry {
    fn default() -> Self {
        Self { n_a: 1.0, n_b: 1.0, n_c: 1.0 }
    }
}

fn non_negative(field: &'static str, values: &[f64]) -> Result<(), ChemistryError> {
    match values.iter().position(|v| !(*v >= 0.0)) {
        Some(node) => Err(ChemistryError::Negative { field, node, value: values[node] }),
        None => Ok(()),
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), ChemistryError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(ChemistryError::LengthMismatch(a.len(), b.len()))
    }
}

/// Species concentrations at one set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    pub a: ScalarField,
    pub b: ScalarField,
    pub c: ScalarField,
}

pub fn invariants_from_species(
    ca: &ScalarField,
    cb: &ScalarField,
    cc: &ScalarField,
    st: &Stoichiometry,
) -> Result<(ScalarField, ScalarField), ChemistryError> {
    same_len(ca.values(), cb.values())?;
    same_len(ca.values(), cc.values())?;
    non_negative("c_a", ca.values())?;
    non_negative("c_b", cb.values())?;
    non_negative("c_c", cc.values())?;
    let ra = st.n_a / st.n_c;
    let rb = st.n_b / st.n_c;
    let cf = ca.values().iter().zip(cc.values()).map(|(a, c)| a + ra * c).collect::<Vec<_>>();
    let cg = cb.values().iter().zip(cc.values()).map(|(b, c)| b + rb * c).collect::<Vec<_>>();
    Ok((cf.into(), cg.into()))
}

/// Pointwise fast-reaction recovery; `c_A · c_B = 0` holds exactly.
pub fn species_from_invariants(cf: &[f64], cg: &[f64], st: &Stoichiometry) -> Result<Species, ChemistryError> {
    same_len(cf, cg)?;
    non_negative("c_f", cf)?;
    non_negative("c_g", cg)?;
    let ab = st.n_a / st.n_b;
    let ba = st.n_b / st.n_a;
    let ca_ratio = st.n_c / st.n_a;
    let n = cf.len();
    let (mut a, mut b, mut c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (&f, &g) in cf.iter().zip(cg) {
        let excess = f - ab * g;
        let deficit = -f + ab * g;
        let ca = excess.max(0.0);
        a.push(ca);
        b.push(ba * deficit.max(0.0));
        c.push(ca_ratio * (f - ca));
    }
    Ok(Species { a: a.into(), b: b.into(), c: c.into() })
}

/// Product concentration only.
pub fn product_from_invariants(cf: &[f64], cg: &[f64], st: &Stoichiometry) -> Result<Vec<f64>, ChemistryError> {
    Ok(species_from_invariants(cf, cg, st)?.c.into_values())
}
