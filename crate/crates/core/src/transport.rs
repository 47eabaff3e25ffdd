//! Backward Euler driver for the two reaction invariants.
//!
//! Each step assembles `K` at the evaluation time, builds the right-hand
//! side from the previous invariant and solves one bound QP per invariant.
//! Species are only recovered when a snapshot is recorded.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::assembly::{assemble_mass_kind, assemble_rhs, assemble_stiffness_with, system_from_parts, total_mass, FemError, MassKind};
use crate::chemistry::{product_from_invariants, ChemistryError, Stoichiometry};
use crate::flowfield::{
    branch, dispersion_from_velocity, velocity_on_branch, DispersionConfig, FlowBranch, FlowConfig, FlowError, Point,
    Tensor2x2,
};
use crate::mesh::{MeshError, StructuredTriMesh};
use crate::qp::{solve_bound_qp, QpError, QpOptions};
use crate::sparse::CsrMatrix;

/// Nodes closer than this (relative to `L`) to `x = L/2` are interface nodes.
const INTERFACE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Chemistry(#[from] ChemistryError),
    #[error("step {step}: QP for invariant {invariant} failed: {source}")]
    Qp { step: usize, invariant: char, source: QpError },
}

/// How the dispersion tensor is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DispersionModel {
    /// Velocity-dependent subsurface dispersion from the vortex flow.
    Subsurface,
    /// Constant `d I`, ignoring the flow.
    Isotropic(f64),
}

/// Segregated start: `A` on the left half, `B` on the right half.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub a_left: f64,
    pub b_right: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self { a_left: 1.0, b_right: 1.0 }
    }
}

/// Nodal source terms for the two invariants, constant in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub t_end: f64,
    pub flow: FlowConfig,
    pub dispersion: DispersionConfig,
    pub dispersion_model: DispersionModel,
    pub stoichiometry: Stoichiometry,
    pub initial: InitialCondition,
    pub qp: QpOptions,
    /// Added to `t_{n+1}` when evaluating the dispersion for step `n → n+1`.
    pub eval_offset: f64,
    pub mass: MassKind,
    /// Also record `c_F` and `c_G` in every snapshot.
    pub store_invariants: bool,
    /// Evaluate the flow at the point reflection `(L − x, L − y)`.
    pub mirror_flow: bool,
    pub sources: Option<Sources>,
}

impl SimulationConfig {
    /// Reaction-tank setup on an `n × n` grid with `dt = 1e-3`, `t_end = 1`.
    pub fn reaction_tank(n: usize, kappa_fl: f64) -> Self {
        Self {
            nx: n,
            ny: n,
            dt: 1e-3,
            t_end: 1.0,
            flow: FlowConfig::reaction_tank(kappa_fl),
            dispersion: DispersionConfig::default(),
            dispersion_model: DispersionModel::Subsurface,
            stoichiometry: Stoichiometry::default(),
            initial: InitialCondition::default(),
            qp: QpOptions::default(),
            eval_offset: 0.0,
            mass: MassKind::Consistent,
            store_invariants: false,
            mirror_flow: false,
            sources: None,
        }
    }

    pub fn domain_length(&self) -> f64 {
        self.flow.domain_length
    }

    /// Number of steps `t_end / dt`.
    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.flow.validate()?;
        self.dispersion.validate()?;
        self.stoichiometry.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let steps = (self.t_end / self.dt).round();
        if !(steps >= 1.0) || (steps * self.dt - self.t_end).abs() > 1e-12 * self.t_end.abs().max(1.0) {
            return Err(SimError::Config(format!(
                "t_end = {} is not a positive multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        if !self.eval_offset.is_finite() {
            return Err(SimError::Config("eval_offset must be finite".into()));
        }
        if let DispersionModel::Isotropic(d) = self.dispersion_model {
            if !(d > 0.0) {
                return Err(SimError::Config(format!("isotropic diffusivity must be positive, got {d}")));
            }
        }
        if !(self.qp.tol > 0.0) {
            return Err(SimError::Config(format!("qp_tol must be positive, got {}", self.qp.tol)));
        }
        for (name, v) in [("initial_a", self.initial.a_left), ("initial_b", self.initial.b_right)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let Some(src) = &self.sources {
            let n = self.nx * self.ny;
            if src.f.len() != n || src.g.len() != n {
                return Err(SimError::Config(format!("source fields must have {n} values")));
            }
        }
        Ok(())
    }

    fn flow_point(&self, p: Point) -> Point {
        if self.mirror_flow {
            let l = self.domain_length();
            [l - p[0], l - p[1]]
        } else {
            p
        }
    }

    /// Velocity at a node as stored in snapshots.
    pub fn node_velocity(&self, p: Point, branch: FlowBranch) -> [f64; 2] {
        let v = velocity_on_branch(self.flow_point(p), branch, &self.flow);
        if self.mirror_flow {
            [-v[0], -v[1]]
        } else {
            v
        }
    }

    pub fn dispersion_at(&self, p: Point, branch: FlowBranch) -> Tensor2x2 {
        match self.dispersion_model {
            DispersionModel::Subsurface => dispersion_from_velocity(self.node_velocity(p, branch), &self.dispersion),
            DispersionModel::Isotropic(d) => Tensor2x2::isotropic(d),
        }
    }
}

/// Snapshot channels in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Product,
    VelocityX,
    VelocityY,
    DispersionXX,
    DispersionXY,
    DispersionYY,
    InvariantF,
    InvariantG,
}

impl Channel {
    pub const MODEL_INPUTS: [Channel; 6] = [
        Channel::Product,
        Channel::VelocityX,
        Channel::VelocityY,
        Channel::DispersionXX,
        Channel::DispersionXY,
        Channel::DispersionYY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Product => "c_C",
            Channel::VelocityX => "v_x",
            Channel::VelocityY => "v_y",
            Channel::DispersionXX => "D_xx",
            Channel::DispersionXY => "D_xy",
            Channel::DispersionYY => "D_yy",
            Channel::InvariantF => "c_F",
            Channel::InvariantG => "c_G",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Self::MODEL_INPUTS
            .into_iter()
            .chain([Channel::InvariantF, Channel::InvariantG])
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }

    pub fn layout(with_invariants: bool) -> &'static [Channel] {
        const ALL: [Channel; 8] = [
            Channel::Product,
            Channel::VelocityX,
            Channel::VelocityY,
            Channel::DispersionXX,
            Channel::DispersionXY,
            Channel::DispersionYY,
            Channel::InvariantF,
            Channel::InvariantG,
        ];
        if with_invariants {
            &ALL
        } else {
            &ALL[..6]
        }
    }
}

/// Time-ordered stack of per-step fields at `t_1 .. t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    config: SimulationConfig,
    channels: Vec<Channel>,
    steps: usize,
    data: Vec<f64>,
}

impl SnapshotDataset {
    pub fn new(config: SimulationConfig) -> Self {
        let channels = Channel::layout(config.store_invariants).to_vec();
        Self { config, channels, steps: 0, data: Vec::new() }
    }

    /// Dataset from raw storage, `steps × channels × nodes` values.
    pub fn from_raw(config: SimulationConfig, steps: usize, data: Vec<f64>) -> Result<Self, SimError> {
        let ds = Self::new(config);
        let expected = steps * ds.channels.len() * ds.node_count();
        if data.len() != expected {
            return Err(SimError::Config(format!("dataset payload has {} values, expected {expected}", data.len())));
        }
        Ok(Self { steps, data, ..ds })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn nx(&self) -> usize {
        self.config.nx
    }

    pub fn ny(&self) -> usize {
        self.config.ny
    }

    pub fn node_count(&self) -> usize {
        self.config.nx * self.config.ny
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Recorded steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_complete(&self) -> bool {
        self.steps == self.config.step_count()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn time_of(&self, step: usize) -> f64 {
        step as f64 * self.config.dt
    }

    pub fn channel_index(&self, channel: Channel) -> Option<usize> {
        self.channels.iter().position(|c| *c == channel)
    }

    /// Field at 1-based `step` (time `step · dt`).
    pub fn frame(&self, step: usize, channel: Channel) -> &[f64] {
        assert!(step >= 1 && step <= self.steps, "step {step} outside 1..={}", self.steps);
        let c = self
            .channel_index(channel)
            .unwrap_or_else(|| panic!("channel {} not stored", channel.name()));
        let n = self.node_count();
        let start = ((step - 1) * self.channels.len() + c) * n;
        &self.data[start..start + n]
    }

    pub fn frame_mut(&mut self, step: usize, channel: Channel) -> &mut [f64] {
        assert!(step >= 1 && step <= self.steps);
        let c = self.channel_index(channel).expect("channel not stored");
        let n = self.node_count();
        let start = ((step - 1) * self.channels.len() + c) * n;
        &mut self.data[start..start + n]
    }

    /// Append one step; `fields` follow [`Self::channels`].
    pub fn push(&mut self, fields: &[Vec<f64>]) {
        assert_eq!(fields.len(), self.channels.len());
        for f in fields {
            assert_eq!(f.len(), self.node_count());
            self.data.extend_from_slice(f);
        }
        self.steps += 1;
    }

    /// Copy holding only the first `steps` snapshots.
    pub fn truncated(&self, steps: usize) -> SnapshotDataset {
        let steps = steps.min(self.steps);
        let len = steps * self.channels.len() * self.node_count();
        SnapshotDataset { config: self.config.clone(), channels: self.channels.clone(), steps, data: self.data[..len].to_vec() }
    }
}

/// Diagnostics of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// 1-based index of the step just completed.
    pub step: usize,
    pub time: f64,
    pub iterations: [usize; 2],
    pub active: [usize; 2],
    /// `1ᵀM c` of (c_F, c_G) before and after the step.
    pub mass_before: [f64; 2],
    pub mass_after: [f64; 2],
    pub elapsed: Duration,
}

impl StepReport {
    pub fn active_set_empty(&self) -> bool {
        self.active == [0, 0]
    }
}

/// Initial `(c_F, c_G)` for the segregated tank.
pub fn initial_invariants(cfg: &SimulationConfig, mesh: &StructuredTriMesh) -> (Vec<f64>, Vec<f64>) {
    // c_C = 0 at t = 0, so the invariants equal the reactants.
    let half = 0.5 * cfg.domain_length();
    let mut cf = Vec::with_capacity(mesh.node_count());
    let mut cg = Vec::with_capacity(mesh.node_count());
    for n in 0..mesh.node_count() {
        let x = mesh.node_coords(n)[0];
        let (a, b) = if (x - half).abs() <= INTERFACE_TOL * cfg.domain_length() {
            (0.5 * cfg.initial.a_left, 0.5 * cfg.initial.b_right)
        } else if x < half {
            (cfg.initial.a_left, 0.0)
        } else {
            (0.0, cfg.initial.b_right)
        };
        cf.push(a);
        cg.push(b);
    }
    (cf, cg)
}

/// Stateful time integrator.
pub struct Simulator {
    cfg: SimulationConfig,
    mesh: StructuredTriMesh,
    mass: CsrMatrix,
    systems: HashMap<Option<FlowBranch>, CsrMatrix>,
    cf: Vec<f64>,
    cg: Vec<f64>,
    zero_source: Vec<f64>,
    step: usize,
}

impl Simulator {
    pub fn new(cfg: SimulationConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mesh = StructuredTriMesh::new(cfg.nx, cfg.ny, cfg.domain_length())?;
        let mass = assemble_mass_kind(&mesh, cfg.mass);
        let (cf, cg) = initial_invariants(&cfg, &mesh);
        let zero_source = vec![0.0; mesh.node_count()];
        Ok(Self { cfg, mesh, mass, systems: HashMap::new(), cf, cg, zero_source, step: 0 })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn mesh(&self) -> &StructuredTriMesh {
        &self.mesh
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn invariants(&self) -> (&[f64], &[f64]) {
        (&self.cf, &self.cg)
    }

    /// Replace the current state, for restarts and tests.
    pub fn set_invariants(&mut self, cf: Vec<f64>, cg: Vec<f64>) -> Result<(), SimError> {
        self.mesh.check_field(&cf)?;
        self.mesh.check_field(&cg)?;
        self.cf = cf;
        self.cg = cg;
        Ok(())
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    /// Flow state keying the cached system matrix; `None` when `D` ignores the flow.
    fn system_key(&self, t_eval: f64) -> Option<FlowBranch> {
        match self.cfg.dispersion_model {
            DispersionModel::Subsurface => Some(branch(t_eval, &self.cfg.flow)),
            DispersionModel::Isotropic(_) => None,
        }
    }

    /// `K` for a step evaluated at `t_eval`. The dispersion depends on time
    /// only through the flow branch, so one matrix per branch is cached.
    pub fn system_matrix(&mut self, t_eval: f64) -> Result<&CsrMatrix, SimError> {
        let key = self.system_key(t_eval);
        if !self.systems.contains_key(&key) {
            let branch = key.unwrap_or(FlowBranch::First);
            let cfg = &self.cfg;
            let stiffness = assemble_stiffness_with(&self.mesh, |p| cfg.dispersion_at(p, branch))?;
            let k = system_from_parts(&self.mass, &stiffness, cfg.dt)?;
            self.systems.insert(key, k);
        }
        Ok(&self.systems[&key])
    }

    /// Advance both invariants by one step.
    pub fn step(&mut self) -> Result<StepReport, SimError> {
        let started = Instant::now();
        let next = self.step + 1;
        let time = next as f64 * self.cfg.dt;
        let t_eval = time + self.cfg.eval_offset;
        let dt = self.cfg.dt;
        let opts = self.cfg.qp;
        self.system_matrix(t_eval)?;
        let k = &self.systems[&self.system_key(t_eval)];

        let (src_f, src_g) = match &self.cfg.sources {
            Some(s) => (&s.f, &s.g),
            None => (&self.zero_source, &self.zero_source),
        };
        let mass_before = [total_mass(&self.mass, &self.cf), total_mass(&self.mass, &self.cg)];

        let b_f = assemble_rhs(&self.mesh, &self.mass, &self.cf, dt, src_f)?;
        let sol_f =
            solve_bound_qp(k, &b_f, &self.cf, opts).map_err(|source| SimError::Qp { step: next, invariant: 'F', source })?;
        let b_g = assemble_rhs(&self.mesh, &self.mass, &self.cg, dt, src_g)?;
        let sol_g =
            solve_bound_qp(k, &b_g, &self.cg, opts).map_err(|source| SimError::Qp { step: next, invariant: 'G', source })?;

        self.cf = sol_f.x;
        self.cg = sol_g.x;
        self.step = next;
        let mass_after = [total_mass(&self.mass, &self.cf), total_mass(&self.mass, &self.cg)];
        Ok(StepReport {
            step: next,
            time,
            iterations: [sol_f.iterations, sol_g.iterations],
            active: [sol_f.active, sol_g.active],
            mass_before,
            mass_after,
            elapsed: started.elapsed(),
        })
    }

    /// Snapshot fields for the current state in the dataset channel order.
    pub fn snapshot(&self) -> Result<Vec<Vec<f64>>, SimError> {
        let t = self.time();
        let br = branch(t, &self.cfg.flow);
        let n = self.mesh.node_count();
        let product = product_from_invariants(&self.cf, &self.cg, &self.cfg.stoichiometry)?;
        let mut vx = Vec::with_capacity(n);
        let mut vy = Vec::with_capacity(n);
        let mut dxx = Vec::with_capacity(n);
        let mut dxy = Vec::with_capacity(n);
        let mut dyy = Vec::with_capacity(n);
        for node in 0..n {
            let p = self.mesh.node_coords(node);
            let v = self.cfg.node_velocity(p, br);
            let d = self.cfg.dispersion_at(p, br);
            vx.push(v[0]);
            vy.push(v[1]);
            dxx.push(d.xx);
            dxy.push(d.xy);
            dyy.push(d.yy);
        }
        let mut fields = vec![product, vx, vy, dxx, dxy, dyy];
        if self.cfg.store_invariants {
            fields.push(self.cf.clone());
            fields.push(self.cg.clone());
        }
        Ok(fields)
    }
}

/// A run that stopped early; `partial` holds every completed step.
#[derive(Debug, Clone, Error)]
#[error("simulation stopped after {} of {} steps: {error}", partial.steps(), partial.config().step_count())]
pub struct RunFailure {
    pub partial: SnapshotDataset,
    pub error: SimError,
}

/// Run to `t_end`, calling `observer` after every step.
pub fn run_with(
    cfg: SimulationConfig,
    mut observer: impl FnMut(&StepReport),
) -> Result<SnapshotDataset, RunFailure> {
    let mut dataset = SnapshotDataset::new(cfg.clone());
    let mut sim = match Simulator::new(cfg) {
        Ok(sim) => sim,
        Err(error) => return Err(RunFailure { partial: dataset, error }),
    };
    let total = sim.config().step_count();
    for _ in 0..total {
        let report = match sim.step() {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { partial: dataset, error }),
        };
        match sim.snapshot() {
            Ok(fields) => dataset.push(&fields),
            Err(error) => return Err(RunFailure { partial: dataset, error }),
        }
        observer(&report);
    }
    Ok(dataset)
}

pub fn run(cfg: SimulationConfig) -> Result<SnapshotDataset, RunFailure> {
    run_with(cfg, |_| {})
}
