//! Linear Q-function machinery: feature maps and the approximated TD update.
//!
//! All three schemes share one layout: the feature vector is partitioned
//! into `6^m` blocks, one per joint action in canonical order, and only the
//! chosen action's block is populated. The block content depends solely on
//! the joint state, so per-state activations are computed once and shifted
//! into the action's block.
//!
//! * FSR: one-hot indicators per coordinate value per agent, block size
//!   `D = m * (X + Y + Z)`, exactly `3m` ones.
//! * RBF: Gaussian-bell activations around `L` centers in the flattened
//!   joint-coordinate space, block size `L`.
//! * Tabular: a single indicator at the joint-state index, block size
//!   `(X * Y * Z)^m`; exact representation, used as the learning oracle.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::env::{num_joint_actions, GridSpec, JointAction, JointState};
use crate::error::CoverageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Fsr,
    Rbf,
    Tabular,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Fsr => "fsr",
            SchemeKind::Rbf => "rbf",
            SchemeKind::Tabular => "tabular",
        }
    }
}

/// Pre-placed Gaussian basis: centers in the flattened joint-coordinate
/// space `(x_1, y_1, z_1, ..., x_m, y_m, z_m)` with per-center radii.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis {
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScheme {
    kind: SchemeKind,
    dim_x: usize,
    dim_y: usize,
    dim_z: usize,
    m: usize,
    rbf: Option<RbfBasis>,
}

impl FeatureScheme {
    pub fn fsr(grid: &GridSpec, m: usize) -> Self {
        Self { kind: SchemeKind::Fsr, dim_x: grid.dim_x, dim_y: grid.dim_y, dim_z: grid.dim_z, m, rbf: None }
    }

    pub fn tabular(grid: &GridSpec, m: usize) -> Self {
        Self { kind: SchemeKind::Tabular, dim_x: grid.dim_x, dim_y: grid.dim_y, dim_z: grid.dim_z, m, rbf: None }
    }

    pub fn rbf(grid: &GridSpec, m: usize, basis: RbfBasis) -> Result<Self, CoverageError> {
        if basis.centers.is_empty() || basis.centers.len() != basis.radii.len() {
            return Err(CoverageError::InvalidConfig(
                "RBF basis needs L >= 1 centers with matching radii".into(),
            ));
        }
        for c in &basis.centers {
            if c.len() != 3 * m {
                return Err(CoverageError::InvalidConfig(format!(
                    "RBF center has dimension {}, expected {}",
                    c.len(),
                    3 * m
                )));
            }
        }
        if basis.radii.iter().any(|&r| !(r > 0.0)) {
            return Err(CoverageError::InvalidConfig("RBF radii must be positive".into()));
        }
        Ok(Self { kind: SchemeKind::Rbf, dim_x: grid.dim_x, dim_y: grid.dim_y, dim_z: grid.dim_z, m, rbf: Some(basis) })
    }

    /// Default RBF basis: for one agent, 8 centers at the corners of the
    /// state bounding box; for teams, 8 centers drawn once from the seeded
    /// generator. Radii are half the mean nearest-center distance.
    pub fn rbf_default(grid: &GridSpec, m: usize, rng: &mut impl Rng) -> Result<Self, CoverageError> {
        const L: usize = 8;
        let centers: Vec<Vec<f64>> = if m == 1 {
            let xs = [0.0, (grid.dim_x - 1) as f64];
            let ys = [0.0, (grid.dim_y - 1) as f64];
            let zs = [1.0, grid.dim_z as f64];
            let mut corners = Vec::with_capacity(L);
            for &x in &xs {
                for &y in &ys {
                    for &z in &zs {
                        corners.push(vec![x, y, z]);
                    }
                }
            }
            corners
        } else {
            (0..L)
                .map(|_| {
                    (0..m)
                        .flat_map(|_| {
                            [
                                rng.random_range(0.0..grid.dim_x as f64),
                                rng.random_range(0.0..grid.dim_y as f64),
                                rng.random_range(1.0..=grid.dim_z as f64),
                            ]
                        })
                        .collect()
                })
                .collect()
        };
        let radii = nearest_neighbor_radii(&centers);
        Self::rbf(grid, m, RbfBasis { centers, radii })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn num_agents(&self) -> usize {
        self.m
    }

    pub fn grid_dims(&self) -> (usize, usize, usize) {
        (self.dim_x, self.dim_y, self.dim_z)
    }

    pub fn rbf_basis(&self) -> Option<&RbfBasis> {
        self.rbf.as_ref()
    }

    /// Sum of per-agent coordinate dimensions, `m * (X + Y + Z)`.
    pub fn coord_dim(&self) -> usize {
        self.m * (self.dim_x + self.dim_y + self.dim_z)
    }

    /// Size of one joint-action block.
    pub fn block_len(&self) -> usize {
        match self.kind {
            SchemeKind::Fsr => self.coord_dim(),
            SchemeKind::Rbf => self.rbf.as_ref().unwrap().centers.len(),
            SchemeKind::Tabular => (self.dim_x * self.dim_y * self.dim_z).pow(self.m as u32),
        }
    }

    /// Total feature-vector length: block size times `6^m`.
    pub fn len(&self) -> usize {
        self.block_len() * num_joint_actions(self.m)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of a single agent state within `X * Y * Z`.
    fn agent_state_index(&self, s: crate::env::AgentState) -> usize {
        (s.x * self.dim_y + s.y) * self.dim_z + (s.z - 1)
    }

    /// Agent-0-major joint-state index within `(X * Y * Z)^m`.
    pub fn joint_state_index(&self, joint: &JointState) -> usize {
        let per = self.dim_x * self.dim_y * self.dim_z;
        joint.0.iter().fold(0, |acc, &s| acc * per + self.agent_state_index(s))
    }

    /// In-block activations for a joint state (independent of the action).
    pub fn state_activations(&self, joint: &JointState) -> SparseFeatures {
        let mut entries = Vec::new();
        match self.kind {
            SchemeKind::Fsr => {
                let per = self.dim_x + self.dim_y + self.dim_z;
                for (i, s) in joint.0.iter().enumerate() {
                    let base = i * per;
                    entries.push((base + s.x, 1.0));
                    entries.push((base + self.dim_x + s.y, 1.0));
                    entries.push((base + self.dim_x + self.dim_y + (s.z - 1), 1.0));
                }
            }
            SchemeKind::Rbf => {
                let basis = self.rbf.as_ref().unwrap();
                let coords: Vec<f64> = joint
                    .0
                    .iter()
                    .flat_map(|s| [s.x as f64, s.y as f64, s.z as f64])
                    .collect();
                for (l, (c, &mu)) in basis.centers.iter().zip(&basis.radii).enumerate() {
                    let d2: f64 = coords.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    entries.push((l, (-d2 / (2.0 * mu * mu)).exp()));
                }
            }
            SchemeKind::Tabular => {
                entries.push((self.joint_state_index(joint), 1.0));
            }
        }
        SparseFeatures { entries }
    }

    /// Full sparse feature vector for a state-action pair.
    pub fn features(&self, joint: &JointState, action: &JointAction) -> SparseFeatures {
        let offset = action.canonical_index() * self.block_len();
        let mut phi = self.state_activations(joint);
        for (idx, _) in &mut phi.entries {
            *idx += offset;
        }
        phi
    }
}

fn nearest_neighbor_radii(centers: &[Vec<f64>]) -> Vec<f64> {
    let mut nearest = Vec::with_capacity(centers.len());
    for (i, a) in centers.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in centers.iter().enumerate() {
            if i != j {
                let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                best = best.min(d2.sqrt());
            }
        }
        nearest.push(best);
    }
    let mean = nearest.iter().sum::<f64>() / nearest.len() as f64;
    let radius = (mean / 2.0).max(1e-6);
    vec![radius; centers.len()]
}

/// FSR feature map. Fails on a non-FSR scheme.
pub fn fsr_features(
    joint: &JointState,
    action: &JointAction,
    scheme: &FeatureScheme,
) -> Result<SparseFeatures, CoverageError> {
    expect_kind(scheme, SchemeKind::Fsr)?;
    Ok(scheme.features(joint, action))
}

/// RBF feature map. Fails on a non-RBF scheme.
pub fn rbf_features(
    joint: &JointState,
    action: &JointAction,
    scheme: &FeatureScheme,
) -> Result<SparseFeatures, CoverageError> {
    expect_kind(scheme, SchemeKind::Rbf)?;
    Ok(scheme.features(joint, action))
}

/// Exact one-hot feature map. Fails on a non-tabular scheme.
pub fn tabular_features(
    joint: &JointState,
    action: &JointAction,
    scheme: &FeatureScheme,
) -> Result<SparseFeatures, CoverageError> {
    expect_kind(scheme, SchemeKind::Tabular)?;
    Ok(scheme.features(joint, action))
}

fn expect_kind(scheme: &FeatureScheme, want: SchemeKind) -> Result<(), CoverageError> {
    if scheme.kind() != want {
        return Err(CoverageError::SchemeMismatch {
            expected: want.name(),
            got: scheme.kind().name(),
        });
    }
    Ok(())
}

/// Sparse feature vector: `(index, value)` pairs sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    entries: Vec<(usize, f64)>,
}

impl SparseFeatures {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|&(i, _)| i).max()
    }
}

/// Per-agent weight vector theta.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
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

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

/// `Q_hat = phi' theta`, a sparse dot product.
pub fn q_value(theta: &ParamVector, phi: &SparseFeatures) -> Result<f64, CoverageError> {
    if let Some(max) = phi.max_index() {
        if max >= theta.len() {
            return Err(CoverageError::LengthMismatch(format!(
                "feature index {max} out of range for theta of length {}",
                theta.len()
            )));
        }
    }
    Ok(phi.entries.iter().map(|&(i, v)| theta.values[i] * v).sum())
}

/// Best admissible joint action and its value under `theta`. Ties resolve to
/// the smallest canonical index.
pub fn best_joint_q(
    theta: &ParamVector,
    joint: &JointState,
    scheme: &FeatureScheme,
    admissible: &crate::ce::AdmissibleSet,
) -> Result<(JointAction, f64), CoverageError> {
    if admissible.is_empty() {
        return Err(CoverageError::EmptyAdmissibleSet);
    }
    let block = scheme.block_len();
    let state_phi = scheme.state_activations(joint);
    let mut best: Option<(usize, f64)> = None;
    for idx in admissible.indices() {
        let offset = idx * block;
        let mut q = 0.0;
        for &(i, v) in state_phi.entries() {
            let full = offset + i;
            if full >= theta.len() {
                return Err(CoverageError::LengthMismatch(format!(
                    "feature index {full} out of range for theta of length {}",
                    theta.len()
                )));
            }
            q += theta.values[full] * v;
        }
        match best {
            None => best = Some((idx, q)),
            Some((_, bq)) if q > bq => best = Some((idx, q)),
            _ => {}
        }
    }
    let (idx, q) = best.unwrap();
    Ok((JointAction::from_canonical_index(idx, scheme.num_agents()), q))
}

/// One gradient step of the approximated Q update:
/// `theta += alpha * (reward + gamma * max_next_q - phi' theta) * phi`.
/// Only the support of `phi_now` changes.
pub fn td_update(
    theta: &mut ParamVector,
    phi_now: &SparseFeatures,
    reward: f64,
    max_next_q: f64,
    alpha: f64,
    gamma: f64,
) -> Result<(), CoverageError> {
    let current = q_value(theta, phi_now)?;
    let td_error = reward + gamma * max_next_q - current;
    let step = alpha * td_error;
    for &(i, v) in phi_now.entries() {
        let updated = theta.values[i] + step * v;
        if !updated.is_finite() {
            return Err(CoverageError::Divergence(i));
        }
        theta.values[i] = updated;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
// Little-endian binary layout:
//   magic   4 bytes  "CMQ1"
//   variant u8       0 = FSR, 1 = RBF, 2 = Tabular
//   m       u8
//   dims    3 x u16  (X, Y, Z)
//   L       u32      RBF center count, 0 otherwise
//   [RBF]   L x 3m f64 centers, then L f64 radii
//   agents  u8
//   per agent: u64 length, then that many f64 values
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"CMQ1";

/// Write a parameter snapshot for all agents.
pub fn save_checkpoint(
    path: &Path,
    scheme: &FeatureScheme,
    thetas: &[ParamVector],
) -> Result<(), CoverageError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(match scheme.kind() {
        SchemeKind::Fsr => 0,
        SchemeKind::Rbf => 1,
        SchemeKind::Tabular => 2,
    });
    buf.push(scheme.m as u8);
    for d in [scheme.dim_x, scheme.dim_y, scheme.dim_z] {
        buf.extend_from_slice(&(d as u16).to_le_bytes());
    }
    let basis_len = scheme.rbf.as_ref().map_or(0, |b| b.centers.len());
    buf.extend_from_slice(&(basis_len as u32).to_le_bytes());
    if let Some(basis) = &scheme.rbf {
        for c in &basis.centers {
            for v in c {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for r in &basis.radii {
            buf.extend_from_slice(&r.to_le_bytes());
        }
    }
    buf.push(thetas.len() as u8);
    for theta in thetas {
        buf.extend_from_slice(&(theta.len() as u64).to_le_bytes());
        for v in &theta.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a parameter snapshot; returns the reconstructed scheme and per-agent
/// vectors. The grid is needed to rebuild the scheme handle.
pub fn load_checkpoint(path: &Path) -> Result<(FeatureScheme, Vec<ParamVector>), CoverageError> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8], CoverageError> {
        if *at + n > data.len() {
            return Err(CoverageError::Checkpoint("truncated file".into()));
        }
        let s = &data[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 4)? != CHECKPOINT_MAGIC {
        return Err(CoverageError::Checkpoint("bad magic".into()));
    }
    let variant = take(&mut at, 1)?[0];
    let m = take(&mut at, 1)?[0] as usize;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let b = take(&mut at, 2)?;
        *d = u16::from_le_bytes([b[0], b[1]]) as usize;
    }
    let b = take(&mut at, 4)?;
    let basis_len = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let read_f64 = |at: &mut usize| -> Result<f64, CoverageError> {
        let b = take(at, 8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    };
    let grid = GridSpec::with_unit_aperture(dims[0], dims[1], dims[2])
        .map_err(|e| CoverageError::Checkpoint(format!("bad dims: {e}")))?;
    let scheme = match variant {
        0 => FeatureScheme::fsr(&grid, m),
        2 => FeatureScheme::tabular(&grid, m),
        1 => {
            let mut centers = Vec::with_capacity(basis_len);
            for _ in 0..basis_len {
                let mut c = Vec::with_capacity(3 * m);
                for _ in 0..3 * m {
                    c.push(read_f64(&mut at)?);
                }
                centers.push(c);
            }
            let mut radii = Vec::with_capacity(basis_len);
            for _ in 0..basis_len {
                radii.push(read_f64(&mut at)?);
            }
            FeatureScheme::rbf(&grid, m, RbfBasis { centers, radii })?
        }
        other => {
            return Err(CoverageError::Checkpoint(format!("unknown variant {other}")));
        }
    };
    let agents = take(&mut at, 1)?[0] as usize;
    let mut thetas = Vec::with_capacity(agents);
    for _ in 0..agents {
        let b = take(&mut at, 8)?;
        let len = u64::from_le_bytes(b.try_into().unwrap()) as usize;
        if len != scheme.len() {
            return Err(CoverageError::Checkpoint(format!(
                "theta length {len} does not match scheme length {}",
                scheme.len()
            )));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(read_f64(&mut at)?);
        }
        thetas.push(ParamVector::from_values(values));
    }
    Ok((scheme, thetas))
}
