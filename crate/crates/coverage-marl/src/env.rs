//! Discrete 3-D grid world: agent kinematics, field-of-view projection,
//! coverage/overlap accounting and the global team reward.
//!
//! Agents live on integer cells `(x, y, z)` with `z >= 1`. A downward camera
//! with half-angle tangents `(tan_theta_1, tan_theta_2)` projects a square
//! footprint on the ground plane that grows with altitude: cell `(qx, qy)`
//! is in view of an agent at `(x, y, z)` iff `|qx - x| <= z * tan_theta_1`
//! and `|qy - y| <= z * tan_theta_2`.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::CoverageError;

/// Environment bounds and camera geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dim_x: usize,
    pub dim_y: usize,
    pub dim_z: usize,
    pub tan_theta_1: f64,
    pub tan_theta_2: f64,
}

impl GridSpec {
    pub fn new(
        dim_x: usize,
        dim_y: usize,
        dim_z: usize,
        tan_theta_1: f64,
        tan_theta_2: f64,
    ) -> Result<Self, CoverageError> {
        if dim_x < 1 || dim_y < 1 || dim_z < 1 {
            return Err(CoverageError::InvalidGrid(format!(
                "grid dimensions must be >= 1, got {dim_x}x{dim_y}x{dim_z}"
            )));
        }
        if !(tan_theta_1 > 0.0) || !(tan_theta_2 > 0.0) {
            return Err(CoverageError::InvalidGrid(format!(
                "camera half-angle tangents must be positive, got ({tan_theta_1}, {tan_theta_2})"
            )));
        }
        Ok(Self { dim_x, dim_y, dim_z, tan_theta_1, tan_theta_2 })
    }

    /// 45-degree half-angles: the FOV half-width in cells equals the altitude.
    pub fn with_unit_aperture(dim_x: usize, dim_y: usize, dim_z: usize) -> Result<Self, CoverageError> {
        Self::new(dim_x, dim_y, dim_z, 1.0, 1.0)
    }

    /// Number of ground-plane cells.
    pub fn ground_cells(&self) -> usize {
        self.dim_x * self.dim_y
    }

    /// Number of valid single-agent states.
    pub fn agent_states(&self) -> usize {
        self.dim_x * self.dim_y * self.dim_z
    }
}

/// Set of ground-plane cells, stored as a bitset over `y * width + x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundMask {
    width: usize,
    height: usize,
    bits: Vec<u64>,
}

impl GroundMask {
    pub fn empty(width: usize, height: usize) -> Self {
        let blocks = (width * height).div_ceil(64);
        Self { width, height, bits: vec![0; blocks] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn bit(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn insert(&mut self, x: usize, y: usize) {
        debug_assert!(x < self.width && y < self.height);
        let b = self.bit(x, y);
        self.bits[b / 64] |= 1u64 << (b % 64);
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let b = self.bit(x, y);
        self.bits[b / 64] & (1u64 << (b % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        debug_assert_eq!((self.width, self.height), (other.width, other.height));
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| a & b).collect();
        Self { width: self.width, height: self.height, bits }
    }

    pub fn union(&self, other: &Self) -> Self {
        debug_assert_eq!((self.width, self.height), (other.width, other.height));
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| a | b).collect();
        Self { width: self.width, height: self.height, bits }
    }

    pub fn union_with(&mut self, other: &Self) {
        debug_assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersection_len(&self, other: &Self) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    /// Cells in row-major order (y outer, x inner).
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (w, h) = (self.width, self.height);
        (0..h).flat_map(move |y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| self.contains(x, y))
    }
}

/// The target field F with per-cell importance weights.
///
/// Weights default to 1 on field cells and are 0 everywhere else. All shipped
/// scenarios use unit weights; coverage counts cells, not weight mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMask {
    width: usize,
    height: usize,
    cells: GroundMask,
    weights: Vec<f64>,
}

impl FieldMask {
    pub fn new(width: usize, height: usize, cells: BTreeSet<(usize, usize)>) -> Result<Self, CoverageError> {
        let mut mask = GroundMask::empty(width, height);
        let mut weights = vec![0.0; width * height];
        for &(x, y) in &cells {
            if x >= width || y >= height {
                return Err(CoverageError::InvalidFieldMask(format!(
                    "field cell ({x}, {y}) outside {width}x{height} bounds"
                )));
            }
            mask.insert(x, y);
            weights[y * width + x] = 1.0;
        }
        Ok(Self { width, height, cells: mask, weights })
    }

    /// Parse the plain-text mask format: one row per line, `#` = field cell,
    /// `.` = background. Row 0 is y index 0.
    pub fn parse(text: &str) -> Result<Self, CoverageError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(CoverageError::InvalidFieldMask("empty field mask".into()));
        }
        let width = lines[0].trim().len();
        let height = lines.len();
        let mut cells = BTreeSet::new();
        for (y, line) in lines.iter().enumerate() {
            let row = line.trim();
            if row.len() != width {
                return Err(CoverageError::InvalidFieldMask(format!(
                    "row {y} has {} characters, expected {width} (mask must be rectangular)",
                    row.len()
                )));
            }
            for (x, ch) in row.chars().enumerate() {
                match ch {
                    '#' => {
                        cells.insert((x, y));
                    }
                    '.' => {}
                    other => {
                        return Err(CoverageError::InvalidFieldMask(format!(
                            "row {y}, column {x}: invalid character {other:?} (expected '#' or '.')"
                        )));
                    }
                }
            }
        }
        Self::new(width, height, cells)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &GroundMask {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn weight(&self, x: usize, y: usize) -> f64 {
        if x < self.width && y < self.height {
            self.weights[y * self.width + x]
        } else {
            0.0
        }
    }

    pub fn set_weight(&mut self, x: usize, y: usize, w: f64) -> Result<(), CoverageError> {
        if !self.cells.contains(x, y) {
            return Err(CoverageError::InvalidFieldMask(format!(
                "cannot weight non-field cell ({x}, {y})"
            )));
        }
        if !(w >= 0.0) {
            return Err(CoverageError::InvalidFieldMask(format!("negative weight {w}")));
        }
        self.weights[y * self.width + x] = w;
        Ok(())
    }
}

/// A single agent's grid position. Altitude starts at 1; there is no
/// ground-level flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentState {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl AgentState {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub fn in_bounds(&self, grid: &GridSpec) -> bool {
        self.x < grid.dim_x && self.y < grid.dim_y && self.z >= 1 && self.z <= grid.dim_z
    }
}

impl fmt::Display for AgentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Ordered positions of all agents. Index = agent rank (0 is highest).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointState(pub Vec<AgentState>);

impl JointState {
    pub fn num_agents(&self) -> usize {
        self.0.len()
    }

    pub fn agent(&self, i: usize) -> AgentState {
        self.0[i]
    }

    /// Bounds plus pairwise-distinct cells.
    pub fn validate(&self, grid: &GridSpec) -> Result<(), CoverageError> {
        for (i, s) in self.0.iter().enumerate() {
            if !s.in_bounds(grid) {
                return Err(CoverageError::InvalidState(format!("agent {i} at {s} out of bounds")));
            }
        }
        for i in 0..self.0.len() {
            for j in i + 1..self.0.len() {
                if self.0[i] == self.0[j] {
                    return Err(CoverageError::InvalidState(format!(
                        "agents {i} and {j} both occupy {}",
                        self.0[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The six moves, in canonical order 0..5. The ordering is a serialization
/// contract and must never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ActionId {
    North = 0,
    West = 1,
    South = 2,
    East = 3,
    Up = 4,
    Down = 5,
}

pub const NUM_ACTIONS: usize = 6;

/// All actions in canonical order.
pub const ALL_ACTIONS: [ActionId; NUM_ACTIONS] = [
    ActionId::North,
    ActionId::West,
    ActionId::South,
    ActionId::East,
    ActionId::Up,
    ActionId::Down,
];

impl ActionId {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        ALL_ACTIONS.get(i).copied()
    }

    /// (dx, dy, dz) displacement. North = +y, East = +x, Up = +z.
    pub fn delta(self) -> (i32, i32, i32) {
        match self {
            ActionId::North => (0, 1, 0),
            ActionId::West => (-1, 0, 0),
            ActionId::South => (0, -1, 0),
            ActionId::East => (1, 0, 0),
            ActionId::Up => (0, 0, 1),
            ActionId::Down => (0, 0, -1),
        }
    }
}

/// Ordered per-agent moves; index = agent rank.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction(pub Vec<ActionId>);

impl JointAction {
    pub fn num_agents(&self) -> usize {
        self.0.len()
    }

    /// Canonical index with agent 0 as the most significant digit (base 6).
    pub fn canonical_index(&self) -> usize {
        self.0.iter().fold(0, |acc, a| acc * NUM_ACTIONS + a.index())
    }

    /// Inverse of [`canonical_index`](Self::canonical_index).
    pub fn from_canonical_index(mut idx: usize, m: usize) -> Self {
        let mut actions = vec![ActionId::North; m];
        for i in (0..m).rev() {
            actions[i] = ActionId::from_index(idx % NUM_ACTIONS).unwrap();
            idx /= NUM_ACTIONS;
        }
        JointAction(actions)
    }
}

/// Number of joint actions for `m` agents, i.e. 6^m.
pub fn num_joint_actions(m: usize) -> usize {
    NUM_ACTIONS.pow(m as u32)
}

/// Ground cells in view of `agent`: `|qx - x| <= z * tan_theta_1` and
/// `|qy - y| <= z * tan_theta_2`, clipped to the grid.
pub fn fov_cells(agent: AgentState, grid: &GridSpec) -> GroundMask {
    let half_x = agent.z as f64 * grid.tan_theta_1;
    let half_y = agent.z as f64 * grid.tan_theta_2;
    let mut mask = GroundMask::empty(grid.dim_x, grid.dim_y);
    let x_lo = (agent.x as f64 - half_x).ceil().max(0.0) as usize;
    let x_hi = ((agent.x as f64 + half_x).floor() as usize).min(grid.dim_x - 1);
    let y_lo = (agent.y as f64 - half_y).ceil().max(0.0) as usize;
    let y_hi = ((agent.y as f64 + half_y).floor() as usize).min(grid.dim_y - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            mask.insert(x, y);
        }
    }
    mask
}

/// f_i: number of field cells under agent `i`'s FOV.
pub fn coverage_count(joint: &JointState, i: usize, field: &FieldMask, grid: &GridSpec) -> usize {
    fov_cells(joint.agent(i), grid).intersection_len(field.cells())
}

/// o_i: number of cells agent `i` shares with any other agent's FOV,
/// counted over all ground cells.
pub fn overlap_count(joint: &JointState, i: usize, grid: &GridSpec) -> usize {
    let own = fov_cells(joint.agent(i), grid);
    let mut others = GroundMask::empty(grid.dim_x, grid.dim_y);
    for j in 0..joint.num_agents() {
        if j != i {
            others.union_with(&fov_cells(joint.agent(j), grid));
        }
    }
    own.intersection_len(&others)
}

/// Team objective: sum of coverage counts minus sum of overlap counts.
pub fn objective_h(joint: &JointState, field: &FieldMask, grid: &GridSpec) -> i64 {
    let mut h = 0i64;
    for i in 0..joint.num_agents() {
        h += coverage_count(joint, i, field, grid) as i64;
        h -= overlap_count(joint, i, grid) as i64;
    }
    h
}

/// Sparse team reward: `r` iff total coverage reaches `fb` with zero overlap.
pub fn global_reward(joint: &JointState, field: &FieldMask, grid: &GridSpec, r: f64, fb: usize) -> f64 {
    let m = joint.num_agents();
    let coverage: usize = (0..m).map(|i| coverage_count(joint, i, field, grid)).sum();
    let overlap: usize = (0..m).map(|i| overlap_count(joint, i, grid)).sum();
    if coverage >= fb && overlap == 0 {
        r
    } else {
        0.0
    }
}

/// Move one agent; moves that would exit the grid leave the state unchanged.
pub fn apply_action(state: AgentState, action: ActionId, grid: &GridSpec) -> AgentState {
    let (dx, dy, dz) = action.delta();
    let nx = state.x as i32 + dx;
    let ny = state.y as i32 + dy;
    let nz = state.z as i32 + dz;
    if nx < 0
        || nx >= grid.dim_x as i32
        || ny < 0
        || ny >= grid.dim_y as i32
        || nz < 1
        || nz > grid.dim_z as i32
    {
        state
    } else {
        AgentState::new(nx as usize, ny as usize, nz as usize)
    }
}

/// Element-wise [`apply_action`]. The action must already have passed the
/// collision filter; coincident successors indicate an upstream bug.
pub fn apply_joint_action(
    joint: &JointState,
    action: &JointAction,
    grid: &GridSpec,
) -> Result<JointState, CoverageError> {
    let next: Vec<AgentState> = joint
        .0
        .iter()
        .zip(&action.0)
        .map(|(&s, &a)| apply_action(s, a, grid))
        .collect();
    for i in 0..next.len() {
        for j in i + 1..next.len() {
            if next[i] == next[j] {
                return Err(CoverageError::CollisionViolation {
                    a: i,
                    b: j,
                    cell: format!("{}", next[i]),
                });
            }
        }
    }
    Ok(JointState(next))
}

/// The environment an experiment runs in: grid, field, and reward settings.
#[derive(Debug, Clone)]
pub struct Environment {
    pub grid: GridSpec,
    pub field: FieldMask,
    pub reward: f64,
    /// Coverage bound fb; defaults to |F| (full coverage).
    pub fb: usize,
    /// When set, overlap is counted only on field cells rather than all
    /// ground cells.
    pub overlap_field_only: bool,
}

impl Environment {
    pub fn new(grid: GridSpec, field: FieldMask, reward: f64) -> Result<Self, CoverageError> {
        if field.width() != grid.dim_x || field.height() != grid.dim_y {
            return Err(CoverageError::InvalidFieldMask(format!(
                "field mask is {}x{} but grid is {}x{}",
                field.width(),
                field.height(),
                grid.dim_x,
                grid.dim_y
            )));
        }
        if !(reward > 0.0) {
            return Err(CoverageError::InvalidGrid(format!("reward must be positive, got {reward}")));
        }
        let fb = field.num_cells();
        Ok(Self { grid, field, reward, fb, overlap_field_only: false })
    }

    pub fn with_fb(mut self, fb: usize) -> Result<Self, CoverageError> {
        if fb == 0 || fb > self.field.num_cells() {
            return Err(CoverageError::InvalidGrid(format!(
                "fb must be in 1..={}, got {fb}",
                self.field.num_cells()
            )));
        }
        self.fb = fb;
        Ok(self)
    }

    fn overlap_of(&self, joint: &JointState, i: usize) -> usize {
        if self.overlap_field_only {
            let own = fov_cells(joint.agent(i), &self.grid).intersection(self.field.cells());
            let mut others = GroundMask::empty(self.grid.dim_x, self.grid.dim_y);
            for j in 0..joint.num_agents() {
                if j != i {
                    others.union_with(&fov_cells(joint.agent(j), &self.grid));
                }
            }
            own.intersection_len(&others)
        } else {
            overlap_count(joint, i, &self.grid)
        }
    }

    /// (f_i, o_i) for one agent, honoring the overlap-counting flag.
    pub fn agent_counts(&self, joint: &JointState, i: usize) -> (usize, usize) {
        (coverage_count(joint, i, &self.field, &self.grid), self.overlap_of(joint, i))
    }

    /// (sum f_i, sum o_i) for a joint state.
    pub fn team_counts(&self, joint: &JointState) -> (usize, usize) {
        let m = joint.num_agents();
        let coverage = (0..m).map(|i| coverage_count(joint, i, &self.field, &self.grid)).sum();
        let overlap = (0..m).map(|i| self.overlap_of(joint, i)).sum();
        (coverage, overlap)
    }

    pub fn global_reward(&self, joint: &JointState) -> f64 {
        let (coverage, overlap) = self.team_counts(joint);
        if coverage >= self.fb && overlap == 0 {
            self.reward
        } else {
            0.0
        }
    }

    pub fn is_goal(&self, joint: &JointState) -> bool {
        self.global_reward(joint) > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid7() -> GridSpec {
        GridSpec::with_unit_aperture(7, 7, 5).unwrap()
    }

    fn block_field(x0: usize, y0: usize, w: usize, h: usize) -> FieldMask {
        let cells = (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| (x, y))).collect();
        FieldMask::new(7, 7, cells).unwrap()
    }

    #[test]
    fn fov_center_low_altitude() {
        let fov = fov_cells(AgentState::new(3, 3, 1), &grid7());
        assert_eq!(fov.len(), 9);
        for y in 2..=4 {
            for x in 2..=4 {
                assert!(fov.contains(x, y));
            }
        }
    }

    #[test]
    fn fov_corner_clipped() {
        let fov = fov_cells(AgentState::new(0, 0, 1), &grid7());
        let cells: Vec<_> = fov.cells().collect();
        assert_eq!(cells, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn fov_zero_aperture_sees_nadir_only() {
        let grid = GridSpec::new(7, 7, 5, 1e-9, 1e-9).unwrap();
        for z in 1..=5 {
            let fov = fov_cells(AgentState::new(3, 3, z), &grid);
            assert_eq!(fov.cells().collect::<Vec<_>>(), vec![(3, 3)]);
        }
    }

    #[test]
    fn fov_matches_direct_enumeration() {
        // Independent check of the membership condition over all ground cells.
        let grid = grid7();
        for (x, y, z) in [(3, 3, 1), (0, 0, 2), (6, 2, 3), (1, 5, 5)] {
            let agent = AgentState::new(x, y, z);
            let fov = fov_cells(agent, &grid);
            for qy in 0..7usize {
                for qx in 0..7usize {
                    let dx = (qx as f64 - x as f64).abs();
                    let dy = (qy as f64 - y as f64).abs();
                    let inside =
                        dx <= z as f64 * grid.tan_theta_1 && dy <= z as f64 * grid.tan_theta_2;
                    assert_eq!(fov.contains(qx, qy), inside, "agent {agent} cell ({qx},{qy})");
                }
            }
        }
    }

    #[test]
    fn fov_monotone_in_altitude() {
        let grid = grid7();
        for x in 0..7 {
            for y in 0..7 {
                for z in 1..5 {
                    let lo = fov_cells(AgentState::new(x, y, z), &grid);
                    let hi = fov_cells(AgentState::new(x, y, z + 1), &grid);
                    assert!(lo.is_subset_of(&hi));
                }
            }
        }
    }

    #[test]
    fn coverage_superset_and_disjoint() {
        let grid = grid7();
        let field = block_field(2, 2, 3, 3);
        // FOV at (3,3,2) is 5x5, a superset of the 3x3 field.
        let joint = JointState(vec![AgentState::new(3, 3, 2)]);
        assert_eq!(coverage_count(&joint, 0, &field, &grid), 9);
        // FOV at (0,6,1) is disjoint from the field block.
        let joint = JointState(vec![AgentState::new(0, 6, 1)]);
        assert_eq!(coverage_count(&joint, 0, &field, &grid), 0);
    }

    #[test]
    fn coverage_partial_intersection() {
        let grid = grid7();
        // Field occupies 5 of the 9 cells of the 3x3 FOV at (3,3,1):
        // intersection of rows y=2..4, x=2..4 with a cross shape.
        let field = FieldMask::new(
            7,
            7,
            [(3, 2), (2, 3), (3, 3), (4, 3), (3, 4)].into_iter().collect(),
        )
        .unwrap();
        let joint = JointState(vec![AgentState::new(3, 3, 1)]);
        assert_eq!(coverage_count(&joint, 0, &field, &grid), 5);
    }

    #[test]
    fn overlap_identical_footprints() {
        let grid = grid7();
        let joint =
            JointState(vec![AgentState::new(3, 3, 1), AgentState::new(3, 3, 2)]);
        // Agent 0's 9-cell FOV is fully inside agent 1's 25-cell FOV.
        assert_eq!(overlap_count(&joint, 0, &grid), 9);
        assert_eq!(overlap_count(&joint, 1, &grid), 9);
    }

    #[test]
    fn overlap_disjoint_and_shared_column() {
        let grid = grid7();
        let joint = JointState(vec![AgentState::new(1, 1, 1), AgentState::new(5, 5, 1)]);
        assert_eq!(overlap_count(&joint, 0, &grid), 0);
        assert_eq!(overlap_count(&joint, 1, &grid), 0);
        // 3x3 FOVs at (2,2) and (4,2) share the column x=3, y=1..3.
        let joint = JointState(vec![AgentState::new(2, 2, 1), AgentState::new(4, 2, 1)]);
        assert_eq!(overlap_count(&joint, 0, &grid), 3);
        assert_eq!(overlap_count(&joint, 1, &grid), 3);
    }

    #[test]
    fn overlap_symmetric_pairwise() {
        let grid = grid7();
        let joint = JointState(vec![AgentState::new(2, 2, 2), AgentState::new(4, 3, 1)]);
        let a = fov_cells(joint.agent(0), &grid);
        let b = fov_cells(joint.agent(1), &grid);
        assert_eq!(overlap_count(&joint, 0, &grid), a.intersection_len(&b));
        assert_eq!(overlap_count(&joint, 1, &grid), b.intersection_len(&a));
    }

    #[test]
    fn objective_stacked_agents_cancel() {
        let grid = grid7();
        let field = block_field(2, 2, 3, 3);
        // Same footprint at different altitudes is not possible without
        // stacking; use two agents whose 9-cell FOVs coincide on the field.
        let joint = JointState(vec![AgentState::new(3, 3, 1), AgentState::new(3, 3, 2)]);
        // f = 9 + 9, o = 9 + 9 over ground cells... agent 1 covers 25 cells,
        // 9 of the field. Overlap is 9 each.
        assert_eq!(objective_h(&joint, &field, &grid), 9 + 9 - 9 - 9);
    }

    #[test]
    fn objective_empty_field_nonpositive() {
        let grid = grid7();
        let field = FieldMask::new(7, 7, BTreeSet::new()).unwrap();
        let joint = JointState(vec![AgentState::new(3, 3, 2), AgentState::new(3, 4, 1)]);
        assert!(objective_h(&joint, &field, &grid) <= 0);
    }

    #[test]
    fn objective_permutation_invariant() {
        let grid = grid7();
        let field = block_field(1, 1, 4, 3);
        let a = AgentState::new(1, 2, 2);
        let b = AgentState::new(5, 5, 1);
        let c = AgentState::new(6, 0, 3);
        let h1 = objective_h(&JointState(vec![a, b, c]), &field, &grid);
        let h2 = objective_h(&JointState(vec![c, a, b]), &field, &grid);
        assert_eq!(h1, h2);
    }

    #[test]
    fn apply_action_moves_and_blocks() {
        let grid = grid7();
        assert_eq!(
            apply_action(AgentState::new(3, 3, 2), ActionId::Up, &grid),
            AgentState::new(3, 3, 3)
        );
        assert_eq!(
            apply_action(AgentState::new(0, 3, 2), ActionId::West, &grid),
            AgentState::new(0, 3, 2)
        );
        assert_eq!(
            apply_action(AgentState::new(6, 6, 5), ActionId::Up, &grid),
            AgentState::new(6, 6, 5)
        );
        // Floor: Down at z=1 is blocked.
        assert_eq!(
            apply_action(AgentState::new(4, 4, 1), ActionId::Down, &grid),
            AgentState::new(4, 4, 1)
        );
    }

    #[test]
    fn blocked_moves_idempotent() {
        let grid = grid7();
        for x in 0..7 {
            for y in 0..7 {
                for z in 1..=5 {
                    let s = AgentState::new(x, y, z);
                    for a in ALL_ACTIONS {
                        let once = apply_action(s, a, &grid);
                        if once == s {
                            assert_eq!(apply_action(once, a, &grid), s);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn joint_action_application() {
        let grid = grid7();
        let joint = JointState(vec![AgentState::new(1, 1, 1), AgentState::new(5, 5, 1)]);
        let action = JointAction(vec![ActionId::East, ActionId::West]);
        let next = apply_joint_action(&joint, &action, &grid).unwrap();
        assert_eq!(next.0, vec![AgentState::new(2, 1, 1), AgentState::new(4, 5, 1)]);
    }

    #[test]
    fn joint_action_collision_detected() {
        let grid = grid7();
        let joint = JointState(vec![AgentState::new(2, 2, 1), AgentState::new(4, 2, 1)]);
        let action = JointAction(vec![ActionId::East, ActionId::West]);
        assert!(apply_joint_action(&joint, &action, &grid).is_err());
    }

    #[test]
    fn global_reward_boundary_cases() {
        let grid = grid7();
        let field = block_field(2, 2, 3, 3);
        let env = Environment::new(grid.clone(), field.clone(), 0.1).unwrap();
        // Full coverage by one agent, second agent far away: reward paid.
        let joint = JointState(vec![AgentState::new(3, 3, 1), AgentState::new(0, 6, 1)]);
        assert!((env.global_reward(&joint) - 0.1).abs() < 1e-15);
        // Second agent's FOV touches the first: no reward.
        let joint = JointState(vec![AgentState::new(3, 3, 1), AgentState::new(4, 5, 1)]);
        assert_eq!(env.global_reward(&joint), 0.0);
        // Coverage exactly at fb with zero overlap pays.
        let env = Environment::new(grid, field, 0.1).unwrap().with_fb(4).unwrap();
        let joint = JointState(vec![AgentState::new(2, 2, 1), AgentState::new(0, 6, 1)]);
        // FOV at (2,2,1) covers field cells (2..4)x(2..4) clipped: x,y in 1..3
        // intersect field 2..4 -> 2x2 = 4 cells.
        let (cov, ov) = env.team_counts(&joint);
        assert_eq!((cov, ov), (4, 0));
        assert!((env.global_reward(&joint) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn reward_is_zero_or_r_exactly() {
        let grid = grid7();
        let field = block_field(2, 2, 3, 3);
        let env = Environment::new(grid.clone(), field, 0.1).unwrap();
        for x in 0..7 {
            for y in 0..7 {
                let joint = JointState(vec![
                    AgentState::new(x, y, 1),
                    AgentState::new((x + 3) % 7, (y + 2) % 7, 2),
                ]);
                let r = env.global_reward(&joint);
                assert!(r == 0.0 || r == 0.1);
            }
        }
    }

    #[test]
    fn zero_overlap_iff_pairwise_disjoint() {
        let grid = GridSpec::with_unit_aperture(5, 5, 2).unwrap();
        let states = [
            JointState(vec![AgentState::new(1, 1, 1), AgentState::new(4, 4, 1)]),
            JointState(vec![AgentState::new(1, 1, 1), AgentState::new(3, 1, 1)]),
            JointState(vec![AgentState::new(0, 0, 1), AgentState::new(4, 0, 1), AgentState::new(4, 4, 1)]),
        ];
        for joint in &states {
            let total: usize = (0..joint.num_agents()).map(|i| overlap_count(joint, i, &grid)).sum();
            let mut disjoint = true;
            for i in 0..joint.num_agents() {
                for j in i + 1..joint.num_agents() {
                    let a = fov_cells(joint.agent(i), &grid);
                    let b = fov_cells(joint.agent(j), &grid);
                    if a.intersection_len(&b) > 0 {
                        disjoint = false;
                    }
                }
            }
            assert_eq!(total == 0, disjoint);
        }
    }

    #[test]
    fn parse_mask_round_trip() {
        let text = ".......\n.......\n...#...\n.......\n.......\n.......\n.......\n";
        let mask = FieldMask::parse(text).unwrap();
        assert_eq!(mask.num_cells(), 1);
        assert!(mask.cells().contains(3, 2));
        assert_eq!(mask.weight(3, 2), 1.0);
        assert_eq!(mask.weight(0, 0), 0.0);
    }

    #[test]
    fn parse_mask_all_background() {
        let text = (0..7).map(|_| ".......").collect::<Vec<_>>().join("\n");
        let mask = FieldMask::parse(&text).unwrap();
        assert_eq!(mask.num_cells(), 0);
    }

    #[test]
    fn parse_mask_rejects_bad_input() {
        assert!(FieldMask::parse("..#\n..").is_err());
        assert!(FieldMask::parse("..x\n...").is_err());
        assert!(FieldMask::parse("").is_err());
    }

    #[test]
    fn joint_state_invariants() {
        let grid = grid7();
        let ok = JointState(vec![AgentState::new(0, 0, 1), AgentState::new(0, 0, 2)]);
        assert!(ok.validate(&grid).is_ok());
        let dup = JointState(vec![AgentState::new(0, 0, 1), AgentState::new(0, 0, 1)]);
        assert!(dup.validate(&grid).is_err());
        let oob = JointState(vec![AgentState::new(0, 0, 0)]);
        assert!(oob.validate(&grid).is_err());
    }

    #[test]
    fn canonical_index_round_trip() {
        for idx in 0..num_joint_actions(3) {
            let a = JointAction::from_canonical_index(idx, 3);
            assert_eq!(a.canonical_index(), idx);
        }
        assert_eq!(
            JointAction(vec![ActionId::North, ActionId::North]).canonical_index(),
            0
        );
        assert_eq!(
            JointAction(vec![ActionId::Down, ActionId::Down]).canonical_index(),
            35
        );
    }
}
