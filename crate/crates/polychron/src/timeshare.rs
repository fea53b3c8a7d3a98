//! The reformulated time constraint for simultaneous activities.
//!
//! The classical time budget `sum_i T_i = tau` assumes every interval carries
//! exactly one activity. Allowing up to `z` activities to share an interval
//! turns the allocation into a z-dimensional symmetric tensor whose entries
//! are indexed by activity tuples; an interval shared by k activities then
//! appears under every permutation of its index tuple and must be weighted by
//! the sharing coefficient `(z - k + 1)!/z!` so it counts once towards the
//! budget.
//!
//! Two representations coexist here:
//!
//! - [`CanonicalAllocation`] keys durations by activity *set* and stores each
//!   shared interval exactly once — the ground truth;
//! - [`AllocationTensor`] is the derived symmetric-matrix view (the crate
//!   supports the tensor form for `z = 2`, the pairwise-sharing case; see
//!   [`build_tensor`] for why higher orders are refused).
//!
//! Totals computed both ways must agree exactly; that equivalence is the
//! module's central invariant and is exercised heavily in the tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::BigRational;

use crate::error::{Error, Result};

/// A nonempty set of activity ids (1-based), stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivitySet(u64);

impl ActivitySet {
    /// Builds a set from 1-based activity ids; duplicates are rejected.
    pub fn new(ids: &[u32]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::domain("activity set must not be empty"));
        }
        let mut bits = 0u64;
        for &id in ids {
            if id == 0 || id > 62 {
                return Err(Error::domain(format!(
                    "activity id must be in 1..=62, got {id}"
                )));
            }
            let bit = 1u64 << (id - 1);
            if bits & bit != 0 {
                return Err(Error::domain(format!("duplicate activity id {id}")));
            }
            bits |= bit;
        }
        Ok(ActivitySet(bits))
    }

    pub fn singleton(id: u32) -> Result<Self> {
        ActivitySet::new(&[id])
    }

    /// Member activity ids in ascending order.
    pub fn ids(self) -> Vec<u32> {
        (0..64).filter(|b| self.0 & (1 << b) != 0).map(|b| b + 1).collect()
    }

    /// Number of distinct activities in the set.
    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, id: u32) -> bool {
        id >= 1 && id <= 64 && self.0 & (1 << (id - 1)) != 0
    }

    /// Largest member id.
    pub fn max_id(self) -> u32 {
        64 - self.0.leading_zeros()
    }
}

impl fmt::Display for ActivitySet {
    /// '+'-joined ids in ascending order, e.g. `1+3`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for id in self.ids() {
            if !first {
                write!(f, "+")?;
            }
            write!(f, "{id}")?;
            first = false;
        }
        Ok(())
    }
}

/// Parses a '+'-joined activity-id list such as `1+3`.
pub fn parse_activity_set(text: &str) -> Result<ActivitySet> {
    let mut ids = Vec::new();
    for segment in text.split('+') {
        let id: u32 = segment.trim().parse().map_err(|_| {
            Error::parse(
                format!("activity set {text:?}"),
                format!("segment {segment:?} is not an activity id"),
            )
        })?;
        ids.push(id);
    }
    ActivitySet::new(&ids)
}

/// The activity universe: how many activities exist, how many may share an
/// interval, and which sets are declared infeasible.
///
/// Feasibility defaults to 1 for every set; singletons are always feasible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityUniverse {
    n: u32,
    z: u32,
    infeasible: BTreeSet<ActivitySet>,
}

impl ActivityUniverse {
    /// `n` activities, at most `z` sharing one interval; requires `n >= z >= 1`.
    pub fn new(n: u32, z: u32) -> Result<Self> {
        if !check_consistency(n as u64, z as u64, z as u64) {
            return Err(Error::domain(format!(
                "inconsistent universe: need n >= z >= 1, got n = {n}, z = {z}"
            )));
        }
        if n > 62 {
            return Err(Error::domain(format!(
                "at most 62 activities supported, got {n}"
            )));
        }
        Ok(ActivityUniverse {
            n,
            z,
            infeasible: BTreeSet::new(),
        })
    }

    pub fn activities(&self) -> u32 {
        self.n
    }

    pub fn max_sharing(&self) -> u32 {
        self.z
    }

    /// Declares a multi-activity set infeasible (its feasibility dummy
    /// becomes 0). Singletons cannot be excluded.
    pub fn declare_infeasible(&mut self, set: ActivitySet) -> Result<()> {
        self.check_set(set)?;
        if set.size() < 2 {
            return Err(Error::domain(format!(
                "singleton {set} cannot be declared infeasible"
            )));
        }
        self.infeasible.insert(set);
        Ok(())
    }

    /// The feasibility dummy: 1 unless the set was declared infeasible.
    /// Symmetry under index permutation holds by construction because
    /// feasibility is keyed by set.
    pub fn is_feasible(&self, set: ActivitySet) -> bool {
        !self.infeasible.contains(&set)
    }

    pub fn infeasible_sets(&self) -> &BTreeSet<ActivitySet> {
        &self.infeasible
    }

    fn check_set(&self, set: ActivitySet) -> Result<()> {
        if set.max_id() > self.n {
            return Err(Error::domain(format!(
                "set {set} refers to activities beyond the universe of {} activities",
                self.n
            )));
        }
        if set.size() as u32 > self.z {
            return Err(Error::domain(format!(
                "set {set} has {} activities but at most {} may share an interval",
                set.size(),
                self.z
            )));
        }
        Ok(())
    }
}

/// Consistency of the constraint's integer parameters: `n >= z >= k >= 1`.
pub fn check_consistency(n: u64, z: u64, k: u64) -> bool {
    n >= z && z >= k && k >= 1
}

/// The sharing coefficient `(z - k + 1)!/z!` as an exact rational.
///
/// For `z = 1` this is identically 1 and the constraint reduces to the
/// classical single-activity time budget.
pub fn sharing_coefficient(z: u64, k: u64) -> Result<BigRational> {
    if !check_consistency(z, z, k) {
        return Err(Error::domain(format!(
            "sharing coefficient needs z >= k >= 1, got z = {z}, k = {k}"
        )));
    }
    // (z - k + 1)!/z! = 1 / (z * (z-1) * ... * (z-k+2)), a product of k-1 terms.
    let mut denom = BigRational::from_integer(1.into());
    for i in (z - k + 2)..=z {
        denom *= BigRational::from_integer(i.into());
    }
    Ok(denom.recip())
}

/// Ground-truth allocation: durations keyed by activity set, each shared
/// interval stored once. Validated against a universe at construction, so an
/// infeasible set can never carry positive duration.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalAllocation {
    entries: BTreeMap<ActivitySet, f64>,
}

impl CanonicalAllocation {
    pub fn empty() -> Self {
        CanonicalAllocation {
            entries: BTreeMap::new(),
        }
    }

    /// Builds an allocation, checking every entry against the universe:
    /// sets must fit within it, durations must be finite and nonnegative,
    /// and infeasible sets must not carry positive duration.
    pub fn new(
        universe: &ActivityUniverse,
        entries: impl IntoIterator<Item = (ActivitySet, f64)>,
    ) -> Result<Self> {
        let mut alloc = CanonicalAllocation::empty();
        for (set, duration) in entries {
            alloc.insert(universe, set, duration)?;
        }
        Ok(alloc)
    }

    /// Inserts or overwrites one entry, with the same checks as [`Self::new`].
    pub fn insert(
        &mut self,
        universe: &ActivityUniverse,
        set: ActivitySet,
        duration: f64,
    ) -> Result<()> {
        universe.check_set(set)?;
        if !duration.is_finite() || duration < 0.0 {
            return Err(Error::domain(format!(
                "duration for {set} must be finite and nonnegative, got {duration}"
            )));
        }
        if duration > 0.0 && !universe.is_feasible(set) {
            return Err(Error::data(format!(
                "set {set} is infeasible but was allocated {duration} time units"
            )));
        }
        self.entries.insert(set, duration);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (ActivitySet, f64)> + '_ {
        self.entries.iter().map(|(&s, &d)| (s, d))
    }

    pub fn duration(&self, set: ActivitySet) -> f64 {
        self.entries.get(&set).copied().unwrap_or(0.0)
    }
}

/// Total time of a canonical allocation: each shared interval counted once.
///
/// This is the oracle the tensor route must reproduce.
pub fn canonical_total_time(alloc: &CanonicalAllocation) -> f64 {
    alloc.entries.values().sum()
}

/// Symmetric pairwise allocation matrix: diagonal entries are exclusive
/// durations, off-diagonal entries the shared ones (appearing twice).
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTensor {
    n: usize,
    data: Vec<f64>,
}

impl AllocationTensor {
    /// Builds a matrix from row-major data; must be square and symmetric.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::data(format!(
                "expected {n}x{n} = {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        let tensor = AllocationTensor { n, data };
        tensor.check_symmetric()?;
        Ok(tensor)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Entry for activities `i + 1` and `j + 1` (0-based matrix indices).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    fn check_symmetric(&self) -> Result<()> {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j).to_bits() != self.get(j, i).to_bits() {
                    return Err(Error::data(format!(
                        "tensor is not symmetric at ({}, {}): {} vs {}",
                        i + 1,
                        j + 1,
                        self.get(i, j),
                        self.get(j, i)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Expands a canonical allocation into the symmetric matrix view.
///
/// Only the pairwise-sharing case `z = 2` is supported. For `z >= 3` the
/// number of index tuples that map to one k-activity set is the multinomial
/// permutation count, which the coefficient `(z - k + 1)!/z!` does not cancel
/// for 1 < k < z (e.g. z = 3, k = 2: six tuples, coefficient 1/3, sum 2, not
/// 1); rather than guess a tuple convention, the tensor route is refused.
pub fn build_tensor(
    alloc: &CanonicalAllocation,
    universe: &ActivityUniverse,
) -> Result<AllocationTensor> {
    match universe.max_sharing() {
        2 => {}
        z @ 3.. => {
            return Err(Error::unsupported(format!(
                "tensor expansion is only defined for pairwise sharing (z = 2); \
                 for z = {z} the sharing coefficient does not cancel the tuple \
                 multiplicity of partially shared intervals"
            )));
        }
        _ => {
            return Err(Error::unsupported(
                "tensor expansion needs z = 2; with z = 1 the constraint is the \
                 plain sum over exclusive durations"
                    .to_string(),
            ));
        }
    }
    let n = universe.activities() as usize;
    let mut tensor = AllocationTensor {
        n,
        data: vec![0.0; n * n],
    };
    for (set, duration) in alloc.entries() {
        universe.check_set(set)?;
        if duration > 0.0 && !universe.is_feasible(set) {
            return Err(Error::data(format!(
                "set {set} is infeasible but was allocated {duration} time units"
            )));
        }
        let ids = set.ids();
        match ids.as_slice() {
            [a] => {
                let i = (*a - 1) as usize;
                tensor.set(i, i, duration);
            }
            [a, b] => {
                let (i, j) = ((*a - 1) as usize, (*b - 1) as usize);
                tensor.set(i, j, duration);
                tensor.set(j, i, duration);
            }
            _ => unreachable!("z = 2 universe admits sets of size <= 2"),
        }
    }
    Ok(tensor)
}

/// Evaluates the reformulated constraint on a pairwise tensor:
/// every entry is weighted by the sharing coefficient for its distinct-activity
/// count and by the feasibility dummy, so each shared interval contributes
/// exactly once despite appearing on both sides of the diagonal.
pub fn tensor_total_time(tensor: &AllocationTensor, universe: &ActivityUniverse) -> Result<f64> {
    if universe.max_sharing() != 2 {
        return Err(Error::unsupported(
            "tensor totals are only defined for pairwise sharing (z = 2)".to_string(),
        ));
    }
    if tensor.dim() != universe.activities() as usize {
        return Err(Error::data(format!(
            "tensor is {}x{} but the universe has {} activities",
            tensor.dim(),
            tensor.dim(),
            universe.activities()
        )));
    }
    tensor.check_symmetric()?;
    // Coefficients for z = 2: k = 1 (diagonal) -> 1, k = 2 (off-diagonal) -> 1/2.
    let half = rational_to_f64(&sharing_coefficient(2, 2).expect("valid coefficient"));
    let mut total = 0.0;
    for i in 0..tensor.dim() {
        for j in 0..tensor.dim() {
            let value = tensor.get(i, j);
            if value == 0.0 {
                continue;
            }
            let set = if i == j {
                ActivitySet::singleton(i as u32 + 1)?
            } else {
                ActivitySet::new(&[i as u32 + 1, j as u32 + 1])?
            };
            let delta = if universe.is_feasible(set) { 1.0 } else { 0.0 };
            let coefficient = if i == j { 1.0 } else { half };
            total += coefficient * delta * value;
        }
    }
    Ok(total)
}

/// Converts an exact rational to `f64`.
pub fn rational_to_f64(value: &BigRational) -> f64 {
    use num_rational::Ratio;
    // Exact for the small coefficients that arise here; falls back to a
    // string round-trip only if the terms exceed i64.
    match (i64::try_from(value.numer().clone()), i64::try_from(value.denom().clone())) {
        (Ok(n), Ok(d)) => {
            let r: Ratio<i64> = Ratio::new(n, d);
            *r.numer() as f64 / *r.denom() as f64
        }
        _ => value.to_string().parse().unwrap_or(f64::NAN),
    }
}

/// The three-activity scheduling universe: work (1), leisure (2), travel (3),
/// with work and leisure barred from sharing an interval.
pub fn scheduling_universe() -> ActivityUniverse {
    let mut universe = ActivityUniverse::new(3, 2).expect("static universe is valid");
    universe
        .declare_infeasible(ActivitySet::new(&[1, 2]).expect("valid set"))
        .expect("work+leisure is a multi-activity set");
    universe
}

/// The pairwise allocation matrix of the three-activity scheduling model:
///
/// ```text
/// [ h    0    h_t ]
/// [ 0    l    l_t ]
/// [ h_t  l_t  t   ]
/// ```
///
/// `h` and `l` are exclusive work and leisure time, `t` exclusive travel,
/// `h_t`/`l_t` the work and leisure shared with travel. The work–leisure cell
/// is structurally zero. All durations must be nonnegative.
pub fn small_matrix(h: f64, l: f64, t: f64, h_t: f64, l_t: f64) -> Result<AllocationTensor> {
    let universe = scheduling_universe();
    let mut alloc = CanonicalAllocation::empty();
    let entries = [
        (ActivitySet::new(&[1])?, h),
        (ActivitySet::new(&[2])?, l),
        (ActivitySet::new(&[3])?, t),
        (ActivitySet::new(&[1, 3])?, h_t),
        (ActivitySet::new(&[2, 3])?, l_t),
    ];
    for (set, duration) in entries {
        alloc.insert(&universe, set, duration)?;
    }
    build_tensor(&alloc, &universe)
}
