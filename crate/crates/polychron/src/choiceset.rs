//! Activity nests and their combinations.
//!
//! Travellers mix activity types while on the move; the unit alternative of
//! the choice model is therefore a nonempty *set* of activity nests (a
//! [`Combination`]) rather than a single activity. This module provides the
//! algebra of those sets: enumeration in a single canonical order, labels,
//! feasibility exclusions and the equal-share allocation weights used for
//! cross-nesting.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_rational::Ratio;

use crate::error::{Error, Result};

/// One activity nest: a unique single-character code plus a display name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Nest {
    code: char,
    name: String,
}

impl Nest {
    pub fn new(code: char, name: impl Into<String>) -> Self {
        Nest {
            code,
            name: name.into(),
        }
    }

    pub fn code(&self) -> char {
        self.code
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// An elemental activity, belonging to exactly one nest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Activity {
    pub id: u32,
    pub label: String,
    pub nest: char,
}

/// Ordered universe of nests. Combination bitmasks index into this order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestUniverse {
    nests: Vec<Nest>,
}

/// Largest universe the bitmask representation supports.
pub const MAX_NESTS: usize = 16;

impl NestUniverse {
    /// Builds a universe from an ordered nest list (1 to 16 nests, codes
    /// unique ASCII alphanumerics).
    pub fn new(nests: Vec<Nest>) -> Result<Self> {
        if nests.is_empty() {
            return Err(Error::domain("nest universe must not be empty"));
        }
        if nests.len() > MAX_NESTS {
            return Err(Error::domain(format!(
                "nest universe holds at most {MAX_NESTS} nests, got {}",
                nests.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for nest in &nests {
            if !nest.code.is_ascii_alphanumeric() {
                return Err(Error::domain(format!(
                    "nest code {:?} is not ASCII alphanumeric",
                    nest.code
                )));
            }
            if !seen.insert(nest.code) {
                return Err(Error::domain(format!("duplicate nest code {:?}", nest.code)));
            }
        }
        Ok(NestUniverse { nests })
    }

    /// The five canonical nests of the travel-activity model, in fixed order
    /// P < L < I < W < O.
    pub fn canonical() -> Self {
        NestUniverse {
            nests: vec![
                Nest::new('P', "Passive time spending"),
                Nest::new('L', "Leisure (alone)"),
                Nest::new('I', "Interacting with other people"),
                Nest::new('W', "Work"),
                Nest::new('O', "Other activities"),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.nests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nests.is_empty()
    }

    pub fn nests(&self) -> &[Nest] {
        &self.nests
    }

    pub fn nest(&self, index: usize) -> &Nest {
        &self.nests[index]
    }

    /// Position of a nest code in the fixed order.
    pub fn position(&self, code: char) -> Option<usize> {
        self.nests.iter().position(|n| n.code == code)
    }

    /// The singleton combination for a nest code.
    pub fn singleton(&self, code: char) -> Result<Combination> {
        let pos = self
            .position(code)
            .ok_or_else(|| Error::domain(format!("unknown nest code {code:?}")))?;
        Combination::from_bits(1 << pos)
    }

    /// Builds a combination from member nest codes (any order, duplicates rejected).
    pub fn combination(&self, codes: &[char]) -> Result<Combination> {
        let mut bits: u16 = 0;
        for &code in codes {
            let pos = self
                .position(code)
                .ok_or_else(|| Error::domain(format!("unknown nest code {code:?}")))?;
            let bit = 1u16 << pos;
            if bits & bit != 0 {
                return Err(Error::domain(format!("duplicate nest code {code:?}")));
            }
            bits |= bit;
        }
        Combination::from_bits(bits)
    }

    /// Parses a '+'-joined combination label such as `"L+W"`. Codes may come
    /// in any order; the result is canonical.
    pub fn parse_label(&self, text: &str) -> Result<Combination> {
        if text.is_empty() {
            return Err(Error::parse("combination label", "label is empty"));
        }
        let mut bits: u16 = 0;
        for segment in text.split('+') {
            let mut chars = segment.chars();
            let (code, rest) = (chars.next(), chars.next());
            let code = match (code, rest) {
                (Some(c), None) => c,
                _ => {
                    return Err(Error::parse(
                        format!("combination label {text:?}"),
                        format!("segment {segment:?} is not a single nest code"),
                    ))
                }
            };
            let pos = self.position(code).ok_or_else(|| {
                Error::parse(
                    format!("combination label {text:?}"),
                    format!("unknown nest code {code:?}"),
                )
            })?;
            let bit = 1u16 << pos;
            if bits & bit != 0 {
                return Err(Error::parse(
                    format!("combination label {text:?}"),
                    format!("duplicate nest code {code:?}"),
                ));
            }
            bits |= bit;
        }
        Combination::from_bits(bits)
    }

    /// Canonical label: member codes in fixed nest order joined by '+'.
    ///
    /// Panics if the combination refers to nests beyond this universe.
    pub fn label(&self, combination: Combination) -> String {
        assert!(
            ((combination.bits() as u32) >> self.nests.len()) == 0,
            "combination {:#b} outside universe of {} nests",
            combination.bits(),
            self.nests.len()
        );
        let mut out = String::new();
        for (i, nest) in self.nests.iter().enumerate() {
            if combination.contains(i) {
                if !out.is_empty() {
                    out.push('+');
                }
                out.push(nest.code);
            }
        }
        out
    }
}

/// Nonempty subset of the universe's nests, stored as a bitmask in universe
/// order.
///
/// `Ord` is the canonical enumeration order used everywhere: singletons
/// first (ascending bitmask, i.e. universe order), then multi-nest sets by
/// ascending bitmask value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Combination {
    bits: u16,
}

impl Combination {
    /// Builds a combination from a raw bitmask; must be nonempty.
    pub fn from_bits(bits: u16) -> Result<Self> {
        if bits == 0 {
            return Err(Error::domain("combination must contain at least one nest"));
        }
        Ok(Combination { bits })
    }

    pub fn bits(self) -> u16 {
        self.bits
    }

    /// Number of member nests.
    pub fn size(self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Whether the nest at `index` (universe position) is a member.
    pub fn contains(self, index: usize) -> bool {
        index < 16 && self.bits & (1 << index) != 0
    }

    /// Member nest positions in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..16usize).filter(move |&i| self.bits & (1 << i) != 0)
    }

    fn canonical_key(self) -> (u8, u16) {
        (if self.size() == 1 { 0 } else { 1 }, self.bits)
    }

    /// Equal allocation weights over the universe's nests: `1/size` for each
    /// member, `0` elsewhere. Computed in exact rational arithmetic before
    /// conversion so the weights sum to one by construction.
    pub fn allocation_weights(self, universe: &NestUniverse) -> Vec<f64> {
        let size = self.size() as u64;
        let share = Ratio::new(1u64, size);
        let total: Ratio<u64> = (0..universe.len())
            .filter(|&m| self.contains(m))
            .map(|_| share)
            .sum();
        assert_eq!(total, Ratio::from_integer(1), "weights must sum to one");
        (0..universe.len())
            .map(|m| {
                if self.contains(m) {
                    *share.numer() as f64 / *share.denom() as f64
                } else {
                    0.0
                }
            })
            .collect()
    }
}

impl PartialOrd for Combination {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Combination {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical_key().cmp(&other.canonical_key())
    }
}

/// The enumerated choice set: all feasible combinations in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceSet {
    universe: NestUniverse,
    combinations: Vec<Combination>,
    excluded: BTreeSet<Combination>,
    index_of: HashMap<u16, usize>,
}

impl ChoiceSet {
    pub fn universe(&self) -> &NestUniverse {
        &self.universe
    }

    /// Number of alternatives.
    pub fn len(&self) -> usize {
        self.combinations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combinations.is_empty()
    }

    /// Alternatives in canonical order.
    pub fn combinations(&self) -> &[Combination] {
        &self.combinations
    }

    pub fn combination(&self, index: usize) -> Combination {
        self.combinations[index]
    }

    /// Zero-based position of a combination, if present (not excluded).
    pub fn index_of(&self, combination: Combination) -> Option<usize> {
        self.index_of.get(&combination.bits()).copied()
    }

    pub fn excluded(&self) -> &BTreeSet<Combination> {
        &self.excluded
    }

    pub fn label(&self, combination: Combination) -> String {
        self.universe.label(combination)
    }

    pub fn labels(&self) -> impl Iterator<Item = String> + '_ {
        self.combinations.iter().map(|&c| self.universe.label(c))
    }
}

/// Number of nonempty combinations of `n` items: `2^n - 1`, exact.
pub fn count_combinations(n: u32) -> Result<u64> {
    if n == 0 || n > 62 {
        return Err(Error::domain(format!(
            "activity count must be in 1..=62, got {n}"
        )));
    }
    Ok((1u64 << n) - 1)
}

/// Enumerates all nonempty nest subsets minus `exclusions`, in canonical
/// order. With the five canonical nests and no exclusions this yields 31
/// alternatives with the singletons at positions 0..5.
pub fn enumerate_combinations(
    universe: &NestUniverse,
    exclusions: &BTreeSet<Combination>,
) -> Result<ChoiceSet> {
    let m = universe.len();
    for &excluded in exclusions {
        if (excluded.bits() as u32) >> m != 0 {
            return Err(Error::domain(format!(
                "exclusion {:#b} refers to nests outside the {m}-nest universe",
                excluded.bits()
            )));
        }
    }
    let mut combinations: Vec<Combination> = (1u32..(1u32 << m))
        .map(|bits| Combination { bits: bits as u16 })
        .filter(|c| !exclusions.contains(c))
        .collect();
    combinations.sort();
    if combinations.is_empty() {
        return Err(Error::domain(
            "exclusions removed every alternative from the choice set",
        ));
    }
    let index_of = combinations
        .iter()
        .enumerate()
        .map(|(i, c)| (c.bits(), i))
        .collect();
    Ok(ChoiceSet {
        universe: universe.clone(),
        combinations,
        excluded: exclusions.clone(),
        index_of,
    })
}

/// The 14 elemental activities of the default universe, grouped into the five
/// canonical nests.
pub fn canonical_activities() -> Vec<Activity> {
    let table: [(&str, char); 14] = [
        ("Sleeping/snoozing", 'P'),
        ("Window gazing/people watching", 'P'),
        ("Being bored", 'P'),
        ("Being anxious about the journey", 'P'),
        ("Reading for leisure", 'L'),
        ("Playing games", 'L'),
        ("Listening to music/radio", 'L'),
        ("Talking to other passengers", 'I'),
        ("Text messages/phone calls (personal)", 'I'),
        ("Entertaining children", 'I'),
        ("Working/studying (reading/writing/typing/thinking)", 'W'),
        ("Text messages/phone calls (work)", 'W'),
        ("Eating/drinking", 'O'),
        ("Planning onward/return journey", 'O'),
    ];
    table
        .iter()
        .enumerate()
        .map(|(i, &(label, nest))| Activity {
            id: i as u32 + 1,
            label: label.to_string(),
            nest,
        })
        .collect()
}

impl fmt::Display for Nest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.code, self.name)
    }
}
