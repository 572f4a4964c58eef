//! Ground-set elements and bitmask subsets.
//!
//! Elements are stored 0-based internally; every file format and report
//! renders them 1-based (`v1`, `v2`, ...), so `Element(0)` is `v1`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest ground set representable by [`Subset`].
pub const MAX_GROUND: usize = 64;

/// Index of an element of the ground set. Ordering is the global index order
/// shared by every agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Element(pub usize);

impl Element {
    /// 1-based identifier used in CSV/JSON output.
    pub fn id(self) -> usize {
        self.0 + 1
    }

    pub fn from_id(id: usize) -> Option<Element> {
        id.checked_sub(1).map(Element)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.id())
    }
}

/// A subset of a ground set of at most [`MAX_GROUND`] elements.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subset(u64);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn from_bits(bits: u64) -> Subset {
        Subset(bits)
    }

    /// The full ground set `{v1, ..., vm}`.
    pub fn full(m: usize) -> Subset {
        assert!(m <= MAX_GROUND, "ground set of {m} exceeds {MAX_GROUND}");
        if m == MAX_GROUND {
            Subset(u64::MAX)
        } else {
            Subset((1u64 << m) - 1)
        }
    }

    pub fn singleton(e: Element) -> Subset {
        Subset(1u64 << e.0)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, e: Element) -> bool {
        e.0 < MAX_GROUND && self.0 & (1u64 << e.0) != 0
    }

    pub fn with(self, e: Element) -> Subset {
        Subset(self.0 | (1u64 << e.0))
    }

    pub fn without(self, e: Element) -> Subset {
        Subset(self.0 & !(1u64 << e.0))
    }

    pub fn insert(&mut self, e: Element) {
        self.0 |= 1u64 << e.0;
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn intersection(self, other: Subset) -> Subset {
        Subset(self.0 & other.0)
    }

    pub fn difference(self, other: Subset) -> Subset {
        Subset(self.0 & !other.0)
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    /// Lowest-index element, if any.
    pub fn min_element(self) -> Option<Element> {
        if self.0 == 0 {
            None
        } else {
            Some(Element(self.0.trailing_zeros() as usize))
        }
    }

    /// Elements in ascending index order.
    pub fn iter(self) -> impl Iterator<Item = Element> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let idx = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(Element(idx))
        })
    }

    /// Every subset of `self`, including the empty set and `self`, in
    /// increasing bitmask order.
    pub fn subsets(self) -> impl Iterator<Item = Subset> {
        let mask = self.0;
        let mut cur = 0u64;
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let out = Subset(cur);
            if cur == mask {
                done = true;
            } else {
                // next submask of `mask` in increasing order
                cur = (cur.wrapping_sub(mask)) & mask;
            }
            Some(out)
        })
    }

    /// Pipe-joined 1-based ids, e.g. `1|4`. Empty set renders as an empty string.
    pub fn to_pipe_string(self) -> String {
        self.iter()
            .map(|e| e.id().to_string())
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn parse_pipe_string(s: &str) -> Option<Subset> {
        let s = s.trim();
        if s.is_empty() {
            return Some(Subset::EMPTY);
        }
        let mut out = Subset::EMPTY;
        for part in s.split('|') {
            let id: usize = part.trim().parse().ok()?;
            let e = Element::from_id(id)?;
            if e.0 >= MAX_GROUND {
                return None;
            }
            out.insert(e);
        }
        Some(out)
    }
}

impl FromIterator<Element> for Subset {
    fn from_iter<I: IntoIterator<Item = Element>>(iter: I) -> Self {
        let mut s = Subset::EMPTY;
        for e in iter {
            s.insert(e);
        }
        s
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, e) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Subset {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(Some(self.len()))?;
        for e in self.iter() {
            seq.serialize_element(&e.id())?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ids = Vec::<usize>::deserialize(deserializer)?;
        let mut out = Subset::EMPTY;
        for id in ids {
            match Element::from_id(id) {
                Some(e) if e.0 < MAX_GROUND => out.insert(e),
                _ => {
                    return Err(serde::de::Error::custom(format!(
                        "element id {id} out of range"
                    )))
                }
            }
        }
        Ok(out)
    }
}
