//! Lattice geometries on Z³.
//!
//! Two finite systems are supported, each embedded in an ambient set that
//! adds two infinite reservoir half-spaces along the first axis:
//!
//! * `darken(N)`: the two cubes `-2N <= x1 <= -1` and `0 <= x1 < 2N` with
//!   transverse coordinates in `[-N, N)`, plus `{x1 >= 2N}` and `{x1 < -2N}`.
//! * `channel(N, M)`: the slab `|x1| < N`, `|x2|, |x3| <= M`, plus
//!   `{x1 >= N}` and `{x1 <= -N}`.
//!
//! The half-spaces are never enumerated; membership is a predicate. Core
//! sites are indexed lexicographically in `(x1, x2, x3)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit steps to the six nearest neighbours, `+e1` first.
pub const DIRECTIONS: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub x1: i64,
    pub x2: i64,
    pub x3: i64,
}

impl Site {
    pub const fn new(x1: i64, x2: i64, x3: i64) -> Self {
        Site { x1, x2, x3 }
    }

    pub fn shifted(self, d: [i64; 3]) -> Site {
        Site::new(self.x1 + d[0], self.x2 + d[1], self.x3 + d[2])
    }

    /// All six lattice neighbours in `DIRECTIONS` order.
    pub fn lattice_neighbors(self) -> [Site; 6] {
        DIRECTIONS.map(|d| self.shifted(d))
    }

    pub fn is_neighbor(self, other: Site) -> bool {
        let d = [
            (self.x1 - other.x1).abs(),
            (self.x2 - other.x2).abs(),
            (self.x3 - other.x3).abs(),
        ];
        d.iter().sum::<i64>() == 1
    }

    /// Offset `other - self`.
    pub fn offset_to(self, other: Site) -> [i64; 3] {
        [other.x1 - self.x1, other.x2 - self.x2, other.x3 - self.x3]
    }

    pub fn coords(self) -> [i64; 3] {
        [self.x1, self.x2, self.x3]
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.x1, self.x2, self.x3)
    }
}

impl From<[i64; 3]> for Site {
    fn from(c: [i64; 3]) -> Self {
        Site::new(c[0], c[1], c[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Darken { n: i64 },
    Channel { n: i64, m: i64 },
    FullSpace,
}

/// Which part of the ambient set a site belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Core,
    LeftReservoir,
    RightReservoir,
    /// Full-space domains have no core and no reservoirs.
    Free,
}

impl Region {
    pub fn is_reservoir(self) -> bool {
        matches!(self, Region::LeftReservoir | Region::RightReservoir)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub site: Site,
    pub region: Region,
}

/// Inclusive axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Box3 {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl Box3 {
    pub fn contains(&self, s: Site) -> bool {
        let c = s.coords();
        (0..3).all(|k| c[k] >= self.lo[k] && c[k] <= self.hi[k])
    }

    pub fn extent(&self, axis: usize) -> usize {
        (self.hi[axis] - self.lo[axis] + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.extent(0) * self.extent(1) * self.extent(2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, s: Site) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let i1 = (s.x1 - self.lo[0]) as usize;
        let i2 = (s.x2 - self.lo[1]) as usize;
        let i3 = (s.x3 - self.lo[2]) as usize;
        Some((i1 * self.extent(1) + i2) * self.extent(2) + i3)
    }

    fn site(&self, idx: usize) -> Site {
        let n3 = self.extent(2);
        let n2 = self.extent(1);
        let i3 = idx % n3;
        let i2 = (idx / n3) % n2;
        let i1 = idx / (n2 * n3);
        Site::new(
            self.lo[0] + i1 as i64,
            self.lo[1] + i2 as i64,
            self.lo[2] + i3 as i64,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetLabel {
    LeftFace,
    RightFace,
    SigmaPlus,
    SigmaMinus,
    Section(i64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteSet {
    pub label: SetLabel,
    pub sites: Vec<Site>,
}

/// A finite core with its ambient reservoir half-spaces and precomputed
/// neighbour structure. Immutable after construction.
#[derive(Clone, Debug)]
pub struct LatticeDomain {
    geometry: Geometry,
    core: Option<Box3>,
    // CSR adjacency restricted to the core.
    offsets: Vec<usize>,
    targets: Vec<usize>,
    // (left, right) reservoir neighbour counts per core site.
    reservoir_counts: Vec<(u8, u8)>,
}

impl LatticeDomain {
    pub fn darken(n: i64) -> Result<Self> {
        if n < 1 {
            return Err(Error::param("N", format!("darken geometry needs N >= 1, got {n}")));
        }
        let core = Box3 {
            lo: [-2 * n, -n, -n],
            hi: [2 * n - 1, n - 1, n - 1],
        };
        Ok(Self::build(Geometry::Darken { n }, Some(core)))
    }

    pub fn channel(n: i64, m: i64) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("N", format!("channel geometry needs N >= 2, got {n}")));
        }
        if m < 1 || m >= n {
            return Err(Error::param(
                "M",
                format!("channel geometry needs 1 <= M < N, got M={m}, N={n}"),
            ));
        }
        let core = Box3 {
            lo: [-(n - 1), -m, -m],
            hi: [n - 1, m, m],
        };
        Ok(Self::build(Geometry::Channel { n, m }, Some(core)))
    }

    pub fn full_space() -> Self {
        Self::build(Geometry::FullSpace, None)
    }

    fn build(geometry: Geometry, core: Option<Box3>) -> Self {
        let mut dom = LatticeDomain {
            geometry,
            core,
            offsets: vec![0],
            targets: Vec::new(),
            reservoir_counts: Vec::new(),
        };
        let Some(b) = core else {
            return dom;
        };
        let len = b.len();
        let mut offsets = Vec::with_capacity(len + 1);
        let mut targets = Vec::with_capacity(6 * len);
        let mut counts = Vec::with_capacity(len);
        offsets.push(0);
        for i in 0..len {
            let s = b.site(i);
            let (mut left, mut right) = (0u8, 0u8);
            for y in s.lattice_neighbors() {
                if let Some(j) = b.index(y) {
                    targets.push(j);
                } else {
                    match dom.region(y) {
                        Some(Region::LeftReservoir) => left += 1,
                        Some(Region::RightReservoir) => right += 1,
                        _ => {}
                    }
                }
            }
            offsets.push(targets.len());
            counts.push((left, right));
        }
        dom.offsets = offsets;
        dom.targets = targets;
        dom.reservoir_counts = counts;
        dom
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// `N` for darken and channel geometries.
    pub fn n(&self) -> Option<i64> {
        match self.geometry {
            Geometry::Darken { n } | Geometry::Channel { n, .. } => Some(n),
            Geometry::FullSpace => None,
        }
    }

    pub fn core_box(&self) -> Option<Box3> {
        self.core
    }

    pub fn core_len(&self) -> usize {
        self.core.map_or(0, |b| b.len())
    }

    pub fn core_sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.core_len()).map(move |i| self.site(i))
    }

    /// Site at a core index. Panics if out of range.
    pub fn site(&self, idx: usize) -> Site {
        assert!(idx < self.core_len(), "core index {idx} out of range");
        self.core.expect("non-empty core").site(idx)
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.core.and_then(|b| b.index(s))
    }

    pub fn in_core(&self, s: Site) -> bool {
        self.core.is_some_and(|b| b.contains(s))
    }

    /// Region of `s` in the ambient set, `None` if `s` is outside it.
    pub fn region(&self, s: Site) -> Option<Region> {
        match self.geometry {
            Geometry::FullSpace => Some(Region::Free),
            Geometry::Darken { n } => {
                if s.x1 >= 2 * n {
                    Some(Region::RightReservoir)
                } else if s.x1 < -2 * n {
                    Some(Region::LeftReservoir)
                } else if self.in_core(s) {
                    Some(Region::Core)
                } else {
                    None
                }
            }
            Geometry::Channel { n, .. } => {
                if s.x1 >= n {
                    Some(Region::RightReservoir)
                } else if s.x1 <= -n {
                    Some(Region::LeftReservoir)
                } else if self.in_core(s) {
                    Some(Region::Core)
                } else {
                    None
                }
            }
        }
    }

    pub fn contains(&self, s: Site) -> bool {
        self.region(s).is_some()
    }

    /// Ambient neighbours of `s`, each flagged with its region.
    pub fn neighbors(&self, s: Site) -> Result<Vec<Neighbor>> {
        if !self.contains(s) {
            return Err(Error::NotInDomain(s));
        }
        Ok(s.lattice_neighbors()
            .into_iter()
            .filter_map(|y| self.region(y).map(|region| Neighbor { site: y, region }))
            .collect())
    }

    /// Number of ambient neighbours, `K_x`.
    pub fn degree(&self, s: Site) -> Result<usize> {
        if let Some(i) = self.index_of(s) {
            return Ok(self.degree_at(i));
        }
        Ok(self.neighbors(s)?.len())
    }

    /// Number of neighbours inside the core, `K⁻_x`.
    pub fn core_degree(&self, s: Site) -> Result<usize> {
        if let Some(i) = self.index_of(s) {
            return Ok(self.core_neighbors(i).len());
        }
        Ok(self
            .neighbors(s)?
            .iter()
            .filter(|nb| nb.region == Region::Core)
            .count())
    }

    pub fn core_neighbors(&self, idx: usize) -> &[usize] {
        &self.targets[self.offsets[idx]..self.offsets[idx + 1]]
    }

    /// `(left, right)` reservoir neighbour counts of a core site.
    pub fn reservoir_counts(&self, idx: usize) -> (usize, usize) {
        let (l, r) = self.reservoir_counts[idx];
        (l as usize, r as usize)
    }

    pub fn degree_at(&self, idx: usize) -> usize {
        let (l, r) = self.reservoir_counts(idx);
        self.core_neighbors(idx).len() + l + r
    }

    /// Unordered core bonds `(i, j)` with `i < j`, in index order.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.core_len() {
            for &j in self.core_neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Core sites with first coordinate `x1`.
    pub fn section(&self, x1: i64) -> Vec<Site> {
        match self.core {
            Some(b) if x1 >= b.lo[0] && x1 <= b.hi[0] => {
                let mut v = Vec::with_capacity(b.extent(1) * b.extent(2));
                for x2 in b.lo[1]..=b.hi[1] {
                    for x3 in b.lo[2]..=b.hi[2] {
                        v.push(Site::new(x1, x2, x3));
                    }
                }
                v
            }
            _ => Vec::new(),
        }
    }

    /// Range of first coordinates covered by the core.
    pub fn x1_range(&self) -> Option<(i64, i64)> {
        self.core.map(|b| (b.lo[0], b.hi[0]))
    }

    /// The transverse axis used for on-axis profiles: `x2 = x3 = 0`.
    pub fn axis_site(&self, x1: i64) -> Site {
        Site::new(x1, 0, 0)
    }

    /// Entrance sets `Σ±` of the channel: the reservoir planes `x1 = ±N`
    /// facing the slab.
    pub fn sigma(&self, plus: bool) -> Result<Vec<Site>> {
        let Geometry::Channel { n, m } = self.geometry else {
            return Err(Error::WrongGeometry { expected: "channel" });
        };
        let x1 = if plus { n } else { -n };
        let mut v = Vec::with_capacity(((2 * m + 1) * (2 * m + 1)) as usize);
        for x2 in -m..=m {
            for x3 in -m..=m {
                v.push(Site::new(x1, x2, x3));
            }
        }
        Ok(v)
    }

    pub fn in_sigma_plus(&self, s: Site) -> bool {
        match self.geometry {
            Geometry::Channel { n, m } => s.x1 == n && s.x2.abs() <= m && s.x3.abs() <= m,
            _ => false,
        }
    }

    pub fn in_sigma_minus(&self, s: Site) -> bool {
        match self.geometry {
            Geometry::Channel { n, m } => s.x1 == -n && s.x2.abs() <= m && s.x3.abs() <= m,
            _ => false,
        }
    }

    /// Named boundary and section sets.
    pub fn site_sets(&self) -> Result<Vec<SiteSet>> {
        match self.geometry {
            Geometry::Darken { n } => Ok(vec![
                SiteSet {
                    label: SetLabel::LeftFace,
                    sites: self.section(-2 * n),
                },
                SiteSet {
                    label: SetLabel::RightFace,
                    sites: self.section(2 * n - 1),
                },
            ]),
            Geometry::Channel { n, .. } => {
                let mut sets = vec![
                    SiteSet {
                        label: SetLabel::SigmaPlus,
                        sites: self.sigma(true)?,
                    },
                    SiteSet {
                        label: SetLabel::SigmaMinus,
                        sites: self.sigma(false)?,
                    },
                ];
                for x1 in -(n - 1)..=(n - 1) {
                    sets.push(SiteSet {
                        label: SetLabel::Section(x1),
                        sites: self.section(x1),
                    });
                }
                Ok(sets)
            }
            Geometry::FullSpace => Err(Error::WrongGeometry {
                expected: "darken or channel",
            }),
        }
    }

    /// Mirror image of a site under the geometry's reflection symmetry:
    /// `x1 -> -1 - x1` for darken, `x1 -> -x1` for channel.
    pub fn mirror(&self, s: Site) -> Site {
        match self.geometry {
            Geometry::Darken { .. } => Site::new(-1 - s.x1, s.x2, s.x3),
            _ => Site::new(-s.x1, s.x2, s.x3),
        }
    }

    /// Returns a note when the channel violates the `M < sqrt(N)` scale
    /// separation. Small instances are still allowed.
    pub fn scale_warning(&self) -> Option<String> {
        match self.geometry {
            Geometry::Channel { n, m } if (m * m) >= n => Some(format!(
                "channel width M={m} is not below sqrt(N)={:.3}; asymptotic regime not honoured",
                (n as f64).sqrt()
            )),
            _ => None,
        }
    }
}
