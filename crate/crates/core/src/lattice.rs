//! Lattice geometries: open chains, quasi-1D Lieb ribbons and 2D Lieb lattices.
//!
//! Every geometry uses the Lieb unit-cell convention. `B` is the corner (hub)
//! site of the cell, `A` is the horizontal arm linking `B(x)` to `B(x+1)` and
//! `C` is the vertical arm. In the quasi-1D ribbon `C` is a stub hanging off
//! `B`; in 2D it links `B(x, y)` to the cell below, `B(x, y - 1)`.
//!
//! Positions are in units of the nearest-neighbour spacing, so the distance
//! between equivalent sites of adjacent cells is `d = 2`.

use std::collections::VecDeque;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Distance between equivalent sites of neighbouring unit cells.
pub const CELL_SPACING: f64 = 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LatticeError {
    #[error("a chain needs at least 2 sites, got {0}")]
    ChainTooShort(usize),
    #[error("lattice dimension must be at least 1 cell, got {0}")]
    NoCells(usize),
    #[error("unknown site label `{0}`")]
    UnknownSite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
    C,
}

impl Sublattice {
    pub fn letter(self) -> char {
        match self {
            Sublattice::A => 'A',
            Sublattice::B => 'B',
            Sublattice::C => 'C',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(Sublattice::A),
            'B' => Some(Sublattice::B),
            'C' => Some(Sublattice::C),
            _ => None,
        }
    }
}

impl fmt::Display for Sublattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Dense site index, `0..n_sites`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteId(pub usize);

impl SiteId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: SiteId,
    /// Unit-cell coordinate, 1-based as in the figure labels (`3C`, `(3,3)B`).
    pub cell: (i32, Option<i32>),
    pub sublattice: Sublattice,
    pub position: [f64; 2],
}

impl Site {
    pub fn label(&self) -> String {
        match self.cell {
            (x, None) => format!("{x}{}", self.sublattice),
            (x, Some(y)) => format!("({x},{y}){}", self.sublattice),
        }
    }
}

/// Hopping bond. Contributes `-(J a†_a a_b + J* a†_b a_a)` to the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: SiteId,
    pub b: SiteId,
    pub hopping: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Chain { sites: usize },
    Quasi1d { cells: usize, smooth_edge: bool },
    Lieb2d { nx: usize, ny: usize, smooth_edges: bool },
}

#[derive(Debug, Clone)]
pub struct LatticeGraph {
    geometry: Geometry,
    sites: Vec<Site>,
    edges: Vec<Edge>,
    // neighbour lists: (other site, hopping as seen from this site)
    adjacency: Vec<Vec<(usize, Complex64)>>,
}

struct Builder {
    sites: Vec<Site>,
    edges: Vec<Edge>,
}

impl Builder {
    fn new() -> Self {
        Builder { sites: Vec::new(), edges: Vec::new() }
    }

    fn site(&mut self, cell: (i32, Option<i32>), sublattice: Sublattice, position: [f64; 2]) -> usize {
        let id = self.sites.len();
        self.sites.push(Site { id: SiteId(id), cell, sublattice, position });
        id
    }

    fn bond(&mut self, a: usize, b: usize, hopping: Complex64) {
        debug_assert_ne!(a, b);
        self.edges.push(Edge { a: SiteId(a), b: SiteId(b), hopping });
    }

    fn finish(self, geometry: Geometry) -> LatticeGraph {
        let mut adjacency = vec![Vec::new(); self.sites.len()];
        for e in &self.edges {
            adjacency[e.a.0].push((e.b.0, e.hopping));
            adjacency[e.b.0].push((e.a.0, e.hopping.conj()));
        }
        LatticeGraph { geometry, sites: self.sites, edges: self.edges, adjacency }
    }
}

/// Open chain with Lieb-arm labels: odd sites are `B`, even sites alternate
/// `C`, `A`, `C`, ... so 3 sites read `C B A` and 5 sites read `C B A B C`.
pub fn build_chain(n_sites: usize, hopping: f64) -> Result<LatticeGraph, LatticeError> {
    if n_sites < 2 {
        return Err(LatticeError::ChainTooShort(n_sites));
    }
    let j = Complex64::new(hopping, 0.0);
    let mut b = Builder::new();
    for i in 0..n_sites {
        let (sub, cell) = if i % 2 == 1 {
            (Sublattice::B, i.div_ceil(2))
        } else if i % 4 == 0 {
            (Sublattice::C, (i / 2).max(1))
        } else {
            (Sublattice::A, i / 2)
        };
        b.site((cell as i32, None), sub, [i as f64, 0.0]);
        if i > 0 {
            b.bond(i - 1, i, j);
        }
    }
    Ok(b.finish(Geometry::Chain { sites: n_sites }))
}

/// Quasi-1D Lieb ribbon of `n_cells` cells. With `smooth_edge` the last cell
/// has no `A` site, which makes the ribbon mirror-symmetric.
pub fn build_quasi1d_lieb(n_cells: usize, smooth_edge: bool, hopping: f64) -> Result<LatticeGraph, LatticeError> {
    if n_cells < 1 {
        return Err(LatticeError::NoCells(n_cells));
    }
    let j = Complex64::new(hopping, 0.0);
    let d = CELL_SPACING;
    let mut b = Builder::new();
    let mut prev_a: Option<usize> = None;
    for cell in 1..=n_cells {
        let x = (cell as f64 - 0.5) * d;
        let c = b.site((cell as i32, None), Sublattice::C, [x, -1.0]);
        let hub = b.site((cell as i32, None), Sublattice::B, [x, 0.0]);
        b.bond(hub, c, j);
        if let Some(a) = prev_a.take() {
            b.bond(a, hub, j);
        }
        if cell < n_cells || !smooth_edge {
            let a = b.site((cell as i32, None), Sublattice::A, [cell as f64 * d, 0.0]);
            b.bond(hub, a, j);
            prev_a = Some(a);
        }
    }
    Ok(b.finish(Geometry::Quasi1d { cells: n_cells, smooth_edge }))
}

/// 2D Lieb lattice of `nx * ny` cells, `y` increasing upwards. With
/// `smooth_edges` the rightmost column has no `A` sites and the bottom row no
/// `C` sites. Without it, those arms are kept as dangling sites.
pub fn build_lieb_2d(nx: usize, ny: usize, smooth_edges: bool, hopping: f64) -> Result<LatticeGraph, LatticeError> {
    if nx < 1 {
        return Err(LatticeError::NoCells(nx));
    }
    if ny < 1 {
        return Err(LatticeError::NoCells(ny));
    }
    let j = Complex64::new(hopping, 0.0);
    let mut b = Builder::new();
    let mut hub = vec![vec![0usize; ny + 1]; nx + 1];
    for y in 1..=ny {
        for x in 1..=nx {
            let (px, py) = (2.0 * x as f64 - 1.0, 2.0 * y as f64 - 1.0);
            hub[x][y] = b.site((x as i32, Some(y as i32)), Sublattice::B, [px, py]);
        }
    }
    for y in 1..=ny {
        for x in 1..=nx {
            let (px, py) = (2.0 * x as f64 - 1.0, 2.0 * y as f64 - 1.0);
            let cell = (x as i32, Some(y as i32));
            if x < nx || !smooth_edges {
                let a = b.site(cell, Sublattice::A, [px + 1.0, py]);
                b.bond(hub[x][y], a, j);
                if x < nx {
                    b.bond(a, hub[x + 1][y], j);
                }
            }
            if y > 1 || !smooth_edges {
                let c = b.site(cell, Sublattice::C, [px, py - 1.0]);
                b.bond(hub[x][y], c, j);
                if y > 1 {
                    b.bond(c, hub[x][y - 1], j);
                }
            }
        }
    }
    Ok(b.finish(Geometry::Lieb2d { nx, ny, smooth_edges }))
}

impl LatticeGraph {
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, id: SiteId) -> Option<&Site> {
        self.sites.get(id.0)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbours of `site` together with the hopping `J_{site, other}`.
    pub fn neighbors(&self, site: usize) -> &[(usize, Complex64)] {
        &self.adjacency[site]
    }

    pub fn degree(&self, site: usize) -> usize {
        self.adjacency[site].len()
    }

    pub fn contains(&self, id: SiteId) -> bool {
        id.0 < self.sites.len()
    }

    pub fn sublattice(&self, id: SiteId) -> Sublattice {
        self.sites[id.0].sublattice
    }

    /// Look up a site by unit cell and sublattice.
    pub fn find(&self, cell: (i32, Option<i32>), sublattice: Sublattice) -> Option<SiteId> {
        self.sites.iter().find(|s| s.cell == cell && s.sublattice == sublattice).map(|s| s.id)
    }

    /// Parse `3C`, `(3,3)B` or a raw index `#7`.
    pub fn site_by_label(&self, label: &str) -> Result<SiteId, LatticeError> {
        let unknown = || LatticeError::UnknownSite(label.to_string());
        let text = label.trim();
        if let Some(raw) = text.strip_prefix('#') {
            let idx: usize = raw.trim().parse().map_err(|_| unknown())?;
            return if idx < self.n_sites() { Ok(SiteId(idx)) } else { Err(unknown()) };
        }
        let last = text.chars().last().ok_or_else(unknown)?;
        let sub = Sublattice::from_letter(last).ok_or_else(unknown)?;
        let head = text[..text.len() - 1].trim();
        let cell = if let Some(inner) = head.strip_prefix('(').and_then(|h| h.strip_suffix(')')) {
            let mut parts = inner.split(',').map(|p| p.trim().parse::<i32>());
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => (x, Some(y)),
                _ => return Err(unknown()),
            }
        } else {
            (head.parse::<i32>().map_err(|_| unknown())?, None)
        };
        self.find(cell, sub).ok_or_else(unknown)
    }

    pub fn is_connected(&self) -> bool {
        if self.sites.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.n_sites()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(s) = queue.pop_front() {
            for &(t, _) in &self.adjacency[s] {
                if !seen[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
        seen.into_iter().all(|x| x)
    }

    /// Dense symmetric adjacency (1 where bonded).
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.n_sites();
        let mut m = vec![vec![0u8; n]; n];
        for e in &self.edges {
            m[e.a.0][e.b.0] = 1;
            m[e.b.0][e.a.0] = 1;
        }
        m
    }

    /// Site permutation implementing the left-right reflection `x -> x_max + x_min - x`,
    /// or `None` when the reflected positions do not map onto sites.
    pub fn reflection(&self) -> Option<Vec<usize>> {
        let (lo, hi) = self
            .sites
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.position[0]), hi.max(s.position[0])));
        self.sites
            .iter()
            .map(|s| {
                let target = [lo + hi - s.position[0], s.position[1]];
                self.sites
                    .iter()
                    .position(|t| (t.position[0] - target[0]).abs() < 1e-9 && (t.position[1] - target[1]).abs() < 1e-9)
            })
            .collect()
    }

    /// 64-bit FNV-1a fingerprint of sites and bonds, used to tag raw dumps.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for s in &self.sites {
            eat(&[s.sublattice.letter() as u8]);
            eat(&s.position[0].to_le_bytes());
            eat(&s.position[1].to_le_bytes());
        }
        for e in &self.edges {
            eat(&(e.a.0 as u64).to_le_bytes());
            eat(&(e.b.0 as u64).to_le_bytes());
            eat(&e.hopping.re.to_le_bytes());
            eat(&e.hopping.im.to_le_bytes());
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(l: &LatticeGraph) -> String {
        l.sites().iter().map(|s| s.sublattice.letter()).collect()
    }

    #[test]
    fn chain_labels_follow_lieb_arms() {
        let three = build_chain(3, 1.0).unwrap();
        assert_eq!(labels(&three), "CBA");
        assert_eq!(three.edges().len(), 2);
        let five = build_chain(5, 1.0).unwrap();
        assert_eq!(labels(&five), "CBABC");
        assert_eq!(five.edges().len(), 4);
        assert_eq!(five.site_by_label("1A").unwrap(), SiteId(2));
        assert_eq!(five.site_by_label("2C").unwrap(), SiteId(4));
        let two = build_chain(2, 1.0).unwrap();
        assert_eq!(two.n_sites(), 2);
        assert_eq!(two.edges().len(), 1);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert_eq!(build_chain(1, 1.0).unwrap_err(), LatticeError::ChainTooShort(1));
        assert!(build_quasi1d_lieb(0, true, 1.0).is_err());
        assert!(build_lieb_2d(0, 3, true, 1.0).is_err());
        assert!(build_lieb_2d(3, 0, true, 1.0).is_err());
    }

    #[test]
    fn quasi1d_counts() {
        let l = build_quasi1d_lieb(5, true, 3.0).unwrap();
        assert_eq!(l.n_sites(), 14);
        let count = |s| l.sites().iter().filter(|x| x.sublattice == s).count();
        assert_eq!((count(Sublattice::A), count(Sublattice::B), count(Sublattice::C)), (4, 5, 5));
        let one = build_quasi1d_lieb(1, true, 1.0).unwrap();
        assert_eq!(one.n_sites(), 2);
        assert_eq!(one.edges().len(), 1);
        assert_eq!(build_quasi1d_lieb(20, true, 1.0).unwrap().n_sites(), 59);
        assert_eq!(build_quasi1d_lieb(5, false, 1.0).unwrap().n_sites(), 15);
    }

    #[test]
    fn quasi1d_positions_match_fourier_convention() {
        let l = build_quasi1d_lieb(4, true, 1.0).unwrap();
        for s in l.sites() {
            let j = s.cell.0 as f64;
            let expect = match s.sublattice {
                Sublattice::A => j * CELL_SPACING,
                _ => (j - 0.5) * CELL_SPACING,
            };
            assert_eq!(s.position[0], expect, "{}", s.label());
        }
    }

    #[test]
    fn lieb2d_counts_and_central_hub() {
        assert_eq!(build_lieb_2d(5, 5, true, 1.0).unwrap().n_sites(), 65);
        assert_eq!(build_lieb_2d(1, 1, false, 1.0).unwrap().n_sites(), 3);
        assert_eq!(build_lieb_2d(2, 2, true, 1.0).unwrap().n_sites(), 8);
        let l = build_lieb_2d(5, 5, true, 1.0).unwrap();
        let hub = l.site_by_label("(3,3)B").unwrap();
        assert_eq!(l.degree(hub.0), 4);
        let c33 = l.site_by_label("(3,3)C").unwrap();
        let c34 = l.site_by_label("(3,4)C").unwrap();
        let touches = |c: SiteId| l.neighbors(c.0).iter().any(|&(t, _)| t == hub.0);
        assert!(touches(c33) && touches(c34));
    }

    #[test]
    fn label_parsing() {
        let l = build_lieb_2d(3, 3, true, 1.0).unwrap();
        assert!(l.site_by_label("(3,1)C").is_err());
        assert!(l.site_by_label("(3,2)C").is_ok());
        assert!(l.site_by_label(" ( 2 , 2 ) b ").is_ok());
        assert!(l.site_by_label("#0").is_ok());
        assert!(l.site_by_label("#999").is_err());
        assert!(l.site_by_label("Q").is_err());
    }
}
