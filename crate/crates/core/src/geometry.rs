//! Blocks, disentangler placements and optimisation windows.
//!
//! A block is a hypercube of `2^D` sites anchored at even coordinates. The
//! disentanglers of a layer sit on the same shape shifted by one site along
//! every axis, so in 1D they straddle block boundaries and in 2D they sit on
//! the plaquettes around corners shared by four blocks. Sites inside a block
//! or plaquette are ordered row-major: `[(0,0), (1,0), (0,1), (1,1)]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Site;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    /// Lower-left site of the plaquette (odd coordinates).
    pub anchor: Site,
    /// Wrapped sites it acts on, row-major.
    pub sites: Vec<Site>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockGeometry {
    pub dimension: usize,
    pub sites_per_axis: usize,
    pub modes_per_site: usize,
    /// Offsets of the sites of a block (and of a plaquette) from its anchor.
    pub cell: Vec<Site>,
    /// Block anchors, row-major.
    pub blocks: Vec<Site>,
    pub placements: Vec<Placement>,
    /// Window side in blocks.
    pub window_blocks: usize,
}

pub fn build_geometry(dimension: usize, sites_per_axis: usize, modes_per_site: usize) -> Result<BlockGeometry> {
    if dimension != 1 && dimension != 2 {
        return Err(Error::Geometry(format!("dimension {dimension} is not supported")));
    }
    let n = sites_per_axis;
    if n < 2 || n % 2 == 1 {
        return Err(Error::Geometry(format!("side {n} must be even and at least 2")));
    }
    if modes_per_site == 0 {
        return Err(Error::Geometry("no modes per site".into()));
    }
    let cell: Vec<Site> = if dimension == 1 { vec![[0, 0], [1, 0]] } else { vec![[0, 0], [1, 0], [0, 1], [1, 1]] };
    let half = (n / 2) as isize;
    let anchors: Vec<Site> = if dimension == 1 {
        (0..half).map(|i| [i, 0]).collect()
    } else {
        (0..half).flat_map(|j| (0..half).map(move |i| [i, j])).collect()
    };
    let blocks: Vec<Site> = anchors.iter().map(|a| [2 * a[0], 2 * a[1]]).collect();
    let offset: Site = if dimension == 1 { [1, 0] } else { [1, 1] };
    let placements = anchors
        .iter()
        .map(|a| {
            let anchor = [2 * a[0] + offset[0], 2 * a[1] + offset[1]];
            let sites = cell.iter().map(|c| wrap_site(dimension, n, [anchor[0] + c[0], anchor[1] + c[1]])).collect();
            Placement { anchor, sites }
        })
        .collect();
    Ok(BlockGeometry {
        dimension,
        sites_per_axis: n,
        modes_per_site,
        cell,
        blocks,
        placements,
        window_blocks: 3,
    })
}

fn wrap_site(dimension: usize, n: usize, s: Site) -> Site {
    let n = n as isize;
    if dimension == 1 {
        [s[0].rem_euclid(n), 0]
    } else {
        [s[0].rem_euclid(n), s[1].rem_euclid(n)]
    }
}

/// Odd anchor of the plaquette covering coordinate `x` along one axis.
pub fn slot_anchor(x: isize) -> isize {
    2 * (x - 1).div_euclid(2) + 1
}

impl BlockGeometry {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn sites_per_block(&self) -> usize {
        self.cell.len()
    }

    pub fn modes_per_block(&self) -> usize {
        self.cell.len() * self.modes_per_site
    }

    pub fn wrap(&self, s: Site) -> Site {
        wrap_site(self.dimension, self.sites_per_axis, s)
    }

    /// Row-major index of a (wrapped) site.
    pub fn site_index(&self, s: Site) -> usize {
        let w = self.wrap(s);
        w[1] as usize * self.sites_per_axis + w[0] as usize
    }

    fn block_anchor(&self, target: usize) -> Result<Site> {
        self.blocks
            .get(target)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: target, len: self.blocks.len() })
    }

    /// Sites of a block, in cell order, unwrapped.
    pub fn block_sites(&self, target: usize) -> Result<Vec<Site>> {
        let a = self.block_anchor(target)?;
        Ok(self.cell.iter().map(|c| [a[0] + c[0], a[1] + c[1]]).collect())
    }

    /// Window sites (unwrapped): the target block first, then the remaining
    /// sites of the surrounding `3^D` blocks row-major.
    pub fn window_sites(&self, target: usize) -> Result<Vec<Site>> {
        let a = self.block_anchor(target)?;
        let central = self.block_sites(target)?;
        let lo = |v: isize| v - 2;
        let xs: Vec<isize> = (lo(a[0])..lo(a[0]) + 6).collect();
        let ys: Vec<isize> = if self.dimension == 1 { vec![0] } else { (lo(a[1])..lo(a[1]) + 6).collect() };
        let mut out = central.clone();
        for &y in &ys {
            for &x in &xs {
                if !central.contains(&[x, y]) {
                    out.push([x, y]);
                }
            }
        }
        Ok(out)
    }

    /// Anchors of the plaquettes touching the target block, row-major.
    pub fn cone_anchors(&self, target: usize) -> Result<Vec<Site>> {
        let a = self.block_anchor(target)?;
        let xs = [a[0] - 1, a[0] + 1];
        if self.dimension == 1 {
            Ok(xs.iter().map(|&x| [x, 0]).collect())
        } else {
            let ys = [a[1] - 1, a[1] + 1];
            Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect())
        }
    }

    /// Sites of the touching plaquettes, plaquette by plaquette.
    pub fn cone_sites(&self, target: usize) -> Result<Vec<Site>> {
        Ok(self
            .cone_anchors(target)?
            .iter()
            .flat_map(|a| self.cell.iter().map(move |c| [a[0] + c[0], a[1] + c[1]]))
            .collect())
    }

    /// For each central site (cell order): its plaquette and position
    /// inside that plaquette within the cone.
    pub fn cone_central(&self) -> Vec<(usize, usize)> {
        let cone = self.cone_sites(0).expect("block 0 exists");
        let k = self.cell.len();
        self.block_sites(0)
            .expect("block 0 exists")
            .iter()
            .map(|s| {
                let pos = cone.iter().position(|c| c == s).expect("central site lies in the cone");
                (pos / k, pos % k)
            })
            .collect()
    }

    /// The placement set after the rotation `(x, y) -> (n - 1 - y, x)`.
    pub fn rotated_placements(&self) -> Vec<Vec<Site>> {
        let n = self.sites_per_axis as isize;
        self.placements
            .iter()
            .map(|p| {
                let mut s: Vec<Site> = p.sites.iter().map(|s| self.wrap([n - 1 - s[1], s[0]])).collect();
                s.sort();
                s
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Majorana indices (fine lattice, row-major sites, `2P` per site) of the
/// optimisation window around `target`, in window-site order.
pub fn window_indices(geometry: &BlockGeometry, target: usize) -> Result<Vec<usize>> {
    let p = geometry.modes_per_site;
    Ok(geometry
        .window_sites(target)?
        .iter()
        .flat_map(|&s| {
            let base = 2 * p * geometry.site_index(s);
            base..base + 2 * p
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn all_sites(g: &BlockGeometry) -> HashSet<Site> {
        let n = g.sites_per_axis as isize;
        if g.dimension == 1 {
            (0..n).map(|x| [x, 0]).collect()
        } else {
            (0..n).flat_map(|y| (0..n).map(move |x| [x, y])).collect()
        }
    }

    #[test]
    fn counting() {
        let g = build_geometry(1, 8, 2).unwrap();
        assert_eq!((g.block_count(), g.placements.len()), (4, 4));
        let g = build_geometry(2, 4, 4).unwrap();
        assert_eq!((g.block_count(), g.placements.len()), (4, 4));
        assert!(build_geometry(1, 7, 1).is_err());
        assert!(build_geometry(3, 8, 1).is_err());
    }

    #[test]
    fn blocks_and_placements_partition_the_lattice() {
        for (dim, n) in [(1, 8), (1, 16), (2, 4), (2, 8)] {
            let g = build_geometry(dim, n, 1).unwrap();
            let mut covered = HashSet::new();
            for t in 0..g.block_count() {
                for s in g.block_sites(t).unwrap() {
                    assert!(covered.insert(g.wrap(s)));
                }
            }
            assert_eq!(covered, all_sites(&g));
            let mut covered = HashSet::new();
            for p in &g.placements {
                let touched: HashSet<Site> = p.sites.iter().map(|s| [s[0] / 2 * 2, s[1] / 2 * 2]).collect();
                assert!(touched.len() >= 2);
                for s in &p.sites {
                    assert!(covered.insert(*s), "placements overlap");
                }
            }
            assert_eq!(covered, all_sites(&g));
        }
    }

    #[test]
    fn placements_are_rotation_invariant() {
        let g = build_geometry(2, 8, 1).unwrap();
        let before: HashSet<Vec<Site>> = g
            .placements
            .iter()
            .map(|p| {
                let mut s = p.sites.clone();
                s.sort();
                s
            })
            .collect();
        let after: HashSet<Vec<Site>> = g.rotated_placements().into_iter().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn window_sizes() {
        let g = build_geometry(1, 8, 2).unwrap();
        assert_eq!(window_indices(&g, 1).unwrap().len(), 24);
        let g = build_geometry(2, 8, 4).unwrap();
        assert_eq!(window_indices(&g, 0).unwrap().len(), 2 * 144);
        assert!(window_indices(&g, 16).is_err());
    }

    #[test]
    fn adjacent_windows_share_two_blocks() {
        let g = build_geometry(1, 16, 1).unwrap();
        let a: HashSet<Site> = g.window_sites(2).unwrap().into_iter().collect();
        let b: HashSet<Site> = g.window_sites(3).unwrap().into_iter().collect();
        assert_eq!(a.intersection(&b).count(), 4);
    }

    #[test]
    fn cone_layout() {
        let g = build_geometry(1, 8, 1).unwrap();
        assert_eq!(g.cone_sites(0).unwrap(), vec![[-1, 0], [0, 0], [1, 0], [2, 0]]);
        assert_eq!(g.cone_central(), vec![(0, 1), (1, 0)]);
        let g = build_geometry(2, 8, 1).unwrap();
        let pos: Vec<usize> = g.cone_central().iter().map(|(s, q)| 4 * s + q).collect();
        assert_eq!(pos, vec![3, 6, 9, 12]);
        let window = g.window_sites(0).unwrap();
        assert!(g.cone_sites(0).unwrap().iter().all(|s| window.contains(s)));
        assert_eq!(slot_anchor(0), -1);
        assert_eq!(slot_anchor(2), 1);
        assert_eq!(slot_anchor(1), 1);
    }
}
