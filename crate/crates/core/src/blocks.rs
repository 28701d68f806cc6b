//! Partitions of the observations into blocks, and edge sets over blocks.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{GprfError, Result};
use crate::scalar::Real;

/// How a partition was built. Grid partitions remember the cell of each block
/// so neighbor edges can be derived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionMeta {
    Grid {
        cells_per_side: usize,
        /// `(ix, iy)` of the cell that produced each block.
        cells: Vec<(usize, usize)>,
    },
    PaTree {
        max_block_size: usize,
    },
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    blocks: Vec<Vec<usize>>,
    meta: PartitionMeta,
}

impl Partition {
    /// Builds a partition from explicit index lists. Lists must be disjoint,
    /// nonempty, and cover `0..n`.
    pub fn from_blocks(blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        Self::from_blocks_with_meta(blocks, n, PartitionMeta::Explicit)
    }

    fn from_blocks_with_meta(mut blocks: Vec<Vec<usize>>, n: usize, meta: PartitionMeta) -> Result<Self> {
        let mut assignment = vec![usize::MAX; n];
        for (b, idx) in blocks.iter_mut().enumerate() {
            if idx.is_empty() {
                return Err(GprfError::InvalidInput(format!("block {b} is empty")));
            }
            idx.sort_unstable();
            for &i in idx.iter() {
                if i >= n {
                    return Err(GprfError::IndexOutOfRange(format!("point {i} in block {b}, n={n}")));
                }
                if assignment[i] != usize::MAX {
                    return Err(GprfError::InvalidInput(format!("point {i} assigned twice")));
                }
                assignment[i] = b;
            }
        }
        if let Some(i) = assignment.iter().position(|&b| b == usize::MAX) {
            return Err(GprfError::InvalidInput(format!("point {i} not assigned to any block")));
        }
        Ok(Partition { assignment, blocks, meta })
    }

    /// Single block holding every point.
    pub fn single(n: usize) -> Result<Self> {
        Self::from_blocks(vec![(0..n).collect()], n)
    }

    /// Consecutive runs of `block_size` indices (the last block may be shorter).
    pub fn contiguous(n: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(GprfError::InvalidInput("block size must be positive".into()));
        }
        let blocks = (0..n)
            .step_by(block_size)
            .map(|s| (s..(s + block_size).min(n)).collect())
            .collect();
        Self::from_blocks(blocks, n)
    }

    pub fn n_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    pub fn meta(&self) -> &PartitionMeta {
        &self.meta
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Writes `point_index,block_id` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["point_index", "block_id"])?;
        for (i, b) in self.assignment.iter().enumerate() {
            wr.write_record([i.to_string(), b.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Partition::write_csv`]; the result is `Explicit`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut pairs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<usize> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| GprfError::InvalidInput(format!("bad partition row {rec:?}")))
            };
            pairs.push((parse(0)?, parse(1)?));
        }
        let n = pairs.len();
        let m = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
        let mut blocks = vec![Vec::new(); m];
        for (i, b) in pairs {
            if i >= n {
                return Err(GprfError::IndexOutOfRange(format!("point {i} with {n} rows")));
            }
            blocks[b].push(i);
        }
        Self::from_blocks(blocks, n)
    }
}

/// Axis-aligned rectangle used as the extent of a grid partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub min: [T; 2],
    pub max: [T; 2],
}

impl<T: Real> Rect<T> {
    pub fn new(min: [T; 2], max: [T; 2]) -> Self {
        Rect { min, max }
    }

    /// Bounding box of the first two coordinates.
    pub fn bounding(x: ArrayView2<T>) -> Self {
        let mut min = [x[(0, 0)], x[(0, 1)]];
        let mut max = min;
        for row in x.rows() {
            for c in 0..2 {
                min[c] = min[c].fmin(row[c]);
                max[c] = max[c].fmax(row[c]);
            }
        }
        Rect { min, max }
    }
}

fn cell_index<T: Real>(v: T, lo: T, hi: T, cells: usize) -> (usize, bool) {
    let width = hi - lo;
    if !(width > T::zero()) {
        return (0, v != lo);
    }
    let f = ((v - lo) / width * T::from_count(cells)).as_f64().floor();
    if f < 0.0 {
        (0, true)
    } else if f >= cells as f64 {
        // The max boundary belongs to the last cell; anything beyond is clamped.
        (cells - 1, v > hi)
    } else {
        (f as usize, false)
    }
}

/// Assigns 2-D points to the cells of a `cells_per_side` square grid over
/// `bounds`. Empty cells are dropped and block ids follow cell order
/// (`iy * cells_per_side + ix`).
pub fn grid_partition<T: Real>(x: ArrayView2<T>, cells_per_side: usize, bounds: Rect<T>) -> Result<Partition> {
    if x.ncols() != 2 {
        return Err(GprfError::DimensionMismatch(format!(
            "grid partition needs 2-D points, got {}",
            x.ncols()
        )));
    }
    if cells_per_side == 0 {
        return Err(GprfError::InvalidInput("cells_per_side must be positive".into()));
    }
    let c = cells_per_side;
    let mut by_cell: Vec<Vec<usize>> = vec![Vec::new(); c * c];
    let mut clamped = 0usize;
    for (i, row) in x.rows().into_iter().enumerate() {
        let (ix, ox) = cell_index(row[0], bounds.min[0], bounds.max[0], c);
        let (iy, oy) = cell_index(row[1], bounds.min[1], bounds.max[1], c);
        if ox || oy {
            clamped += 1;
        }
        by_cell[iy * c + ix].push(i);
    }
    if clamped > 0 {
        log::info!("grid partition: {clamped} points outside bounds clamped to the nearest cell");
    }
    let mut blocks = Vec::new();
    let mut cells = Vec::new();
    for (id, idx) in by_cell.into_iter().enumerate() {
        if !idx.is_empty() {
            cells.push((id % c, id / c));
            blocks.push(idx);
        }
    }
    Partition::from_blocks_with_meta(
        blocks,
        x.nrows(),
        PartitionMeta::Grid {
            cells_per_side: c,
            cells,
        },
    )
}

/// Recursive principal-axis splitting: each set larger than `max_block_size`
/// is split at the median of its projection onto the leading eigenvector of
/// its covariance. Ties in the projection are broken by point index.
pub fn pa_tree_partition<T: Real>(x: ArrayView2<T>, max_block_size: usize) -> Result<Partition> {
    let n = x.nrows();
    if n == 0 {
        return Err(GprfError::InvalidInput("no points to partition".into()));
    }
    if max_block_size == 0 {
        return Err(GprfError::InvalidInput("max_block_size must be positive".into()));
    }
    let mut leaves = Vec::new();
    let mut stack = vec![(0..n).collect::<Vec<usize>>()];
    // Depth-first, lower half first, so leaves come out in projection order.
    while let Some(set) = stack.pop() {
        if set.len() <= max_block_size {
            leaves.push(set);
            continue;
        }
        let axis = principal_axis(x, &set)?;
        let mut proj: Vec<(f64, usize)> = set
            .iter()
            .map(|&i| {
                let p = x.row(i).iter().zip(axis.iter()).fold(T::zero(), |a, (&v, &w)| a + v * w);
                (p.as_f64(), i)
            })
            .collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let half = proj.len() / 2;
        let lower: Vec<usize> = proj[..half].iter().map(|p| p.1).collect();
        let upper: Vec<usize> = proj[half..].iter().map(|p| p.1).collect();
        stack.push(upper);
        stack.push(lower);
    }
    Partition::from_blocks_with_meta(leaves, n, PartitionMeta::PaTree { max_block_size })
}

fn principal_axis<T: Real>(x: ArrayView2<T>, set: &[usize]) -> Result<Vec<T>> {
    let d = x.ncols();
    let m = T::from_count(set.len());
    let mut mean = vec![T::zero(); d];
    for &i in set {
        for c in 0..d {
            mean[c] += x[(i, c)];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut cov = Array2::<T>::zeros((d, d));
    for &i in set {
        for a in 0..d {
            let da = x[(i, a)] - mean[a];
            for b in 0..d {
                cov[(a, b)] += da * (x[(i, b)] - mean[b]);
            }
        }
    }
    let (_, vecs) = cov
        .eigh(UPLO::Lower)
        .map_err(|e| GprfError::InvalidInput(format!("eigendecomposition failed: {e}")))?;
    let mut axis: Vec<T> = vecs.column(d - 1).to_vec();
    // Fix the sign so the largest component is positive.
    let lead = axis
        .iter()
        .enumerate()
        .fold((0, T::zero()), |best, (k, &v)| if v.abs() > best.1 { (k, v.abs()) } else { best })
        .0;
    if axis[lead] < T::zero() {
        axis.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(axis)
}

/// Undirected edges between blocks, stored as sorted `(i, j)` pairs with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    n_blocks: usize,
    edges: Vec<(usize, usize)>,
    degree: Vec<usize>,
}

impl EdgeSet {
    /// Normalizes orientation, sorts and removes duplicates. Self-edges and
    /// out-of-range ids are errors.
    pub fn from_pairs(n_blocks: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(GprfError::InvalidInput(format!("self-edge on block {a}")));
            }
            if a >= n_blocks || b >= n_blocks {
                return Err(GprfError::IndexOutOfRange(format!(
                    "edge ({a},{b}) with {n_blocks} blocks"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut degree = vec![0; n_blocks];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        Ok(EdgeSet { n_blocks, edges, degree })
    }

    pub fn empty(n_blocks: usize) -> Self {
        EdgeSet {
            n_blocks,
            edges: Vec::new(),
            degree: vec![0; n_blocks],
        }
    }

    pub fn complete(n_blocks: usize) -> Self {
        let pairs = (0..n_blocks).flat_map(|i| ((i + 1)..n_blocks).map(move |j| (i, j)));
        Self::from_pairs(n_blocks, pairs).expect("complete graph is valid")
    }

    /// Path `0 - 1 - ... - (M-1)`.
    pub fn chain(n_blocks: usize) -> Self {
        Self::from_pairs(n_blocks, (1..n_blocks).map(|b| (b - 1, b))).expect("chain is valid")
    }

    /// Connects grid cells that touch horizontally, vertically or diagonally.
    pub fn grid_neighbors(partition: &Partition) -> Result<Self> {
        let PartitionMeta::Grid { cells_per_side, cells } = partition.meta() else {
            return Err(GprfError::WrongPartitionKind(
                "8-neighbor edges need a grid partition".into(),
            ));
        };
        let c = *cells_per_side;
        let mut block_of_cell = vec![usize::MAX; c * c];
        for (b, &(ix, iy)) in cells.iter().enumerate() {
            block_of_cell[iy * c + ix] = b;
        }
        let mut pairs = Vec::new();
        for (b, &(ix, iy)) in cells.iter().enumerate() {
            for (dx, dy) in [(1i64, -1i64), (1, 0), (1, 1), (0, 1)] {
                let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
                if nx < 0 || ny < 0 || nx >= c as i64 || ny >= c as i64 {
                    continue;
                }
                let other = block_of_cell[ny as usize * c + nx as usize];
                if other != usize::MAX {
                    pairs.push((b, other));
                }
            }
        }
        Self::from_pairs(partition.n_blocks(), pairs)
    }

    /// Connects two blocks when some pair of their points lies within `tau`.
    pub fn distance_threshold<T: Real>(partition: &Partition, x0: ArrayView2<T>, tau: T) -> Result<Self> {
        if x0.nrows() != partition.n_points() {
            return Err(GprfError::DimensionMismatch(format!(
                "{} locations for {} points",
                x0.nrows(),
                partition.n_points()
            )));
        }
        let m = partition.n_blocks();
        let d = x0.ncols();
        let tau2 = if tau.finite() { Some(tau * tau) } else { None };
        // Bounding boxes prune most distant pairs before the point-pair scan.
        let boxes: Vec<(Vec<T>, Vec<T>)> = partition
            .blocks()
            .iter()
            .map(|idx| {
                let mut lo = x0.row(idx[0]).to_vec();
                let mut hi = lo.clone();
                for &i in idx {
                    for c in 0..d {
                        lo[c] = lo[c].fmin(x0[(i, c)]);
                        hi[c] = hi[c].fmax(x0[(i, c)]);
                    }
                }
                (lo, hi)
            })
            .collect();
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let Some(t2) = tau2 else {
                    pairs.push((i, j));
                    continue;
                };
                let mut gap2 = T::zero();
                for c in 0..d {
                    let g = (boxes[j].0[c] - boxes[i].1[c]).fmax(boxes[i].0[c] - boxes[j].1[c]).fmax(T::zero());
                    gap2 += g * g;
                }
                if gap2 > t2 {
                    continue;
                }
                let close = partition.block(i).iter().any(|&p| {
                    partition.block(j).iter().any(|&q| {
                        let mut s = T::zero();
                        for c in 0..d {
                            let v = x0[(p, c)] - x0[(q, c)];
                            s += v * v;
                        }
                        s <= t2
                    })
                });
                if close {
                    pairs.push((i, j));
                }
            }
        }
        Self::from_pairs(m, pairs)
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn is_subset_of(&self, other: &EdgeSet) -> bool {
        self.edges.iter().all(|&(i, j)| other.contains(i, j))
    }

    /// Writes `block_i,block_j` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["block_i", "block_j"])?;
        for &(i, j) in &self.edges {
            wr.write_record([i.to_string(), j.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, n_blocks: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut pairs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<usize> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| GprfError::InvalidInput(format!("bad edge row {rec:?}")))
            };
            pairs.push((parse(0)?, parse(1)?));
        }
        Self::from_pairs(n_blocks, pairs)
    }
}
