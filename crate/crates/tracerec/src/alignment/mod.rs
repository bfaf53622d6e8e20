//! Reconstruction of uniformly random matrices and tensors by aligning
//! trace lines to source lines.
//!
//! Along each axis, every trace line (the slice fixing that axis' index) is
//! assigned to a group of lines believed to come from the same source line.
//! Groups are ordered from precedences observed inside single traces, which
//! gives every received bit its source coordinates. Two matchers build the
//! groups: the block-statistics [`oracle`] on pairs of lines, and the
//! [`joint`] aligner for grids whose lines are too short for the oracle.

pub mod joint;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::bits::{strides, unflatten, BitMatrix, BitString, BitTensor};
use crate::channels::RetentionMap;
use crate::error::{Error, Result};

pub use joint::{joint_align, JointAlignment, JointParams};
pub use oracle::{block_statistics, same_source_oracle, OracleParams, OracleVerdict};

/// A line of a trace: (trace index, index along the grouped axis).
pub type Line = (usize, usize);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RowGrouping {
    pub axis: usize,
    /// Groups in order of their first member.
    pub groups: Vec<Vec<Line>>,
    /// Lines no group claims.
    pub unassigned: Vec<Line>,
    /// Pairs judged different but joined through other lines.
    pub contradictions: usize,
}

impl RowGrouping {
    /// `lookup[trace][index]` = group of that line.
    pub fn lookup(&self, traces: &[BitTensor]) -> Vec<Vec<Option<usize>>> {
        let mut out: Vec<Vec<Option<usize>>> = traces
            .iter()
            .map(|t| vec![None; t.dims().get(self.axis).copied().unwrap_or(0)])
            .collect();
        for (g, members) in self.groups.iter().enumerate() {
            for &(t, i) in members {
                out[t][i] = Some(g);
            }
        }
        out
    }

    /// Whether two groupings induce the same partition of their lines.
    pub fn same_partition(&self, other: &RowGrouping) -> bool {
        let canon = |g: &RowGrouping| {
            let mut v: Vec<Vec<Line>> = g
                .groups
                .iter()
                .map(|m| {
                    let mut m = m.clone();
                    m.sort_unstable();
                    m
                })
                .collect();
            v.sort();
            v
        };
        canon(self) == canon(other)
    }
}

/// The slice of `t` at `index` along `axis`, flattened row-major.
pub fn slice_string(t: &BitTensor, axis: usize, index: usize) -> BitString {
    let dims = t.dims();
    let keep: Vec<Vec<usize>> = dims
        .iter()
        .enumerate()
        .map(|(a, &n)| if a == axis { vec![index] } else { (0..n).collect() })
        .collect();
    BitString::from_bits(t.select(&keep).bits().iter().copied())
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

fn components(lines: &[Line], uf: &mut UnionFind) -> Vec<Vec<Line>> {
    let mut root_group = std::collections::HashMap::new();
    let mut groups: Vec<Vec<Line>> = Vec::new();
    for (i, &l) in lines.iter().enumerate() {
        let r = uf.find(i);
        let g = *root_group.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(l);
    }
    groups
}

/// Single-linkage grouping of the lines along `axis` under the same-source
/// oracle. `line_len` is the source length of one line and `q` the
/// retention of its cells.
pub fn group_lines(
    traces: &[BitTensor],
    axis: usize,
    line_len: usize,
    q: f64,
    params: &OracleParams,
) -> Result<RowGrouping> {
    let mut lines = Vec::new();
    let mut strings = Vec::new();
    for (j, t) in traces.iter().enumerate() {
        for i in 0..t.dims()[axis] {
            lines.push((j, i));
            strings.push(slice_string(t, axis, i));
        }
    }
    let mut uf = UnionFind((0..lines.len()).collect());
    let mut different = Vec::new();
    for a in 0..lines.len() {
        for b in a + 1..lines.len() {
            if lines[a].0 == lines[b].0 {
                continue;
            }
            if same_source_oracle(&strings[a], &strings[b], line_len, q, params)?.same {
                uf.union(a, b);
            } else {
                different.push((a, b));
            }
        }
    }
    let contradictions = different.iter().filter(|&&(a, b)| uf.find(a) == uf.find(b)).count();
    Ok(RowGrouping {
        axis,
        groups: components(&lines, &mut uf),
        unassigned: Vec::new(),
        contradictions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixAxis {
    Rows,
    Cols,
}

/// Groups the rows (or columns) of matrix traces of an n-cell square matrix.
pub fn group_rows(traces: &[BitMatrix], axis: MatrixAxis, n: usize, q: f64, params: &OracleParams) -> Result<RowGrouping> {
    let ts: Vec<BitTensor> = traces.iter().map(BitMatrix::to_tensor).collect();
    let side = (n as f64).sqrt().round() as usize;
    let a = match axis {
        MatrixAxis::Rows => 0,
        MatrixAxis::Cols => 1,
    };
    group_lines(&ts, a, side, q, params)
}

/// Grouping induced by the source indices of retained lines.
pub fn true_grouping(maps: &[&RetentionMap], axis: usize) -> RowGrouping {
    let mut by_source: std::collections::BTreeMap<usize, Vec<Line>> = Default::default();
    for (j, m) in maps.iter().enumerate() {
        for (i, &s) in m.kept.iter().enumerate() {
            by_source.entry(s).or_default().push((j, i));
        }
    }
    let mut groups: Vec<Vec<Line>> = by_source.into_values().collect();
    groups.sort_by_key(|g| g[0]);
    RowGrouping { axis, groups, unassigned: Vec::new(), contradictions: 0 }
}

/// Rank of every group: the number of groups seen before it in some trace.
/// Every pair of groups must co-occur in a trace and all precedences must
/// agree.
pub fn infer_order(grouping: &RowGrouping) -> Result<Vec<usize>> {
    let s = grouping.groups.len();
    let mut per_trace: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for (g, members) in grouping.groups.iter().enumerate() {
        for &(t, i) in members {
            per_trace.entry(t).or_default().push((i, g));
        }
    }
    // before[a * s + b]: a observed above b
    let mut before = vec![false; s * s];
    for seq in per_trace.values_mut() {
        seq.sort_unstable();
        for x in 0..seq.len() {
            for y in x + 1..seq.len() {
                let (a, b) = (seq[x].1, seq[y].1);
                if a == b {
                    return Err(Error::InconsistentOrder(a, b));
                }
                before[a * s + b] = true;
            }
        }
    }
    for a in 0..s {
        for b in a + 1..s {
            match (before[a * s + b], before[b * s + a]) {
                (true, true) => return Err(Error::InconsistentOrder(a, b)),
                (false, false) => return Err(Error::UnorderedPair(a, b)),
                _ => {}
            }
        }
    }
    let rank: Vec<usize> = (0..s).map(|b| (0..s).filter(|&a| before[a * s + b]).count()).collect();
    // a cyclic tournament repeats some rank
    let mut seen = vec![usize::MAX; s];
    for (g, &r) in rank.iter().enumerate() {
        if seen[r] != usize::MAX {
            return Err(Error::InconsistentOrder(seen[r], g));
        }
        seen[r] = g;
    }
    Ok(rank)
}

/// Places every bit whose lines are grouped on all axes at the ranks of its
/// groups. Conflicting values and uncovered cells are errors.
pub fn assemble(traces: &[BitTensor], dims: &[usize], groupings: &[RowGrouping], ranks: &[Vec<usize>]) -> Result<BitTensor> {
    let k = dims.len();
    for (a, g) in groupings.iter().enumerate() {
        if g.groups.len() > dims[a] {
            return Err(Error::AlignmentFailure(format!(
                "{} groups along axis {a} of extent {}",
                g.groups.len(),
                dims[a]
            )));
        }
    }
    let lookups: Vec<_> = groupings.iter().map(|g| g.lookup(traces)).collect();
    let st = strides(dims);
    let mut cells: Vec<Option<u8>> = vec![None; dims.iter().product()];
    let mut ix = vec![0; k];
    for (j, t) in traces.iter().enumerate() {
        'cell: for (i, &bit) in t.bits().iter().enumerate() {
            unflatten(i, t.dims(), &mut ix);
            let mut flat = 0;
            for a in 0..k {
                let Some(g) = lookups[a][j][ix[a]] else { continue 'cell };
                flat += ranks[a][g] * st[a];
            }
            match cells[flat] {
                Some(v) if v != bit => {
                    let mut at = vec![0; k];
                    unflatten(flat, dims, &mut at);
                    return Err(Error::AlignmentFailure(format!("conflicting values at cell {at:?}")));
                }
                _ => cells[flat] = Some(bit),
            }
        }
    }
    let missing: Vec<Vec<usize>> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_none())
        .map(|(f, _)| {
            let mut at = vec![0; k];
            unflatten(f, dims, &mut at);
            at
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::UncoveredCell(missing));
    }
    BitTensor::new(dims.to_vec(), cells.into_iter().map(Option::unwrap).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "matcher", rename_all = "kebab-case")]
pub enum Matcher {
    Oracle(OracleParams),
    Joint(JointParams),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AlignDiagnostics {
    pub groups: Vec<usize>,
    pub unassigned_lines: usize,
    pub contradictions: usize,
    pub rejected_traces: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReconstruction {
    pub tensor: BitTensor,
    pub diagnostics: AlignDiagnostics,
}

/// Groupings of every axis from a joint alignment: one group per profile
/// line, unmatched lines left unassigned.
pub fn joint_groupings(traces: &[BitTensor], al: &JointAlignment) -> Vec<RowGrouping> {
    let k = al.profile.shape.len();
    (0..k)
        .map(|d| {
            let mut groups: Vec<Vec<Line>> = vec![Vec::new(); al.profile.shape[d]];
            let mut unassigned = Vec::new();
            for (j, t) in traces.iter().enumerate() {
                let n = t.dims()[d];
                match &al.maps[j] {
                    Some(maps) => {
                        for i in 0..n {
                            match maps[d][i] {
                                g if g >= 0 => groups[g as usize].push((j, i)),
                                _ => unassigned.push((j, i)),
                            }
                        }
                    }
                    None => unassigned.extend((0..n).map(|i| (j, i))),
                }
            }
            groups.retain(|g| !g.is_empty());
            RowGrouping { axis: d, groups, unassigned, contradictions: 0 }
        })
        .collect()
}

/// Reconstructs a uniformly random grid of extents `dims` from traces of the
/// grid deletion channel with retention `q`.
pub fn reconstruct_random_grid(traces: &[BitTensor], dims: &[usize], q: f64, matcher: &Matcher) -> Result<GridReconstruction> {
    if traces.iter().any(|t| t.order() != dims.len()) {
        return Err(Error::InvalidInput("trace order differs from the target".into()));
    }
    let k = dims.len();
    let (groupings, rejected) = match matcher {
        Matcher::Oracle(params) => {
            let mut gs = Vec::with_capacity(k);
            for a in 0..k {
                let len: usize = dims.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, &n)| n).product();
                let qe = q.powi(k as i32 - 1);
                gs.push(group_lines(traces, a, len, qe, params)?);
            }
            (gs, 0)
        }
        Matcher::Joint(params) => {
            let al = joint_align(traces, params);
            let rejected = traces
                .iter()
                .zip(&al.maps)
                .filter(|(t, m)| !t.is_empty() && m.is_none())
                .count();
            (joint_groupings(traces, &al), rejected)
        }
    };
    let ranks = groupings
        .iter()
        .map(infer_order)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::AlignmentFailure(e.to_string()))?;
    let tensor = assemble(traces, dims, &groupings, &ranks)?;
    Ok(GridReconstruction {
        tensor,
        diagnostics: AlignDiagnostics {
            groups: groupings.iter().map(|g| g.groups.len()).collect(),
            unassigned_lines: groupings.iter().map(|g| g.unassigned.len()).sum(),
            contradictions: groupings.iter().map(|g| g.contradictions).sum(),
            rejected_traces: rejected,
        },
    })
}

pub fn reconstruct_random_matrix(traces: &[BitMatrix], rows: usize, cols: usize, q: f64, matcher: &Matcher) -> Result<BitMatrix> {
    let ts: Vec<BitTensor> = traces.iter().map(BitMatrix::to_tensor).collect();
    let r = reconstruct_random_grid(&ts, &[rows, cols], q, matcher)?;
    BitMatrix::from_tensor(&r.tensor)
}

pub fn reconstruct_random_tensor(traces: &[BitTensor], dims: &[usize], q: f64, matcher: &Matcher) -> Result<BitTensor> {
    reconstruct_random_grid(traces, dims, q, matcher).map(|r| r.tensor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{delete_matrix, delete_tensor, random_matrix, random_tensor, trace_rng};

    fn oracle_small() -> Matcher {
        Matcher::Oracle(OracleParams { w: 2, g: 2, factor: 0.8, groups: None })
    }

    #[test]
    fn single_trace_without_deletions() {
        let x = random_matrix(5, 5, 0.5, &mut trace_rng(1, 0));
        assert_eq!(reconstruct_random_matrix(std::slice::from_ref(&x), 5, 5, 1.0, &oracle_small()).unwrap(), x);
        assert_eq!(
            reconstruct_random_matrix(std::slice::from_ref(&x), 5, 5, 1.0, &Matcher::Joint(JointParams::default())).unwrap(),
            x
        );
        let t = random_tensor(&[3, 4, 2], 0.5, &mut trace_rng(2, 0));
        assert_eq!(reconstruct_random_tensor(std::slice::from_ref(&t), &[3, 4, 2], 1.0, &oracle_small()).unwrap(), t);
    }

    #[test]
    fn grouping_examples() {
        let x = random_matrix(8, 1 << 16, 0.5, &mut trace_rng(3, 0)).to_tensor();
        let p = OracleParams { w: 16, g: 64, factor: 0.8, groups: None };
        let one = group_lines(std::slice::from_ref(&x), 0, 1 << 16, 1.0, &p).unwrap();
        assert_eq!(one.groups.len(), 8);
        assert!(one.groups.iter().all(|g| g.len() == 1));
        let copies = vec![x.clone(); 4];
        let g = group_lines(&copies, 0, 1 << 16, 1.0, &p).unwrap();
        assert_eq!(g.groups.len(), 8);
        assert!(g.groups.iter().all(|g| g.len() == 4));
        assert_eq!(g.contradictions, 0);
        let mut all: Vec<Line> = g.groups.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 4 * 8);
    }

    #[test]
    fn order_examples() {
        let g = RowGrouping { axis: 0, groups: vec![vec![(0, 7)], vec![(0, 3)]], ..Default::default() };
        assert_eq!(infer_order(&g).unwrap(), vec![1, 0]);
        let g = RowGrouping { axis: 0, groups: vec![vec![(0, 0)], vec![(1, 0)]], ..Default::default() };
        assert!(matches!(infer_order(&g), Err(Error::UnorderedPair(0, 1))));
        let g = RowGrouping {
            axis: 0,
            groups: vec![vec![(0, 0), (1, 1)], vec![(0, 1), (1, 0)]],
            ..Default::default()
        };
        assert!(matches!(infer_order(&g), Err(Error::InconsistentOrder(0, 1))));
        // a < b, b < c, c < a
        let g = RowGrouping {
            axis: 0,
            groups: vec![vec![(0, 0), (2, 1)], vec![(0, 1), (1, 0)], vec![(1, 1), (2, 0)]],
            ..Default::default()
        };
        assert!(matches!(infer_order(&g), Err(Error::InconsistentOrder(..))));
    }

    #[test]
    fn true_alignment_assembles_exactly() {
        for seed in 0..20 {
            let x = random_tensor(&[6, 5, 4], 0.5, &mut trace_rng(4, seed));
            let (traces, maps): (Vec<BitTensor>, Vec<Vec<RetentionMap>>) =
                (0..25).map(|i| delete_tensor(&x, 0.3, &mut trace_rng(100 + seed, i))).unzip();
            let gs: Vec<RowGrouping> = (0..3)
                .map(|a| true_grouping(&maps.iter().map(|m| &m[a]).collect::<Vec<_>>(), a))
                .collect();
            let ranks: Vec<Vec<usize>> = gs.iter().map(|g| infer_order(g).unwrap()).collect();
            // group order follows the source order of the kept lines
            for (a, r) in ranks.iter().enumerate() {
                for (gi, members) in gs[a].groups.iter().enumerate() {
                    let (t, i) = members[0];
                    let src = maps[t][a].kept[i];
                    let below = (0..gs[a].groups.len())
                        .filter(|&h| {
                            let (t2, i2) = gs[a].groups[h][0];
                            maps[t2][a].kept[i2] < src
                        })
                        .count();
                    assert_eq!(r[gi], below);
                }
            }
            match assemble(&traces, &[6, 5, 4], &gs, &ranks) {
                Ok(t) => assert_eq!(t, x),
                Err(Error::UncoveredCell(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn uncovered_cells_are_listed() {
        let t = BitTensor::new(vec![1, 2], vec![1, 0]).unwrap();
        let gs = vec![
            RowGrouping { axis: 0, groups: vec![vec![(0, 0)]], ..Default::default() },
            RowGrouping { axis: 1, groups: vec![vec![(0, 0)], vec![(0, 1)]], ..Default::default() },
        ];
        let err = assemble(&[t], &[2, 2], &gs, &[vec![0], vec![0, 1]]).unwrap_err();
        assert!(matches!(err, Error::UncoveredCell(ref c) if c == &vec![vec![1, 0], vec![1, 1]]));
    }

    #[test]
    fn joint_matrix_recovery() {
        let ok = (0..5u64)
            .filter(|&run| {
                let x = random_matrix(16, 16, 0.5, &mut trace_rng(5, run));
                let traces: Vec<BitMatrix> = (0..30).map(|i| delete_matrix(&x, 0.3, &mut trace_rng(200 + run, i)).0).collect();
                reconstruct_random_matrix(&traces, 16, 16, 0.7, &Matcher::Joint(JointParams::default())).ok() == Some(x)
            })
            .count();
        assert!(ok >= 4, "{ok}/5");
    }

    #[test]
    fn joint_grouping_matches_retention() {
        let x = random_matrix(16, 16, 0.5, &mut trace_rng(6, 0));
        let (traces, maps): (Vec<BitTensor>, Vec<(RetentionMap, RetentionMap)>) = (0..30)
            .map(|i| {
                let (t, r, c) = delete_matrix(&x, 0.3, &mut trace_rng(7, i));
                (t.to_tensor(), (r, c))
            })
            .unzip();
        let al = joint_align(&traces, &JointParams::default());
        let gs = joint_groupings(&traces, &al);
        let rows = true_grouping(&maps.iter().map(|m| &m.0).collect::<Vec<_>>(), 0);
        assert!(gs[0].same_partition(&rows));
    }
}
