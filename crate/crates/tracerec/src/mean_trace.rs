//! Expected traces and mean-based reconstruction.
//!
//! Under the grid deletion channel every axis is thinned independently, so
//! the expected trace of a grid is the grid transformed along each axis by
//! the same matrix `W[i][k] = C(k, i) p^(k-i) q^(i+1)`: the probability that
//! source index k survives and lands at trace index i.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::bits::{strides, BitString, BitTensor, DenseGrid};
use crate::error::{Error, Result};
use crate::estimators::PositionMeans;

#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedTrace {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub q: f64,
}

impl ExpectedTrace {
    pub fn from_means(means: &PositionMeans, q: f64) -> Self {
        Self {
            dims: means.dims.clone(),
            values: means.values(),
            q,
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let st = strides(&self.dims);
        self.values[idx.iter().zip(&st).map(|(a, s)| a * s).sum::<usize>()]
    }

    /// Largest entrywise absolute difference.
    pub fn linf(&self, other: &ExpectedTrace) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(linf(&self.values, &other.values))
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `W[i][k]` for one axis of length n, stored row-major by i.
pub fn axis_weights(n: usize, q: f64) -> Vec<f64> {
    let p = 1.0 - q;
    // pmf[k][i] = C(k, i) p^(k-i) q^i by the Pascal recurrence
    let mut w = vec![0.0; n * n];
    let mut row = vec![0.0; n + 1];
    row[0] = 1.0;
    for k in 0..n {
        for i in 0..=k {
            w[i * n + k] = q * row[i];
        }
        for i in (1..=k + 1).rev() {
            row[i] = p * row[i] + q * row[i - 1];
        }
        row[0] *= p;
    }
    w
}

/// Applies the per-axis transform along every axis of a dense grid.
pub fn expected_trace_grid(dims: &[usize], cells: &[u8], q: f64) -> ExpectedTrace {
    let mut v: Vec<f64> = cells.iter().map(|&b| b as f64).collect();
    let st = strides(dims);
    let total = v.len();
    let mut fiber = Vec::new();
    for (axis, &n) in dims.iter().enumerate() {
        if total == 0 {
            break;
        }
        let w = axis_weights(n, q);
        let s = st[axis];
        // fibers along `axis` start at indices whose `axis` coordinate is zero
        for start in 0..total {
            if !(start / s).is_multiple_of(n) {
                continue;
            }
            fiber.clear();
            fiber.extend((0..n).map(|k| v[start + k * s]));
            if fiber.iter().all(|&x| x == 0.0) {
                continue;
            }
            for i in 0..n {
                let mut acc = 0.0;
                for k in i..n {
                    acc += w[i * n + k] * fiber[k];
                }
                v[start + i * s] = acc;
            }
        }
    }
    ExpectedTrace {
        dims: dims.to_vec(),
        values: v,
        q,
    }
}

pub fn expected_trace_sequence(x: &BitString, q: f64) -> ExpectedTrace {
    expected_trace_grid(&[x.len()], &x.to_vec(), q)
}

pub fn expected_trace_matrix(x: &crate::bits::BitMatrix, q: f64) -> ExpectedTrace {
    expected_trace_grid(&x.shape(), x.cells(), q)
}

pub fn expected_trace_tensor(t: &BitTensor, q: f64) -> ExpectedTrace {
    expected_trace_grid(t.dims(), t.bits(), q)
}

/// Polynomial with coefficients in {-1, 0, 1}, one axis per variable;
/// coefficient of z_0^e_0 ... z_{k-1}^e_{k-1} stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LittlewoodPoly {
    pub degs: Vec<usize>,
    pub coeffs: Vec<i8>,
}

impl LittlewoodPoly {
    pub fn new(degs: Vec<usize>, coeffs: Vec<i8>) -> Result<Self> {
        let size: usize = degs.iter().map(|d| d + 1).product();
        if coeffs.len() != size || coeffs.iter().any(|c| !(-1..=1).contains(c)) {
            return Err(Error::InvalidInput("coefficients must fill the grid with values in {-1,0,1}".into()));
        }
        Ok(Self { degs, coeffs })
    }

    /// Difference of two binary grids of equal shape.
    pub fn from_difference(dims: &[usize], a: &[u8], b: &[u8]) -> Result<Self> {
        let coeffs = a.iter().zip(b).map(|(&x, &y)| x as i8 - y as i8).collect();
        Self::new(dims.iter().map(|d| d.saturating_sub(1)).collect(), coeffs)
    }

    pub fn random<R: Rng + ?Sized>(degs: Vec<usize>, rng: &mut R) -> Self {
        let size: usize = degs.iter().map(|d| d + 1).product();
        loop {
            let coeffs: Vec<i8> = (0..size).map(|_| rng.random_range(-1..=1)).collect();
            if coeffs.iter().any(|&c| c != 0) {
                return Self { degs, coeffs };
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        let shape: Vec<usize> = self.degs.iter().map(|d| d + 1).collect();
        let mut idx = vec![0; shape.len()];
        let mut acc = Complex64::new(0.0, 0.0);
        for (flat, &c) in self.coeffs.iter().enumerate() {
            if c == 0 {
                continue;
            }
            crate::bits::unflatten(flat, &shape, &mut idx);
            let mut term = Complex64::new(c as f64, 0.0);
            for (zi, &e) in z.iter().zip(&idx) {
                term *= zi.powu(e as u32);
            }
            acc += term;
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArcMax {
    pub theta: Vec<f64>,
    pub modulus: f64,
}

/// Maximizes |f| over a uniform grid on the arcs |theta| <= pi / L of every
/// variable, `grid` points per axis including both endpoints. The search
/// contracts one axis at a time so each grid point costs a few
/// multiply-adds.
pub fn littlewood_arc_max(f: &LittlewoodPoly, l: f64, grid: usize) -> Result<ArcMax> {
    if f.is_zero() {
        return Err(Error::InvalidInput("polynomial is identically zero".into()));
    }
    if l < 1.0 || grid == 0 {
        return Err(Error::InvalidInput("need L >= 1 and a nonempty grid".into()));
    }
    let half = std::f64::consts::PI / l;
    let thetas: Vec<f64> = if grid == 1 {
        vec![0.0]
    } else {
        (0..grid).map(|j| -half + 2.0 * half * j as f64 / (grid - 1) as f64).collect()
    };
    let coeffs: Vec<Complex64> = f.coeffs.iter().map(|&c| Complex64::new(c as f64, 0.0)).collect();
    let shape: Vec<usize> = f.degs.iter().map(|d| d + 1).collect();
    let mut best = ArcMax {
        theta: vec![0.0; shape.len()],
        modulus: -1.0,
    };
    let mut point = vec![0usize; shape.len()];
    search(&coeffs, &shape, &thetas, 0, &mut point, &mut best);
    Ok(best)
}

fn search(c: &[Complex64], shape: &[usize], thetas: &[f64], axis: usize, point: &mut Vec<usize>, best: &mut ArcMax) {
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut reduced = vec![Complex64::new(0.0, 0.0); inner];
    for (j, &th) in thetas.iter().enumerate() {
        let z = Complex64::from_polar(1.0, th);
        reduced.iter_mut().for_each(|r| *r = Complex64::new(0.0, 0.0));
        // Horner along this axis
        for e in (0..d).rev() {
            let slab = &c[e * inner..(e + 1) * inner];
            for (r, &s) in reduced.iter_mut().zip(slab) {
                *r = *r * z + s;
            }
        }
        point[axis] = j;
        if axis + 1 == shape.len() {
            let m = reduced[0].norm();
            if m > best.modulus {
                best.modulus = m;
                best.theta = point.iter().map(|&i| thetas[i]).collect();
            }
        } else {
            search(&reduced, shape, thetas, axis + 1, point, best);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Pick {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairVerdict {
    pub choice: Pick,
    pub tie: bool,
    pub dist_x: f64,
    pub dist_y: f64,
}

/// Chooses the grid whose expected trace is closer to the empirical means in
/// L-infinity distance. Ties go to x.
pub fn pair_test<G: DenseGrid>(empirical: &ExpectedTrace, x: &G, y: &G, q: f64) -> Result<PairVerdict> {
    if x.shape() != y.shape() || x.shape() != empirical.dims {
        return Err(Error::InvalidInput("pair test needs equal dimensions".into()));
    }
    let ex = expected_trace_grid(&x.shape(), x.cells(), q);
    let ey = expected_trace_grid(&y.shape(), y.cells(), q);
    let dist_x = linf(&empirical.values, &ex.values);
    let dist_y = linf(&empirical.values, &ey.values);
    Ok(PairVerdict {
        choice: if dist_y < dist_x { Pick::Y } else { Pick::X },
        tie: dist_x == dist_y,
        dist_x,
        dist_y,
    })
}

/// Candidate sources for the tournament.
#[derive(Clone, Debug)]
pub enum Candidates {
    /// Every binary grid of the given shape, in lexicographic order of the
    /// row-major cells.
    All,
    List(Vec<BitTensor>),
}

pub const DEFAULT_TOURNAMENT_BUDGET: u128 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct TournamentResult {
    pub winner: BitTensor,
    pub distance: f64,
    pub candidates: u128,
}

/// Returns the candidate whose expected trace is closest in L-infinity to the
/// empirical position means; the first one in lexicographic order wins ties.
pub fn tournament_reconstruct<G: DenseGrid>(
    traces: &[G],
    dims: &[usize],
    candidates: &Candidates,
    q: f64,
    budget: u128,
) -> Result<TournamentResult> {
    let means = crate::estimators::empirical_grid_means(traces, dims)?;
    tournament_from_means(&means.values(), dims, candidates, q, budget)
}

pub fn tournament_from_means(
    empirical: &[f64],
    dims: &[usize],
    candidates: &Candidates,
    q: f64,
    budget: u128,
) -> Result<TournamentResult> {
    let cells: usize = dims.iter().product();
    match candidates {
        Candidates::All => {
            let count = if cells >= 127 { u128::MAX } else { 1u128 << cells };
            if count > budget {
                return Err(Error::BudgetExceeded { count, cap: budget });
            }
            // expected traces are linear in the source, so sum per-cell bases
            let basis: Vec<Vec<f64>> = (0..cells)
                .map(|c| {
                    let mut e = vec![0u8; cells];
                    e[c] = 1;
                    expected_trace_grid(dims, &e, q).values
                })
                .collect();
            let mut best = (f64::INFINITY, 0u64);
            let mut acc = vec![0.0; cells];
            for idx in 0..count as u64 {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (c, b) in basis.iter().enumerate() {
                    if idx >> (cells - 1 - c) & 1 == 1 {
                        acc.iter_mut().zip(b).for_each(|(a, v)| *a += v);
                    }
                }
                let d = linf(&acc, empirical);
                if d < best.0 {
                    best = (d, idx);
                }
            }
            let bits = (0..cells).map(|c| (best.1 >> (cells - 1 - c) & 1) as u8).collect();
            Ok(TournamentResult {
                winner: BitTensor::new(dims.to_vec(), bits)?,
                distance: best.0,
                candidates: count,
            })
        }
        Candidates::List(list) => {
            if list.is_empty() {
                return Err(Error::InvalidInput("no candidates".into()));
            }
            if list.len() as u128 > budget {
                return Err(Error::BudgetExceeded { count: list.len() as u128, cap: budget });
            }
            let mut order: Vec<&BitTensor> = list.iter().collect();
            order.sort_by(|a, b| a.bits().cmp(b.bits()));
            let mut best: Option<(f64, &BitTensor)> = None;
            for c in order {
                if c.dims() != dims {
                    return Err(Error::InvalidInput("candidate dimensions differ".into()));
                }
                let d = linf(&expected_trace_tensor(c, q).values, empirical);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
            let (distance, winner) = best.unwrap();
            Ok(TournamentResult {
                winner: winner.clone(),
                distance,
                candidates: list.len() as u128,
            })
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::bits::BitMatrix;
    use crate::channels::{delete_matrix, delete_sequence_trace, delete_tensor, trace_rng, ChannelParams};
    use crate::estimators::empirical_grid_means;
    use proptest::prelude::*;

    /// Average over every row and column deletion pattern.
    pub(crate) fn brute_matrix(x: &BitMatrix, p: f64) -> Vec<f64> {
        let (r, c) = (x.rows(), x.cols());
        let q = 1.0 - p;
        let mut out = vec![0.0; r * c];
        for rm in 0u32..(1 << r) {
            for cm in 0u32..(1 << c) {
                let prob = q.powi((rm.count_ones() + cm.count_ones()) as i32)
                    * p.powi((r + c) as i32 - (rm.count_ones() + cm.count_ones()) as i32);
                let rows: Vec<usize> = (0..r).filter(|&i| rm >> i & 1 == 1).collect();
                let cols: Vec<usize> = (0..c).filter(|&j| cm >> j & 1 == 1).collect();
                for (i, &ri) in rows.iter().enumerate() {
                    for (j, &cj) in cols.iter().enumerate() {
                        out[i * c + j] += prob * x.get(ri, cj) as f64;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn sequence_examples() {
        let e = |s: &str| expected_trace_sequence(&s.parse().unwrap(), 0.5).values;
        assert_eq!(e("1"), vec![0.5]);
        assert_eq!(e("11"), vec![0.75, 0.25]);
        assert_eq!(e("0000"), vec![0.0; 4]);
    }

    #[test]
    fn matrix_examples() {
        let id = expected_trace_matrix(&BitMatrix::identity(2), 0.5);
        assert!((id.values[0] - 5.0 / 16.0).abs() < 1e-15);
        assert_eq!(expected_trace_matrix(&BitMatrix::zeros(3, 3), 0.3).values, vec![0.0; 9]);
        let one: BitMatrix = "1x1:1".parse().unwrap();
        assert!((expected_trace_matrix(&one, 0.7).values[0] - 0.49).abs() < 1e-15);
    }

    #[test]
    fn tensor_examples() {
        let t = BitTensor::new(vec![2, 2, 2], vec![1; 8]).unwrap();
        assert!((expected_trace_tensor(&t, 0.5).values[0] - 27.0 / 64.0).abs() < 1e-15);
        let x: BitString = "1101001".parse().unwrap();
        let t = BitTensor::new(vec![7], x.to_vec()).unwrap();
        assert_eq!(expected_trace_tensor(&t, 0.3).values, expected_trace_sequence(&x, 0.3).values);
        assert!(expected_trace_tensor(&BitTensor::zeros(vec![2, 3, 2]), 0.5).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_entry_by_enumeration() {
        // all 2^6 slice deletion patterns of a 2x2x2 all-ones tensor
        let t = BitTensor::new(vec![2, 2, 2], vec![1; 8]).unwrap();
        let mut acc = 0.0;
        for mask in 0u32..64 {
            let keep: Vec<Vec<usize>> = (0..3)
                .map(|a| (0..2).filter(|&i| mask >> (2 * a + i) & 1 == 1).collect())
                .collect();
            let s = t.select(&keep);
            if !s.is_empty() {
                acc += s.bits()[0] as f64 / 64.0;
            }
        }
        assert!((acc - 27.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_dp_matches_enumeration_3x3() {
        for p in [0.3, 0.5] {
            for idx in 0..512 {
                let x = BitMatrix::from_index(3, 3, idx);
                let dp = expected_trace_matrix(&x, 1.0 - p).values;
                assert!(linf(&dp, &brute_matrix(&x, p)) <= 1e-12);
            }
        }
    }

    #[test]
    fn distinct_3x3_are_separated() {
        let all: Vec<Vec<f64>> = (0..512).map(|i| expected_trace_matrix(&BitMatrix::from_index(3, 3, i), 0.5).values).collect();
        for a in 0..512 {
            for b in a + 1..512 {
                assert!(linf(&all[a], &all[b]) > 0.0);
            }
        }
    }

    #[test]
    fn monte_carlo_consistency() {
        let mut rng = trace_rng(9, 0);
        let x = crate::channels::random_matrix(5, 5, 0.5, &mut rng);
        let m = 50_000;
        let traces: Vec<BitMatrix> = (0..m).map(|i| delete_matrix(&x, 0.4, &mut trace_rng(10, i)).0).collect();
        let emp = empirical_grid_means(&traces, &[5, 5]).unwrap().values();
        let tol = 5.0 * ((25f64).ln() / m as f64).sqrt();
        assert!(linf(&emp, &expected_trace_matrix(&x, 0.6).values) <= tol);
        let s: BitString = "1011001110".parse().unwrap();
        let p = ChannelParams::symmetric(0.3).unwrap();
        let mut pm = PositionMeans::zeros(&[10]);
        for i in 0..m {
            pm.add_string(&delete_sequence_trace(&s, p, &mut trace_rng(11, i))).unwrap();
        }
        assert!(linf(&pm.values(), &expected_trace_sequence(&s, 0.7).values) <= 5.0 * ((10f64).ln() / m as f64).sqrt());
    }

    #[test]
    fn littlewood_examples() {
        let one = LittlewoodPoly::new(vec![0], vec![1]).unwrap();
        assert!((littlewood_arc_max(&one, 2.0, 16).unwrap().modulus - 1.0).abs() < 1e-12);
        let z1z2 = LittlewoodPoly::new(vec![1, 1], vec![0, 0, 0, 1]).unwrap();
        assert!((littlewood_arc_max(&z1z2, 3.0, 33).unwrap().modulus - 1.0).abs() < 1e-12);
        let zero = LittlewoodPoly::new(vec![1], vec![0, 0]).unwrap();
        assert!(littlewood_arc_max(&zero, 2.0, 8).is_err());
        // 1 - z is largest at the arc ends
        let f = LittlewoodPoly::new(vec![1], vec![1, -1]).unwrap();
        let r = littlewood_arc_max(&f, 2.0, 101).unwrap();
        assert!((r.modulus - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn arc_search_matches_direct_evaluation() {
        let mut rng = trace_rng(12, 0);
        let f = LittlewoodPoly::random(vec![3, 2, 2], &mut rng);
        let r = littlewood_arc_max(&f, 2.0, 9).unwrap();
        let z: Vec<Complex64> = r.theta.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
        assert!((f.eval(&z).norm() - r.modulus).abs() < 1e-9);
        let grid: Vec<f64> = (0..9).map(|j| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * j as f64 / 8.0).collect();
        let mut direct: f64 = 0.0;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let z = [Complex64::from_polar(1.0, a), Complex64::from_polar(1.0, b), Complex64::from_polar(1.0, c)];
                    direct = direct.max(f.eval(&z).norm());
                }
            }
        }
        assert!((direct - r.modulus).abs() < 1e-9);
    }

    #[test]
    fn pair_test_examples() {
        let x = BitMatrix::from_index(4, 4, 0xA53C);
        let y = BitMatrix::from_index(4, 4, 0xA53D);
        let exact = expected_trace_matrix(&x, 0.5);
        let v = pair_test(&exact, &x, &y, 0.5).unwrap();
        assert_eq!(v.choice, Pick::X);
        assert_eq!(pair_test(&exact, &y, &x, 0.5).unwrap().choice, Pick::Y);
        assert!(pair_test(&exact, &x, &x, 0.5).unwrap().tie);
        let z = BitMatrix::zeros(3, 3);
        assert!(pair_test(&exact, &z, &z, 0.5).is_err());
    }

    #[test]
    fn pair_test_monte_carlo() {
        let ok = (0..100u64)
            .filter(|&run| {
                let mut rng = trace_rng(13, run);
                let x = crate::channels::random_matrix(4, 4, 0.5, &mut rng);
                let mut y = x.clone();
                let cell = (run % 16) as usize;
                y.set(cell / 4, cell % 4, 1 - x.get(cell / 4, cell % 4));
                let traces: Vec<BitMatrix> = (0..100_000).map(|i| delete_matrix(&x, 0.5, &mut trace_rng(1000 + run, i)).0).collect();
                let emp = ExpectedTrace::from_means(&empirical_grid_means(&traces, &[4, 4]).unwrap(), 0.5);
                pair_test(&emp, &x, &y, 0.5).unwrap().choice == Pick::X
            })
            .count();
        assert!(ok >= 99, "{ok}/100");
    }

    #[test]
    fn tournament_small() {
        let x = BitMatrix::from_index(2, 2, 0b1001).to_tensor();
        let only = Candidates::List(vec![x.clone()]);
        let traces: Vec<BitTensor> = (0..10).map(|i| delete_tensor(&x, 0.5, &mut trace_rng(14, i)).0).collect();
        assert_eq!(tournament_reconstruct(&traces, &[2, 2], &only, 0.5, 10).unwrap().winner, x);
        assert!(matches!(
            tournament_reconstruct(&traces, &[2, 2], &Candidates::All, 0.5, 8),
            Err(Error::BudgetExceeded { count: 16, cap: 8 })
        ));
        // exact means pick the truth among all 2^9 candidates
        let x = BitMatrix::from_index(3, 3, 0b101_110_011);
        let e = expected_trace_matrix(&x, 0.5).values;
        let r = tournament_from_means(&e, &[3, 3], &Candidates::All, 0.5, 1 << 9).unwrap();
        assert_eq!(r.winner, x.to_tensor());
        assert_eq!(r.distance, 0.0);
        let list = Candidates::List((0..512).map(|i| BitMatrix::from_index(3, 3, i).to_tensor()).collect());
        assert_eq!(tournament_from_means(&e, &[3, 3], &list, 0.5, 1 << 9).unwrap().winner, x.to_tensor());
    }

    #[test]
    fn tournament_3x3_monte_carlo() {
        let ok = (0..100u64)
            .filter(|&run| {
                let x = crate::channels::random_matrix(3, 3, 0.5, &mut trace_rng(15, run));
                let traces: Vec<BitMatrix> = (0..100_000).map(|i| delete_matrix(&x, 0.5, &mut trace_rng(2000 + run, i)).0).collect();
                tournament_reconstruct(&traces, &[3, 3], &Candidates::All, 0.5, 1 << 9).unwrap().winner == x.to_tensor()
            })
            .count();
        assert!(ok >= 99, "{ok}/100");
    }

    proptest! {
        #[test]
        fn transpose_equivariance(idx in 0u64..(1 << 12)) {
            let x = BitMatrix::from_index(3, 4, idx);
            let a = expected_trace_matrix(&x.transpose(), 0.6).values;
            let b = expected_trace_matrix(&x, 0.6).values;
            for i in 0..4 {
                for j in 0..3 {
                    prop_assert!((a[i * 3 + j] - b[j * 4 + i]).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn linear_over_disjoint_supports(a in 0u64..(1 << 9), b in 0u64..(1 << 9)) {
            let b = b & !a;
            let ea = expected_trace_matrix(&BitMatrix::from_index(3, 3, a), 0.5).values;
            let eb = expected_trace_matrix(&BitMatrix::from_index(3, 3, b), 0.5).values;
            let eab = expected_trace_matrix(&BitMatrix::from_index(3, 3, a | b), 0.5).values;
            for i in 0..9 {
                prop_assert!((ea[i] + eb[i] - eab[i]).abs() < 1e-14);
            }
        }

        #[test]
        fn entries_in_unit_interval(bits in prop::collection::vec(0u8..2, 12), q in 0.05f64..1.0) {
            let t = BitTensor::new(vec![2, 3, 2], bits).unwrap();
            prop_assert!(expected_trace_tensor(&t, q).values.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        }
    }
}
