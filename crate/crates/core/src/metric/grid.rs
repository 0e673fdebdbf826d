//! Metrics sampled on a Cartesian lattice covering an annulus.
//!
//! Derivatives are central differences at lattice nodes, interpolated
//! multilinearly to the query point; both steps are second order in the
//! spacing.

use super::{check_domain, MetricField, MetricJet, Regularity};
use crate::{linalg, util, Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// Annulus and spacing of a lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub spacing: f64,
    pub r_in: f64,
    pub r_out: f64,
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lattice spacing must be positive, got {}",
                self.spacing
            )));
        }
        if !(self.r_in > 0.0 && self.r_out > self.r_in) {
            return Err(Error::InvalidParameter(format!(
                "annulus [{}, {}] is empty",
                self.r_in, self.r_out
            )));
        }
        Ok(())
    }

    /// Extra radial margin so every interpolation corner has its full
    /// difference stencil.
    pub fn padding(&self, n: usize) -> f64 {
        self.spacing * ((n as f64).sqrt() + 2.0)
    }
}

const KEY_BITS: u32 = 16;
const KEY_OFFSET: i64 = 1 << (KEY_BITS - 1);
const MAX_GRID_DIM: usize = 8;

fn key(idx: &[i64]) -> Option<u128> {
    let mut k: u128 = 0;
    for &i in idx {
        let shifted = i + KEY_OFFSET;
        if !(0..(1 << KEY_BITS)).contains(&shifted) {
            return None;
        }
        k = (k << KEY_BITS) | shifted as u128;
    }
    Some(k)
}

/// Sampled metric: upper-triangle `g` values at lattice nodes `h·idx`.
#[derive(Debug, Clone)]
pub struct GridMetric {
    n: usize,
    spec: LatticeSpec,
    index: HashMap<u128, usize>,
    data: Vec<f64>,
    nodes: Vec<Vec<i64>>,
}

fn upper_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl GridMetric {
    fn empty(n: usize, spec: LatticeSpec) -> Result<Self> {
        if !(3..=MAX_GRID_DIM).contains(&n) {
            return Err(Error::InvalidParameter(format!(
                "grid metrics support 3 <= n <= {MAX_GRID_DIM}, got {n}"
            )));
        }
        spec.validate()?;
        let reach = ((spec.r_out + spec.padding(n)) / spec.spacing).ceil() as i64;
        if reach >= KEY_OFFSET {
            return Err(Error::InvalidParameter(format!(
                "lattice too fine: {reach} nodes per half-axis"
            )));
        }
        Ok(GridMetric {
            n,
            spec,
            index: HashMap::new(),
            data: Vec::new(),
            nodes: Vec::new(),
        })
    }

    fn insert(&mut self, idx: Vec<i64>, upper: &[f64]) -> Result<()> {
        let k = key(&idx).ok_or_else(|| Error::Parse(format!("lattice index {idx:?} out of range")))?;
        if self.index.contains_key(&k) {
            return Err(Error::Parse(format!("duplicate lattice point {idx:?}")));
        }
        let full = expand_upper(self.n, upper);
        if !is_positive_definite(self.n, &full) {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 * self.spec.spacing).collect();
            return Err(Error::Singular(x));
        }
        self.index.insert(k, self.nodes.len());
        self.data.extend_from_slice(upper);
        self.nodes.push(idx);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Upper triangle of `g` at lattice index `idx`, if sampled.
    pub fn sample(&self, idx: &[i64]) -> Option<&[f64]> {
        let slot = *self.index.get(&key(idx)?)?;
        let m = upper_len(self.n);
        Some(&self.data[slot * m..(slot + 1) * m])
    }

    fn sample_or_err(&self, idx: &[i64]) -> Result<&[f64]> {
        self.sample(idx).ok_or_else(|| Error::OutsideDomain {
            point: idx.iter().map(|&i| i as f64 * self.spec.spacing).collect(),
            reason: "lattice stencil leaves the sampled region".into(),
        })
    }

    /// Writes the plain-text grid format.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let s = self.spec;
        writeln!(
            out,
            "{} {:.16e} {:.16e} {:.16e} {}",
            self.n,
            s.spacing,
            s.r_in,
            s.r_out,
            self.nodes.len()
        )
        .expect("write to string");
        let m = upper_len(self.n);
        for (slot, idx) in self.nodes.iter().enumerate() {
            let fields = idx
                .iter()
                .map(|&i| i as f64 * s.spacing)
                .chain(self.data[slot * m..(slot + 1) * m].iter().copied())
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>();
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty grid file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 {
            return Err(Error::Parse(format!(
                "header must be `n spacing R_in R_out count`, got {header:?}"
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad header field {s:?}: {e}")))
        };
        let n: usize = h[0]
            .parse()
            .map_err(|e| Error::Parse(format!("bad dimension {:?}: {e}", h[0])))?;
        let spec = LatticeSpec {
            spacing: num(h[1])?,
            r_in: num(h[2])?,
            r_out: num(h[3])?,
        };
        let count: usize = h[4]
            .parse()
            .map_err(|e| Error::Parse(format!("bad count {:?}: {e}", h[4])))?;
        let mut grid = Self::empty(n, spec)?;
        let m = upper_len(n);
        for (lineno, line) in lines.enumerate() {
            let vals = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("record {}: {e}", lineno + 1)))?;
            if vals.len() != n + m {
                return Err(Error::Parse(format!(
                    "record {} has {} fields, expected {}",
                    lineno + 1,
                    vals.len(),
                    n + m
                )));
            }
            let mut idx = Vec::with_capacity(n);
            for &x in &vals[..n] {
                let q = x / spec.spacing;
                let i = q.round();
                if (q - i).abs() > 1e-6 {
                    return Err(Error::Parse(format!(
                        "record {}: coordinate {x} is not on the lattice",
                        lineno + 1
                    )));
                }
                idx.push(i as i64);
            }
            grid.insert(idx, &vals[n..])?;
        }
        if grid.len() != count {
            return Err(Error::Parse(format!(
                "header declares {count} records, found {}",
                grid.len()
            )));
        }
        Ok(grid)
    }
}

fn expand_upper(n: usize, upper: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    let mut p = 0;
    for i in 0..n {
        for j in i..n {
            g[i * n + j] = upper[p];
            g[j * n + i] = upper[p];
            p += 1;
        }
    }
    g
}

fn is_positive_definite(n: usize, g: &[f64]) -> bool {
    g.iter().all(|v| v.is_finite())
        && nalgebra::DMatrix::from_row_slice(n, n, g)
            .cholesky()
            .is_some()
}

/// Samples `metric` on the lattice `h·Zⁿ` over the padded annulus.
pub fn sample_to_grid(metric: &dyn MetricField, spec: LatticeSpec) -> Result<GridMetric> {
    let n = metric.dim();
    let mut grid = GridMetric::empty(n, spec)?;
    let pad = spec.padding(n);
    let lo = spec.r_in - pad;
    let hi = spec.r_out + pad;
    if lo < metric.inner_radius() || hi > metric.outer_radius() {
        return Err(Error::InvalidParameter(format!(
            "padded annulus [{lo}, {hi}] leaves the metric domain; \
             reduce the spacing or shrink the annulus"
        )));
    }
    let h = spec.spacing;
    let reach = (hi / h).ceil() as i64;
    let mut candidates = Vec::new();
    let mut idx = vec![-reach; n];
    loop {
        let r = idx.iter().map(|&i| (i as f64 * h).powi(2)).sum::<f64>().sqrt();
        if r >= lo && r <= hi {
            candidates.push(idx.clone());
        }
        // odometer increment
        let mut d = 0;
        loop {
            if d == n {
                break;
            }
            idx[d] += 1;
            if idx[d] <= reach {
                break;
            }
            idx[d] = -reach;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    let values = util::ordered_map(&candidates, |idx| {
        let x: Vec<f64> = idx.iter().map(|&i| i as f64 * h).collect();
        metric.eval(&x).map(|g| {
            let mut up = Vec::with_capacity(upper_len(n));
            for i in 0..n {
                for j in i..n {
                    up.push(g[i * n + j]);
                }
            }
            up
        })
    });
    for (idx, v) in candidates.into_iter().zip(values) {
        grid.insert(idx, &v?)?;
    }
    Ok(grid)
}

/// A [`GridMetric`] viewed as a [`MetricField`] on `[r_in, r_out]`.
#[derive(Debug, Clone)]
pub struct LiftedGrid {
    grid: GridMetric,
    tau: f64,
    comparability: f64,
    id: String,
}

pub fn lift_grid(grid: GridMetric) -> Result<LiftedGrid> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("grid has no samples".into()));
    }
    let n = grid.n;
    let m = upper_len(n);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    // per log-radius bin: largest |g - δ|
    let bins = 8;
    let s = grid.spec;
    let mut bin_max = vec![0.0f64; bins];
    let mut bin_r = vec![0.0f64; bins];
    let span = (s.r_out / s.r_in).ln();
    for (slot, idx) in grid.nodes.iter().enumerate() {
        let g = expand_upper(n, &grid.data[slot * m..(slot + 1) * m]);
        let ev = linalg::sym_eigenvalues(n, &g);
        lo = lo.min(ev[0]);
        hi = hi.max(ev[n - 1]);
        let r = idx.iter().map(|&i| (i as f64 * s.spacing).powi(2)).sum::<f64>().sqrt();
        if r < s.r_in || r > s.r_out {
            continue;
        }
        let b = (((r / s.r_in).ln() / span * bins as f64) as usize).min(bins - 1);
        let e = util::frobenius(
            &g.iter()
                .zip(linalg::identity(n))
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        if e >= bin_max[b] {
            bin_max[b] = e;
            bin_r[b] = r;
        }
    }
    let pairs: Vec<(f64, f64)> = bin_r
        .iter()
        .zip(&bin_max)
        .filter(|(r, e)| **r > 0.0 && **e > 0.0)
        .map(|(r, e)| (*r, *e))
        .collect();
    let tau = if pairs.len() >= 2 {
        let (rs, es): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        util::fit_power_decay(&rs, &es).0
    } else {
        f64::INFINITY
    };
    let id = format!(
        "grid(n={n},h={},[{},{}],count={})",
        s.spacing,
        s.r_in,
        s.r_out,
        grid.len()
    );
    Ok(LiftedGrid {
        grid,
        tau,
        comparability: hi.max(1.0 / lo).max(1.0),
        id,
    })
}

impl LiftedGrid {
    pub fn grid(&self) -> &GridMetric {
        &self.grid
    }

    /// Nodal value and central-difference derivatives at lattice index `idx`.
    fn nodal(&self, idx: &[i64], order: usize, out: &mut NodalJet) -> Result<()> {
        let n = self.grid.n;
        let h = self.grid.spec.spacing;
        let up = upper_len(n);
        out.g.copy_from_slice(self.grid.sample_or_err(idx)?);
        if order == 0 {
            return Ok(());
        }
        let mut probe = idx.to_vec();
        let centre = out.g.clone();
        for k in 0..n {
            probe[k] += 1;
            let p = self.grid.sample_or_err(&probe)?.to_vec();
            probe[k] -= 2;
            let q = self.grid.sample_or_err(&probe)?.to_vec();
            probe[k] += 1;
            for c in 0..up {
                out.dg[k * up + c] = (p[c] - q[c]) / (2.0 * h);
                if order >= 2 {
                    out.ddg[(k * n + k) * up + c] = (p[c] - 2.0 * centre[c] + q[c]) / (h * h);
                }
            }
            if order >= 2 {
                for l in k + 1..n {
                    let mut corner = |dk: i64, dl: i64| -> Result<Vec<f64>> {
                        probe[k] += dk;
                        probe[l] += dl;
                        let v = self.grid.sample_or_err(&probe).map(|s| s.to_vec());
                        probe[k] -= dk;
                        probe[l] -= dl;
                        v
                    };
                    let pp = corner(1, 1)?;
                    let pm = corner(1, -1)?;
                    let mp = corner(-1, 1)?;
                    let mm = corner(-1, -1)?;
                    for c in 0..up {
                        let v = (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h * h);
                        out.ddg[(k * n + l) * up + c] = v;
                        out.ddg[(l * n + k) * up + c] = v;
                    }
                }
            }
        }
        Ok(())
    }
}

struct NodalJet {
    g: Vec<f64>,
    dg: Vec<f64>,
    ddg: Vec<f64>,
}

impl MetricField for LiftedGrid {
    fn dim(&self) -> usize {
        self.grid.n
    }
    fn inner_radius(&self) -> f64 {
        self.grid.spec.r_in
    }
    fn outer_radius(&self) -> f64 {
        self.grid.spec.r_out
    }
    fn regularity(&self) -> Regularity {
        Regularity::Grid
    }
    fn falloff_tau(&self) -> f64 {
        self.tau
    }
    fn comparability(&self) -> f64 {
        self.comparability
    }
    fn id(&self) -> String {
        self.id.clone()
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<MetricJet> {
        let n = self.grid.n;
        let s = self.grid.spec;
        check_domain(x, n, s.r_in, s.r_out)?;
        let up = upper_len(n);
        let h = s.spacing;
        let base: Vec<i64> = x.iter().map(|v| (v / h).floor() as i64).collect();
        let frac: Vec<f64> = x
            .iter()
            .zip(&base)
            .map(|(v, b)| v / h - *b as f64)
            .collect();
        let mut acc = NodalJet {
            g: vec![0.0; up],
            dg: vec![0.0; n * up],
            ddg: vec![0.0; n * n * up],
        };
        let mut node = NodalJet {
            g: vec![0.0; up],
            dg: vec![0.0; n * up],
            ddg: vec![0.0; n * n * up],
        };
        let mut corner = vec![0i64; n];
        for mask in 0..(1usize << n) {
            let mut w = 1.0;
            for d in 0..n {
                let bit = (mask >> d) & 1;
                corner[d] = base[d] + bit as i64;
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            if w == 0.0 {
                continue;
            }
            self.nodal(&corner, order, &mut node)?;
            for (a, v) in acc.g.iter_mut().zip(&node.g) {
                *a += w * v;
            }
            if order >= 1 {
                for (a, v) in acc.dg.iter_mut().zip(&node.dg) {
                    *a += w * v;
                }
            }
            if order >= 2 {
                for (a, v) in acc.ddg.iter_mut().zip(&node.ddg) {
                    *a += w * v;
                }
            }
        }
        let nn = n * n;
        let mut jet = MetricJet {
            n,
            g: expand_upper(n, &acc.g),
            dg: Vec::new(),
            ddg: Vec::new(),
        };
        if order >= 1 {
            let mut dg = vec![0.0; n * nn];
            for k in 0..n {
                dg[k * nn..(k + 1) * nn].copy_from_slice(&expand_upper(n, &acc.dg[k * up..(k + 1) * up]));
            }
            jet.dg = dg;
        }
        if order >= 2 {
            let mut ddg = vec![0.0; nn * nn];
            for kl in 0..nn {
                ddg[kl * nn..(kl + 1) * nn]
                    .copy_from_slice(&expand_upper(n, &acc.ddg[kl * up..(kl + 1) * up]));
            }
            jet.ddg = ddg;
        }
        Ok(jet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{flat, sample_annulus, schwarzschild_isotropic};

    fn max_d1_error(metric: &dyn MetricField, lifted: &LiftedGrid, pts: &[Vec<f64>]) -> f64 {
        let mut err: f64 = 0.0;
        for x in pts {
            let a = metric.eval_d1(x).unwrap();
            let b = lifted.eval_d1(x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                err = err.max((p - q).abs());
            }
        }
        err
    }

    #[test]
    fn lifted_flat_has_zero_derivatives() {
        let f = flat(3).unwrap();
        let spec = LatticeSpec {
            spacing: 0.25,
            r_in: 3.0,
            r_out: 4.0,
        };
        let lifted = lift_grid(sample_to_grid(&f, spec).unwrap()).unwrap();
        for x in sample_annulus(3, 3.0, 4.0, 40) {
            let jet = lifted.jet(&x, 2).unwrap();
            assert!(jet.dg.iter().chain(&jet.ddg).all(|v| v.abs() < 1e-12));
            assert!((jet.g[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_error_is_second_order() {
        let m = schwarzschild_isotropic(3, 1.0, 1.0).unwrap();
        let pts = sample_annulus(3, 4.0, 5.0, 60);
        let coarse = lift_grid(
            sample_to_grid(
                &m,
                LatticeSpec {
                    spacing: 0.2,
                    r_in: 4.0,
                    r_out: 5.0,
                },
            )
            .unwrap(),
        )
        .unwrap();
        let fine = lift_grid(
            sample_to_grid(
                &m,
                LatticeSpec {
                    spacing: 0.1,
                    r_in: 4.0,
                    r_out: 5.0,
                },
            )
            .unwrap(),
        )
        .unwrap();
        let e_coarse = max_d1_error(&m, &coarse, &pts);
        let e_fine = max_d1_error(&m, &fine, &pts);
        let ratio = e_coarse / e_fine;
        assert!(e_fine < 2e-3, "{e_fine}");
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn query_outside_annulus_is_rejected() {
        let f = flat(3).unwrap();
        let spec = LatticeSpec {
            spacing: 0.25,
            r_in: 3.0,
            r_out: 4.0,
        };
        let lifted = lift_grid(sample_to_grid(&f, spec).unwrap()).unwrap();
        assert!(matches!(
            lifted.eval(&[5.0, 0.0, 0.0]),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn nonpositive_spacing_is_rejected() {
        let f = flat(3).unwrap();
        let spec = LatticeSpec {
            spacing: 0.0,
            r_in: 3.0,
            r_out: 4.0,
        };
        assert!(sample_to_grid(&f, spec).is_err());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let m = schwarzschild_isotropic(3, 1.0, 1.0).unwrap();
        let spec = LatticeSpec {
            spacing: 0.5,
            r_in: 4.0,
            r_out: 5.0,
        };
        let grid = sample_to_grid(&m, spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        grid.write_to(&path).unwrap();
        let back = GridMetric::read_from(&path).unwrap();
        assert_eq!(back.len(), grid.len());
        for idx in &grid.nodes {
            assert_eq!(back.sample(idx), grid.sample(idx));
        }
    }

    #[test]
    fn corrupt_records_are_rejected() {
        let bad_count = "3 0.5 4 5 2\n0 0 4.5 1 0 0 1 0 1\n";
        assert!(GridMetric::parse(bad_count).is_err());
        let not_pd = "3 0.5 4 5 1\n0 0 4.5 1 0 0 -1 0 1\n";
        assert!(matches!(GridMetric::parse(not_pd), Err(Error::Singular(_))));
    }
}
