//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Least squares through nalgebra's unpivoted Householder QR.
pub fn qr_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).expect("full-rank design")
}

/// Slopes from OLS on `[X | pair dummies | year dummies (first year dropped)]`.
pub fn dummy_variable_slopes(x: &DMatrix<f64>, y: &DVector<f64>, pairs: &[usize], years: &[i32]) -> DVector<f64> {
    let n = x.nrows();
    let k = x.ncols();
    let pair_ids: Vec<usize> = {
        let mut p = pairs.to_vec();
        p.sort_unstable();
        p.dedup();
        p
    };
    let year_ids: Vec<i32> = {
        let mut v = years.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let cols = k + pair_ids.len() + year_ids.len() - 1;
    let mut z = DMatrix::zeros(n, cols);
    for i in 0..n {
        for j in 0..k {
            z[(i, j)] = x[(i, j)];
        }
        let g = pair_ids.iter().position(|p| *p == pairs[i]).unwrap();
        z[(i, k + g)] = 1.0;
        let t = year_ids.iter().position(|v| *v == years[i]).unwrap();
        if t > 0 {
            z[(i, k + pair_ids.len() + t - 1)] = 1.0;
        }
    }
    qr_ols(&z, y).rows(0, k).into_owned()
}

/// `bread · Σ_g (Σ_{i∈g} x_i e_i)(Σ_{i∈g} x_i e_i)ᵀ · bread`, scaled by `factor`.
pub fn brute_sandwich(x: &DMatrix<f64>, e: &DVector<f64>, clusters: &[usize], factor: f64) -> DMatrix<f64> {
    let k = x.ncols();
    let bread = (x.transpose() * x).try_inverse().expect("invertible XᵀX");
    let mut scores: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for i in 0..x.nrows() {
        let s = scores.entry(clusters[i]).or_insert_with(|| vec![0.0; k]);
        for j in 0..k {
            s[j] += x[(i, j)] * e[i];
        }
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in scores.values() {
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    &bread * meat * &bread * factor
}

/// White's HC0: `bread · Σ_i e_i² x_i x_iᵀ · bread`.
pub fn hc0(x: &DMatrix<f64>, e: &DVector<f64>) -> DMatrix<f64> {
    let k = x.ncols();
    let bread = (x.transpose() * x).try_inverse().expect("invertible XᵀX");
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += e[i] * e[i] * x[(i, a)] * x[(i, b)];
            }
        }
    }
    &bread * meat * &bread
}

/// Chi-square survival function for even dof: `e^{−x/2} Σ_{j<dof/2} (x/2)^j / j!`.
pub fn chi2_sf_even(x: f64, dof: u32) -> f64 {
    assert!(dof.is_multiple_of(2));
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..dof / 2 {
        term *= h / j as f64;
        sum += term;
    }
    (-h).exp() * sum
}

/// Pearson r from raw sums, computed in separate passes.
pub fn pearson_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
    }
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Two-sided t p-value.
pub fn t_p(t: f64, dof: f64) -> f64 {
    2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().sf(t.abs())
}

pub fn correlation_p(r: f64, n: usize) -> f64 {
    let dof = (n - 2) as f64;
    t_p(r * (dof / (1.0 - r * r)).sqrt(), dof)
}

/// Average ranks by counting smaller and equal values.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Paired t statistic on differences, two-pass variance.
pub fn paired_t(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    m / (var / n).sqrt()
}

/// Relative path → bytes for every file under `root`.
pub fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
